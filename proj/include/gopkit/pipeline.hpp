#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gopkit/align.hpp"
#include "gopkit/evalkit.hpp"
#include "gopkit/fileutil.hpp"
#include "gopkit/gop.hpp"
#include "gopkit/report.hpp"
#include "gopkit/simerr.hpp"
#include "gopkit/tensorio.hpp"

namespace gopkit {

namespace fs = std::filesystem;

inline constexpr const char* kAlignmentFile = "alignments.jsonl";
inline constexpr const char* kScoreFile = "scores.csv";
inline constexpr const char* kEvalReportFile = "eval_report.json";
inline constexpr const char* kPhonemeRateFile = "phoneme_rates.csv";
inline constexpr const char* kDistributionFile = "distributions.json";
inline constexpr const char* kSimulatedManifestFile = "manifest.json";
inline constexpr const char* kLabelsFile = "labels.json";

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results stay in index
/// order; if several items fail, the lowest index's exception is rethrown.
template <typename Result>
std::vector<Result> parallel_map(std::size_t n, unsigned jobs, const std::function<Result(std::size_t)>& fn) {
  std::vector<std::optional<Result>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<Result> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// align

inline std::vector<Alignment> align_corpus(const CorpusManifest& m, unsigned jobs = 1) {
  return parallel_map<Alignment>(m.size(), jobs, [&](std::size_t i) {
    const auto& u = m.utterances[i];
    const auto p = load_utterance_logits(m, u);
    return ctc_align(p, u.canonical_phonemes, m.inventory.blank_index);
  });
}

inline std::size_t cmd_align(const fs::path& manifest_path, const fs::path& out_dir, unsigned jobs = 1) {
  const auto m = load_manifest(manifest_path);
  const auto alignments = align_corpus(m, jobs);
  std::string dump;
  for (const auto& a : alignments) dump += alignment_to_jsonl(a);
  write_file_atomic(out_dir / kAlignmentFile, dump);
  return alignments.size();
}

// ---------------------------------------------------------------------------
// score

struct ScoreOptions {
  GopConfig gop;
  double human_threshold = 2.0;  // mispronounced iff human score < threshold
  unsigned jobs = 1;
};

/// Ground truth per position: a spoken/canonical mismatch when the realization
/// is known, otherwise the binarized human score.
inline std::vector<std::optional<bool>> ground_truth_labels(const Utterance& u, double human_threshold) {
  std::vector<std::optional<bool>> out(u.canonical_phonemes.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (u.spoken_phonemes) {
      out[i] = (*u.spoken_phonemes)[i] != u.canonical_phonemes[i];
    } else if (u.human_scores) {
      out[i] = (*u.human_scores)[i] < human_threshold;
    }
  }
  return out;
}

inline std::vector<ScoredPhoneme> score_corpus(const CorpusManifest& m, const std::vector<Alignment>& alignments,
                                               const ScoreOptions& opt) {
  validate(opt.gop);
  std::vector<const Alignment*> by_utt(m.size(), nullptr);
  for (const auto& a : alignments) {
    auto it = std::find_if(m.utterances.begin(), m.utterances.end(),
                           [&](const Utterance& u) { return u.utt_id == a.utt_id; });
    if (it == m.utterances.end()) throw Error(ErrorCode::Schema, a.utt_id + ": alignment for unknown utterance");
    by_utt[static_cast<std::size_t>(it - m.utterances.begin())] = &a;
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!by_utt[i]) throw Error(ErrorCode::Schema, m.utterances[i].utt_id + ": no alignment for utterance");
  }
  auto per_utt = parallel_map<std::vector<ScoredPhoneme>>(m.size(), opt.jobs, [&](std::size_t i) {
    const auto& u = m.utterances[i];
    const auto p = load_utterance_logits(m, u);
    validate(*by_utt[i], u.canonical_phonemes, p.frames());
    auto scored = score_utterance(p, *by_utt[i], m.inventory, opt.gop);
    const auto labels = ground_truth_labels(u, opt.human_threshold);
    for (auto& s : scored) {
      s.label = labels[s.position];
      if (u.human_scores) s.human_score = (*u.human_scores)[s.position];
    }
    return scored;
  });
  std::vector<ScoredPhoneme> all;
  for (auto& v : per_utt) std::move(v.begin(), v.end(), std::back_inserter(all));
  if (opt.gop.combine_zscore) recombine_zscored(all, opt.gop);
  return all;
}

inline std::size_t cmd_score(const fs::path& manifest_path, const fs::path& alignments_path, const fs::path& out_dir,
                             const ScoreOptions& opt) {
  const auto m = load_manifest(manifest_path);
  const auto alignments = parse_alignment_jsonl(read_text_file(alignments_path));
  const auto scored = score_corpus(m, alignments, opt);
  write_file_atomic(out_dir / kScoreFile, scores_to_csv(scored));
  return scored.size();
}

// ---------------------------------------------------------------------------
// evaluate / report

inline SplitLookup split_lookup(const CorpusManifest& m) {
  SplitLookup out;
  for (const auto& u : m.utterances) out.emplace(u.utt_id, u.split);
  return out;
}

/// The metric whose regression correlates best with human scores; max_logit
/// when no regression was fitted.
inline Metric best_correlated_metric(const EvalReport& r) {
  std::optional<Metric> best;
  double best_pcc = 0.0;
  for (const auto& mr : r.metrics) {
    if (mr.regression && (!best || mr.regression->pcc.pcc_point > best_pcc)) {
      best = mr.metric;
      best_pcc = mr.regression->pcc.pcc_point;
    }
  }
  return best.value_or(Metric::MaxLogit);
}

struct ReportFiles {
  std::string phoneme_rates_csv;
  std::string distributions_json;
};

inline ReportFiles build_reports(const std::vector<ScoredPhoneme>& scored, const EvalReport& report, Metric metric) {
  const auto& mr = report.at(metric);
  if (!mr.classification) {
    throw Error(ErrorCode::MissingLabels, std::string(metric_name(metric)) + ": no threshold decision in report");
  }
  return {phoneme_rates_to_csv(phoneme_rate_table(scored, mr.classification->decision, metric)),
          distributions_to_json(scored).dump(2) + "\n"};
}

struct EvaluateOptions {
  EvalConfig eval;
  std::optional<fs::path> manifest_path;  // supplies train/test split
  std::optional<Metric> report_metric;
};

struct EvaluateOutcome {
  EvalReport report;
  bool reports_written = false;
  Metric report_metric = Metric::MaxLogit;
};

inline EvaluateOutcome cmd_evaluate(const fs::path& scores_path, const fs::path& out_dir, const EvaluateOptions& opt) {
  const auto scored = parse_scores_csv(read_text_file(scores_path));
  SplitLookup splits;
  if (opt.manifest_path) splits = split_lookup(load_manifest(*opt.manifest_path));
  EvaluateOutcome out;
  out.report = evaluate(scored, splits, opt.eval);
  out.report_metric = opt.report_metric.value_or(best_correlated_metric(out.report));
  std::optional<ReportFiles> files;
  if (out.report.at(out.report_metric).classification) {
    files = build_reports(scored, out.report, out.report_metric);
  } else {
    out.report.warnings.push_back("report files skipped: no classification results");
  }
  auto json = eval_report_to_json(out.report);
  json["report_metric"] = metric_name(out.report_metric);
  json["config"] = {{"percentile_min", opt.eval.grid.first}, {"percentile_max", opt.eval.grid.last}};
  write_file_atomic(out_dir / kEvalReportFile, json.dump(2) + "\n");
  if (files) {
    write_file_atomic(out_dir / kPhonemeRateFile, files->phoneme_rates_csv);
    write_file_atomic(out_dir / kDistributionFile, files->distributions_json);
    out.reports_written = true;
  }
  return out;
}

inline Metric cmd_report(const fs::path& scores_path, const fs::path& eval_report_path, const fs::path& out_dir,
                         std::optional<Metric> metric) {
  const auto scored = parse_scores_csv(read_text_file(scores_path));
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(eval_report_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Schema, eval_report_path.string() + ": invalid JSON: " + e.what());
  }
  const auto report = eval_report_from_json(doc);
  const Metric chosen = metric.value_or(best_correlated_metric(report));
  const auto files = build_reports(scored, report, chosen);
  write_file_atomic(out_dir / kPhonemeRateFile, files.phoneme_rates_csv);
  write_file_atomic(out_dir / kDistributionFile, files.distributions_json);
  return chosen;
}

// ---------------------------------------------------------------------------
// simulate

inline std::size_t cmd_simulate(const fs::path& manifest_path, const std::optional<fs::path>& rules_path,
                                std::uint64_t seed, SubstitutionTarget target, const fs::path& out_dir) {
  const auto in = load_manifest(manifest_path);
  const auto rules = rules_path ? load_rules(*rules_path) : default_substitution_rules();
  auto result = simulate_corpus(in, rules, seed, target);
  // Keep tensor references valid from the new manifest location.
  const fs::path out_abs = fs::weakly_canonical(fs::absolute(out_dir));
  for (auto& u : result.manifest.utterances) {
    const fs::path tensor = fs::weakly_canonical(fs::absolute(in.resolve(u)));
    u.logits_path = tensor.lexically_relative(out_abs).generic_string();
  }
  result.manifest.base_dir = out_dir;
  validate(result.manifest);
  const std::string manifest_text = manifest_to_json(result.manifest).dump(2) + "\n";
  const std::string labels_text = result.labels.dump(2) + "\n";
  write_file_atomic(out_dir / kSimulatedManifestFile, manifest_text);
  write_file_atomic(out_dir / kLabelsFile, labels_text);
  return result.manifest.metadata["simulation"]["substitutions"].get<std::size_t>();
}

}  // namespace gopkit
