// gopkit: align -> score -> evaluate -> report pipeline over CTC logit tensors.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gopkit/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "gopkit: warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Goodness-of-pronunciation scoring from CTC logits"};
  app.require_subcommand(1);

  unsigned jobs = 1;
  fs::path manifest, out_dir;

  // align
  auto* align = app.add_subcommand("align", "CTC forced alignment of every utterance");
  align->add_option("--manifest", manifest, "corpus manifest JSON")->required();
  align->add_option("--out", out_dir, "output directory")->required();
  align->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  // score
  gopkit::ScoreOptions score_opt;
  fs::path alignments;
  auto* score = app.add_subcommand("score", "compute the five GOP scores per aligned phoneme");
  score->add_option("--manifest", manifest, "corpus manifest JSON")->required();
  score->add_option("--alignments", alignments, "alignment dump (default: <out>/alignments.jsonl)");
  score->add_option("--out", out_dir, "output directory")->required();
  score->add_option("--alpha", score_opt.gop.alpha, "margin weight of the combined score")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  score->add_flag("--exclude-blank-competitors{true}", score_opt.gop.exclude_blank_from_competitors,
                  "drop blank from the margin competitor set")
      ->default_str("true");
  score->add_flag("--exclude-blank-softmax{true}", score_opt.gop.exclude_blank_from_softmax,
                  "renormalize the softmax over non-blank outputs")
      ->default_str("false");
  score->add_option("--log-epsilon", score_opt.gop.log_epsilon, "floor of the mean posterior")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  score->add_flag("--combine-zscore", score_opt.gop.combine_zscore,
                  "combine z-normalized margin and dnn over the corpus");
  score->add_option("--human-threshold", score_opt.human_threshold,
                    "human scores below this are mispronounced")
      ->capture_default_str();
  score->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  // evaluate
  gopkit::EvaluateOptions eval_opt;
  fs::path scores;
  std::string metric;
  std::optional<fs::path> eval_manifest;
  auto* evaluate = app.add_subcommand("evaluate", "MCC threshold sweep, ROC AUC, regression against human scores");
  evaluate->add_option("--scores", scores, "score CSV (default: <out>/scores.csv)");
  evaluate->add_option("--manifest", eval_manifest, "manifest supplying the train/test split");
  evaluate->add_option("--out", out_dir, "output directory")->required();
  evaluate->add_option("--percentile-min", eval_opt.eval.grid.first)->check(CLI::Range(0, 100))->capture_default_str();
  evaluate->add_option("--percentile-max", eval_opt.eval.grid.last)->check(CLI::Range(0, 100))->capture_default_str();
  evaluate->add_option("--metric", metric, "metric for the phoneme-rate table (default: best PCC)");

  // report
  fs::path eval_report;
  auto* report = app.add_subcommand("report", "per-phoneme error rates and score distributions");
  report->add_option("--scores", scores, "score CSV (default: <out>/scores.csv)");
  report->add_option("--eval-report", eval_report, "evaluation JSON (default: <out>/eval_report.json)");
  report->add_option("--out", out_dir, "output directory")->required();
  report->add_option("--metric", metric, "metric for the phoneme-rate table (default: best PCC)");

  // simulate
  std::optional<fs::path> rules;
  std::uint64_t seed = 0;
  std::string substitute_into = "spoken";
  auto* simulate = app.add_subcommand("simulate", "inject simulated phoneme substitutions");
  simulate->add_option("--manifest", manifest, "corpus manifest JSON")->required();
  simulate->add_option("--rules", rules, "substitution rule JSON (default: built-in four rules)");
  simulate->add_option("--seed", seed, "random seed")->capture_default_str();
  simulate->add_option("--substitute-into", substitute_into, "sequence receiving the rewrite")
      ->check(CLI::IsMember({"spoken", "canonical"}))
      ->capture_default_str();
  simulate->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // usage problems exit 2; runtime failures below exit 1
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (align->parsed()) {
      const auto n = gopkit::cmd_align(manifest, out_dir, jobs);
      std::cerr << "gopkit: aligned " << n << " utterances\n";
    } else if (score->parsed()) {
      score_opt.jobs = jobs;
      if (alignments.empty()) alignments = out_dir / gopkit::kAlignmentFile;
      const auto n = gopkit::cmd_score(manifest, alignments, out_dir, score_opt);
      std::cerr << "gopkit: scored " << n << " phonemes\n";
    } else if (evaluate->parsed()) {
      if (scores.empty()) scores = out_dir / gopkit::kScoreFile;
      eval_opt.manifest_path = eval_manifest;
      if (!metric.empty()) eval_opt.report_metric = gopkit::parse_metric(metric);
      const auto outcome = gopkit::cmd_evaluate(scores, out_dir, eval_opt);
      print_warnings(outcome.report.warnings);
    } else if (report->parsed()) {
      if (scores.empty()) scores = out_dir / gopkit::kScoreFile;
      if (eval_report.empty()) eval_report = out_dir / gopkit::kEvalReportFile;
      std::optional<gopkit::Metric> m;
      if (!metric.empty()) m = gopkit::parse_metric(metric);
      const auto chosen = gopkit::cmd_report(scores, eval_report, out_dir, m);
      std::cerr << "gopkit: phoneme rates for " << gopkit::metric_name(chosen) << "\n";
    } else if (simulate->parsed()) {
      const auto target =
          substitute_into == "canonical" ? gopkit::SubstitutionTarget::Canonical : gopkit::SubstitutionTarget::Spoken;
      const auto n = gopkit::cmd_simulate(manifest, rules, seed, target, out_dir);
      std::cerr << "gopkit: " << n << " substitutions (seed " << seed << ")\n";
    }
  } catch (const gopkit::Error& e) {
    std::cerr << "gopkit: error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "gopkit: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
