// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gopkit/gopkit.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace gopkit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && out_.pass) out_.detail = what;
    out_.pass = out_.pass && ok;
  }
  void note(const std::string& text) {
    if (out_.pass) out_.detail = text;
  }
  Outcome result() const { return out_; }

 private:
  Outcome out_;
};

std::string fmt(const char* pattern, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Matrix<double> to_matrix(const std::vector<std::vector<double>>& rows) {
  Matrix<double> m(rows.size(), rows.front().size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t v = 0; v < rows[t].size(); ++v) m(t, v) = rows[t][v];
  }
  return m;
}

Outcome ctc_oracle_equivalence() {
  Check c;
  std::mt19937_64 rng(1000);
  std::normal_distribution<double> val(0.0, 2.0);
  const auto start = std::chrono::steady_clock::now();
  int cases = 0;
  double worst = 0.0;
  while (cases < 1000) {
    const std::size_t vocab = 2 + rng() % 2;  // V in {2, 3}
    const std::size_t frames = 1 + rng() % 6;
    const std::size_t n_targets = 1 + rng() % 2;
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < n_targets; ++i) targets.push_back(1 + rng() % (vocab - 1));
    if (ctc_min_frames(targets) > frames) continue;
    std::vector<std::vector<double>> rows(frames, std::vector<double>(vocab));
    for (auto& r : rows) {
      for (auto& v : r) v = val(rng);
    }
    const auto a = ctc_align(to_matrix(rows).view(), targets, 0);
    const auto best = oracle::brute_force_ctc(rows, targets, 0);
    const double gap = std::abs(a.total_path_logprob - best.score);
    worst = std::max(worst, gap);
    c.expect(gap <= 1e-9, fmt("case %.0f: optimum off by %.3g", cases, gap));
    for (std::size_t i = 0; i < targets.size(); ++i) {
      c.expect(a.segments[i].t1 == best.spans[i].first && a.segments[i].t2 == best.spans[i].second,
               fmt("case %.0f: span %.0f differs", cases, static_cast<double>(i)));
    }
    ++cases;
  }
  const double secs = seconds_since(start);
  c.expect(secs < 10.0, fmt("took %.2f s (limit 10 s)", secs));
  c.note(fmt("1000 cases, max |delta| %.2g, %.3f s", worst, secs));
  return c.result();
}

Outcome gop_fixtures() {
  Check c;
  const GopConfig cfg;
  Matrix<double> uniform(3, 4, 0.0);
  c.expect(std::abs(gop_dnn(uniform.view(), 1, 0, cfg) - 1.3862943611198906) <= 1e-6, "uniform dnn != ln 4");
  Matrix<double> margin{{9.0, 2.0, 1.0, 0.5}, {9.0, 3.0, 1.0, -4.0}};
  c.expect(std::abs(gop_margin(margin.view(), 1, 0, cfg) - 1.5) <= 1e-6, "margin != 1.5");
  Matrix<double> two{{0.0, 1.0}, {0.0, 3.0}};
  c.expect(std::abs(gop_var_logit(two.view(), 1) - 1.0) <= 1e-6, "variance != 1.0");
  Matrix<double> four{{0.0, 1.0}, {0.0, 2.0}, {0.0, 3.0}, {0.0, 4.0}};
  c.expect(std::abs(gop_var_logit(four.view(), 1) - 1.25) <= 1e-6, "variance != 1.25");
  c.expect(std::abs(gop_combined(1.5, 0.6931, cfg) - 0.40345) <= 1e-6, "combined != 0.40345");
  Matrix<double> peaked{{3.0, 1.0}, {1.0, 3.0}};
  c.expect(std::abs(gop_dnn(peaked.view(), 0, 1, cfg) - std::log(2.0)) <= 1e-6, "mean-posterior dnn != ln 2");
  Matrix<double> spiky{{0.0, 1.0}, {0.0, 3.5}, {0.0, 2.0}};
  c.expect(gop_max_logit(spiky.view(), 1) == 3.5, "max_logit != 3.5");
  c.note("ln4, margin 1.5, var 1.0/1.25, combined 0.40345 within 1e-6");
  return c.result();
}

Outcome shift_invariance() {
  Check c;
  std::mt19937_64 rng(10000);
  std::normal_distribution<double> val(0.0, 5.0);
  std::uniform_real_distribution<double> shift(-100.0, 100.0);
  const GopConfig cfg;
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t rows = 1 + rng() % 12, cols = 3 + rng() % 20;
    const PhonemeId target = 1 + rng() % (cols - 1);
    Matrix<double> seg(rows, cols);
    for (auto& v : seg.data()) v = val(rng);
    auto per_frame = seg;
    for (std::size_t t = 0; t < rows; ++t) {
      const double k = shift(rng);
      for (auto& v : per_frame.row(t)) v += k;
    }
    const double d_dnn = std::abs(gop_dnn(per_frame.view(), target, 0, cfg) - gop_dnn(seg.view(), target, 0, cfg));
    const double d_margin =
        std::abs(gop_margin(per_frame.view(), target, 0, cfg) - gop_margin(seg.view(), target, 0, cfg));
    worst = std::max({worst, d_dnn, d_margin});
    c.expect(d_dnn <= 1e-9, fmt("segment %.0f: dnn moved by %.3g", i, d_dnn));
    c.expect(d_margin <= 1e-9, fmt("segment %.0f: margin moved by %.3g", i, d_margin));

    const double k = shift(rng);
    auto uniform = seg;
    for (auto& v : uniform.data()) v += k;
    c.expect(gop_max_logit(uniform.view(), target) == gop_max_logit(seg.view(), target) + k,
             fmt("segment %.0f: max_logit did not shift by the constant", i));
  }
  c.note(fmt("10000 segments, max |delta| %.2g; max_logit shifts exactly", worst));
  return c.result();
}

Outcome threshold_sweep() {
  Check c;
  std::mt19937_64 rng(100);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + rng() % 500;
    std::normal_distribution<double> d(0.0, 1.0);
    const double effect = 0.25 * (trial % 9);
    std::vector<double> scores(n);
    std::vector<bool> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng() % 4 == 0;
      scores[i] = d(rng) + (labels[i] ? effect : 0.0);
      if (trial % 4 == 0) scores[i] = std::round(scores[i] * 3.0);
    }
    labels[0] = true;
    labels[1] = false;
    for (Orientation o : {Orientation::HigherIsWorse, Orientation::HigherIsBetter}) {
      const auto got = sweep_threshold(scores, labels, o);
      const auto want = oracle::brute_force_best_counts(scores, labels, o == Orientation::HigherIsWorse);
      const ConfusionCounts counts{static_cast<std::size_t>(want.tp), static_cast<std::size_t>(want.fp),
                                   static_cast<std::size_t>(want.fn), static_cast<std::size_t>(want.tn)};
      c.expect(got.metrics.mcc == confusion_metrics(counts).mcc,
               fmt("dataset %.0f: MCC %.17g differs from brute force", trial, got.metrics.mcc));
      c.expect(got.counts == counts && static_cast<int>(got.decision.percentile) == want.percentile,
               fmt("dataset %.0f: chosen percentile %.0f differs", trial, got.decision.percentile));
    }
  }

  // constructed separable corpus through the full pipeline
  test_support::TempDir dir;
  const auto manifest = write_synthetic_corpus(make_synthetic_corpus({}), dir.path() / "corpus");
  cmd_align(manifest, dir.path());
  cmd_score(manifest, dir.path() / kAlignmentFile, dir.path(), {});
  EvaluateOptions opt;
  opt.manifest_path = manifest;
  const auto report = cmd_evaluate(dir.path() / kScoreFile, dir.path(), opt).report;
  for (Metric m : kAllMetrics) {
    const auto& mr = report.at(m);
    const std::string name(metric_name(m));
    c.expect(mr.classification && mr.classification->metrics.mcc == 1.0, name + ": MCC != 1 on separable corpus");
    c.expect(mr.roc_auc && *mr.roc_auc == 1.0, name + ": AUC != 1 on separable corpus");
  }
  c.note("100 datasets x 2 orientations exact; separable corpus MCC = AUC = 1 for all five metrics");
  return c.result();
}

Outcome regression_recovery() {
  Check c;
  std::vector<double> g, h;
  for (int i = 0; i < 41; ++i) {
    const double x = -4.0 + 0.2 * i;
    g.push_back(x);
    h.push_back(2.0 + 3.0 * x - x * x);
  }
  const auto model = fit_poly2(g, h);
  const double err = std::max({std::abs(model.c0 - 2.0), std::abs(model.c1 - 3.0), std::abs(model.c2 + 1.0)});
  c.expect(err <= 1e-8, fmt("coefficients off by %.3g", err));
  std::vector<double> test_g, test_h, pred;
  for (int i = 0; i < 25; ++i) {
    const double x = -3.9 + 0.31 * i;
    test_g.push_back(x);
    test_h.push_back(2.0 + 3.0 * x - x * x);
    pred.push_back(model.predict(x));
  }
  const auto fit = pcc_with_ci(pred, test_h);
  c.expect(fit.mse < 1e-16, fmt("test MSE %.3g", fit.mse));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> d;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + rng() % 300;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = d(rng);
      y[i] = 0.1 * trial * x[i] + d(rng);
    }
    const auto r = pcc_with_ci(x, y);
    long double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += x[i];
      my += y[i];
    }
    mx /= n;
    my /= n;
    long double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    const double rho = static_cast<double>(sxy / std::sqrt(sxx * syy));
    const double half = 1.959963984540054 / std::sqrt(static_cast<double>(n) - 3.0);
    const double lo = std::tanh(std::atanh(rho) - half), hi = std::tanh(std::atanh(rho) + half);
    worst = std::max({worst, std::abs(r.pcc_point - rho), std::abs(r.pcc_low - lo), std::abs(r.pcc_high - hi)});
  }
  c.expect(worst <= 1e-9, fmt("Fisher-z bounds off by %.3g", worst));
  c.note(fmt("coef err %.2g, test MSE %.2g; ", err, fit.mse) + fmt("Fisher-z max |delta| %.2g", worst));
  return c.result();
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = read_text_file(e.path());
  }
  return files;
}

// synth -> simulate -> align -> score -> evaluate -> report, all under `root`
void full_run(const fs::path& root, std::uint64_t seed) {
  SyntheticCorpusSpec spec;
  spec.seed = seed;
  const auto manifest = write_synthetic_corpus(make_synthetic_corpus(spec), root / "corpus");
  cmd_simulate(manifest, std::nullopt, seed, SubstitutionTarget::Spoken, root / "sim");
  const auto sim_manifest = root / "sim" / kSimulatedManifestFile;
  const auto out = root / "out";
  cmd_align(sim_manifest, out, 3);
  cmd_score(sim_manifest, out / kAlignmentFile, out, {GopConfig{}, 2.0, 3});
  EvaluateOptions opt;
  opt.manifest_path = sim_manifest;
  const auto outcome = cmd_evaluate(out / kScoreFile, out, opt);
  cmd_report(out / kScoreFile, out / kEvalReportFile, root / "report", outcome.report_metric);
}

Outcome end_to_end_smoke() {
  Check c;
  test_support::TempDir dir;
  const auto start = std::chrono::steady_clock::now();
  const auto manifest = write_synthetic_corpus(make_synthetic_corpus({}), dir.path() / "corpus");
  const auto out = dir.path() / "out";
  const auto n_utts = cmd_align(manifest, out);
  cmd_score(manifest, out / kAlignmentFile, out, {});
  EvaluateOptions opt;
  opt.manifest_path = manifest;
  const auto outcome = cmd_evaluate(out / kScoreFile, out, opt);
  const Metric chosen = cmd_report(out / kScoreFile, out / kEvalReportFile, out, std::nullopt);
  const double secs = seconds_since(start);
  c.expect(n_utts == 20, "expected 20 utterances");
  c.expect(secs < 5.0, fmt("took %.2f s (limit 5 s)", secs));

  double worst_mcc = 1.0;
  for (Metric m : kAllMetrics) {
    const auto& mr = outcome.report.at(m);
    c.expect(mr.classification.has_value(), std::string(metric_name(m)) + ": no classification");
    if (!mr.classification) continue;
    worst_mcc = std::min(worst_mcc, mr.classification->metrics.mcc);
    c.expect(mr.classification->metrics.mcc >= 0.9,
             std::string(metric_name(m)) + fmt(": MCC %.4f < 0.9", mr.classification->metrics.mcc));
  }

  // weighted mean of the written rate table against the flagged fraction of the scores file
  const auto scored = parse_scores_csv(read_text_file(out / kScoreFile));
  const auto decision = outcome.report.at(chosen).classification->decision;
  std::size_t flagged = 0;
  for (const auto& s : scored) flagged += flags_mispronounced(s.score(chosen), decision.threshold, decision.orientation);
  std::istringstream rates(read_text_file(out / kPhonemeRateFile));
  std::string line;
  std::getline(rates, line);
  double weighted = 0.0;
  std::size_t support = 0, line_no = 1;
  while (std::getline(rates, line)) {
    const auto f = detail::split_csv_line(line, ++line_no);
    weighted += std::stod(f.at(1)) * std::stod(f.at(4));
    support += static_cast<std::size_t>(std::stoul(f.at(4)));
  }
  const double gap = std::abs(weighted / static_cast<double>(support) -
                              static_cast<double>(flagged) / static_cast<double>(scored.size()));
  c.expect(support == scored.size(), "rate table support does not cover every phoneme");
  c.expect(gap <= 1e-9, fmt("weighted rate off flagged fraction by %.3g", gap));
  c.expect(fs::exists(out / kDistributionFile), "distributions.json missing");
  c.note(fmt("%.3f s, min MCC %.4f, ", secs, worst_mcc) + fmt("rate-table gap %.2g", gap));
  return c.result();
}

Outcome determinism() {
  Check c;
  test_support::TempDir a, b;
  full_run(a.path(), 11);
  full_run(b.path(), 11);
  const auto first = snapshot(a.path());
  const auto second = snapshot(b.path());
  c.expect(first.size() == second.size(), "runs produced different file sets");
  std::size_t bytes = 0;
  for (const auto& [name, content] : first) {
    const auto it = second.find(name);
    c.expect(it != second.end() && it->second == content, name + " differs between runs");
    bytes += content.size();
  }
  c.note(fmt("%.0f files, %.0f bytes identical", static_cast<double>(first.size()), static_cast<double>(bytes)));
  return c.result();
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"ctc-oracle-equivalence", ctc_oracle_equivalence},
      {"gop-unit-fixtures", gop_fixtures},
      {"shift-invariance", shift_invariance},
      {"threshold-sweep", threshold_sweep},
      {"regression-recovery", regression_recovery},
      {"end-to-end-synthetic", end_to_end_smoke},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
