#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gopkit/error.hpp"
#include "gopkit/gop.hpp"
#include "gopkit/tensorio.hpp"

namespace gopkit {

// Positive class = mispronounced.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct ConfusionMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
};

/// Undefined ratios fall back to 0; MCC is 0 whenever a marginal is empty.
inline ConfusionMetrics confusion_metrics(const ConfusionCounts& c) {
  const auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
  ConfusionMetrics m;
  m.accuracy = ratio(tp + tn, tp + fp + fn + tn);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  m.mcc = den > 0.0 ? std::clamp((tp * tn - fp * fn) / std::sqrt(den), -1.0, 1.0) : 0.0;
  return m;
}

/// Linear-interpolation percentile (k in [0, 100]) of an ascending sample.
inline double percentile_sorted(std::span<const double> sorted, double k) {
  if (sorted.empty()) throw Error(ErrorCode::EmptyInput, "percentile of an empty sample");
  // Same operation order as numpy's "linear" method, so thresholds agree bit for bit.
  const double pos = (static_cast<double>(sorted.size()) - 1.0) * (k / 100.0);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  const double a = sorted[lo], b = sorted[hi];
  if (frac == 0.0 || a == b) return a;
  const double diff = b - a;
  return frac >= 0.5 ? b - diff * (1.0 - frac) : a + diff * frac;
}

/// Positive when the score lies on the "worse" side of the threshold.
inline bool flags_mispronounced(double score, double threshold, Orientation o) {
  return o == Orientation::HigherIsWorse ? score > threshold : score < threshold;
}

inline ConfusionCounts count_at_threshold(std::span<const double> scores, const std::vector<bool>& labels,
                                          double threshold, Orientation o) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = flags_mispronounced(scores[i], threshold, o);
    if (pred && labels[i]) ++c.tp;
    else if (pred) ++c.fp;
    else if (labels[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct PercentileGrid {
  int first = 1;
  int last = 99;
};

struct ThresholdDecision {
  std::string metric_name;
  double threshold = 0.0;
  double percentile = 0.0;
  Orientation orientation = Orientation::HigherIsWorse;
};

struct SweepResult {
  ThresholdDecision decision;
  ConfusionCounts counts;
  ConfusionMetrics metrics;
};

namespace detail {

inline void check_binary_inputs(std::span<const double> scores, const std::vector<bool>& labels,
                                std::string_view op) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, std::string(op) + ": scores and labels differ in length");
  }
  if (scores.size() < 2) throw Error(ErrorCode::EmptyInput, std::string(op) + ": need at least two samples");
  const auto pos = std::count(labels.begin(), labels.end(), true);
  if (pos == 0 || static_cast<std::size_t>(pos) == labels.size()) {
    throw Error(ErrorCode::SingleClass, std::string(op) + ": labels contain a single class");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::NonFinite, std::string(op) + ": non-finite score");
  }
}

}  // namespace detail

/// Picks the integer percentile of the score distribution whose threshold
/// maximizes MCC. Ties go to the lower percentile.
inline SweepResult sweep_threshold(std::span<const double> scores, const std::vector<bool>& labels,
                                   Orientation orientation, PercentileGrid grid = {}) {
  detail::check_binary_inputs(scores, labels, "sweep_threshold");
  if (grid.first < 0 || grid.last > 100 || grid.first > grid.last) {
    throw Error(ErrorCode::InvalidArgument, "percentile grid must satisfy 0 <= first <= last <= 100");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());

  std::optional<SweepResult> best;
  for (int k = grid.first; k <= grid.last; ++k) {
    const double theta = percentile_sorted(sorted, k);
    const auto counts = count_at_threshold(scores, labels, theta, orientation);
    const auto metrics = confusion_metrics(counts);
    if (!best || metrics.mcc > best->metrics.mcc) {
      best = SweepResult{{"", theta, static_cast<double>(k), orientation}, counts, metrics};
    }
  }
  return *best;
}

/// Mann-Whitney estimate of P(positive ranks worse than negative); ties count half.
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& labels, Orientation orientation) {
  detail::check_binary_inputs(scores, labels, "roc_auc");
  const std::size_t n = scores.size();
  std::vector<double> oriented(n);
  for (std::size_t i = 0; i < n; ++i) {
    oriented[i] = orientation == Orientation::HigherIsWorse ? scores[i] : -scores[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return oriented[a] < oriented[b]; });

  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && oriented[order[j + 1]] == oriented[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n - n_pos);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

/// human_score ~ c0 + c1*g + c2*g^2
struct RegressionModel {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;

  double predict(double g) const { return c0 + (c1 + c2 * g) * g; }
};

/// Least-squares quadratic fit (column-pivoted Householder QR).
inline RegressionModel fit_poly2(std::span<const double> gop, std::span<const double> human) {
  if (gop.size() != human.size()) throw Error(ErrorCode::LengthMismatch, "fit_poly2: inputs differ in length");
  std::vector<double> distinct(gop.begin(), gop.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) {
    throw Error(ErrorCode::RankDeficient, "fit_poly2: need at least 3 distinct abscissae");
  }
  const auto n = static_cast<Eigen::Index>(gop.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = gop[static_cast<std::size_t>(i)];
    if (!std::isfinite(g) || !std::isfinite(human[static_cast<std::size_t>(i)])) {
      throw Error(ErrorCode::NonFinite, "fit_poly2: non-finite input");
    }
    design(i, 0) = 1.0;
    design(i, 1) = g;
    design(i, 2) = g * g;
    target(i) = human[static_cast<std::size_t>(i)];
  }
  const Eigen::Vector3d coef = design.colPivHouseholderQr().solve(target);
  RegressionModel m{coef(0), coef(1), coef(2)};
  if (!std::isfinite(m.c0) || !std::isfinite(m.c1) || !std::isfinite(m.c2)) {
    throw Error(ErrorCode::RankDeficient, "fit_poly2: solution is not finite");
  }
  return m;
}

struct PccResult {
  double pcc_point = 0.0;
  double pcc_low = 0.0;
  double pcc_high = 0.0;
  double mse = 0.0;
};

/// Two-sided 95% normal quantile.
inline constexpr double kZ975 = 1.959963984540054;

/// Pearson r with Fisher-z 95% bounds tanh(atanh(r) -/+ z/sqrt(n-3)), plus MSE.
inline PccResult pcc_with_ci(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) throw Error(ErrorCode::LengthMismatch, "pcc_with_ci: inputs differ in length");
  const std::size_t n = predicted.size();
  if (n < 4) throw Error(ErrorCode::EmptyInput, "pcc_with_ci: need at least 4 samples");
  const double nd = static_cast<double>(n);
  double mp = 0.0, ma = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += predicted[i];
    ma += actual[i];
  }
  mp /= nd;
  ma /= nd;
  double sxy = 0.0, sxx = 0.0, syy = 0.0, sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = predicted[i] - mp, da = actual[i] - ma;
    sxy += dp * da;
    sxx += dp * dp;
    syy += da * da;
    sse += (predicted[i] - actual[i]) * (predicted[i] - actual[i]);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw Error(ErrorCode::ZeroVariance, "pcc_with_ci: zero-variance input");
  PccResult r;
  r.pcc_point = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  r.mse = sse / nd;
  const double z = std::atanh(r.pcc_point);
  const double half = kZ975 / std::sqrt(nd - 3.0);
  r.pcc_low = std::isfinite(z) ? std::tanh(z - half) : r.pcc_point;
  r.pcc_high = std::isfinite(z) ? std::tanh(z + half) : r.pcc_point;
  return r;
}

// ---------------------------------------------------------------------------
// Full evaluation over a scored set

struct EvalConfig {
  PercentileGrid grid;
};

struct RegressionReport {
  RegressionModel model;
  PccResult pcc;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

struct MetricReport {
  Metric metric = Metric::Dnn;
  std::optional<SweepResult> classification;
  std::optional<double> roc_auc;
  std::optional<RegressionReport> regression;
};

struct EvalReport {
  std::vector<MetricReport> metrics;  // in kAllMetrics order
  std::vector<std::string> warnings;

  const MetricReport& at(Metric m) const {
    for (const auto& r : metrics) {
      if (r.metric == m) return r;
    }
    throw Error(ErrorCode::InvalidArgument, "metric missing from report");
  }
};

/// utt_id -> split; an empty map means every phoneme serves as both train and test.
using SplitLookup = std::unordered_map<std::string, Split>;

inline EvalReport evaluate(const std::vector<ScoredPhoneme>& scored, const SplitLookup& splits,
                           const EvalConfig& cfg = {}) {
  EvalReport report;
  std::vector<bool> labels;
  bool all_labeled = !scored.empty();
  for (const auto& s : scored) {
    if (!s.label) {
      all_labeled = false;
      break;
    }
    labels.push_back(*s.label);
  }
  bool classify = all_labeled;
  if (!all_labeled) {
    report.warnings.push_back("labels missing; classification metrics skipped");
  } else if (std::all_of(labels.begin(), labels.end(), [](bool b) { return b; }) ||
             std::none_of(labels.begin(), labels.end(), [](bool b) { return b; })) {
    report.warnings.push_back("labels contain a single class; classification metrics skipped");
    classify = false;
  }

  if (splits.empty()) {
    report.warnings.push_back("no split information; regression fitted and tested on all rows");
  }
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (!scored[i].human_score) continue;
    if (splits.empty()) {
      train_idx.push_back(i);
      test_idx.push_back(i);
      continue;
    }
    const auto it = splits.find(scored[i].utt_id);
    if (it == splits.end()) {
      throw Error(ErrorCode::Schema, scored[i].utt_id + ": utterance missing from manifest");
    }
    (it->second == Split::Train ? train_idx : test_idx).push_back(i);
  }
  const bool regress = !train_idx.empty() || !test_idx.empty();
  if (!regress) report.warnings.push_back("human scores missing; regression skipped");

  for (Metric m : kAllMetrics) {
    MetricReport mr;
    mr.metric = m;
    std::vector<double> values;
    values.reserve(scored.size());
    for (const auto& s : scored) values.push_back(s.score(m));
    if (classify) {
      mr.classification = sweep_threshold(values, labels, orientation_of(m), cfg.grid);
      mr.classification->decision.metric_name = std::string(metric_name(m));
      mr.roc_auc = roc_auc(values, labels, orientation_of(m));
    }
    if (regress) {
      std::vector<double> train_gop, train_human, test_gop, test_human;
      for (std::size_t i : train_idx) {
        train_gop.push_back(values[i]);
        train_human.push_back(*scored[i].human_score);
      }
      for (std::size_t i : test_idx) {
        test_gop.push_back(values[i]);
        test_human.push_back(*scored[i].human_score);
      }
      try {
        RegressionReport rr;
        rr.model = fit_poly2(train_gop, train_human);
        std::vector<double> predicted;
        for (double g : test_gop) predicted.push_back(rr.model.predict(g));
        rr.pcc = pcc_with_ci(predicted, test_human);
        rr.train_size = train_gop.size();
        rr.test_size = test_gop.size();
        mr.regression = rr;
      } catch (const Error& e) {
        report.warnings.push_back(std::string(metric_name(m)) + ": regression skipped (" + e.what() + ")");
      }
    }
    report.metrics.push_back(std::move(mr));
  }
  return report;
}

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  using nlohmann::json;
  json metrics = json::object();
  for (const auto& mr : r.metrics) {
    json jm = json::object();
    jm["orientation"] = orientation_name(orientation_of(mr.metric));
    if (mr.classification) {
      const auto& c = *mr.classification;
      jm["accuracy"] = c.metrics.accuracy;
      jm["precision"] = c.metrics.precision;
      jm["recall"] = c.metrics.recall;
      jm["f1"] = c.metrics.f1;
      jm["mcc"] = c.metrics.mcc;
      jm["auc_mcc_max"] = *mr.roc_auc;
      jm["threshold"] = {{"value", c.decision.threshold}, {"percentile", c.decision.percentile}};
      jm["confusion"] = {{"tp", c.counts.tp}, {"fp", c.counts.fp}, {"fn", c.counts.fn}, {"tn", c.counts.tn}};
    }
    if (mr.regression) {
      const auto& g = *mr.regression;
      jm["pcc_low_conf"] = g.pcc.pcc_low;
      jm["pcc_high_conf"] = g.pcc.pcc_high;
      jm["pcc"] = g.pcc.pcc_point;
      jm["mse"] = g.pcc.mse;
      jm["regression"] = {{"c0", g.model.c0}, {"c1", g.model.c1}, {"c2", g.model.c2},
                          {"train_size", g.train_size}, {"test_size", g.test_size}};
    }
    metrics[std::string(metric_name(mr.metric))] = std::move(jm);
  }
  return {{"metrics", metrics}, {"warnings", r.warnings}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& doc) {
  EvalReport r;
  const auto metrics = detail::require<nlohmann::json>(doc, "metrics", "eval report");
  if (doc.contains("warnings")) r.warnings = doc.at("warnings").get<std::vector<std::string>>();
  for (Metric m : kAllMetrics) {
    const std::string name(metric_name(m));
    MetricReport mr;
    mr.metric = m;
    if (metrics.contains(name)) {
      const auto& jm = metrics.at(name);
      if (jm.contains("mcc")) {
        SweepResult c;
        c.decision.metric_name = name;
        c.decision.orientation = orientation_of(m);
        const auto th = detail::require<nlohmann::json>(jm, "threshold", name);
        c.decision.threshold = detail::require<double>(th, "value", name);
        c.decision.percentile = detail::require<double>(th, "percentile", name);
        const auto cf = detail::require<nlohmann::json>(jm, "confusion", name);
        c.counts = {detail::require<std::size_t>(cf, "tp", name), detail::require<std::size_t>(cf, "fp", name),
                    detail::require<std::size_t>(cf, "fn", name), detail::require<std::size_t>(cf, "tn", name)};
        c.metrics = confusion_metrics(c.counts);
        mr.classification = c;
        mr.roc_auc = detail::require<double>(jm, "auc_mcc_max", name);
      }
      if (jm.contains("regression")) {
        RegressionReport g;
        const auto& jr = jm.at("regression");
        g.model = {detail::require<double>(jr, "c0", name), detail::require<double>(jr, "c1", name),
                   detail::require<double>(jr, "c2", name)};
        g.train_size = detail::require<std::size_t>(jr, "train_size", name);
        g.test_size = detail::require<std::size_t>(jr, "test_size", name);
        g.pcc = {detail::require<double>(jm, "pcc", name), detail::require<double>(jm, "pcc_low_conf", name),
                 detail::require<double>(jm, "pcc_high_conf", name), detail::require<double>(jm, "mse", name)};
        mr.regression = g;
      }
    }
    r.metrics.push_back(std::move(mr));
  }
  return r;
}

}  // namespace gopkit
