#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gopkit/error.hpp"
#include "gopkit/evalkit.hpp"
#include "gopkit/fileutil.hpp"
#include "gopkit/gop.hpp"

namespace gopkit {

struct PhonemeRateRow {
  std::string phoneme;
  double predicted_rate = 0.0;
  double human_rate = 0.0;
  double delta = 0.0;  // predicted - human
  std::size_t support = 0;
};

/// Per-phoneme flagged fraction under `decision` against the labeled
/// fraction, sorted by delta descending (over-flagged phonemes first).
inline std::vector<PhonemeRateRow> phoneme_rate_table(const std::vector<ScoredPhoneme>& scored,
                                                      const ThresholdDecision& decision, Metric metric) {
  struct Tally {
    std::size_t flagged = 0, labeled = 0, support = 0;
  };
  std::map<std::string, Tally> by_phoneme;
  for (const auto& s : scored) {
    if (!s.label) {
      throw Error(ErrorCode::MissingLabels, s.utt_id + ": phoneme " + std::to_string(s.position) + " has no label");
    }
    auto& t = by_phoneme[s.phoneme];
    ++t.support;
    t.labeled += *s.label;
    t.flagged += flags_mispronounced(s.score(metric), decision.threshold, decision.orientation);
  }
  std::vector<PhonemeRateRow> rows;
  for (const auto& [symbol, t] : by_phoneme) {
    PhonemeRateRow r;
    r.phoneme = symbol;
    r.support = t.support;
    r.predicted_rate = static_cast<double>(t.flagged) / static_cast<double>(t.support);
    r.human_rate = static_cast<double>(t.labeled) / static_cast<double>(t.support);
    r.delta = r.predicted_rate - r.human_rate;
    rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const PhonemeRateRow& a, const PhonemeRateRow& b) { return a.delta > b.delta; });
  return rows;
}

inline std::string phoneme_rates_to_csv(const std::vector<PhonemeRateRow>& rows) {
  std::string out = "phoneme,predicted_rate,human_rate,delta,support\n";
  for (const auto& r : rows) {
    out += detail::csv_field(r.phoneme) + ',' + format_double(r.predicted_rate) + ',' +
           format_double(r.human_rate) + ',' + format_double(r.delta) + ',' + std::to_string(r.support) + '\n';
  }
  return out;
}

/// Trapezoid integral of a sampled curve.
inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return area;
}

inline constexpr std::size_t kDensityPoints = 129;
/// The density grid extends this many bandwidths past the sample range so the
/// curve carries (almost) all of its mass.
inline constexpr double kDensityCut = 4.0;

struct DistributionSummary {
  std::string metric_name;
  bool mispronounced = false;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
  double p5 = 0.0, p25 = 0.0, p50 = 0.0, p75 = 0.0, p95 = 0.0;
  double bandwidth = 0.0;
  std::vector<double> density_x;
  std::vector<double> density_y;
};

/// Gaussian KDE with Silverman's rule, 0.9 * min(sd, IQR/1.34) * n^(-1/5).
inline DistributionSummary summarize_distribution(std::vector<double> values, std::string metric,
                                                  bool mispronounced) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "distribution of an empty class");
  std::sort(values.begin(), values.end());
  DistributionSummary d;
  d.metric_name = std::move(metric);
  d.mispronounced = mispronounced;
  d.count = values.size();
  const double n = static_cast<double>(values.size());
  for (double v : values) d.mean += v;
  d.mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - d.mean) * (v - d.mean);
  d.std = std::sqrt(var / n);
  d.p5 = percentile_sorted(values, 5);
  d.p25 = percentile_sorted(values, 25);
  d.p50 = percentile_sorted(values, 50);
  d.p75 = percentile_sorted(values, 75);
  d.p95 = percentile_sorted(values, 95);

  const double iqr = d.p75 - d.p25;
  double spread = iqr > 0.0 ? std::min(d.std, iqr / 1.34) : d.std;
  if (!(spread > 0.0)) spread = 1e-3 * std::max(1.0, std::abs(d.mean));
  d.bandwidth = 0.9 * spread * std::pow(n, -0.2);

  const double lo = values.front() - kDensityCut * d.bandwidth;
  const double hi = values.back() + kDensityCut * d.bandwidth;
  const double step = (hi - lo) / static_cast<double>(kDensityPoints - 1);
  const double norm = 1.0 / (n * d.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  d.density_x.resize(kDensityPoints);
  d.density_y.resize(kDensityPoints);
  for (std::size_t i = 0; i < kDensityPoints; ++i) {
    const double x = lo + step * static_cast<double>(i);
    double acc = 0.0;
    for (double v : values) {
      const double u = (x - v) / d.bandwidth;
      acc += std::exp(-0.5 * u * u);
    }
    d.density_x[i] = x;
    d.density_y[i] = acc * norm;
  }
  // Heavy outliers can make the grid coarser than the bandwidth; rescale so the
  // sampled curve has unit area.
  const double area = trapezoid(d.density_x, d.density_y);
  if (area > 0.0) {
    for (double& y : d.density_y) y /= area;
  }
  return d;
}

/// (correct, mispronounced) score distributions for one metric.
inline std::pair<DistributionSummary, DistributionSummary> distribution_summary(
    const std::vector<ScoredPhoneme>& scored, Metric metric) {
  std::vector<double> correct, wrong;
  for (const auto& s : scored) {
    if (!s.label) {
      throw Error(ErrorCode::MissingLabels, s.utt_id + ": phoneme " + std::to_string(s.position) + " has no label");
    }
    (*s.label ? wrong : correct).push_back(s.score(metric));
  }
  if (correct.empty() || wrong.empty()) {
    throw Error(ErrorCode::SingleClass, "distribution_summary needs both classes");
  }
  const std::string name(metric_name(metric));
  return {summarize_distribution(std::move(correct), name, false),
          summarize_distribution(std::move(wrong), name, true)};
}

inline nlohmann::json distribution_to_json(const DistributionSummary& d) {
  return {{"count", d.count},
          {"mean", d.mean},
          {"std", d.std},
          {"p5", d.p5},
          {"p25", d.p25},
          {"p50", d.p50},
          {"p75", d.p75},
          {"p95", d.p95},
          {"bandwidth", d.bandwidth},
          {"density_x", d.density_x},
          {"density_y", d.density_y}};
}

inline nlohmann::json distributions_to_json(const std::vector<ScoredPhoneme>& scored) {
  nlohmann::json out = nlohmann::json::object();
  out["metadata"] = {{"kernel", "gaussian"},
                     {"bandwidth_rule", "silverman"},
                     {"grid_points", kDensityPoints},
                     {"grid_cut_bandwidths", kDensityCut}};
  nlohmann::json metrics = nlohmann::json::object();
  for (Metric m : kAllMetrics) {
    const auto [correct, wrong] = distribution_summary(scored, m);
    metrics[std::string(metric_name(m))] = {{"correct", distribution_to_json(correct)},
                                            {"mispronounced", distribution_to_json(wrong)}};
  }
  out["metrics"] = std::move(metrics);
  return out;
}

}  // namespace gopkit
