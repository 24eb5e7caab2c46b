#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gopkit/align.hpp"
#include "gopkit/error.hpp"
#include "gopkit/fileutil.hpp"
#include "gopkit/matrix.hpp"
#include "gopkit/tensorio.hpp"

namespace gopkit {

enum class Metric { Dnn, MaxLogit, Margin, VarLogit, Combined };

inline constexpr std::array<Metric, 5> kAllMetrics{Metric::Dnn, Metric::MaxLogit, Metric::Margin,
                                                   Metric::VarLogit, Metric::Combined};

enum class Orientation { HigherIsWorse, HigherIsBetter };

/// Which direction of each score means a worse pronunciation.
constexpr Orientation orientation_of(Metric m) {
  switch (m) {
    case Metric::Dnn: return Orientation::HigherIsWorse;
    case Metric::MaxLogit: return Orientation::HigherIsBetter;
    case Metric::Margin: return Orientation::HigherIsBetter;
    case Metric::VarLogit: return Orientation::HigherIsWorse;
    case Metric::Combined: return Orientation::HigherIsBetter;
  }
  return Orientation::HigherIsWorse;
}

constexpr std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::Dnn: return "dnn";
    case Metric::MaxLogit: return "max_logit";
    case Metric::Margin: return "margin";
    case Metric::VarLogit: return "var_logit";
    case Metric::Combined: return "combined";
  }
  return "";
}

constexpr std::string_view orientation_name(Orientation o) {
  return o == Orientation::HigherIsWorse ? "higher-is-worse" : "higher-is-better";
}

inline Metric parse_metric(std::string_view name) {
  for (Metric m : kAllMetrics) {
    if (metric_name(m) == name) return m;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown metric '" + std::string(name) + "'");
}

struct GopConfig {
  double alpha = 0.5;
  bool exclude_blank_from_competitors = true;
  bool exclude_blank_from_softmax = false;
  double log_epsilon = 1e-12;
  /// Combine z-normalized margin and dnn over the scored set instead of raw values.
  bool combine_zscore = false;
};

inline void validate(const GopConfig& cfg) {
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  }
  if (!(cfg.log_epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "log_epsilon must be positive");
}

namespace detail {

template <std::floating_point T>
void check_segment(MatrixView<T> seg, PhonemeId target, std::string_view op) {
  if (seg.rows() == 0) throw Error(ErrorCode::EmptyInput, std::string(op) + ": empty segment");
  if (target >= seg.cols()) {
    throw Error(ErrorCode::IndexOutOfRange, std::string(op) + ": target index outside vocabulary");
  }
}

}  // namespace detail

/// Negative log of the mean softmax posterior of `target` over the segment.
/// Optionally renormalizes the softmax over the non-blank columns.
template <std::floating_point T>
double gop_dnn(MatrixView<T> seg, PhonemeId target, PhonemeId blank, const GopConfig& cfg = {}) {
  detail::check_segment(seg, target, "gop_dnn");
  if (cfg.exclude_blank_from_softmax && target == blank) {
    throw Error(ErrorCode::InvalidArgument, "gop_dnn: target is blank but blank is excluded");
  }
  double mean = 0.0;
  for (std::size_t t = 0; t < seg.rows(); ++t) {
    const auto row = seg.row(t);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (cfg.exclude_blank_from_softmax && k == blank) continue;
      peak = std::max(peak, static_cast<double>(row[k]));
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (cfg.exclude_blank_from_softmax && k == blank) continue;
      sum += std::exp(static_cast<double>(row[k]) - peak);
    }
    mean += std::exp(static_cast<double>(row[target]) - peak) / sum;
  }
  mean /= static_cast<double>(seg.rows());
  return std::max(0.0, -std::log(std::max(mean, cfg.log_epsilon)));
}

template <std::floating_point T>
double gop_max_logit(MatrixView<T> seg, PhonemeId target) {
  detail::check_segment(seg, target, "gop_max_logit");
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < seg.rows(); ++t) best = std::max(best, static_cast<double>(seg(t, target)));
  return best;
}

/// Mean per-frame gap between the target logit and its strongest competitor.
template <std::floating_point T>
double gop_margin(MatrixView<T> seg, PhonemeId target, PhonemeId blank, const GopConfig& cfg = {}) {
  detail::check_segment(seg, target, "gop_margin");
  const auto is_competitor = [&](std::size_t k) {
    return k != target && !(cfg.exclude_blank_from_competitors && k == blank);
  };
  bool any = false;
  for (std::size_t k = 0; k < seg.cols() && !any; ++k) any = is_competitor(k);
  if (!any) throw Error(ErrorCode::EmptyInput, "gop_margin: competitor set is empty");

  double total = 0.0;
  for (std::size_t t = 0; t < seg.rows(); ++t) {
    const auto row = seg.row(t);
    double rival = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (is_competitor(k)) rival = std::max(rival, static_cast<double>(row[k]));
    }
    total += static_cast<double>(row[target]) - rival;
  }
  return total / static_cast<double>(seg.rows());
}

/// Population variance (divisor S) of the target logit column.
template <std::floating_point T>
double gop_var_logit(MatrixView<T> seg, PhonemeId target) {
  detail::check_segment(seg, target, "gop_var_logit");
  const double n = static_cast<double>(seg.rows());
  double mean = 0.0;
  for (std::size_t t = 0; t < seg.rows(); ++t) mean += static_cast<double>(seg(t, target));
  mean /= n;
  double acc = 0.0;
  for (std::size_t t = 0; t < seg.rows(); ++t) {
    const double d = static_cast<double>(seg(t, target)) - mean;
    acc += d * d;
  }
  return acc / n;
}

inline double gop_combined(double margin, double dnn, const GopConfig& cfg = {}) {
  if (!std::isfinite(margin) || !std::isfinite(dnn)) {
    throw Error(ErrorCode::NonFinite, "gop_combined: non-finite input");
  }
  return cfg.alpha * margin - (1.0 - cfg.alpha) * dnn;
}

struct ScoredPhoneme {
  std::string utt_id;
  std::size_t position = 0;
  std::string phoneme;  // inventory symbol
  std::size_t t1 = 0;
  std::size_t t2 = 0;
  double gop_dnn = 0.0;
  double gop_max_logit = 0.0;
  double gop_margin = 0.0;
  double gop_var_logit = 0.0;
  double gop_combined = 0.0;
  std::optional<bool> label;  // true = mispronounced
  std::optional<double> human_score;

  double score(Metric m) const {
    switch (m) {
      case Metric::Dnn: return gop_dnn;
      case Metric::MaxLogit: return gop_max_logit;
      case Metric::Margin: return gop_margin;
      case Metric::VarLogit: return gop_var_logit;
      case Metric::Combined: return gop_combined;
    }
    return 0.0;
  }

  friend bool operator==(const ScoredPhoneme&, const ScoredPhoneme&) = default;
};

inline std::vector<ScoredPhoneme> score_utterance(const Posteriorgram& p, const Alignment& a,
                                                  const PhonemeInventory& inventory,
                                                  const GopConfig& cfg = {}) {
  validate(cfg);
  if (p.vocab() != inventory.size()) {
    throw Error(ErrorCode::ShapeMismatch, p.utt_id + ": posteriorgram width differs from inventory");
  }
  std::vector<ScoredPhoneme> out;
  out.reserve(a.segments.size());
  for (const auto& seg : a.segments) {
    const auto rows = slice_segment(p, seg);
    ScoredPhoneme s;
    s.utt_id = a.utt_id;
    s.position = seg.position;
    s.phoneme = inventory.symbols.at(seg.phoneme);
    s.t1 = seg.t1;
    s.t2 = seg.t2;
    s.gop_dnn = gop_dnn(rows, seg.phoneme, inventory.blank_index, cfg);
    s.gop_max_logit = gop_max_logit(rows, seg.phoneme);
    s.gop_margin = gop_margin(rows, seg.phoneme, inventory.blank_index, cfg);
    s.gop_var_logit = gop_var_logit(rows, seg.phoneme);
    s.gop_combined = gop_combined(s.gop_margin, s.gop_dnn, cfg);
    out.push_back(std::move(s));
  }
  return out;
}

/// Recomputes gop_combined from margin and dnn standardized over the whole set.
/// A zero-spread input is only centered.
inline void recombine_zscored(std::vector<ScoredPhoneme>& scored, const GopConfig& cfg) {
  if (scored.empty()) return;
  const auto stats = [&](auto field) {
    double mean = 0.0;
    for (const auto& s : scored) mean += field(s);
    mean /= static_cast<double>(scored.size());
    double var = 0.0;
    for (const auto& s : scored) var += (field(s) - mean) * (field(s) - mean);
    const double sd = std::sqrt(var / static_cast<double>(scored.size()));
    return std::pair{mean, sd > 0.0 ? sd : 1.0};
  };
  const auto [m_mean, m_sd] = stats([](const ScoredPhoneme& s) { return s.gop_margin; });
  const auto [d_mean, d_sd] = stats([](const ScoredPhoneme& s) { return s.gop_dnn; });
  for (auto& s : scored) {
    s.gop_combined = gop_combined((s.gop_margin - m_mean) / m_sd, (s.gop_dnn - d_mean) / d_sd, cfg);
  }
}

// ---------------------------------------------------------------------------
// Score CSV

inline constexpr std::string_view kScoreCsvHeader =
    "utt_id,position,phoneme,t1,t2,gop_dnn,gop_maxlogit,gop_margin,gop_varlogit,gop_combined,label,"
    "human_score";

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw Error(ErrorCode::Schema, "unterminated quote on CSV line " + std::to_string(line_no));
  return fields;
}

}  // namespace detail

inline std::string scores_to_csv(const std::vector<ScoredPhoneme>& scored) {
  std::string out(kScoreCsvHeader);
  out += '\n';
  for (const auto& s : scored) {
    out += detail::csv_field(s.utt_id) + ',' + std::to_string(s.position) + ',' +
           detail::csv_field(s.phoneme) + ',' + std::to_string(s.t1) + ',' + std::to_string(s.t2) +
           ',' + format_double(s.gop_dnn) + ',' + format_double(s.gop_max_logit) + ',' +
           format_double(s.gop_margin) + ',' + format_double(s.gop_var_logit) + ',' +
           format_double(s.gop_combined) + ',';
    if (s.label) out += *s.label ? '1' : '0';
    out += ',';
    if (s.human_score) out += format_double(*s.human_score);
    out += '\n';
  }
  return out;
}

inline std::vector<ScoredPhoneme> parse_scores_csv(std::string_view text) {
  std::vector<ScoredPhoneme> out;
  std::size_t start = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kScoreCsvHeader) throw Error(ErrorCode::Schema, "score CSV header mismatch");
      header_seen = true;
      continue;
    }
    const auto f = detail::split_csv_line(line, line_no);
    if (f.size() != 12) {
      throw Error(ErrorCode::Schema, "score CSV line " + std::to_string(line_no) + " has " +
                                         std::to_string(f.size()) + " fields, expected 12");
    }
    const std::string ctx = "score CSV line " + std::to_string(line_no);
    const auto as_index = [&](const std::string& v, const char* what) {
      const double d = parse_double(v, std::string(what) + " on " + ctx);
      if (d < 0 || d != std::floor(d)) throw Error(ErrorCode::Schema, ctx + ": bad " + what);
      return static_cast<std::size_t>(d);
    };
    ScoredPhoneme s;
    s.utt_id = f[0];
    s.position = as_index(f[1], "position");
    s.phoneme = f[2];
    s.t1 = as_index(f[3], "t1");
    s.t2 = as_index(f[4], "t2");
    s.gop_dnn = parse_double(f[5], "gop_dnn on " + ctx);
    s.gop_max_logit = parse_double(f[6], "gop_maxlogit on " + ctx);
    s.gop_margin = parse_double(f[7], "gop_margin on " + ctx);
    s.gop_var_logit = parse_double(f[8], "gop_varlogit on " + ctx);
    s.gop_combined = parse_double(f[9], "gop_combined on " + ctx);
    if (f[10] == "1") {
      s.label = true;
    } else if (f[10] == "0") {
      s.label = false;
    } else if (!f[10].empty()) {
      throw Error(ErrorCode::Schema, ctx + ": label must be 0, 1 or empty");
    }
    if (!f[11].empty()) s.human_score = parse_double(f[11], "human_score on " + ctx);
    out.push_back(std::move(s));
  }
  if (!header_seen) throw Error(ErrorCode::Schema, "score CSV is empty");
  return out;
}

}  // namespace gopkit
