#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gopkit/error.hpp"
#include "gopkit/matrix.hpp"
#include "gopkit/tensorio.hpp"

namespace gopkit {

/// One aligned occurrence of a canonical phoneme. Frames are inclusive.
struct AlignedSegment {
  std::size_t position = 0;
  PhonemeId phoneme = 0;
  std::size_t t1 = 0;
  std::size_t t2 = 0;
  double span_score = 0.0;  // mean log-probability of the phoneme over [t1, t2]

  std::size_t length() const noexcept { return t2 - t1 + 1; }
  friend bool operator==(const AlignedSegment&, const AlignedSegment&) = default;
};

struct Alignment {
  std::string utt_id;
  std::vector<AlignedSegment> segments;
  // NaN for alignments read back from a dump, which does not carry it.
  double total_path_logprob = std::numeric_limits<double>::quiet_NaN();
};

/// Numerically stable log-softmax of one frame.
template <std::floating_point T>
std::vector<double> log_softmax_frame(std::span<const T> logits) {
  if (logits.empty()) throw Error(ErrorCode::EmptyInput, "log_softmax_frame: empty row");
  double peak = -std::numeric_limits<double>::infinity();
  for (T v : logits) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "log_softmax_frame: non-finite logit");
    peak = std::max(peak, static_cast<double>(v));
  }
  double sum = 0.0;
  for (T v : logits) sum += std::exp(static_cast<double>(v) - peak);
  const double log_norm = peak + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - log_norm;
  return out;
}

template <std::floating_point T>
std::vector<double> log_softmax_frame(const std::vector<T>& logits) {
  return log_softmax_frame(std::span<const T>(logits));
}

/// Minimum number of frames a CTC path needs for this label sequence: one per
/// label plus a separating blank between each pair of equal neighbours.
inline std::size_t ctc_min_frames(std::span<const PhonemeId> targets) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < targets.size(); ++i) repeats += targets[i] == targets[i - 1];
  return targets.size() + repeats;
}

/// Best-path (Viterbi) forced alignment over the CTC trellis with the
/// expanded state sequence (blank, p1, blank, p2, ..., pL, blank).
///
/// Scores are log-softmax probabilities of the raw logits. On equal scores the
/// trellis prefers staying in a state over advancing, and advancing by one
/// over skipping a blank; among the two final states the last label wins over
/// the trailing blank. Frames assigned to blank states belong to no segment.
template <std::floating_point T>
Alignment ctc_align(MatrixView<T> logits, std::span<const PhonemeId> targets, PhonemeId blank,
                    std::string utt_id = {}) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (targets.empty()) throw Error(ErrorCode::EmptyInput, utt_id + ": empty target sequence");
  const std::size_t frames = logits.rows();
  const std::size_t vocab = logits.cols();
  if (blank >= vocab) throw Error(ErrorCode::IndexOutOfRange, utt_id + ": blank index outside vocabulary");
  for (PhonemeId p : targets) {
    if (p >= vocab) throw Error(ErrorCode::IndexOutOfRange, utt_id + ": target index outside vocabulary");
    if (p == blank) throw Error(ErrorCode::InvalidArgument, utt_id + ": target sequence contains blank");
  }
  const std::size_t needed = ctc_min_frames(targets);
  if (frames < needed) {
    throw Error(ErrorCode::Infeasible, utt_id + ": " + std::to_string(frames) +
                                           " frames cannot hold " + std::to_string(targets.size()) +
                                           " labels (need " + std::to_string(needed) + ")");
  }

  const std::size_t num_states = 2 * targets.size() + 1;
  const auto label_of = [&](std::size_t s) { return s % 2 == 0 ? blank : targets[s / 2]; };

  std::vector<double> logp;
  logp.reserve(frames * vocab);
  for (std::size_t t = 0; t < frames; ++t) {
    auto row = log_softmax_frame(logits.row(t));
    logp.insert(logp.end(), row.begin(), row.end());
  }
  const auto emit = [&](std::size_t t, std::size_t s) { return logp[t * vocab + label_of(s)]; };

  // back[t * S + s] = how many states the path moved forward to reach s at t.
  std::vector<std::uint8_t> back(frames * num_states, 0);
  std::vector<double> prev(num_states, kNegInf), curr(num_states, kNegInf);
  prev[0] = emit(0, 0);
  prev[1] = emit(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < num_states; ++s) {
      double best = prev[s];
      std::uint8_t step = 0;
      if (s >= 1 && prev[s - 1] > best) {
        best = prev[s - 1];
        step = 1;
      }
      if (s >= 2 && s % 2 == 1 && label_of(s) != label_of(s - 2) && prev[s - 2] > best) {
        best = prev[s - 2];
        step = 2;
      }
      curr[s] = best == kNegInf ? kNegInf : best + emit(t, s);
      back[t * num_states + s] = step;
    }
    std::swap(prev, curr);
  }

  std::size_t state = num_states - 2;
  if (prev[num_states - 1] > prev[num_states - 2]) state = num_states - 1;
  const double optimum = prev[state];
  if (optimum == kNegInf) throw Error(ErrorCode::Infeasible, utt_id + ": no valid CTC path");

  std::vector<std::size_t> path(frames);
  for (std::size_t t = frames; t-- > 0;) {
    path[t] = state;
    state -= back[t * num_states + state];
  }

  Alignment out;
  out.utt_id = std::move(utt_id);
  out.total_path_logprob = optimum;
  out.segments.resize(targets.size());
  std::vector<bool> seen(targets.size(), false);
  for (std::size_t t = 0; t < frames; ++t) {
    if (path[t] % 2 == 0) continue;
    const std::size_t pos = path[t] / 2;
    AlignedSegment& seg = out.segments[pos];
    if (!seen[pos]) {
      seen[pos] = true;
      seg.position = pos;
      seg.phoneme = targets[pos];
      seg.t1 = t;
    }
    seg.t2 = t;
    seg.span_score += logp[t * vocab + targets[pos]];
  }
  for (auto& seg : out.segments) seg.span_score /= static_cast<double>(seg.length());
  return out;
}

inline Alignment ctc_align(const Posteriorgram& p, std::span<const PhonemeId> targets,
                           PhonemeId blank) {
  return ctc_align(p.logits.view(), targets, blank, p.utt_id);
}

/// Rows [t1, t2] of the posteriorgram, unmodified.
template <std::floating_point T>
MatrixView<T> slice_segment(MatrixView<T> logits, const AlignedSegment& seg) {
  if (seg.t1 > seg.t2 || seg.t2 >= logits.rows()) {
    throw Error(ErrorCode::IndexOutOfRange, "segment [" + std::to_string(seg.t1) + ", " +
                                                std::to_string(seg.t2) + "] outside " +
                                                std::to_string(logits.rows()) + " frames");
  }
  return logits.rows_between(seg.t1, seg.t2);
}

inline MatrixView<float> slice_segment(const Posteriorgram& p, const AlignedSegment& seg) {
  return slice_segment(p.logits.view(), seg);
}

/// Checks the ordering/coverage invariants of an alignment against its targets.
inline void validate(const Alignment& a, std::span<const PhonemeId> targets, std::size_t frames) {
  if (a.segments.size() != targets.size()) {
    throw Error(ErrorCode::LengthMismatch, a.utt_id + ": alignment has " +
                                               std::to_string(a.segments.size()) +
                                               " segments, expected " + std::to_string(targets.size()));
  }
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    const auto& s = a.segments[i];
    if (s.position != i || s.phoneme != targets[i]) {
      throw Error(ErrorCode::Schema, a.utt_id + ": segment " + std::to_string(i) +
                                         " does not match the target sequence");
    }
    if (s.t1 > s.t2 || s.t2 >= frames) {
      throw Error(ErrorCode::IndexOutOfRange, a.utt_id + ": segment " + std::to_string(i) +
                                                  " outside frame range");
    }
    if (i > 0 && a.segments[i - 1].t2 >= s.t1) {
      throw Error(ErrorCode::Schema, a.utt_id + ": segments overlap at position " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// JSON-lines dump: one record per segment.

inline std::string alignment_to_jsonl(const Alignment& a) {
  std::string out;
  for (const auto& s : a.segments) {
    nlohmann::json rec;
    rec["utt_id"] = a.utt_id;
    rec["position"] = s.position;
    rec["phoneme"] = s.phoneme;
    rec["t1"] = s.t1;
    rec["t2"] = s.t2;
    rec["span_score"] = s.span_score;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

/// Groups records by utt_id, preserving first-appearance order.
inline std::vector<Alignment> parse_alignment_jsonl(std::string_view text) {
  std::vector<Alignment> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(ErrorCode::Schema, "alignment dump line " + std::to_string(line_no) + " is not JSON");
    }
    const std::string ctx = "alignment dump line " + std::to_string(line_no);
    AlignedSegment seg;
    const auto id = detail::require<std::string>(rec, "utt_id", ctx);
    seg.position = detail::require<std::size_t>(rec, "position", ctx);
    seg.phoneme = detail::require<std::size_t>(rec, "phoneme", ctx);
    seg.t1 = detail::require<std::size_t>(rec, "t1", ctx);
    seg.t2 = detail::require<std::size_t>(rec, "t2", ctx);
    seg.span_score = detail::require<double>(rec, "span_score", ctx);
    if (out.empty() || out.back().utt_id != id) {
      for (const auto& a : out) {
        if (a.utt_id == id) throw Error(ErrorCode::Schema, id + ": records are not contiguous in dump");
      }
      out.push_back(Alignment{id, {}, std::numeric_limits<double>::quiet_NaN()});
    }
    out.back().segments.push_back(seg);
  }
  return out;
}

}  // namespace gopkit
