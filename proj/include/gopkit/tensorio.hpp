#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gopkit/error.hpp"
#include "gopkit/fileutil.hpp"
#include "gopkit/matrix.hpp"

namespace gopkit {

using PhonemeId = std::size_t;

inline constexpr std::array<char, 4> kLogitMagic{'G', 'O', 'P', 'L'};
inline constexpr std::uint32_t kLogitFormatVersion = 1;
inline constexpr std::size_t kLogitHeaderBytes = 16;
/// Used when a tensor is read without a manifest entry to supply the stride.
inline constexpr double kDefaultFrameStrideMs = 20.0;

/// T x V raw frame logits of one utterance.
struct Posteriorgram {
  std::string utt_id;
  Matrix<float> logits;
  double frame_stride_ms = kDefaultFrameStrideMs;

  std::size_t frames() const noexcept { return logits.rows(); }
  std::size_t vocab() const noexcept { return logits.cols(); }
};

inline void validate(const Posteriorgram& p) {
  if (p.frames() < 1) throw Error(ErrorCode::ShapeMismatch, p.utt_id + ": posteriorgram has no frames");
  if (p.vocab() < 2) throw Error(ErrorCode::ShapeMismatch, p.utt_id + ": vocabulary size below 2");
  if (!(p.frame_stride_ms > 0.0) || !std::isfinite(p.frame_stride_ms)) {
    throw Error(ErrorCode::InvalidArgument, p.utt_id + ": frame_stride_ms must be positive");
  }
  const auto& d = p.logits.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) {
      throw Error(ErrorCode::NonFinite, p.utt_id + ": non-finite logit at frame " +
                                            std::to_string(i / p.vocab()) + ", column " +
                                            std::to_string(i % p.vocab()));
    }
  }
}

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Serializes to the .gopl byte layout: "GOPL", u32 version, u32 T, u32 V,
/// then T*V little-endian float32 values, frame-major.
inline std::string encode_logits(const Posteriorgram& p) {
  validate(p);
  std::string out;
  out.reserve(kLogitHeaderBytes + p.logits.data().size() * 4);
  out.append(kLogitMagic.data(), kLogitMagic.size());
  detail::put_u32_le(out, kLogitFormatVersion);
  detail::put_u32_le(out, static_cast<std::uint32_t>(p.frames()));
  detail::put_u32_le(out, static_cast<std::uint32_t>(p.vocab()));
  for (float v : p.logits.data()) detail::put_u32_le(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Posteriorgram decode_logits(std::string_view bytes, std::size_t expected_vocab,
                                   std::string utt_id = {},
                                   double frame_stride_ms = kDefaultFrameStrideMs) {
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kLogitHeaderBytes) {
    if (bytes.size() >= 4 && std::memcmp(raw, kLogitMagic.data(), 4) != 0) {
      throw Error(ErrorCode::BadMagic, utt_id + ": missing GOPL magic");
    }
    throw Error(ErrorCode::TruncatedPayload, utt_id + ": header shorter than 16 bytes");
  }
  if (std::memcmp(raw, kLogitMagic.data(), 4) != 0) {
    throw Error(ErrorCode::BadMagic, utt_id + ": missing GOPL magic");
  }
  const std::uint32_t version = detail::get_u32_le(raw + 4);
  if (version != kLogitFormatVersion) {
    throw Error(ErrorCode::VersionMismatch,
                utt_id + ": unsupported format version " + std::to_string(version));
  }
  const std::size_t frames = detail::get_u32_le(raw + 8);
  const std::size_t vocab = detail::get_u32_le(raw + 12);
  if (vocab != expected_vocab) {
    throw Error(ErrorCode::ShapeMismatch, utt_id + ": file has V=" + std::to_string(vocab) +
                                              ", inventory expects " +
                                              std::to_string(expected_vocab));
  }
  const std::size_t count = frames * vocab;
  const std::size_t payload = bytes.size() - kLogitHeaderBytes;
  if (payload < count * 4) {
    throw Error(ErrorCode::TruncatedPayload, utt_id + ": expected " + std::to_string(count) +
                                                 " floats, found " + std::to_string(payload / 4));
  }
  if (payload > count * 4) {
    throw Error(ErrorCode::ShapeMismatch, utt_id + ": trailing bytes after payload");
  }
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = std::bit_cast<float>(detail::get_u32_le(raw + kLogitHeaderBytes + 4 * i));
  }
  Posteriorgram p{std::move(utt_id), Matrix<float>(frames, vocab, std::move(values)),
                  frame_stride_ms};
  validate(p);
  return p;
}

inline Posteriorgram read_logits(const std::filesystem::path& path, std::size_t expected_vocab,
                                 std::optional<std::string> utt_id = std::nullopt,
                                 double frame_stride_ms = kDefaultFrameStrideMs) {
  std::string id = utt_id.value_or(path.stem().string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, id + ": cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_logits(bytes, expected_vocab, std::move(id), frame_stride_ms);
}

inline void write_logits(const Posteriorgram& p, const std::filesystem::path& path) {
  write_file_atomic(path, encode_logits(p));
}

// ---------------------------------------------------------------------------
// Corpus manifest

struct PhonemeInventory {
  std::vector<std::string> symbols;
  PhonemeId blank_index = 0;

  std::size_t size() const noexcept { return symbols.size(); }

  std::optional<PhonemeId> find(std::string_view symbol) const {
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (symbols[i] == symbol) return i;
    }
    return std::nullopt;
  }
};

inline void validate(const PhonemeInventory& inv) {
  if (inv.symbols.size() < 2) {
    throw Error(ErrorCode::Schema, "inventory needs blank plus at least one phoneme");
  }
  std::set<std::string_view> seen;
  for (const auto& s : inv.symbols) {
    if (s.empty()) throw Error(ErrorCode::Schema, "inventory contains an empty symbol");
    if (!seen.insert(s).second) throw Error(ErrorCode::Schema, "duplicate inventory symbol '" + s + "'");
  }
  if (inv.blank_index >= inv.symbols.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "blank_index outside inventory");
  }
}

enum class Split { Train, Test };

struct Utterance {
  std::string utt_id;
  std::string logits_path;  // as written in the manifest; relative paths resolve against base_dir
  std::vector<PhonemeId> canonical_phonemes;
  std::optional<std::vector<PhonemeId>> spoken_phonemes;
  std::optional<std::vector<double>> human_scores;
  double frame_stride_ms = kDefaultFrameStrideMs;
  Split split = Split::Train;
};

struct CorpusManifest {
  PhonemeInventory inventory;
  std::vector<Utterance> utterances;
  nlohmann::json metadata = nlohmann::json::object();
  std::filesystem::path base_dir;

  std::size_t size() const noexcept { return utterances.size(); }

  std::filesystem::path resolve(const Utterance& u) const {
    std::filesystem::path p(u.logits_path);
    return p.is_absolute() ? p : base_dir / p;
  }
};

inline constexpr double kHumanScoreMax = 2.0;

inline void validate(const CorpusManifest& m) {
  validate(m.inventory);
  std::set<std::string_view> ids;
  const auto check_ids = [&](const Utterance& u, const std::vector<PhonemeId>& seq,
                             std::string_view field) {
    for (PhonemeId id : seq) {
      if (id >= m.inventory.size()) {
        throw Error(ErrorCode::IndexOutOfRange, u.utt_id + ": " + std::string(field) +
                                                    " index " + std::to_string(id) +
                                                    " outside inventory");
      }
      if (id == m.inventory.blank_index) {
        throw Error(ErrorCode::IndexOutOfRange,
                    u.utt_id + ": " + std::string(field) + " contains the blank index");
      }
    }
  };
  for (const auto& u : m.utterances) {
    if (u.utt_id.empty()) throw Error(ErrorCode::Schema, "utterance with empty utt_id");
    if (!ids.insert(u.utt_id).second) throw Error(ErrorCode::Schema, u.utt_id + ": duplicate utt_id");
    if (u.canonical_phonemes.empty()) {
      throw Error(ErrorCode::EmptyInput, u.utt_id + ": canonical_phonemes is empty");
    }
    if (!(u.frame_stride_ms > 0.0)) {
      throw Error(ErrorCode::Schema, u.utt_id + ": frame_stride_ms must be positive");
    }
    check_ids(u, u.canonical_phonemes, "canonical_phonemes");
    if (u.spoken_phonemes) {
      if (u.spoken_phonemes->size() != u.canonical_phonemes.size()) {
        throw Error(ErrorCode::LengthMismatch,
                    u.utt_id + ": spoken_phonemes length differs from canonical_phonemes");
      }
      check_ids(u, *u.spoken_phonemes, "spoken_phonemes");
    }
    if (u.human_scores) {
      if (u.human_scores->size() != u.canonical_phonemes.size()) {
        throw Error(ErrorCode::LengthMismatch,
                    u.utt_id + ": human_scores length differs from canonical_phonemes");
      }
      for (double s : *u.human_scores) {
        if (!(s >= 0.0 && s <= kHumanScoreMax)) {
          throw Error(ErrorCode::Schema, u.utt_id + ": human score outside [0, 2]");
        }
      }
    }
  }
}

namespace detail {

template <typename T>
T require(const nlohmann::json& obj, const char* key, const std::string& ctx) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw Error(ErrorCode::Schema, ctx + ": missing key '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::Schema, ctx + ": key '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline CorpusManifest parse_manifest(const nlohmann::json& doc,
                                     std::filesystem::path base_dir = {}) {
  using nlohmann::json;
  if (!doc.is_object()) throw Error(ErrorCode::Schema, "manifest must be a JSON object");
  CorpusManifest m;
  m.base_dir = std::move(base_dir);
  const json inv = detail::require<json>(doc, "inventory", "manifest");
  m.inventory.symbols = detail::require<std::vector<std::string>>(inv, "symbols", "inventory");
  const auto blank = detail::require<long long>(inv, "blank_index", "inventory");
  if (blank < 0) throw Error(ErrorCode::IndexOutOfRange, "blank_index is negative");
  m.inventory.blank_index = static_cast<PhonemeId>(blank);
  if (doc.contains("metadata")) m.metadata = doc.at("metadata");

  const json utts = detail::require<json>(doc, "utterances", "manifest");
  if (!utts.is_array()) throw Error(ErrorCode::Schema, "utterances must be an array");
  const auto to_ids = [](const std::vector<long long>& raw, const std::string& ctx) {
    std::vector<PhonemeId> out;
    out.reserve(raw.size());
    for (long long v : raw) {
      if (v < 0) throw Error(ErrorCode::IndexOutOfRange, ctx + ": negative phoneme index");
      out.push_back(static_cast<PhonemeId>(v));
    }
    return out;
  };
  for (const auto& ju : utts) {
    Utterance u;
    u.utt_id = detail::require<std::string>(ju, "utt_id", "utterance");
    const std::string& ctx = u.utt_id;
    u.logits_path = detail::require<std::string>(ju, "logits_path", ctx);
    u.canonical_phonemes =
        to_ids(detail::require<std::vector<long long>>(ju, "canonical_phonemes", ctx), ctx);
    if (ju.contains("spoken_phonemes") && !ju.at("spoken_phonemes").is_null()) {
      u.spoken_phonemes =
          to_ids(detail::require<std::vector<long long>>(ju, "spoken_phonemes", ctx), ctx);
    }
    if (ju.contains("human_scores") && !ju.at("human_scores").is_null()) {
      u.human_scores = detail::require<std::vector<double>>(ju, "human_scores", ctx);
    }
    u.frame_stride_ms = detail::require<double>(ju, "frame_stride_ms", ctx);
    const auto split = detail::require<std::string>(ju, "split", ctx);
    if (split == "train") {
      u.split = Split::Train;
    } else if (split == "test") {
      u.split = Split::Test;
    } else {
      throw Error(ErrorCode::Schema, ctx + ": split must be 'train' or 'test'");
    }
    m.utterances.push_back(std::move(u));
  }
  validate(m);
  return m;
}

inline CorpusManifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Schema, path.string() + ": invalid JSON: " + e.what());
  }
  return parse_manifest(doc, path.parent_path());
}

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
  using nlohmann::json;
  json doc;
  doc["inventory"] = {{"symbols", m.inventory.symbols}, {"blank_index", m.inventory.blank_index}};
  json utts = json::array();
  for (const auto& u : m.utterances) {
    json ju;
    ju["utt_id"] = u.utt_id;
    ju["logits_path"] = u.logits_path;
    ju["canonical_phonemes"] = u.canonical_phonemes;
    if (u.spoken_phonemes) ju["spoken_phonemes"] = *u.spoken_phonemes;
    if (u.human_scores) ju["human_scores"] = *u.human_scores;
    ju["frame_stride_ms"] = u.frame_stride_ms;
    ju["split"] = u.split == Split::Train ? "train" : "test";
    utts.push_back(std::move(ju));
  }
  doc["utterances"] = std::move(utts);
  if (!m.metadata.empty()) doc["metadata"] = m.metadata;
  return doc;
}

inline void save_manifest(const CorpusManifest& m, const std::filesystem::path& path) {
  validate(m);
  write_file_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

/// Loads the tensor of one manifest entry and checks it against the inventory.
inline Posteriorgram load_utterance_logits(const CorpusManifest& m, const Utterance& u) {
  return read_logits(m.resolve(u), m.inventory.size(), u.utt_id, u.frame_stride_ms);
}

}  // namespace gopkit
