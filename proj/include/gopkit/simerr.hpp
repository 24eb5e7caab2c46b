#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gopkit/error.hpp"
#include "gopkit/fileutil.hpp"
#include "gopkit/tensorio.hpp"

namespace gopkit {

struct SubstitutionRule {
  std::string from;
  std::string to;
  double probability = 1.0;
};

/// The four L1-Dutch substitutions: /ð/->/d/, /θ/->/s/, /æ/->/e/, /eɪ/->/e:/.
inline std::vector<SubstitutionRule> default_substitution_rules() {
  return {
      {"ð", "d", 1.0},
      {"θ", "s", 1.0},
      {"æ", "e", 1.0},
      {"eɪ", "e:", 1.0},
  };
}

struct SimulatedErrors {
  std::vector<PhonemeId> spoken;
  std::vector<bool> labels;  // true where a substitution fired
};

/// FNV-1a, stable across platforms and runs.
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for one utterance: run seed xor hash of the utterance id.
inline std::uint64_t utterance_seed(std::uint64_t seed, std::string_view utt_id) {
  return seed ^ stable_hash(utt_id);
}

namespace detail {

struct ResolvedRule {
  PhonemeId from;
  PhonemeId to;
  double probability;
};

inline std::vector<ResolvedRule> resolve_rules(std::span<const SubstitutionRule> rules,
                                               const PhonemeInventory& inventory) {
  std::vector<ResolvedRule> out;
  for (const auto& r : rules) {
    if (!(r.probability >= 0.0 && r.probability <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "rule " + r.from + "->" + r.to + ": probability outside [0, 1]");
    }
    if (r.from == r.to) throw Error(ErrorCode::InvalidArgument, "rule " + r.from + "->" + r.to + " is a no-op");
    const auto from = inventory.find(r.from);
    const auto to = inventory.find(r.to);
    if (!from) throw Error(ErrorCode::UnknownSymbol, "rule symbol '" + r.from + "' not in inventory");
    if (!to) throw Error(ErrorCode::UnknownSymbol, "rule symbol '" + r.to + "' not in inventory");
    if (*from == inventory.blank_index || *to == inventory.blank_index) {
      throw Error(ErrorCode::InvalidArgument, "rule " + r.from + "->" + r.to + " touches the blank");
    }
    for (const auto& prev : out) {
      if (prev.from == *from) throw Error(ErrorCode::InvalidArgument, "two rules rewrite '" + r.from + "'");
    }
    out.push_back({*from, *to, r.probability});
  }
  return out;
}

// 53-bit uniform in [0, 1); independent of the standard library's distributions.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Rewrites matching positions of `canonical`; one uniform draw is consumed per
/// eligible position, so results depend only on the sequence and the seed.
inline SimulatedErrors apply_substitutions(std::span<const PhonemeId> canonical,
                                           std::span<const SubstitutionRule> rules,
                                           const PhonemeInventory& inventory, std::uint64_t seed) {
  const auto resolved = detail::resolve_rules(rules, inventory);
  std::mt19937_64 rng(seed);
  SimulatedErrors out{std::vector<PhonemeId>(canonical.begin(), canonical.end()),
                      std::vector<bool>(canonical.size(), false)};
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    for (const auto& r : resolved) {
      if (r.from != canonical[i]) continue;
      if (detail::uniform01(rng) < r.probability) {
        out.spoken[i] = r.to;
        out.labels[i] = true;
      }
      break;
    }
  }
  return out;
}

inline std::vector<SubstitutionRule> parse_rules(const nlohmann::json& doc) {
  if (!doc.is_array()) throw Error(ErrorCode::Schema, "rule file must be a JSON list");
  std::vector<SubstitutionRule> rules;
  for (const auto& jr : doc) {
    SubstitutionRule r;
    r.from = detail::require<std::string>(jr, "from", "rule");
    r.to = detail::require<std::string>(jr, "to", "rule");
    r.probability = detail::require<double>(jr, "probability", "rule " + r.from);
    rules.push_back(std::move(r));
  }
  return rules;
}

inline std::vector<SubstitutionRule> load_rules(const std::filesystem::path& path) {
  try {
    return parse_rules(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Schema, path.string() + ": invalid JSON: " + e.what());
  }
}

inline nlohmann::json rules_to_json(std::span<const SubstitutionRule> rules) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rules) out.push_back({{"from", r.from}, {"to", r.to}, {"probability", r.probability}});
  return out;
}

/// Where the rewritten sequence goes in the augmented manifest.
enum class SubstitutionTarget {
  /// spoken_phonemes receives the rewrite; the canonical transcript is kept.
  Spoken,
  /// canonical_phonemes receives the rewrite and the original moves to
  /// spoken_phonemes. This matches correctly read audio aligned against an
  /// altered transcript.
  Canonical,
};

struct SimulationResult {
  CorpusManifest manifest;
  nlohmann::json labels;  // {"seed":..., "labels": {utt_id: [bool...]}}
};

inline SimulationResult simulate_corpus(const CorpusManifest& in,
                                        std::span<const SubstitutionRule> rules, std::uint64_t seed,
                                        SubstitutionTarget target = SubstitutionTarget::Spoken) {
  SimulationResult res{in, nlohmann::json::object()};
  nlohmann::json per_utt = nlohmann::json::object();
  std::size_t fired = 0, eligible_total = 0;
  const auto resolved = detail::resolve_rules(rules, in.inventory);
  for (auto& u : res.manifest.utterances) {
    const auto sim = apply_substitutions(u.canonical_phonemes, rules, in.inventory,
                                         utterance_seed(seed, u.utt_id));
    for (PhonemeId p : u.canonical_phonemes) {
      for (const auto& r : resolved) eligible_total += r.from == p;
    }
    for (bool l : sim.labels) fired += l;
    if (target == SubstitutionTarget::Spoken) {
      u.spoken_phonemes = sim.spoken;
    } else {
      u.spoken_phonemes = u.canonical_phonemes;
      u.canonical_phonemes = sim.spoken;
    }
    per_utt[u.utt_id] = sim.labels;
  }
  nlohmann::json meta = {
      {"seed", seed},
      {"rules", rules_to_json(rules)},
      {"substitute_into", target == SubstitutionTarget::Spoken ? "spoken" : "canonical"},
      {"eligible_positions", eligible_total},
      {"substitutions", fired},
  };
  res.manifest.metadata["simulation"] = meta;
  res.labels = {{"metadata", meta}, {"labels", per_utt}};
  return res;
}

}  // namespace gopkit
