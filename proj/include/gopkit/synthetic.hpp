#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gopkit/simerr.hpp"
#include "gopkit/tensorio.hpp"

namespace gopkit {

/// Parameters of a synthetic corpus with planted pronunciation errors.
///
/// Each utterance is blank frames, then per phoneme a run of frames where the
/// target logit dominates, separated by blank runs. A mispronounced phoneme
/// has a rival phoneme dominating its frames while the target logit is
/// depressed and oscillates, so every GOP variant sees the error.
struct SyntheticCorpusSpec {
  std::size_t utterances = 20;
  std::size_t phonemes_per_utterance = 4;
  std::size_t min_segment_frames = 3;
  std::size_t max_segment_frames = 5;
  std::size_t gap_frames = 2;
  double mispronounce_rate = 0.25;
  double noise = 0.2;  // half-width of uniform jitter added to every logit
  double frame_stride_ms = 20.0;
  std::uint64_t seed = 7;
};

inline PhonemeInventory synthetic_inventory() {
  return {{"<blank>", "a", "b", "d", "e", "s", "ð", "θ", "æ", "eɪ", "e:"}, 0};
}

struct SyntheticCorpus {
  CorpusManifest manifest;
  std::vector<Posteriorgram> logits;  // parallel to manifest.utterances
};

inline SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * detail::uniform01(rng); };
  const auto pick = [&](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(detail::uniform01(rng) * static_cast<double>(hi - lo + 1));
  };

  SyntheticCorpus out;
  out.manifest.inventory = synthetic_inventory();
  const auto& inv = out.manifest.inventory;
  const std::size_t vocab = inv.size();
  const PhonemeId blank = inv.blank_index;

  for (std::size_t u = 0; u < spec.utterances; ++u) {
    Utterance utt;
    utt.utt_id = "synth_" + std::to_string(u);
    utt.logits_path = utt.utt_id + ".gopl";
    utt.frame_stride_ms = spec.frame_stride_ms;
    utt.split = u % 2 == 0 ? Split::Train : Split::Test;
    std::vector<PhonemeId> spoken;
    std::vector<double> human;
    std::vector<std::size_t> lengths;
    for (std::size_t i = 0; i < spec.phonemes_per_utterance; ++i) {
      utt.canonical_phonemes.push_back(pick(1, vocab - 1));
    }
    const auto& canon = utt.canonical_phonemes;
    for (std::size_t i = 0; i < canon.size(); ++i) {
      PhonemeId realized = canon[i];
      double score = 2.0;
      if (detail::uniform01(rng) < spec.mispronounce_rate) {
        // A rival equal to a neighbouring target would let the aligner hand
        // the planted frames to that neighbour.
        const auto clashes = [&](PhonemeId r) {
          return r == canon[i] || (i > 0 && r == canon[i - 1]) || (i + 1 < canon.size() && r == canon[i + 1]);
        };
        do {
          realized = pick(1, vocab - 1);
        } while (clashes(realized));
        score = 0.5 * static_cast<double>(pick(0, 2));
      }
      spoken.push_back(realized);
      human.push_back(score);
      lengths.push_back(pick(spec.min_segment_frames, spec.max_segment_frames));
    }

    std::size_t frames = spec.gap_frames;
    for (std::size_t len : lengths) frames += len + spec.gap_frames;
    Matrix<float> logits(frames, vocab);
    for (auto& v : logits.data()) v = static_cast<float>(uniform(-spec.noise, spec.noise));

    std::size_t t = 0;
    const auto fill_gap = [&] {
      for (std::size_t g = 0; g < spec.gap_frames; ++g, ++t) logits(t, blank) += 10.0f;
    };
    fill_gap();
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      const PhonemeId target = utt.canonical_phonemes[i];
      for (std::size_t k = 0; k < lengths[i]; ++k, ++t) {
        logits(t, blank) += -2.0f;
        if (spoken[i] == target) {
          logits(t, target) += 8.0f;
        } else {
          logits(t, spoken[i]) += 7.0f;
          logits(t, target) += k % 2 == 0 ? 1.0f : 4.0f;
        }
      }
      fill_gap();
    }
    utt.spoken_phonemes = std::move(spoken);
    utt.human_scores = std::move(human);
    out.logits.push_back(Posteriorgram{utt.utt_id, std::move(logits), spec.frame_stride_ms});
    out.manifest.utterances.push_back(std::move(utt));
  }
  out.manifest.metadata["synthetic"] = {{"seed", spec.seed},
                                        {"utterances", spec.utterances},
                                        {"mispronounce_rate", spec.mispronounce_rate},
                                        {"noise", spec.noise}};
  return out;
}

/// Writes <dir>/manifest.json plus one .gopl per utterance.
inline std::filesystem::path write_synthetic_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  for (const auto& p : corpus.logits) write_logits(p, dir / (p.utt_id + ".gopl"));
  const auto manifest_path = dir / "manifest.json";
  save_manifest(corpus.manifest, manifest_path);
  return manifest_path;
}

}  // namespace gopkit
