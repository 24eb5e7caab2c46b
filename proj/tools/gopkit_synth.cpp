// Writes a synthetic corpus with planted mispronunciations for demos and tests.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "gopkit/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic logit corpus with planted pronunciation errors"};
  gopkit::SyntheticCorpusSpec spec;
  std::filesystem::path out_dir;
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--utterances", spec.utterances)->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--phonemes", spec.phonemes_per_utterance)->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--error-rate", spec.mispronounce_rate)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  app.add_option("--noise", spec.noise)->check(CLI::NonNegativeNumber)->capture_default_str();
  app.add_option("--seed", spec.seed)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    const auto path = gopkit::write_synthetic_corpus(gopkit::make_synthetic_corpus(spec), out_dir);
    std::cout << path.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "gopkit_synth: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
