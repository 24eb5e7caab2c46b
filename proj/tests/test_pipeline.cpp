#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <catch2/catch_amalgamated.hpp>

#include "gopkit/pipeline.hpp"
#include "gopkit/synthetic.hpp"
#include "test_support.hpp"

using namespace gopkit;
using test_support::read_text;
using test_support::TempDir;
using test_support::write_text;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = GOPKIT_FIXTURE_DIR;

int run_cli(const std::string& args, const fs::path& stderr_file = "/dev/null") {
  const std::string cmd = std::string("\"") + GOPKIT_CLI_PATH + "\" " + args + " >/dev/null 2>\"" +
                          stderr_file.string() + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(detail::split_csv_line(line, out.size() + 1));
  return out;
}

fs::path synthetic(const fs::path& dir, SyntheticCorpusSpec spec = {}) {
  return write_synthetic_corpus(make_synthetic_corpus(spec), dir);
}

}  // namespace

TEST_CASE("align writes one record per canonical phoneme", "[pipeline]") {
  TempDir out;
  CHECK(cmd_align(kFixture / "manifest.json", out.path()) == 3);
  const auto m = load_manifest(kFixture / "manifest.json");
  const auto alignments = parse_alignment_jsonl(read_text(out.path() / kAlignmentFile));
  REQUIRE(alignments.size() == 3);
  for (std::size_t i = 0; i < alignments.size(); ++i) {
    CHECK(alignments[i].utt_id == m.utterances[i].utt_id);
    const auto p = load_utterance_logits(m, m.utterances[i]);
    validate(alignments[i], m.utterances[i].canonical_phonemes, p.frames());
  }
}

TEST_CASE("an infeasible utterance fails the run and is named", "[pipeline]") {
  TempDir dir;
  Posteriorgram p{"shorty", Matrix<float>(2, 3), 20.0};
  write_logits(p, dir.path() / "shorty.gopl");
  write_text(dir.path() / "manifest.json", R"({
    "inventory": {"symbols": ["<b>", "a", "b"], "blank_index": 0},
    "utterances": [{"utt_id": "shorty", "logits_path": "shorty.gopl", "canonical_phonemes": [1, 1],
                    "frame_stride_ms": 20, "split": "train"}]})");
  try {
    cmd_align(dir.path() / "manifest.json", dir.path() / "out");
    FAIL("expected infeasible");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Infeasible);
    CHECK(std::string(e.what()).find("shorty") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(dir.path() / "out" / kAlignmentFile));
  CHECK(run_cli("align --manifest " + q(dir.path() / "manifest.json") + " --out " + q(dir.path() / "out"),
                dir.path() / "err.txt") == 1);
  CHECK(read_text(dir.path() / "err.txt").find("shorty") != std::string::npos);
}

TEST_CASE("a missing tensor file is an I/O error naming the utterance", "[pipeline]") {
  TempDir dir;
  write_text(dir.path() / "manifest.json", R"({
    "inventory": {"symbols": ["<b>", "a"], "blank_index": 0},
    "utterances": [{"utt_id": "ghost", "logits_path": "nowhere.gopl", "canonical_phonemes": [1],
                    "frame_stride_ms": 20, "split": "test"}]})");
  try {
    cmd_align(dir.path() / "manifest.json", dir.path());
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Io);
    CHECK(std::string(e.what()).find("nowhere.gopl") != std::string::npos);
  }
  CHECK(run_cli("align --manifest " + q(dir.path() / "manifest.json") + " --out " + q(dir.path())) == 1);
}

TEST_CASE("scores match the independent reference implementation", "[pipeline]") {
  TempDir out;
  REQUIRE(run_cli("align --manifest " + q(kFixture / "manifest.json") + " --out " + q(out.path())) == 0);
  REQUIRE(run_cli("score --manifest " + q(kFixture / "manifest.json") + " --alignments " +
                  q(out.path() / kAlignmentFile) + " --out " + q(out.path())) == 0);
  const auto got = csv_rows(read_text(out.path() / kScoreFile));
  const auto want = csv_rows(read_text(kFixture / "expected_scores.csv"));
  REQUIRE(got.size() == want.size());
  REQUIRE(got.size() == 11);
  CHECK(got[0] == want[0]);
  for (std::size_t r = 1; r < got.size(); ++r) {
    REQUIRE(got[r].size() == 12);
    for (std::size_t c : {0, 1, 2, 3, 4, 10}) CHECK(got[r][c] == want[r][c]);
    for (std::size_t c : {5, 6, 7, 8, 9, 11}) {
      CHECK(std::abs(std::stod(got[r][c]) - std::stod(want[r][c])) <= 1e-6);
    }
  }
}

TEST_CASE("alpha one makes the combined score equal the margin", "[pipeline]") {
  TempDir out;
  cmd_align(kFixture / "manifest.json", out.path());
  REQUIRE(run_cli("score --manifest " + q(kFixture / "manifest.json") + " --alignments " +
                  q(out.path() / kAlignmentFile) + " --out " + q(out.path()) + " --alpha 1") == 0);
  for (const auto& s : parse_scores_csv(read_text(out.path() / kScoreFile))) CHECK(s.gop_combined == s.gop_margin);
  CHECK(run_cli("score --manifest " + q(kFixture / "manifest.json") + " --alignments " +
                q(out.path() / kAlignmentFile) + " --out " + q(out.path()) + " --alpha 1.5") != 0);
}

TEST_CASE("repeated runs are byte-identical regardless of worker count", "[pipeline]") {
  TempDir dir;
  const auto manifest = synthetic(dir.path() / "corpus");
  const auto run = [&](const fs::path& out, int jobs) {
    const std::string j = " --jobs " + std::to_string(jobs);
    REQUIRE(run_cli("align --manifest " + q(manifest) + " --out " + q(out) + j) == 0);
    REQUIRE(run_cli("score --manifest " + q(manifest) + " --alignments " + q(out / kAlignmentFile) + " --out " +
                    q(out) + j) == 0);
    REQUIRE(run_cli("evaluate --scores " + q(out / kScoreFile) + " --manifest " + q(manifest) + " --out " +
                    q(out)) == 0);
  };
  run(dir.path() / "a", 1);
  run(dir.path() / "b", 4);
  for (const char* f : {kAlignmentFile, kScoreFile, kEvalReportFile, kPhonemeRateFile, kDistributionFile}) {
    INFO(f);
    CHECK(read_text(dir.path() / "a" / f) == read_text(dir.path() / "b" / f));
  }
}

TEST_CASE("evaluate on a separable corpus", "[pipeline]") {
  TempDir dir;
  const auto manifest = synthetic(dir.path() / "corpus");
  cmd_align(manifest, dir.path());
  cmd_score(manifest, dir.path() / kAlignmentFile, dir.path(), {});
  EvaluateOptions opt;
  opt.manifest_path = manifest;
  const auto outcome = cmd_evaluate(dir.path() / kScoreFile, dir.path(), opt);
  CHECK(outcome.reports_written);
  const auto doc = nlohmann::json::parse(read_text(dir.path() / kEvalReportFile));
  for (Metric m : kAllMetrics) {
    const auto& jm = doc["metrics"][std::string(metric_name(m))];
    INFO(metric_name(m));
    CHECK(jm["mcc"] == 1.0);
    CHECK(jm["auc_mcc_max"] == 1.0);
    CHECK(jm["pcc"].get<double>() > 0.5);
  }
  CHECK(doc["report_metric"] == std::string(metric_name(outcome.report_metric)));
  CHECK(doc["config"]["percentile_min"] == 1);

  const std::string first = read_text(dir.path() / kEvalReportFile);
  cmd_evaluate(dir.path() / kScoreFile, dir.path(), opt);
  CHECK(read_text(dir.path() / kEvalReportFile) == first);

  // report reproduces the files from the saved evaluation
  TempDir again;
  CHECK(cmd_report(dir.path() / kScoreFile, dir.path() / kEvalReportFile, again.path(), outcome.report_metric) ==
        outcome.report_metric);
  CHECK(read_text(again.path() / kPhonemeRateFile) == read_text(dir.path() / kPhonemeRateFile));
  CHECK(read_text(again.path() / kDistributionFile) == read_text(dir.path() / kDistributionFile));
}

TEST_CASE("evaluate without labels warns and still succeeds", "[pipeline]") {
  TempDir dir;
  std::vector<ScoredPhoneme> rows;
  for (int i = 0; i < 12; ++i) {
    ScoredPhoneme s;
    s.utt_id = "u" + std::to_string(i % 3);
    s.position = static_cast<std::size_t>(i / 3);
    s.phoneme = "a";
    s.gop_dnn = 0.1 * i;
    s.gop_max_logit = 5.0 - 0.2 * i;
    s.gop_margin = 3.0 - 0.3 * i + 0.01 * i * i;
    s.gop_var_logit = 0.05 * i * i;
    s.gop_combined = 0.5 * s.gop_margin - 0.5 * s.gop_dnn;
    s.human_score = 2.0 - (i % 5) * 0.4;
    rows.push_back(s);
  }
  write_text(dir.path() / "scores.csv", scores_to_csv(rows));
  REQUIRE(run_cli("evaluate --scores " + q(dir.path() / "scores.csv") + " --out " + q(dir.path() / "out"),
                  dir.path() / "err.txt") == 0);
  CHECK(read_text(dir.path() / "err.txt").find("warning") != std::string::npos);
  const auto doc = nlohmann::json::parse(read_text(dir.path() / "out" / kEvalReportFile));
  CHECK_FALSE(doc["metrics"]["dnn"].contains("mcc"));
  CHECK(doc["metrics"]["dnn"].contains("pcc"));
  CHECK_FALSE(fs::exists(dir.path() / "out" / kPhonemeRateFile));
  CHECK(doc["warnings"].size() >= 2);
}

TEST_CASE("simulate writes a loadable manifest and echoes its seed", "[pipeline]") {
  TempDir dir;
  SyntheticCorpusSpec spec;
  spec.mispronounce_rate = 0.0;
  const auto manifest = synthetic(dir.path() / "corpus", spec);
  REQUIRE(run_cli("simulate --manifest " + q(manifest) + " --seed 99 --out " + q(dir.path() / "sim")) == 0);
  const auto sim = load_manifest(dir.path() / "sim" / kSimulatedManifestFile);
  CHECK(sim.metadata["simulation"]["seed"] == 99);
  const auto labels = nlohmann::json::parse(read_text(dir.path() / "sim" / kLabelsFile));
  CHECK(labels["metadata"]["seed"] == 99);
  CHECK(labels["labels"].size() == sim.size());
  // tensors still resolve from the new location
  CHECK(cmd_align(dir.path() / "sim" / kSimulatedManifestFile, dir.path() / "sim") == sim.size());

  TempDir other;
  REQUIRE(run_cli("simulate --manifest " + q(manifest) + " --seed 99 --out " + q(other.path())) == 0);
  CHECK(read_text(other.path() / kLabelsFile) == read_text(dir.path() / "sim" / kLabelsFile));
}

TEST_CASE("CLI exit codes", "[pipeline][cli]") {
  TempDir dir;
  CHECK(run_cli("") != 0);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("frobnicate") != 0);
  CHECK(run_cli("align --manifest " + q(dir.path() / "absent.json") + " --out " + q(dir.path()),
                dir.path() / "err.txt") == 1);
  CHECK(read_text(dir.path() / "err.txt").rfind("gopkit: error:", 0) == 0);
  CHECK(run_cli("evaluate --scores " + q(dir.path() / "absent.csv") + " --out " + q(dir.path())) == 1);
  CHECK(run_cli("simulate --manifest " + q(kFixture / "manifest.json") + " --substitute-into nowhere --out " +
                q(dir.path())) != 0);
}

TEST_CASE("parallel_map keeps order and rethrows the first failure", "[pipeline]") {
  const auto squares = parallel_map<int>(100, 8, [](std::size_t i) { return static_cast<int>(i * i); });
  for (std::size_t i = 0; i < squares.size(); ++i) CHECK(squares[i] == static_cast<int>(i * i));
  try {
    parallel_map<int>(50, 4, [](std::size_t i) -> int {
      if (i == 7 || i == 30) throw Error(ErrorCode::Infeasible, "item " + std::to_string(i));
      return 0;
    });
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("item 7") != std::string::npos);
  }
}
