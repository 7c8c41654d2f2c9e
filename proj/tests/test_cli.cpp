#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "emoint/corpus_io.hpp"
#include "emoint/pipeline.hpp"

#ifndef EMOINT_CLI_PATH
#error "EMOINT_CLI_PATH must point at the emoint executable"
#endif

namespace fs = std::filesystem;
using namespace emoint;

namespace {

const nlohmann::json kTinyConfig = {
    {"world", {{"clips", 36}, {"frames_per_clip", 30}, {"identities", 2}}},
    {"predictor", {{"channels", 8}, {"wavenet_layers", 2}, {"steps", 20}, {"batch", 4}, {"crop", 20}}},
    {"transformer",
     {{"encoder_layers", 1}, {"decoder_layers", 1}, {"heads", 2}, {"token_dim", 16}, {"ffn_hidden", 32},
      {"deform_hidden", 16}}},
    {"sync", {{"hidden", 16}, {"embed_dim", 8}, {"steps", 20}, {"batch", 4}}},
    {"training", {{"pretrain_steps", 4}, {"finetune_steps", 4}, {"batch", 2}, {"crop", 20}}},
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("emoint_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream(root_ / "config.json") << kTinyConfig.dump(2);
    ASSERT_EQ(emoint("synth --out " + quoted(corpus())), 0);
    ASSERT_EQ(emoint("label --corpus " + quoted(corpus()) + " --out " + quoted(root_ / "labels" / "intensity.jsonl")), 0);
    ASSERT_EQ(emoint("train-predictor --corpus " + quoted(corpus()) + " --labels " +
                     quoted(root_ / "labels" / "intensity.jsonl") + " --out " + quoted(predictor())),
              0);
    ASSERT_EQ(emoint("train-generator --corpus " + quoted(corpus()) + " --out " + quoted(generator())), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static int emoint(const std::string& args, unsigned seed = 7) {
    const std::string cmd = std::string("\"") + EMOINT_CLI_PATH + "\" --seed " + std::to_string(seed) + " --config " +
                            quoted(root_ / "config.json") + " " + args + " > " + quoted(root_ / "last.log") + " 2>&1";
    return std::system(cmd.c_str());
  }

  static fs::path corpus() { return root_ / "corpus"; }
  static fs::path predictor() { return root_ / "models" / "predictor.bin"; }
  static fs::path generator() { return root_ / "models" / "generator.bin"; }

  static fs::path root_;
};

fs::path Cli::root_;

TEST_F(Cli, StagesWriteTheirArtifacts) {
  EXPECT_TRUE(fs::exists(corpus() / "audio"));
  EXPECT_TRUE(fs::exists(root_ / "labels" / "norm_spec.json"));
  EXPECT_TRUE(fs::exists(root_ / "labels" / "neutrals.jsonl"));
  EXPECT_GT(fs::file_size(predictor()), 0u);
  EXPECT_GT(fs::file_size(generator()), 0u);
}

TEST_F(Cli, BadArgumentsFail) {
  EXPECT_NE(emoint("label --corpus " + quoted(root_ / "missing") + " --out " + quoted(root_ / "x.jsonl")), 0);
  EXPECT_NE(emoint("frobnicate"), 0);
  std::ofstream(root_ / "bad.json") << R"({"transformer": {"head": 3}})";
  const std::string cmd = std::string("\"") + EMOINT_CLI_PATH + "\" --config " + quoted(root_ / "bad.json") +
                          " synth --out " + quoted(root_ / "never") + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 2);
  EXPECT_FALSE(fs::exists(root_ / "never"));
}

TEST_F(Cli, LevelTwoConditionsAtNormFifteen) {
  const CorpusBundle bundle = read_corpus_dir(corpus());
  const auto& clip = bundle.sequences.front();
  InferOptions o;
  o.model = generator();
  o.audio = corpus() / "audio" / (clip.clip_id + ".wav");
  o.emotion = "happy";
  o.level = 2;
  o.out = root_ / "level2.jsonl";
  const InferResult r = run_infer(o);
  ASSERT_EQ(static_cast<int>(r.condition_norms.size()), static_cast<int>(r.keypoints.size()));
  for (const double n : r.condition_norms) EXPECT_NEAR(n, 15.0, 1e-9);

  ASSERT_EQ(emoint("infer --model " + quoted(generator()) + " --audio " + quoted(o.audio) +
                   " --emotion happy --level 2 --out " + quoted(root_ / "level2_cli.jsonl")),
            0);
  EXPECT_EQ(slurp(root_ / "level2_cli.jsonl"), slurp(o.out));
}

TEST_F(Cli, PipelineMatchesStageByStage) {
  const fs::path piped = root_ / "piped";
  ASSERT_EQ(emoint("pipeline --predictor " + quoted(predictor()) + " --generator " + quoted(generator()) +
                   " --corpus " + quoted(corpus()) + " --out " + quoted(piped)),
            0);

  const fs::path staged = root_ / "staged";
  const fs::path labels = staged / "labels" / "intensity.jsonl";
  ASSERT_EQ(emoint("label --corpus " + quoted(corpus()) + " --out " + quoted(labels)), 0);
  const CorpusBundle bundle = read_corpus_dir(corpus());
  int clips = 0;
  for (const auto& seq : bundle.sequences) {
    if (seq.split != "test") continue;
    const fs::path wav = corpus() / "audio" / (seq.clip_id + ".wav");
    const fs::path trace = staged / "intensity" / (seq.clip_id + ".json");
    const fs::path keypoints = staged / "keypoints" / (seq.clip_id + ".jsonl");
    fs::create_directories(trace.parent_path());
    fs::create_directories(keypoints.parent_path());
    ASSERT_EQ(emoint("predict --model " + quoted(predictor()) + " --audio " + quoted(wav) + " --out " + quoted(trace)),
              0);
    ASSERT_EQ(emoint("infer --model " + quoted(generator()) + " --audio " + quoted(wav) + " --emotion \"" +
                     seq.emotion_label + "\" --intensity " + quoted(trace) + " --out " + quoted(keypoints)),
              0);
    EXPECT_EQ(slurp(trace), slurp(piped / "intensity" / trace.filename()));
    EXPECT_EQ(slurp(keypoints), slurp(piped / "keypoints" / keypoints.filename()));
    ++clips;
  }
  ASSERT_GT(clips, 0);
  ASSERT_EQ(emoint("eval --pred " + quoted(staged) + " --ref " + quoted(corpus()) + " --neutral " +
                   quoted(staged / "labels" / "neutrals.jsonl") + " --norm-spec " +
                   quoted(staged / "labels" / "norm_spec.json") + " --report " + quoted(staged / "report.json")),
            0);
  EXPECT_EQ(slurp(staged / "report.json"), slurp(piped / "report.json"));
  EXPECT_EQ(slurp(labels), slurp(piped / "labels" / "intensity.jsonl"));
}

}  // namespace
