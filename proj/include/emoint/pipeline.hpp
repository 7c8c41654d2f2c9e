#pragma once

// Stage functions behind the command-line tool. Each stage reads and
// writes files only, so running the stages one by one and running the
// pipeline produce the same bytes.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "emoint/config.hpp"

namespace emoint {

namespace fs = std::filesystem;

using Logger = std::function<void(const std::string&)>;

// Corpus directory layout (see write_corpus_dir); the world seed is the run seed.
void run_synth(const RunConfig& config, std::uint64_t seed, const fs::path& out_dir, const Logger& log = {});

struct LabelOutputs {
  fs::path labels;     // intensity sequences, one per clip
  fs::path norm_spec;  // fitted (or reused) normalization
  fs::path neutrals;   // neutral references per identity
};

// Labels every clip of corpus_dir. When norm_spec names an existing file it
// is reused; otherwise a spec is fitted on the training split and written
// there (default: next to the labels). Neutral references go next to the labels.
LabelOutputs run_label(const fs::path& corpus_dir, const fs::path& out, const std::optional<fs::path>& norm_spec,
                       const Logger& log = {});

// Trains on the training split; the archive stores the run configuration.
void run_train_predictor(const RunConfig& config, const fs::path& corpus_dir, const fs::path& labels,
                         const fs::path& out_model, std::uint64_t seed, const Logger& log = {});

// Reads a WAV file, extracts features with the model's stored feature
// configuration and writes a single intensity sequence (JSON).
void run_predict(const fs::path& model, const fs::path& audio, const std::string& mode, const fs::path& out,
                 std::uint64_t seed);

// Labels the corpus, pre-trains the sync expert and trains the generator in
// two stages. Writes the model archive, <out>.log.jsonl and checkpoints in
// <out>.checkpoints/.
void run_train_generator(const RunConfig& config, const fs::path& corpus_dir, const fs::path& out_model,
                         std::uint64_t seed, const Logger& log = {});

struct InferOptions {
  fs::path model;
  fs::path audio;
  std::string emotion;
  std::optional<fs::path> intensity;
  std::optional<int> level;
  fs::path out;
  std::uint64_t seed = 0;
  std::string clip_id;  // defaults to the audio file stem
  bool sample_noise = false;  // false: zero noise code; true: seeded normal draw
};

struct InferResult {
  KeypointSequence keypoints;
  std::vector<double> condition_norms;  // per frame; 0 for the neutral origin
};

// Writes one generated keypoint sequence (expression deviations) as JSONL.
InferResult run_infer(const InferOptions& options);

// pred_dir holds keypoints/<clip>.jsonl and intensity/<clip>.json; ref_dir is a corpus directory.
// With plot_dir set, also writes one PGM per clip: target and recomputed
// intensity traces with audio and motion beat ticks.
void run_eval(const fs::path& pred_dir, const fs::path& ref_dir, const fs::path& neutrals, const fs::path& norm_spec,
              const fs::path& report, const EvaluationConfig& config = {}, const fs::path& plot_dir = {});

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineOptions {
  fs::path predictor;
  fs::path generator;
  fs::path corpus;
  fs::path neutrals;   // empty: label the corpus into <out>/labels first
  fs::path norm_spec;  // empty: as above
  fs::path out;
  std::optional<std::string> emotion;  // default: each clip's own label
  std::uint64_t seed = 0;
};

// For every clip of the configured split: predict -> condition -> generate
// (-> render), then evaluate. Stage failures are rethrown with the stage name.
void run_pipeline(const RunConfig& config, const PipelineOptions& options, const Logger& log = {});

// Binary PGM contact sheet of rendered frames, ten per row.
void write_render_sheet(const fs::path& path, const ToyRenderer& renderer, const KeypointSequence& deviations);

// Model archives carry the full run configuration as text entry "config".
RunConfig config_from_archive(const ModelArchive& archive);

}  // namespace emoint
