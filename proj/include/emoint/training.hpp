#pragma once

// Generation objective and the two-stage training schedule: emotion-free
// pre-training on neutral clips, then emotional fine-tuning with the
// adaptation network, the neutral norm penalty and the lip-sync term.

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "emoint/corpus_io.hpp"
#include "emoint/emotion_space.hpp"
#include "emoint/expression_transformer.hpp"
#include "emoint/keypoint_intensity.hpp"
#include "emoint/nn.hpp"

namespace emoint {

struct LossWeights {
  double exp = 100.0;
  double rec = 10.0;
  double sync = 10.0;
  double norm = 0.1;

  void validate() const;
};

struct LossParts {
  double exp = 0.0;
  double rec = 0.0;
  double sync = 0.0;
  double norm = 0.0;
};

// Mean squared difference over all T·K·3 entries.
double loss_exp(const KeypointSequence& pred, const KeypointSequence& target);
ag::Var loss_exp(const ag::Var& pred, const ag::Matrix& target);

// Mean absolute difference over pixels where mask is 1.
double loss_rec(const ag::Matrix& pred, const ag::Matrix& target, const ag::Matrix& mask);
ag::Var loss_rec(const ag::Var& pred, const ag::Matrix& target, const ag::Matrix& mask);

inline constexpr double kSyncEpsilon = 1e-7;
inline constexpr double kSyncCosineFloor = 1e-7;

// -log(clamp(v·s / max(|v||s|, eps), floor, 1)).
double loss_sync(const Eigen::VectorXd& v, const Eigen::VectorXd& s);
// Row-wise form averaged over rows.
ag::Var loss_sync_rows(const ag::Var& v, const ag::Var& s);
ag::Var cosine_rows(const ag::Var& v, const ag::Var& s);  // n×1

double total_loss(const LossParts& parts, const LossWeights& w, bool is_neutral);
ag::Var total_loss(const ag::Var& exp, const ag::Var& rec, const ag::Var& sync, const ag::Var& norm,
                   const LossWeights& w, bool is_neutral);

// ---- sync embedder ---------------------------------------------------------

struct SyncEmbedderConfig {
  int window = 5;
  int keypoint_dim = 3 * kDefaultKeypoints;
  int audio_dim = 64;
  int hidden = 128;
  int embed_dim = 64;
  double margin = 0.5;
  int steps = 2000;
  int batch = 16;
  double learning_rate = 1e-3;

  void validate() const;
};

// Two branches of window convolutions (kernel = window, valid) followed by a
// pointwise layer and a linear head. Each output row embeds one window.
class SyncEmbedder {
 public:
  SyncEmbedder(const SyncEmbedderConfig& config, Rng& rng);
  SyncEmbedder(const SyncEmbedderConfig& config, const ModelArchive& archive);

  const SyncEmbedderConfig& config() const { return config_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  // T × keypoint_dim deviations -> (T - window + 1) × embed_dim.
  ag::Var video(const ag::Var& keypoints) const;
  // T × audio_dim features -> (T - window + 1) × embed_dim.
  ag::Var audio(const ag::Var& features) const;

  void save_to(ModelArchive& archive) const { store_.save_to(archive); }

 private:
  void build(Rng& rng);
  ag::Var windows(const ag::Var& x) const;

  SyncEmbedderConfig config_;
  nn::ParamStore store_;
  nn::Linear v1_, v2_, v3_, a1_, a2_, a3_;
};

// One aligned clip: keypoint deviations from neutral and audio features.
struct SyncExample {
  ag::Matrix deviations;  // T × K·3
  ag::Matrix audio;       // T × D_a
};

// Margin ranking on cosine (aligned windows above shifted ones) plus a pull
// of aligned cosines towards 1.
// Throws InsufficientDataError for fewer than 20 examples.
void pretrain_sync_embedder(SyncEmbedder& embedder, const std::vector<SyncExample>& examples,
                            std::uint64_t seed);

// Fraction of (aligned, misaligned) window pairs where the aligned cosine wins.
double sync_discrimination_rate(const SyncEmbedder& embedder, const std::vector<SyncExample>& examples,
                                std::uint64_t seed, int pairs = 400);

// ---- generator -------------------------------------------------------------

enum class ConditioningMode { kFramewise, kLevel };

struct GeneratorTrainingConfig {
  LossWeights weights;
  int pretrain_steps = 1000;
  int finetune_steps = 1000;
  int batch = 8;
  int crop = 40;
  double learning_rate = 2e-4;
  double transformer_learning_rate = 1.5e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double grad_clip = 1.0;
  ConditioningMode conditioning = ConditioningMode::kFramewise;

  void validate() const;
};

// Everything generation needs at inference plus the frozen sync expert.
struct GeneratorModel {
  GeneratorModel(const TransformerConfig& xf_config, const EmotionSpaceConfig& emo_config,
                 const SyncEmbedderConfig& sync_config, const ToyRendererConfig& renderer_config,
                 const KeypointMatrix& canonical, std::uint64_t seed);
  GeneratorModel(const TransformerConfig& xf_config, const EmotionSpaceConfig& emo_config,
                 const SyncEmbedderConfig& sync_config, const ModelArchive& archive);

  ExpressionTransformer transformer;
  EmotionSpaceConfig emotion_config;
  nn::ParamStore emotion_params;  // "adapt." tensors
  std::unique_ptr<AdaptationNet> adaptation;
  StubTextEncoder text_encoder;
  SyncEmbedder sync;
  ToyRenderer renderer;

  // Adapted (unscaled) embedding for an emotion text and a noise code.
  EmotionEmbedding embed(const std::string& emotion_text, std::span<const double> noise) const;

  void save_to(ModelArchive& archive) const;
};

struct GeneratorExample {
  const KeypointSequence* keypoints = nullptr;
  const NeutralReference* neutral = nullptr;
  const AudioFeatureSequence* audio = nullptr;
  const IntensitySequence* labels = nullptr;  // normalized pseudo-labels; required for fine-tuning
};

enum class TrainStage { kPretrain, kFinetune };

struct GeneratorStepLog {
  int step = 0;  // global, continues across stages
  TrainStage stage = TrainStage::kPretrain;
  double loss = 0.0;
  LossParts parts;
};

nlohmann::json to_json(const GeneratorStepLog& log);

// Deviation of each frame from the neutral face, T × K·3.
ag::Matrix deviation_rows(const KeypointSequence& seq, const NeutralReference& neutral);

// Runs one stage for its configured number of steps. Optimizer state is
// fresh for each call. Returns the number of steps taken.
int train_generator_stage(GeneratorModel& model, const std::vector<GeneratorExample>& examples,
                          const GeneratorTrainingConfig& config, TrainStage stage, std::uint64_t seed,
                          int first_step = 0,
                          const std::function<void(const GeneratorStepLog&)>& on_step = {});

// Both stages in order, writing a checkpoint after each when checkpoint_dir is set.
void train_generator(GeneratorModel& model, const std::vector<GeneratorExample>& examples,
                     const GeneratorTrainingConfig& config, std::uint64_t seed,
                     const std::function<void(const GeneratorStepLog&)>& on_step = {},
                     const std::filesystem::path& checkpoint_dir = {});

// Loss parts for one example without updating anything (emotion noise from rng).
LossParts evaluate_generator_losses(const GeneratorModel& model, const GeneratorExample& example,
                                    const GeneratorTrainingConfig& config, TrainStage stage, Rng& rng);
// Weighted total over the whole clip as a graph, for gradient checks.
ag::Var generator_loss(const GeneratorModel& model, const GeneratorExample& example,
                       const GeneratorTrainingConfig& config, TrainStage stage, Rng& rng);

}  // namespace emoint
