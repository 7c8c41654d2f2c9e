#pragma once

// Variational audio-to-intensity predictor. The encoder q(z | L, a) and
// decoder p(L | z, a) are convolutional with non-causal WaveNet stacks; the
// prior p(z | a) is a standard normal pushed through an audio-conditioned
// affine coupling layer followed by a channel flip.

#include <functional>
#include <vector>

#include "emoint/corpus_io.hpp"
#include "emoint/keypoint_intensity.hpp"
#include "emoint/nn.hpp"
#include "emoint/rng.hpp"

namespace emoint {

struct PredictorConfig {
  int audio_dim = 64;
  int latent_dim = 16;
  int channels = 64;
  int wavenet_layers = 4;  // dilations 1, 2, 4, 8, ...
  int kernel = 3;
  double logvar_min = -10.0;
  double logvar_max = 10.0;
  bool flow_prior = true;  // false: plain N(0, I) prior with closed-form KL
  bool circular_padding = false;  // test-only: circular instead of zero padding

  // training
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch = 8;
  int steps = 2000;
  int crop = 40;
};

struct LatentSequence {
  ag::Matrix z;  // T × D_z
};

// Non-causal gated WaveNet with audio conditioning in every layer.
class WaveNet {
 public:
  WaveNet() = default;
  WaveNet(nn::ParamStore& store, const std::string& prefix, int channels, int cond_dim, int layers,
          int kernel, bool circular, Rng& rng);

  ag::Var operator()(const ag::Var& x, const ag::Var& cond) const;

 private:
  struct Layer {
    nn::Conv1d in;
    nn::Linear cond;
    nn::Linear res_skip;
  };
  std::vector<Layer> layers_;
  int channels_ = 0;
};

struct GaussianParams {
  ag::Var mean;    // T × D_z
  ag::Var logvar;  // T × D_z, clamped
};

struct FlowResult {
  ag::Var u;
  ag::Var log_det;  // 1×1
};

struct ElboParts {
  ag::Var loss;  // per-frame nll + kl
  double nll = 0.0;
  double kl = 0.0;
};

enum class PredictMode { kMean, kSample };

class IntensityVae {
 public:
  IntensityVae(const PredictorConfig& config, Rng& rng);
  // Shapes come from config; values from archive entries under "vae.".
  IntensityVae(const PredictorConfig& config, const ModelArchive& archive);

  const PredictorConfig& config() const { return config_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  GaussianParams encode(const ag::Var& intensity, const ag::Var& audio) const;
  ag::Var decode(const ag::Var& z, const ag::Var& audio) const;  // T×1 predicted mean

  // Coupling alone (no flip); exposed for testing.
  FlowResult coupling_forward(const ag::Var& z, const ag::Var& audio) const;
  ag::Var coupling_inverse(const ag::Var& u, const ag::Var& audio) const;

  // z -> u = flip(coupling(z)) together with log|det du/dz|.
  FlowResult prior_forward(const ag::Var& z, const ag::Var& audio) const;
  ag::Var prior_inverse(const ag::Var& u, const ag::Var& audio) const;

  // Single-sample Monte-Carlo ELBO; rng is consumed for the reparameterized draw.
  ElboParts elbo(const ag::Var& intensity, const ag::Var& audio, Rng& rng) const;

  void save_to(ModelArchive& archive) const { store_.save_to(archive); }

 private:
  void build(Rng& rng);

  PredictorConfig config_;
  nn::ParamStore store_;
  nn::Conv1d enc_in_;
  nn::LayerNorm enc_ln_;
  WaveNet enc_wn_;
  nn::Linear enc_proj_;
  nn::Linear dec_pre_;
  WaveNet dec_wn_;
  nn::Conv1d dec_up_;
  nn::LayerNorm dec_ln_;
  nn::Linear dec_proj_;
  nn::Linear flow_pre_;
  WaveNet flow_wn_;
  nn::Linear flow_post_;
};

// ---- value-level operations ------------------------------------------------

std::pair<ag::Matrix, ag::Matrix> encode(const IntensityVae& vae, const IntensitySequence& intensity,
                                         const AudioFeatureSequence& audio);
std::vector<double> decode(const IntensityVae& vae, const LatentSequence& z, const AudioFeatureSequence& audio);
std::pair<LatentSequence, double> prior_forward(const IntensityVae& vae, const LatentSequence& z,
                                                const AudioFeatureSequence& audio);
LatentSequence prior_inverse(const IntensityVae& vae, const LatentSequence& u, const AudioFeatureSequence& audio);

struct ElboValue {
  double loss = 0.0;
  double nll = 0.0;
  double kl = 0.0;
};
// rng is taken by value: the same state always yields the same estimate.
ElboValue elbo_loss(const IntensityVae& vae, const IntensitySequence& intensity,
                    const AudioFeatureSequence& audio, Rng rng);

IntensitySequence predict_intensity(const IntensityVae& vae, const AudioFeatureSequence& audio,
                                    PredictMode mode, Rng rng);

struct PredictorExample {
  const IntensitySequence* labels;
  const AudioFeatureSequence* audio;
};

struct PredictorTrainLog {
  int step = 0;
  double loss = 0.0;
  double nll = 0.0;
  double kl = 0.0;
};

// Adam on the ELBO over random crops; examples must be pre-aligned.
void train_predictor(IntensityVae& vae, const std::vector<PredictorExample>& examples, std::uint64_t seed,
                     const std::function<void(const PredictorTrainLog&)>& on_step = {});

double intensity_mse(const std::vector<double>& a, const std::vector<double>& b);

ag::Var to_column(const std::vector<double>& values);

}  // namespace emoint
