#pragma once

// Emotion latent space in which direction encodes emotion type and the l2
// norm encodes intensity; neutral sits at the origin.

#include <array>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "emoint/archive.hpp"
#include "emoint/autograd.hpp"
#include "emoint/nn.hpp"

namespace emoint {

struct EmotionSpaceConfig {
  int text_dim = 512;
  int noise_dim = 16;
  int hidden = 384;
  int emotion_dim = 896;
  std::array<double, 3> level_norms = {5.0, 15.0, 30.0};
  double continuous_scale = 30.0;
};

struct TextEmbedding {
  Eigen::VectorXd vector;
  std::string source_text;
};

struct EmotionEmbedding {
  Eigen::VectorXd vector;
  bool rescaled = false;
};

// Pluggable text encoder; a real sentence encoder can be dropped in behind
// this interface as long as it emits fixed-width finite vectors.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual TextEmbedding embed(const std::string& text) const = 0;
  virtual int dim() const = 0;
};

// Deterministic stand-in: a frozen seeded unit vector per canonical token,
// and a hash-seeded unit vector for anything else.
class StubTextEncoder final : public TextEncoder {
 public:
  static const std::vector<std::string>& canonical_tokens();

  StubTextEncoder(int dim, std::uint64_t seed);

  TextEmbedding embed(const std::string& text) const override;
  int dim() const override { return dim_; }

  void save_to(ModelArchive& archive) const;
  static StubTextEncoder load_from(const ModelArchive& archive);

 private:
  StubTextEncoder() = default;
  Eigen::VectorXd hashed_vector(const std::string& token) const;

  int dim_ = 0;
  std::uint64_t seed_ = 0;
  std::map<std::string, Eigen::VectorXd> vocab_;
};

// Lower-case with runs of whitespace collapsed and trimmed.
std::string canonicalize_emotion_text(const std::string& text);
bool is_neutral_emotion(const std::string& text);

TextEmbedding embed_emotion_text(const TextEncoder& encoder, const std::string& text);

// Eight fully-connected layers: four on the noise code, concatenation of the
// text embedding, four more ending in a linear projection to emotion_dim.
class AdaptationNet {
 public:
  AdaptationNet(nn::ParamStore& store, const EmotionSpaceConfig& config, Rng& rng);
  // Binds to parameters already present in store.
  AdaptationNet(const nn::ParamStore& store, const EmotionSpaceConfig& config);

  // text: 1×text_dim, noise: 1×noise_dim -> 1×emotion_dim.
  ag::Var forward(const ag::Var& text, const ag::Var& noise) const;
  const EmotionSpaceConfig& config() const { return config_; }

 private:
  EmotionSpaceConfig config_;
  std::array<nn::Linear, 8> fc_;
};

EmotionEmbedding adapt(const AdaptationNet& net, const TextEmbedding& text, std::span<const double> noise);

EmotionEmbedding rescale_to_norm(const EmotionEmbedding& emb, double target_norm);

double norm_for_level(const EmotionSpaceConfig& map, int level);
double norm_for_intensity(const EmotionSpaceConfig& map, double intensity);

double neutral_norm_penalty(const EmotionEmbedding& emb);
ag::Var neutral_norm_penalty(const ag::Var& emb);

// Differentiable rescale of a single row to each of the given norms:
// returns norms.size() rows sharing the direction of emb.
ag::Var rescale_rows(const ag::Var& emb, const std::vector<double>& norms);

inline constexpr double kMinDirectionNorm = 1e-8;

}  // namespace emoint
