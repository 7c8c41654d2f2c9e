#pragma once

// Audio-to-expression transformer. Audio features become tokens for a
// pre-LN encoder; a decoder with learned positional queries cross-attends to
// them and emits per-frame expression keypoints, expressed as deviations
// from the speaker's neutral face. An emotion embedding enters every layer
// as an extra attention token and, through a small feed-forward network, as
// an additive keypoint deformation.
//
// Emotion conditioning is per frame: query t sees emotion token t only. A
// frame whose embedding is exactly zero (the neutral origin) has its token
// masked out and receives no deformation.

#include <optional>
#include <vector>

#include "emoint/corpus_io.hpp"
#include "emoint/emotion_space.hpp"
#include "emoint/keypoint_intensity.hpp"
#include "emoint/nn.hpp"

namespace emoint {

struct TransformerConfig {
  int audio_dim = 64;
  int keypoints = kDefaultKeypoints;
  int emotion_dim = 896;
  int encoder_layers = 6;
  int decoder_layers = 6;
  int heads = 8;
  int token_dim = 128;
  int ffn_hidden = 1024;
  int deform_hidden = 256;
  int max_frames = 200;
  int context_window = 0;  // 0: unrestricted attention
  bool emotion_in_encoder = true;
  bool emotion_in_decoder = true;

  void validate() const;
};

struct AttentionBlock {
  nn::Linear q, k, v, o;
};

struct FeedForward {
  nn::Linear fc1, fc2;
};

class ExpressionTransformer {
 public:
  ExpressionTransformer(const TransformerConfig& config, Rng& rng);
  // Shapes come from config; values from archive entries under "xf." and "defo.".
  ExpressionTransformer(const TransformerConfig& config, const ModelArchive& archive);

  const TransformerConfig& config() const { return config_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  // audio: T × audio_dim. emotion: T × emotion_dim, or undefined for the
  // emotion-free pathway. Returns T × (K·3) keypoint deviations.
  ag::Var forward(const ag::Var& audio, const ag::Var& emotion) const;

  // Anchored deformation f(e) - f(0) per row; zero rows map to zero.
  ag::Var deformation(const ag::Var& emotion) const;

  void save_to(ModelArchive& archive) const { store_.save_to(archive); }

 private:
  struct EncoderLayer {
    nn::LayerNorm ln1, ln2;
    AttentionBlock attn;
    FeedForward ffn;
  };
  struct DecoderLayer {
    nn::LayerNorm ln1, ln2, ln3;
    AttentionBlock self_attn, cross_attn;
    FeedForward ffn;
  };

  void build(Rng& rng);
  ag::Var attend(const AttentionBlock& w, const ag::Var& queries, const ag::Var& keys,
                 const ag::Matrix* mask, const ag::Var& emotion_tokens,
                 const std::vector<bool>& emotion_active) const;
  ag::Var feed_forward(const FeedForward& f, const ag::Var& x) const;

  TransformerConfig config_;
  nn::ParamStore store_;
  nn::Linear in_proj_;
  ag::Var enc_pos_;
  ag::Var dec_pos_;
  nn::Linear emo_proj_;
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  nn::LayerNorm enc_ln_, dec_ln_;
  nn::Linear out_head_;
  nn::Linear defo1_, defo2_;
};

// Additive attention masks for T frames under a context window W (0 = none).
// Encoder and decoder self-attention are causal; cross-attention from query
// t reaches audio tokens j <= t + W.
ag::Matrix self_attention_mask(Eigen::Index frames, int context_window);
ag::Matrix cross_attention_mask(Eigen::Index frames, int context_window);

// Stacks per-frame embeddings into a T × D matrix.
ag::Matrix stack_embeddings(const std::vector<EmotionEmbedding>& frames);

// Value-level forward. Every embedding must be rescaled or exactly zero.
// An empty emotion list selects the emotion-free pathway.
KeypointSequence generate_keypoints(const ExpressionTransformer& model, const AudioFeatureSequence& audio,
                                    const std::vector<EmotionEmbedding>& emotion);
KeypointSequence generate_keypoints(const ExpressionTransformer& model, const AudioFeatureSequence& audio,
                                    const EmotionEmbedding& emotion);

// Same orientation, frame t rescaled to continuous_scale · intensity[t].
// Intensity 0 yields the zero vector.
std::vector<EmotionEmbedding> sequence_emotion_condition(const EmotionEmbedding& direction,
                                                         const IntensitySequence& intensities,
                                                         const EmotionSpaceConfig& map);

// ---- toy renderer ----------------------------------------------------------

struct ToyRendererConfig {
  int height = 32;
  int width = 32;
  double sigma = 1.2;      // splat width in pixels
  double scale = 9.0;      // pixels per model unit
  double amplitude = 1.0;  // splat peak before clipping

  void validate() const;
};

// Orthographic camera: pixel column u = width/2 + scale·x, row v = height/2 - scale·y.
struct ToyRenderer {
  ToyRendererConfig config;
  KeypointMatrix canonical;  // face layout the deviations are added to

  // Unclipped splat sum for a single frame, height × width.
  ag::Matrix splat_sum(const KeypointMatrix& points) const;
  ag::Matrix render(const KeypointFrame& frame) const;

  // Differentiable batch form: rows of points are frames with K·3 absolute
  // coordinates; returns frames × (height·width) clipped images.
  ag::Var render_rows(const ag::Var& points) const;

  // 1 for pixels within 3σ of any projected keypoint, else 0.
  ag::Matrix face_mask_rows(const ag::Matrix& points) const;

  void save_to(ModelArchive& archive) const;
  static ToyRenderer load_from(const ModelArchive& archive);
};

}  // namespace emoint
