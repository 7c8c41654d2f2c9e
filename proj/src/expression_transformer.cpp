#include "emoint/expression_transformer.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "emoint/errors.hpp"

namespace emoint {

namespace {

constexpr double kMasked = -1e30;

std::vector<bool> active_rows(const ag::Matrix& emotion) {
  std::vector<bool> active(static_cast<std::size_t>(emotion.rows()));
  for (Eigen::Index t = 0; t < emotion.rows(); ++t) {
    active[static_cast<std::size_t>(t)] = (emotion.row(t).array() != 0.0).any();
  }
  return active;
}

bool any_active(const std::vector<bool>& active) {
  for (bool a : active) {
    if (a) return true;
  }
  return false;
}

AttentionBlock make_attention(nn::ParamStore& store, const std::string& prefix, int dim, Rng& rng) {
  return {nn::make_linear(store, prefix + ".q", dim, dim, rng), nn::make_linear(store, prefix + ".k", dim, dim, rng),
          nn::make_linear(store, prefix + ".v", dim, dim, rng), nn::make_linear(store, prefix + ".o", dim, dim, rng)};
}

FeedForward make_ffn(nn::ParamStore& store, const std::string& prefix, int dim, int hidden, Rng& rng) {
  return {nn::make_linear(store, prefix + ".fc1", dim, hidden, rng),
          nn::make_linear(store, prefix + ".fc2", hidden, dim, rng)};
}

}  // namespace

void TransformerConfig::validate() const {
  if (token_dim <= 0 || heads <= 0 || token_dim % heads != 0) {
    throw ConfigError("transformer token_dim must be a positive multiple of heads");
  }
  if (encoder_layers < 1 || decoder_layers < 1) throw ConfigError("transformer needs at least one layer per stack");
  if (audio_dim < 1 || keypoints < 1 || emotion_dim < 1 || ffn_hidden < 1 || deform_hidden < 1) {
    throw ConfigError("transformer dimensions must be positive");
  }
  if (max_frames < 1) throw ConfigError("transformer max_frames must be positive");
  if (context_window < 0) throw ConfigError("transformer context_window must be >= 0");
}

ExpressionTransformer::ExpressionTransformer(const TransformerConfig& config, Rng& rng) : config_(config) {
  build(rng);
}

ExpressionTransformer::ExpressionTransformer(const TransformerConfig& config, const ModelArchive& archive)
    : config_(config) {
  Rng rng(0);
  build(rng);
  store_.load_from(archive);
}

void ExpressionTransformer::build(Rng& rng) {
  config_.validate();
  const auto& c = config_;
  const int d = c.token_dim;
  in_proj_ = nn::make_linear(store_, "xf.in_proj", c.audio_dim, d, rng);
  enc_pos_ = store_.create("xf.enc_pos", rng.normal_matrix(c.max_frames, d, 0.02));
  dec_pos_ = store_.create("xf.dec_pos", rng.normal_matrix(c.max_frames, d, 0.02));
  // Embedding norms reach 30, so the token projection starts small.
  emo_proj_ = nn::make_linear(store_, "xf.emo_proj", c.emotion_dim, d, rng, false, 0.05);
  for (int l = 1; l <= c.encoder_layers; ++l) {
    const std::string p = "xf.enc.l" + std::to_string(l);
    enc_.push_back({nn::make_layer_norm(store_, p + ".ln1", d), nn::make_layer_norm(store_, p + ".ln2", d),
                    make_attention(store_, p + ".attn", d, rng), make_ffn(store_, p + ".ffn", d, c.ffn_hidden, rng)});
  }
  for (int l = 1; l <= c.decoder_layers; ++l) {
    const std::string p = "xf.dec.l" + std::to_string(l);
    dec_.push_back({nn::make_layer_norm(store_, p + ".ln1", d), nn::make_layer_norm(store_, p + ".ln2", d),
                    nn::make_layer_norm(store_, p + ".ln3", d), make_attention(store_, p + ".self", d, rng),
                    make_attention(store_, p + ".cross", d, rng), make_ffn(store_, p + ".ffn", d, c.ffn_hidden, rng)});
  }
  enc_ln_ = nn::make_layer_norm(store_, "xf.enc.ln_f", d);
  dec_ln_ = nn::make_layer_norm(store_, "xf.dec.ln_f", d);
  out_head_ = nn::make_linear(store_, "xf.out_head", d, c.keypoints * 3, rng, true, 0.1);
  defo1_ = nn::make_linear(store_, "defo.fc1", c.emotion_dim, c.deform_hidden, rng);
  defo2_ = nn::make_linear(store_, "defo.fc2", c.deform_hidden, c.keypoints * 3, rng, false, 0.1);
}

ag::Var ExpressionTransformer::attend(const AttentionBlock& w, const ag::Var& queries, const ag::Var& keys,
                                      const ag::Matrix* mask, const ag::Var& emotion_tokens,
                                      const std::vector<bool>& emotion_active) const {
  const int heads = config_.heads;
  const int dh = config_.token_dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index tq = queries.rows();
  const Eigen::Index tk = keys.rows();
  const ag::Var q = w.q(queries);
  const ag::Var k = w.k(keys);
  const ag::Var v = w.v(keys);

  const bool with_emotion = emotion_tokens.defined();
  ag::Var ke, ve;
  ag::Matrix full_mask;
  if (with_emotion) {
    // The token's key and value share the layer's projections, without bias,
    // so its contribution scales with the embedding.
    ke = ag::matmul(emotion_tokens, w.k.weight);
    ve = ag::matmul(emotion_tokens, w.v.weight);
    full_mask = ag::Matrix::Zero(tq, tk + 1);
    if (mask) full_mask.leftCols(tk) = *mask;
    for (Eigen::Index t = 0; t < tq; ++t) {
      if (!emotion_active[static_cast<std::size_t>(t)]) full_mask(t, tk) = kMasked;
    }
  }

  std::vector<ag::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const ag::Var qh = ag::slice_cols(q, h * dh, dh);
    const ag::Var kh = ag::slice_cols(k, h * dh, dh);
    const ag::Var vh = ag::slice_cols(v, h * dh, dh);
    ag::Var scores = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt);
    if (!with_emotion) {
      const ag::Var a = ag::softmax_rows(scores, mask);
      outs.push_back(ag::matmul(a, vh));
      continue;
    }
    const ag::Var keh = ag::slice_cols(ke, h * dh, dh);
    const ag::Var veh = ag::slice_cols(ve, h * dh, dh);
    const ag::Var emo_score = ag::scale(ag::sum_cols(ag::mul(qh, keh)), inv_sqrt);
    const ag::Var a = ag::softmax_rows(ag::concat_cols({scores, emo_score}), &full_mask);
    const ag::Var audio_part = ag::matmul(ag::slice_cols(a, 0, tk), vh);
    outs.push_back(ag::add(audio_part, ag::mul_col(veh, ag::slice_cols(a, tk, 1))));
  }
  return w.o(outs.size() == 1 ? outs.front() : ag::concat_cols(outs));
}

ag::Var ExpressionTransformer::feed_forward(const FeedForward& f, const ag::Var& x) const {
  return f.fc2(ag::relu(f.fc1(x)));
}

ag::Var ExpressionTransformer::deformation(const ag::Var& emotion) const {
  const Eigen::Index n = emotion.rows();
  const auto active = active_rows(emotion.value());
  ag::Matrix mask(n, 1);
  for (Eigen::Index t = 0; t < n; ++t) mask(t, 0) = active[static_cast<std::size_t>(t)] ? 1.0 : 0.0;
  const ag::Var f = defo2_(ag::relu(defo1_(emotion)));
  const ag::Var f0 = defo2_(ag::relu(defo1_.bias));
  return ag::mul_col(ag::sub(f, ag::repeat_rows(f0, n)), ag::Var(mask));
}

ag::Var ExpressionTransformer::forward(const ag::Var& audio, const ag::Var& emotion) const {
  const auto& c = config_;
  const Eigen::Index T = audio.rows();
  if (T < 1) throw DimensionError("transformer input has no frames");
  if (T > c.max_frames) {
    throw CapacityError("sequence of " + std::to_string(T) + " frames exceeds max_frames " +
                        std::to_string(c.max_frames));
  }
  if (audio.cols() != c.audio_dim) {
    throw DimensionError("transformer expects audio_dim " + std::to_string(c.audio_dim) + ", got " +
                         std::to_string(audio.cols()));
  }
  std::vector<bool> active;
  ag::Var tokens;
  if (emotion.defined()) {
    if (emotion.cols() != c.emotion_dim) {
      throw DimensionError("transformer expects emotion_dim " + std::to_string(c.emotion_dim) + ", got " +
                           std::to_string(emotion.cols()));
    }
    if (emotion.rows() != T) throw AlignmentError("emotion conditioning must have one row per audio frame");
    active = active_rows(emotion.value());
    if (any_active(active)) tokens = emo_proj_(emotion);
  }
  const ag::Var enc_tokens = c.emotion_in_encoder ? tokens : ag::Var();
  const ag::Var dec_tokens = c.emotion_in_decoder ? tokens : ag::Var();

  const ag::Matrix self_mask = self_attention_mask(T, c.context_window);
  const ag::Matrix cross_mask = cross_attention_mask(T, c.context_window);
  const ag::Matrix* self_mask_ptr = c.context_window > 0 ? &self_mask : nullptr;
  const ag::Matrix* cross_mask_ptr = c.context_window > 0 ? &cross_mask : nullptr;

  ag::Var x = ag::add(in_proj_(audio), ag::slice_rows(enc_pos_, 0, T));
  for (const auto& layer : enc_) {
    const ag::Var h = layer.ln1(x);
    x = ag::add(x, attend(layer.attn, h, h, self_mask_ptr, enc_tokens, active));
    x = ag::add(x, feed_forward(layer.ffn, layer.ln2(x)));
  }
  const ag::Var memory = enc_ln_(x);

  ag::Var y = ag::slice_rows(dec_pos_, 0, T);
  for (const auto& layer : dec_) {
    const ag::Var h = layer.ln1(y);
    y = ag::add(y, attend(layer.self_attn, h, h, self_mask_ptr, ag::Var(), active));
    y = ag::add(y, attend(layer.cross_attn, layer.ln2(y), memory, cross_mask_ptr, dec_tokens, active));
    y = ag::add(y, feed_forward(layer.ffn, layer.ln3(y)));
  }
  ag::Var out = out_head_(dec_ln_(y));
  if (tokens.defined()) out = ag::add(out, deformation(emotion));
  return out;
}

ag::Matrix self_attention_mask(Eigen::Index frames, int context_window) {
  ag::Matrix m = ag::Matrix::Zero(frames, frames);
  if (context_window <= 0) return m;
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index j = t + 1; j < frames; ++j) m(t, j) = kMasked;
  }
  return m;
}

ag::Matrix cross_attention_mask(Eigen::Index frames, int context_window) {
  ag::Matrix m = ag::Matrix::Zero(frames, frames);
  if (context_window <= 0) return m;
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index j = t + context_window + 1; j < frames; ++j) m(t, j) = kMasked;
  }
  return m;
}

ag::Matrix stack_embeddings(const std::vector<EmotionEmbedding>& frames) {
  if (frames.empty()) return {};
  const Eigen::Index d = frames.front().vector.size();
  ag::Matrix m(static_cast<Eigen::Index>(frames.size()), d);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].vector.size() != d) throw DimensionError("emotion embeddings differ in dimension");
    m.row(static_cast<Eigen::Index>(t)) = frames[t].vector.transpose();
  }
  return m;
}

KeypointSequence generate_keypoints(const ExpressionTransformer& model, const AudioFeatureSequence& audio,
                                    const std::vector<EmotionEmbedding>& emotion) {
  const Eigen::Index T = audio.features.rows();
  ag::Var emo;
  if (!emotion.empty()) {
    if (static_cast<Eigen::Index>(emotion.size()) != T) {
      throw AlignmentError("emotion conditioning has " + std::to_string(emotion.size()) + " frames, audio has " +
                           std::to_string(T));
    }
    for (const auto& e : emotion) {
      if (e.vector.size() != model.config().emotion_dim) {
        throw DimensionError("emotion embedding has dimension " + std::to_string(e.vector.size()) + ", expected " +
                             std::to_string(model.config().emotion_dim));
      }
      if (!e.rescaled && e.vector.squaredNorm() != 0.0) {
        throw ContractError("emotion embeddings must be rescaled (or the neutral origin) before generation");
      }
    }
    emo = ag::Var(stack_embeddings(emotion));
  }
  ag::NoGradGuard guard;
  const ag::Matrix out = model.forward(ag::Var(audio.features), emo).value();
  const int K = model.config().keypoints;
  KeypointSequence seq;
  seq.fps = audio.fps;
  seq.clip_id = audio.clip_id;
  seq.identity_id = kExpressionIdentity;
  seq.frames.reserve(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    KeypointFrame f;
    f.frame_index = static_cast<int>(t);
    f.points = Eigen::Map<const ag::Matrix>(out.row(t).data(), K, 3).cast<float>();
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

KeypointSequence generate_keypoints(const ExpressionTransformer& model, const AudioFeatureSequence& audio,
                                    const EmotionEmbedding& emotion) {
  return generate_keypoints(model, audio,
                            std::vector<EmotionEmbedding>(static_cast<std::size_t>(audio.features.rows()), emotion));
}

std::vector<EmotionEmbedding> sequence_emotion_condition(const EmotionEmbedding& direction,
                                                         const IntensitySequence& intensities,
                                                         const EmotionSpaceConfig& map) {
  if (!(direction.vector.norm() > kMinDirectionNorm)) {
    throw DegenerateError("emotion direction has (near) zero norm");
  }
  std::vector<EmotionEmbedding> out;
  out.reserve(intensities.size());
  for (double i : intensities.values) {
    const double target = norm_for_intensity(map, i);
    if (target == 0.0) {
      out.push_back({Eigen::VectorXd::Zero(direction.vector.size()), true});
    } else {
      out.push_back(rescale_to_norm(direction, target));
    }
  }
  return out;
}

// ---- toy renderer ----------------------------------------------------------

void ToyRendererConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("renderer sigma must be positive");
  if (height < 1 || width < 1) throw ConfigError("renderer image size must be positive");
  if (!(scale > 0.0) || !(amplitude > 0.0)) throw ConfigError("renderer scale and amplitude must be positive");
}

namespace {

// Separable splat factors for one keypoint: gaussians along rows and columns.
struct Splat {
  Eigen::VectorXd gy;  // height
  Eigen::VectorXd gx;  // width
  double u = 0.0, v = 0.0;
};

Splat make_splat(const ToyRendererConfig& c, double x, double y) {
  Splat s;
  s.u = c.width / 2.0 + c.scale * x;
  s.v = c.height / 2.0 - c.scale * y;
  const double inv = 1.0 / (2.0 * c.sigma * c.sigma);
  s.gx.resize(c.width);
  s.gy.resize(c.height);
  for (int col = 0; col < c.width; ++col) s.gx[col] = std::exp(-(col - s.u) * (col - s.u) * inv);
  for (int row = 0; row < c.height; ++row) s.gy[row] = std::exp(-(row - s.v) * (row - s.v) * inv);
  return s;
}

template <typename M>
ag::Matrix splat_image(const ToyRendererConfig& c, const M& points) {
  ag::Matrix img = ag::Matrix::Zero(c.height, c.width);
  for (Eigen::Index k = 0; k < points.rows(); ++k) {
    const Splat s = make_splat(c, points(k, 0), points(k, 1));
    img.noalias() += c.amplitude * s.gy * s.gx.transpose();
  }
  return img;
}

}  // namespace

ag::Matrix ToyRenderer::splat_sum(const KeypointMatrix& points) const { return splat_image(config, points); }

ag::Matrix ToyRenderer::render(const KeypointFrame& frame) const {
  return splat_sum(frame.points).cwiseMax(0.0).cwiseMin(1.0);
}

ag::Var ToyRenderer::render_rows(const ag::Var& points) const {
  config.validate();
  const Eigen::Index n = points.rows();
  const Eigen::Index k3 = points.cols();
  if (k3 % 3 != 0) throw DimensionError("render_rows expects K·3 columns");
  const Eigen::Index K = k3 / 3;
  const int H = config.height, W = config.width;
  ag::Matrix raw(n, static_cast<Eigen::Index>(H) * W);
  for (Eigen::Index r = 0; r < n; ++r) {
    const ag::Matrix img = splat_image(config, Eigen::Map<const ag::Matrix>(points.value().row(r).data(), K, 3));
    raw.row(r) = Eigen::Map<const Eigen::RowVectorXd>(img.data(), img.size());
  }
  ag::Matrix out = raw.cwiseMax(0.0).cwiseMin(1.0);
  const ToyRendererConfig c = config;
  return ag::make_result(std::move(out), {points}, [c, raw, K](ag::Node& self) {
    const auto& parent = self.parents[0];
    if (!parent->requires_grad) return;
    const Eigen::Index n = self.value.rows();
    ag::Matrix g = ag::Matrix::Zero(n, K * 3);
    const double inv_var = 1.0 / (c.sigma * c.sigma);
    for (Eigen::Index r = 0; r < n; ++r) {
      ag::Matrix gimg = Eigen::Map<const ag::Matrix>(self.grad.row(r).data(), c.height, c.width);
      const ag::Matrix raw_img = Eigen::Map<const ag::Matrix>(raw.row(r).data(), c.height, c.width);
      gimg = gimg.cwiseProduct((raw_img.array() <= 1.0).cast<double>().matrix());
      for (Eigen::Index k = 0; k < K; ++k) {
        const Splat s = make_splat(c, parent->value(r, 3 * k), parent->value(r, 3 * k + 1));
        Eigen::VectorXd du(c.width), dv(c.height);
        for (int col = 0; col < c.width; ++col) du[col] = (col - s.u) * s.gx[col];
        for (int row = 0; row < c.height; ++row) dv[row] = (row - s.v) * s.gy[row];
        // d splat / d u = A·gy·(col-u)/σ²·gx, and du/dx = scale; dv/dy = -scale.
        g(r, 3 * k) = c.amplitude * inv_var * c.scale * s.gy.dot(gimg * du);
        g(r, 3 * k + 1) = -c.amplitude * inv_var * c.scale * dv.dot(gimg * s.gx);
      }
    }
    parent->add_grad(g);
  });
}

ag::Matrix ToyRenderer::face_mask_rows(const ag::Matrix& points) const {
  const Eigen::Index K = points.cols() / 3;
  const int H = config.height, W = config.width;
  const double reach = 3.0 * config.sigma;
  ag::Matrix mask = ag::Matrix::Zero(points.rows(), static_cast<Eigen::Index>(H) * W);
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const double u = W / 2.0 + config.scale * points(r, 3 * k);
      const double v = H / 2.0 - config.scale * points(r, 3 * k + 1);
      for (int row = 0; row < H; ++row) {
        for (int col = 0; col < W; ++col) {
          if ((row - v) * (row - v) + (col - u) * (col - u) <= reach * reach) mask(r, row * W + col) = 1.0;
        }
      }
    }
  }
  return mask;
}

void ToyRenderer::save_to(ModelArchive& archive) const {
  nlohmann::json j = {{"height", config.height},
                      {"width", config.width},
                      {"sigma", config.sigma},
                      {"scale", config.scale},
                      {"amplitude", config.amplitude}};
  archive.put_text("renderer.config", j.dump());
  archive.put("renderer.canonical", canonical.cast<double>());
}

ToyRenderer ToyRenderer::load_from(const ModelArchive& archive) {
  const auto j = nlohmann::json::parse(archive.text("renderer.config"));
  ToyRenderer r;
  r.config.height = j.at("height").get<int>();
  r.config.width = j.at("width").get<int>();
  r.config.sigma = j.at("sigma").get<double>();
  r.config.scale = j.at("scale").get<double>();
  r.config.amplitude = j.at("amplitude").get<double>();
  r.config.validate();
  r.canonical = archive.get("renderer.canonical").cast<float>();
  return r;
}

}  // namespace emoint
