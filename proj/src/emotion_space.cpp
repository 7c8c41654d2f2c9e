#include "emoint/emotion_space.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <nlohmann/json.hpp>

#include "emoint/errors.hpp"

namespace emoint {

std::string canonicalize_emotion_text(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

const std::vector<std::string>& StubTextEncoder::canonical_tokens() {
  static const std::vector<std::string> tokens = {"neutral", "happy", "sad",      "angry",
                                                  "surprised", "disgusted", "fear", "contempt"};
  return tokens;
}

StubTextEncoder::StubTextEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim <= 0) throw DimensionError("text encoder dimension must be positive");
  for (const auto& t : canonical_tokens()) vocab_[t] = hashed_vector(t);
}

Eigen::VectorXd StubTextEncoder::hashed_vector(const std::string& token) const {
  Rng rng(seed_, "text-encoder/" + token);
  Eigen::VectorXd v(dim_);
  for (int i = 0; i < dim_; ++i) v[i] = rng.normal();
  return v / v.norm();
}

TextEmbedding StubTextEncoder::embed(const std::string& text) const {
  const std::string key = canonicalize_emotion_text(text);
  if (key.empty()) throw std::invalid_argument("emotion text must be non-empty");
  TextEmbedding out;
  out.source_text = text;
  auto it = vocab_.find(key);
  out.vector = it != vocab_.end() ? it->second : hashed_vector(key);
  return out;
}

void StubTextEncoder::save_to(ModelArchive& archive) const {
  for (const auto& [token, v] : vocab_) archive.put("vocab." + token, ag::Matrix(v.transpose()));
  nlohmann::json meta = {{"dim", dim_}, {"seed", seed_}};
  archive.put_text("vocab.meta", meta.dump());
}

StubTextEncoder StubTextEncoder::load_from(const ModelArchive& archive) {
  const auto meta = nlohmann::json::parse(archive.text("vocab.meta"));
  StubTextEncoder enc;
  enc.dim_ = meta.at("dim").get<int>();
  enc.seed_ = meta.at("seed").get<std::uint64_t>();
  for (const auto& name : archive.names_with_prefix("vocab.")) {
    const ag::Matrix m = archive.get(name);
    enc.vocab_[name.substr(6)] = m.row(0).transpose();
  }
  return enc;
}

bool is_neutral_emotion(const std::string& text) { return canonicalize_emotion_text(text) == "neutral"; }

TextEmbedding embed_emotion_text(const TextEncoder& encoder, const std::string& text) {
  return encoder.embed(text);
}

AdaptationNet::AdaptationNet(nn::ParamStore& store, const EmotionSpaceConfig& config, Rng& rng)
    : config_(config) {
  const int h = config.hidden;
  const std::array<std::pair<int, int>, 8> shapes = {{{config.noise_dim, h},
                                                      {h, h},
                                                      {h, h},
                                                      {h, h},
                                                      {h + config.text_dim, h},
                                                      {h, h},
                                                      {h, h},
                                                      {h, config.emotion_dim}}};
  for (std::size_t i = 0; i < fc_.size(); ++i) {
    fc_[i] = nn::make_linear(store, "adapt.fc" + std::to_string(i + 1), shapes[i].first,
                             shapes[i].second, rng);
  }
}

AdaptationNet::AdaptationNet(const nn::ParamStore& store, const EmotionSpaceConfig& config)
    : config_(config) {
  for (std::size_t i = 0; i < fc_.size(); ++i) {
    fc_[i] = nn::linear_from(store, "adapt.fc" + std::to_string(i + 1));
  }
}

ag::Var AdaptationNet::forward(const ag::Var& text, const ag::Var& noise) const {
  if (noise.rows() != 1 || noise.cols() != config_.noise_dim) {
    throw DimensionError("adaptation net: noise must have length " + std::to_string(config_.noise_dim));
  }
  if (text.rows() != 1 || text.cols() != config_.text_dim) {
    throw DimensionError("adaptation net: text embedding must have length " +
                         std::to_string(config_.text_dim));
  }
  ag::Var h = noise;
  for (int i = 0; i < 4; ++i) h = ag::relu(fc_[i](h));
  h = ag::concat_cols({h, text});
  for (int i = 4; i < 7; ++i) h = ag::relu(fc_[i](h));
  return fc_[7](h);
}

EmotionEmbedding adapt(const AdaptationNet& net, const TextEmbedding& text, std::span<const double> noise) {
  ag::NoGradGuard no_grad;
  ag::Matrix t = text.vector.transpose();
  ag::Matrix z(1, static_cast<Eigen::Index>(noise.size()));
  for (std::size_t i = 0; i < noise.size(); ++i) z(0, static_cast<Eigen::Index>(i)) = noise[i];
  const ag::Var out = net.forward(ag::Var(std::move(t)), ag::Var(std::move(z)));
  EmotionEmbedding e;
  e.vector = out.value().row(0).transpose();
  e.rescaled = false;
  return e;
}

EmotionEmbedding rescale_to_norm(const EmotionEmbedding& emb, double target_norm) {
  if (!(target_norm > 0.0) || !std::isfinite(target_norm)) {
    throw DomainError("rescale target norm must be positive and finite");
  }
  const double n = emb.vector.norm();
  if (!(n > kMinDirectionNorm)) {
    throw DegenerateError("cannot rescale a (near-)zero emotion embedding: direction undefined");
  }
  EmotionEmbedding out;
  out.vector = emb.vector * (target_norm / n);
  out.rescaled = true;
  return out;
}

double norm_for_level(const EmotionSpaceConfig& map, int level) {
  if (level < 1 || level > 3) throw DomainError("intensity level must be 1, 2 or 3");
  return map.level_norms[static_cast<std::size_t>(level - 1)];
}

double norm_for_intensity(const EmotionSpaceConfig& map, double intensity) {
  if (!(intensity >= 0.0 && intensity <= 1.0)) {
    throw DomainError("continuous intensity must lie in [0, 1]");
  }
  return map.continuous_scale * intensity;
}

double neutral_norm_penalty(const EmotionEmbedding& emb) { return emb.vector.squaredNorm(); }

ag::Var neutral_norm_penalty(const ag::Var& emb) { return ag::sum(ag::square(emb)); }

ag::Var rescale_rows(const ag::Var& emb, const std::vector<double>& norms) {
  if (emb.rows() != 1) throw DimensionError("rescale_rows expects a single embedding row");
  const double n = emb.value().norm();
  if (!(n > kMinDirectionNorm)) {
    throw DegenerateError("cannot rescale a (near-)zero emotion embedding: direction undefined");
  }
  // direction = emb / ||emb||, kept differentiable.
  ag::Var inv_norm = ag::make_result(ag::Matrix::Constant(1, 1, 1.0 / n), {emb}, [](ag::Node& self) {
    ag::Node& p = *self.parents[0];
    const double inv = self.value(0, 0);
    // d(1/||e||)/de = -e / ||e||^3
    p.add_grad_expr(p.value * (-self.grad(0, 0) * inv * inv * inv));
  });
  ag::Matrix norm_col(static_cast<Eigen::Index>(norms.size()), 1);
  for (std::size_t i = 0; i < norms.size(); ++i) norm_col(static_cast<Eigen::Index>(i), 0) = norms[i];
  const ag::Var direction = ag::matmul(inv_norm, emb);
  return ag::matmul(ag::Var(std::move(norm_col)), direction);
}

}  // namespace emoint
