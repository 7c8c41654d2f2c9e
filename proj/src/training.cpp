#include "emoint/training.hpp"

#include <cmath>
#include <limits>

#include "emoint/errors.hpp"

namespace emoint {

void LossWeights::validate() const {
  for (double w : {exp, rec, sync, norm}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

namespace {

void require_same_shape(const ag::Matrix& a, const ag::Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

ag::Matrix flatten(const KeypointSequence& seq) {
  const Eigen::Index K = seq.keypoint_count();
  ag::Matrix m(static_cast<Eigen::Index>(seq.size()), K * 3);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto& p = seq.frames[t].points;
    if (p.rows() != K) throw DimensionError("keypoint count varies across frames");
    for (Eigen::Index k = 0; k < K; ++k) {
      for (int c = 0; c < 3; ++c) m(static_cast<Eigen::Index>(t), 3 * k + c) = p(k, c);
    }
  }
  return m;
}

void check_part(const ag::Var& v, const char* name) {
  if (!v.defined()) return;
  const double x = v.item();
  if (!std::isfinite(x) || x < 0.0) {
    throw ContractError(std::string("loss part '") + name + "' must be finite and >= 0, got " + std::to_string(x));
  }
}

}  // namespace

double loss_exp(const KeypointSequence& pred, const KeypointSequence& target) {
  if (pred.size() != target.size() || pred.keypoint_count() != target.keypoint_count()) {
    throw DimensionError("loss_exp: sequences differ in shape");
  }
  const ag::Matrix a = flatten(pred);
  const ag::Matrix b = flatten(target);
  if (a.size() == 0) return 0.0;
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

ag::Var loss_exp(const ag::Var& pred, const ag::Matrix& target) {
  require_same_shape(pred.value(), target, "loss_exp");
  return ag::mean(ag::square(ag::sub(pred, ag::Var(target))));
}

double loss_rec(const ag::Matrix& pred, const ag::Matrix& target, const ag::Matrix& mask) {
  require_same_shape(pred, target, "loss_rec");
  require_same_shape(pred, mask, "loss_rec mask");
  const double count = mask.sum();
  if (!(count > 0.0)) throw DegenerateError("loss_rec: facial-region mask selects no pixels");
  return ((pred - target).cwiseAbs().cwiseProduct(mask)).sum() / count;
}

ag::Var loss_rec(const ag::Var& pred, const ag::Matrix& target, const ag::Matrix& mask) {
  require_same_shape(pred.value(), target, "loss_rec");
  require_same_shape(pred.value(), mask, "loss_rec mask");
  const double count = mask.sum();
  if (!(count > 0.0)) throw DegenerateError("loss_rec: facial-region mask selects no pixels");
  return ag::scale(ag::sum(ag::mul_const(ag::abs(ag::sub(pred, ag::Var(target))), mask)), 1.0 / count);
}

double loss_sync(const Eigen::VectorXd& v, const Eigen::VectorXd& s) {
  if (v.size() != s.size()) throw DimensionError("loss_sync: embedding sizes differ");
  const double cosine = v.dot(s) / std::max(v.norm() * s.norm(), kSyncEpsilon);
  return -std::log(std::clamp(cosine, kSyncCosineFloor, 1.0));
}

ag::Var cosine_rows(const ag::Var& v, const ag::Var& s) {
  require_same_shape(v.value(), s.value(), "cosine_rows");
  const Eigen::Index n = v.rows();
  const ag::Matrix& a = v.value();
  const ag::Matrix& b = s.value();
  ag::Matrix out(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    out(r, 0) = a.row(r).dot(b.row(r)) / std::max(a.row(r).norm() * b.row(r).norm(), kSyncEpsilon);
  }
  return ag::make_result(std::move(out), {v, s}, [](ag::Node& self) {
    const ag::Matrix& a = self.parents[0]->value;
    const ag::Matrix& b = self.parents[1]->value;
    ag::Matrix ga(a.rows(), a.cols()), gb(b.rows(), b.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      const double na = a.row(r).norm();
      const double nb = b.row(r).norm();
      const double g = self.grad(r, 0);
      if (na * nb > kSyncEpsilon) {
        const double c = self.value(r, 0);
        ga.row(r) = g * (b.row(r) / (na * nb) - c * a.row(r) / (na * na));
        gb.row(r) = g * (a.row(r) / (na * nb) - c * b.row(r) / (nb * nb));
      } else {
        ga.row(r) = g * b.row(r) / kSyncEpsilon;
        gb.row(r) = g * a.row(r) / kSyncEpsilon;
      }
    }
    if (self.parents[0]->requires_grad) self.parents[0]->add_grad(ga);
    if (self.parents[1]->requires_grad) self.parents[1]->add_grad(gb);
  });
}

ag::Var loss_sync_rows(const ag::Var& v, const ag::Var& s) {
  return ag::scale(ag::mean(ag::log(ag::clamp(cosine_rows(v, s), kSyncCosineFloor, 1.0))), -1.0);
}

double total_loss(const LossParts& p, const LossWeights& w, bool is_neutral) {
  for (double x : {p.exp, p.rec, p.sync, p.norm}) {
    if (!std::isfinite(x) || x < 0.0) throw ContractError("loss parts must be finite and >= 0");
  }
  w.validate();
  double total = w.exp * p.exp + w.rec * p.rec + w.sync * p.sync;
  if (is_neutral) total += w.norm * p.norm;
  return total;
}

ag::Var total_loss(const ag::Var& exp, const ag::Var& rec, const ag::Var& sync, const ag::Var& norm,
                   const LossWeights& w, bool is_neutral) {
  check_part(exp, "exp");
  check_part(rec, "rec");
  check_part(sync, "sync");
  check_part(norm, "norm");
  w.validate();
  ag::Var total;
  auto accumulate = [&total](const ag::Var& part, double weight) {
    if (!part.defined()) return;
    const ag::Var term = ag::scale(part, weight);
    total = total.defined() ? ag::add(total, term) : term;
  };
  accumulate(exp, w.exp);
  accumulate(rec, w.rec);
  accumulate(sync, w.sync);
  if (is_neutral) accumulate(norm, w.norm);
  return total.defined() ? total : ag::Var::scalar(0.0);
}

// ---- sync embedder ---------------------------------------------------------

void SyncEmbedderConfig::validate() const {
  if (window < 1 || keypoint_dim < 1 || audio_dim < 1 || hidden < 1 || embed_dim < 1) {
    throw ConfigError("sync embedder dimensions must be positive");
  }
  if (steps < 0 || batch < 1) throw ConfigError("sync embedder steps must be >= 0 and batch >= 1");
  if (!(margin >= 0.0) || !(learning_rate > 0.0)) throw ConfigError("sync embedder margin/learning rate invalid");
}

SyncEmbedder::SyncEmbedder(const SyncEmbedderConfig& config, Rng& rng) : config_(config) { build(rng); }

SyncEmbedder::SyncEmbedder(const SyncEmbedderConfig& config, const ModelArchive& archive) : config_(config) {
  Rng rng(0);
  build(rng);
  store_.load_from(archive);
}

void SyncEmbedder::build(Rng& rng) {
  config_.validate();
  const auto& c = config_;
  v1_ = nn::make_linear(store_, "sync.video.conv1", c.window * c.keypoint_dim, c.hidden, rng);
  v2_ = nn::make_linear(store_, "sync.video.conv2", c.hidden, c.hidden, rng);
  v3_ = nn::make_linear(store_, "sync.video.head", c.hidden, c.embed_dim, rng);
  a1_ = nn::make_linear(store_, "sync.audio.conv1", c.window * c.audio_dim, c.hidden, rng);
  a2_ = nn::make_linear(store_, "sync.audio.conv2", c.hidden, c.hidden, rng);
  a3_ = nn::make_linear(store_, "sync.audio.head", c.hidden, c.embed_dim, rng);
}

ag::Var SyncEmbedder::windows(const ag::Var& x) const {
  const Eigen::Index T = x.rows();
  const int w = config_.window;
  if (T < w) throw DimensionError("sync embedder needs at least " + std::to_string(w) + " frames");
  std::vector<ag::Var> taps;
  taps.reserve(static_cast<std::size_t>(w));
  for (int j = 0; j < w; ++j) taps.push_back(j == 0 ? x : ag::shift_rows(x, -j));
  return ag::slice_rows(ag::concat_cols(taps), 0, T - w + 1);
}

ag::Var SyncEmbedder::video(const ag::Var& keypoints) const {
  if (keypoints.cols() != config_.keypoint_dim) throw DimensionError("sync video branch: wrong keypoint width");
  return v3_(ag::relu(v2_(ag::relu(v1_(windows(keypoints))))));
}

ag::Var SyncEmbedder::audio(const ag::Var& features) const {
  if (features.cols() != config_.audio_dim) throw DimensionError("sync audio branch: wrong feature width");
  return a3_(ag::relu(a2_(ag::relu(a1_(windows(features))))));
}

namespace {

struct WindowPair {
  std::size_t clip;
  Eigen::Index aligned;
  Eigen::Index shifted;
};

WindowPair draw_pair(const std::vector<SyncExample>& examples, int window, Rng& rng) {
  for (;;) {
    const std::size_t i = rng.index(examples.size());
    const Eigen::Index T = examples[i].audio.rows();
    const Eigen::Index starts = T - window + 1;
    if (starts < 2 * window + 1) continue;
    const auto p = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(starts)));
    Eigen::Index q = p;
    while (std::abs(q - p) < window) q = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(starts)));
    return {i, p, q};
  }
}

void check_sync_examples(const std::vector<SyncExample>& examples, int window) {
  bool usable = false;
  for (const auto& ex : examples) {
    if (ex.deviations.rows() != ex.audio.rows()) throw AlignmentError("sync example: keypoints and audio differ in length");
    usable = usable || ex.audio.rows() - window + 1 >= 2 * window + 1;
  }
  if (!usable) throw InsufficientDataError("sync examples are too short to draw misaligned windows");
}

}  // namespace

void pretrain_sync_embedder(SyncEmbedder& embedder, const std::vector<SyncExample>& examples, std::uint64_t seed) {
  constexpr std::size_t kMinSequences = 20;
  if (examples.size() < kMinSequences) {
    throw InsufficientDataError("sync embedder pre-training needs at least 20 sequences, got " +
                                std::to_string(examples.size()));
  }
  const auto& c = embedder.config();
  check_sync_examples(examples, c.window);
  nn::AdamConfig ac;
  ac.learning_rate = c.learning_rate;
  ac.beta1 = 0.9;
  nn::Adam adam(ac);
  Rng rng(seed, "sync/pairs");
  for (int step = 0; step < c.steps; ++step) {
    embedder.params().zero_grad();
    ag::Var total;
    for (int b = 0; b < c.batch; ++b) {
      const WindowPair p = draw_pair(examples, c.window, rng);
      const auto& ex = examples[p.clip];
      const ag::Var v = embedder.video(ag::Var(ex.deviations.middleRows(p.aligned, c.window)));
      const ag::Var s_pos = embedder.audio(ag::Var(ex.audio.middleRows(p.aligned, c.window)));
      const ag::Var s_neg = embedder.audio(ag::Var(ex.audio.middleRows(p.shifted, c.window)));
      const ag::Var c_pos = cosine_rows(v, s_pos);
      const ag::Var gap = ag::sub(cosine_rows(v, s_neg), c_pos);
      // hinge on the gap plus (1 - aligned cosine)
      const ag::Var term = ag::add(ag::relu(ag::add_scalar(gap, c.margin)), ag::add_scalar(ag::scale(c_pos, -1.0), 1.0));
      total = total.defined() ? ag::add(total, term) : term;
    }
    ag::backward(ag::scale(total, 1.0 / c.batch));
    adam.step(embedder.params());
  }
  embedder.params().zero_grad();
}

double sync_discrimination_rate(const SyncEmbedder& embedder, const std::vector<SyncExample>& examples,
                                std::uint64_t seed, int pairs) {
  if (examples.empty() || pairs < 1) throw InsufficientDataError("discrimination rate needs examples and pairs");
  const int w = embedder.config().window;
  check_sync_examples(examples, w);
  ag::NoGradGuard guard;
  Rng rng(seed, "sync/eval-pairs");
  int wins = 0;
  for (int i = 0; i < pairs; ++i) {
    const WindowPair p = draw_pair(examples, w, rng);
    const auto& ex = examples[p.clip];
    const ag::Matrix v = embedder.video(ag::Var(ex.deviations.middleRows(p.aligned, w))).value();
    const ag::Matrix s_pos = embedder.audio(ag::Var(ex.audio.middleRows(p.aligned, w))).value();
    const ag::Matrix s_neg = embedder.audio(ag::Var(ex.audio.middleRows(p.shifted, w))).value();
    const double c_pos = cosine_rows(ag::Var(v), ag::Var(s_pos)).item();
    const double c_neg = cosine_rows(ag::Var(v), ag::Var(s_neg)).item();
    if (c_pos > c_neg) ++wins;
  }
  return static_cast<double>(wins) / pairs;
}

// ---- generator -------------------------------------------------------------

void GeneratorTrainingConfig::validate() const {
  weights.validate();
  if (pretrain_steps < 0 || finetune_steps < 0) throw ConfigError("stage steps must be >= 0");
  if (batch < 1 || crop < 5) throw ConfigError("generator batch must be >= 1 and crop >= 5");
  if (!(learning_rate > 0.0) || !(transformer_learning_rate > 0.0)) {
    throw ConfigError("generator learning rates must be positive");
  }
}

GeneratorModel::GeneratorModel(const TransformerConfig& xf_config, const EmotionSpaceConfig& emo_config,
                               const SyncEmbedderConfig& sync_config, const ToyRendererConfig& renderer_config,
                               const KeypointMatrix& canonical, std::uint64_t seed)
    : transformer([&] {
        Rng rng(seed, "init/transformer");
        return ExpressionTransformer(xf_config, rng);
      }()),
      emotion_config(emo_config),
      text_encoder(emo_config.text_dim, derive_seed(seed, "text-encoder")),
      sync([&] {
        Rng rng(seed, "init/sync");
        return SyncEmbedder(sync_config, rng);
      }()),
      renderer{renderer_config, canonical} {
  if (emo_config.emotion_dim != xf_config.emotion_dim) {
    throw ConfigError("emotion_space.emotion_dim and transformer.emotion_dim differ");
  }
  if (canonical.rows() != xf_config.keypoints) throw ConfigError("renderer canonical face has the wrong K");
  renderer.config.validate();
  Rng rng(seed, "init/adaptation");
  adaptation = std::make_unique<AdaptationNet>(emotion_params, emo_config, rng);
}

GeneratorModel::GeneratorModel(const TransformerConfig& xf_config, const EmotionSpaceConfig& emo_config,
                               const SyncEmbedderConfig& sync_config, const ModelArchive& archive)
    : transformer(xf_config, archive),
      emotion_config(emo_config),
      text_encoder(StubTextEncoder::load_from(archive)),
      sync(sync_config, archive),
      renderer(ToyRenderer::load_from(archive)) {
  Rng rng(0);
  adaptation = std::make_unique<AdaptationNet>(emotion_params, emo_config, rng);
  emotion_params.load_from(archive);
}

EmotionEmbedding GeneratorModel::embed(const std::string& emotion_text, std::span<const double> noise) const {
  return adapt(*adaptation, text_encoder.embed(emotion_text), noise);
}

void GeneratorModel::save_to(ModelArchive& archive) const {
  transformer.save_to(archive);
  emotion_params.save_to(archive);
  text_encoder.save_to(archive);
  sync.save_to(archive);
  renderer.save_to(archive);
}

nlohmann::json to_json(const GeneratorStepLog& log) {
  return {{"step", log.step},
          {"stage", log.stage == TrainStage::kPretrain ? "pretrain" : "finetune"},
          {"loss", log.loss},
          {"parts", {{"exp", log.parts.exp}, {"rec", log.parts.rec}, {"sync", log.parts.sync}, {"norm", log.parts.norm}}}};
}

ag::Matrix deviation_rows(const KeypointSequence& seq, const NeutralReference& neutral) {
  const Eigen::Index K = seq.keypoint_count();
  if (neutral.neutral_points.rows() != K) throw DimensionError("neutral reference has the wrong K");
  ag::Matrix m = flatten(seq);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (int c = 0; c < 3; ++c) m.col(3 * k + c).array() -= neutral.neutral_points(k, c);
  }
  return m;
}

namespace {

ag::Matrix canonical_row(const ToyRenderer& r) {
  ag::Matrix row(1, r.canonical.rows() * 3);
  for (Eigen::Index k = 0; k < r.canonical.rows(); ++k) {
    for (int c = 0; c < 3; ++c) row(0, 3 * k + c) = r.canonical(k, c);
  }
  return row;
}

struct ExampleLoss {
  ag::Var total;
  LossParts parts;
};

ExampleLoss example_loss(const GeneratorModel& model, const GeneratorExample& ex, const GeneratorTrainingConfig& config,
                         TrainStage stage, Eigen::Index start, Eigen::Index len, Rng& noise_rng) {
  const auto& w = config.weights;
  const ag::Matrix target = deviation_rows(*ex.keypoints, *ex.neutral).middleRows(start, len);
  const ag::Var audio(ex.audio->features.middleRows(start, len));
  const bool neutral = is_neutral_emotion(ex.keypoints->emotion_label);

  ag::Var emotion, norm_part;
  if (stage == TrainStage::kFinetune) {
    const auto& ec = model.emotion_config;
    Eigen::RowVectorXd text = model.text_encoder.embed(ex.keypoints->emotion_label).vector.transpose();
    const ag::Var noise(noise_rng.normal_matrix(1, ec.noise_dim));
    const ag::Var m = model.adaptation->forward(ag::Var(ag::Matrix(text)), noise);
    if (neutral) {
      emotion = ag::repeat_rows(m, len);
      norm_part = neutral_norm_penalty(m);
    } else {
      std::vector<double> norms(static_cast<std::size_t>(len));
      if (config.conditioning == ConditioningMode::kFramewise) {
        if (!ex.labels) throw ConfigError("fine-tuning needs intensity labels for every emotional clip");
        for (Eigen::Index t = 0; t < len; ++t) {
          norms[static_cast<std::size_t>(t)] = norm_for_intensity(ec, ex.labels->values[static_cast<std::size_t>(start + t)]);
        }
      } else {
        if (!ex.keypoints->intensity_level) throw ConfigError("level conditioning needs intensity levels on every clip");
        std::fill(norms.begin(), norms.end(), norm_for_level(ec, *ex.keypoints->intensity_level));
      }
      emotion = rescale_rows(m, norms);
    }
  }

  const ag::Var pred = model.transformer.forward(audio, emotion);
  const ag::Var exp = loss_exp(pred, target);

  const ag::Matrix canon = canonical_row(model.renderer);
  const ag::Matrix target_abs = target.rowwise() + canon.row(0);
  ag::Matrix target_img, mask;
  {
    ag::NoGradGuard guard;
    target_img = model.renderer.render_rows(ag::Var(target_abs)).value();
  }
  mask = model.renderer.face_mask_rows(target_abs);
  const ag::Var rec = loss_rec(model.renderer.render_rows(ag::add_row(pred, ag::Var(canon))), target_img, mask);

  ag::Var sync;
  if (stage == TrainStage::kFinetune && w.sync > 0.0) {
    ag::Matrix s;
    {
      ag::NoGradGuard guard;
      s = model.sync.audio(audio).value();
    }
    sync = loss_sync_rows(model.sync.video(pred), ag::Var(s));
  }

  ExampleLoss out;
  out.total = total_loss(exp, rec, sync, norm_part, w, neutral);
  out.parts.exp = exp.item();
  out.parts.rec = rec.item();
  out.parts.sync = sync.defined() ? sync.item() : 0.0;
  out.parts.norm = norm_part.defined() ? norm_part.item() : 0.0;
  return out;
}

}  // namespace

int train_generator_stage(GeneratorModel& model, const std::vector<GeneratorExample>& examples,
                          const GeneratorTrainingConfig& config, TrainStage stage, std::uint64_t seed, int first_step,
                          const std::function<void(const GeneratorStepLog&)>& on_step) {
  config.validate();
  const bool finetune = stage == TrainStage::kFinetune;
  std::vector<const GeneratorExample*> pool;
  for (const auto& ex : examples) {
    if (!ex.keypoints || !ex.neutral || !ex.audio) throw ConfigError("generator example is missing inputs");
    if (static_cast<Eigen::Index>(ex.keypoints->size()) != ex.audio->frames()) {
      throw AlignmentError("clip " + ex.keypoints->clip_id + ": keypoints and audio differ in length");
    }
    const bool neutral = is_neutral_emotion(ex.keypoints->emotion_label);
    if (finetune && !neutral && config.conditioning == ConditioningMode::kFramewise && !ex.labels) {
      throw ConfigError("clip " + ex.keypoints->clip_id + " has no intensity labels for fine-tuning");
    }
    if (ex.labels && ex.labels->size() != ex.keypoints->size()) {
      throw AlignmentError("clip " + ex.keypoints->clip_id + ": labels and keypoints differ in length");
    }
    if (finetune || neutral) pool.push_back(&ex);
  }
  const int steps = finetune ? config.finetune_steps : config.pretrain_steps;
  if (steps == 0) return 0;
  if (pool.empty()) {
    throw InsufficientDataError(finetune ? "no clips for fine-tuning" : "no neutral clips for pre-training");
  }

  nn::AdamConfig ac;
  ac.learning_rate = config.learning_rate;
  ac.beta1 = config.beta1;
  ac.beta2 = config.beta2;
  ac.grad_clip_norm = config.grad_clip;
  ac.lr_by_prefix["xf."] = config.transformer_learning_rate;
  nn::Adam xf_opt(ac);
  nn::Adam emo_opt(ac);

  const std::string tag = finetune ? "finetune" : "pretrain";
  Rng batch_rng(seed, "generator/" + tag + "/batches");
  Rng noise_rng(seed, "generator/" + tag + "/noise");
  for (int i = 0; i < steps; ++i) {
    model.transformer.params().zero_grad();
    model.emotion_params.zero_grad();
    ag::Var total;
    LossParts sum;
    for (int b = 0; b < config.batch; ++b) {
      const GeneratorExample& ex = *pool[batch_rng.index(pool.size())];
      const auto T = static_cast<Eigen::Index>(ex.keypoints->size());
      const Eigen::Index len = std::min<Eigen::Index>(T, config.crop);
      const Eigen::Index start =
          T > len ? static_cast<Eigen::Index>(batch_rng.index(static_cast<std::size_t>(T - len + 1))) : 0;
      const ExampleLoss l = example_loss(model, ex, config, stage, start, len, noise_rng);
      total = total.defined() ? ag::add(total, l.total) : l.total;
      sum.exp += l.parts.exp;
      sum.rec += l.parts.rec;
      sum.sync += l.parts.sync;
      sum.norm += l.parts.norm;
    }
    total = ag::scale(total, 1.0 / config.batch);
    ag::backward(total);
    xf_opt.step(model.transformer.params());
    if (finetune) emo_opt.step(model.emotion_params);
    model.sync.params().zero_grad();
    if (on_step) {
      const double inv = 1.0 / config.batch;
      on_step({first_step + i, stage, total.item(), {sum.exp * inv, sum.rec * inv, sum.sync * inv, sum.norm * inv}});
    }
  }
  model.transformer.params().zero_grad();
  model.emotion_params.zero_grad();
  return steps;
}

void train_generator(GeneratorModel& model, const std::vector<GeneratorExample>& examples,
                     const GeneratorTrainingConfig& config, std::uint64_t seed,
                     const std::function<void(const GeneratorStepLog&)>& on_step,
                     const std::filesystem::path& checkpoint_dir) {
  auto checkpoint = [&](const char* name) {
    if (checkpoint_dir.empty()) return;
    std::filesystem::create_directories(checkpoint_dir);
    ModelArchive a;
    model.save_to(a);
    a.save(checkpoint_dir / name);
  };
  const int done = train_generator_stage(model, examples, config, TrainStage::kPretrain, seed, 0, on_step);
  checkpoint("pretrain.emoa");
  train_generator_stage(model, examples, config, TrainStage::kFinetune, seed, done, on_step);
  checkpoint("finetune.emoa");
}

LossParts evaluate_generator_losses(const GeneratorModel& model, const GeneratorExample& example,
                                    const GeneratorTrainingConfig& config, TrainStage stage, Rng& rng) {
  ag::NoGradGuard guard;
  const auto T = static_cast<Eigen::Index>(example.keypoints->size());
  return example_loss(model, example, config, stage, 0, T, rng).parts;
}

ag::Var generator_loss(const GeneratorModel& model, const GeneratorExample& example,
                       const GeneratorTrainingConfig& config, TrainStage stage, Rng& rng) {
  const auto T = static_cast<Eigen::Index>(example.keypoints->size());
  return example_loss(model, example, config, stage, 0, T, rng).total;
}

}  // namespace emoint
