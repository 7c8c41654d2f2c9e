#include "emoint/config.hpp"

#include <fstream>
#include <set>

#include "emoint/errors.hpp"

namespace emoint {

namespace {

using nlohmann::json;

// Reads keys from one JSON object, remembering which were consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
  }

  template <typename T>
  void operator()(const char* key, T& value) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      value = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + path_ + "." + key + "': " + e.what());
    }
  }

  template <typename F>
  void section(const char* key, F&& visit) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Reader sub(j_.at(key), path_.empty() ? key : path_ + "." + key);
    visit(sub);
    sub.finish();
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + (path_.empty() ? k : path_ + "." + k) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  template <typename T>
  void operator()(const char* key, T& value) {
    j[key] = value;
  }

  template <typename F>
  void section(const char* key, F&& visit) {
    Writer sub;
    visit(sub);
    j[key] = sub.j;
  }

  json j = json::object();
};

template <typename V>
void visit(V& v, SynthWorldConfig& c) {
  v("identities", c.identities);
  v("keypoints", c.keypoints);
  v("emotions", c.emotions);
  v("clips", c.clips);
  v("frames_per_clip", c.frames_per_clip);
  v("fps", c.fps);
  v("sample_rate", c.sample_rate);
  v("neutral_fraction", c.neutral_fraction);
  v("emotion_scale", c.emotion_scale);
  v("speech_amplitude", c.speech_amplitude);
  v("identity_spread", c.identity_spread);
  v("knot_spacing", c.knot_spacing);
  v("envelope_wiggle", c.envelope_wiggle);
  v("max_direction_cosine", c.max_direction_cosine);
  v("seed", c.seed);
}

template <typename V>
void visit(V& v, AudioFeatureConfig& c) {
  v("sample_rate", c.sample_rate);
  v("hop", c.hop);
  v("window", c.window);
  v("fft_size", c.fft_size);
  v("mel_bands", c.mel_bands);
  v("dim", c.dim);
  v("projection_seed", c.projection_seed);
}

template <typename V>
void visit(V& v, EmotionSpaceConfig& c) {
  v("text_dim", c.text_dim);
  v("noise_dim", c.noise_dim);
  v("hidden", c.hidden);
  v("emotion_dim", c.emotion_dim);
  v("level_norms", c.level_norms);
  v("continuous_scale", c.continuous_scale);
}

template <typename V>
void visit(V& v, PredictorConfig& c) {
  v("audio_dim", c.audio_dim);
  v("latent_dim", c.latent_dim);
  v("channels", c.channels);
  v("wavenet_layers", c.wavenet_layers);
  v("kernel", c.kernel);
  v("logvar_min", c.logvar_min);
  v("logvar_max", c.logvar_max);
  v("flow_prior", c.flow_prior);
  v("circular_padding", c.circular_padding);
  v("learning_rate", c.learning_rate);
  v("beta1", c.beta1);
  v("beta2", c.beta2);
  v("batch", c.batch);
  v("steps", c.steps);
  v("crop", c.crop);
}

template <typename V>
void visit(V& v, TransformerConfig& c) {
  v("audio_dim", c.audio_dim);
  v("keypoints", c.keypoints);
  v("emotion_dim", c.emotion_dim);
  v("encoder_layers", c.encoder_layers);
  v("decoder_layers", c.decoder_layers);
  v("heads", c.heads);
  v("token_dim", c.token_dim);
  v("ffn_hidden", c.ffn_hidden);
  v("deform_hidden", c.deform_hidden);
  v("max_frames", c.max_frames);
  v("context_window", c.context_window);
  v("emotion_in_encoder", c.emotion_in_encoder);
  v("emotion_in_decoder", c.emotion_in_decoder);
}

template <typename V>
void visit(V& v, ToyRendererConfig& c) {
  v("height", c.height);
  v("width", c.width);
  v("sigma", c.sigma);
  v("scale", c.scale);
  v("amplitude", c.amplitude);
}

template <typename V>
void visit(V& v, SyncEmbedderConfig& c) {
  v("window", c.window);
  v("keypoint_dim", c.keypoint_dim);
  v("audio_dim", c.audio_dim);
  v("hidden", c.hidden);
  v("embed_dim", c.embed_dim);
  v("margin", c.margin);
  v("steps", c.steps);
  v("batch", c.batch);
  v("learning_rate", c.learning_rate);
}

template <typename V>
void visit(V& v, GeneratorTrainingConfig& c) {
  v.section("weights", [&](auto& s) {
    s("exp", c.weights.exp);
    s("rec", c.weights.rec);
    s("sync", c.weights.sync);
    s("norm", c.weights.norm);
  });
  v("pretrain_steps", c.pretrain_steps);
  v("finetune_steps", c.finetune_steps);
  v("batch", c.batch);
  v("crop", c.crop);
  v("learning_rate", c.learning_rate);
  v("transformer_learning_rate", c.transformer_learning_rate);
  v("beta1", c.beta1);
  v("beta2", c.beta2);
  v("grad_clip", c.grad_clip);
  std::string mode = c.conditioning == ConditioningMode::kFramewise ? "framewise" : "level";
  v("conditioning", mode);
  if (mode == "framewise") {
    c.conditioning = ConditioningMode::kFramewise;
  } else if (mode == "level") {
    c.conditioning = ConditioningMode::kLevel;
  } else {
    throw ConfigError("training.conditioning must be 'framewise' or 'level', got '" + mode + "'");
  }
}

template <typename V>
void visit(V& v, EvaluationConfig& c) {
  v("beat_sigma", c.beat_sigma);
  v.section("probe", [&](auto& s) {
    s("iterations", c.probe.iterations);
    s("learning_rate", c.probe.learning_rate);
    s("l2", c.probe.l2);
  });
}

template <typename V>
void visit(V& v, InferenceConfig& c) {
  v("split", c.split);
  v("predict_mode", c.predict_mode);
  v("default_level", c.default_level);
  v("render", c.render);
}

template <typename V>
void visit(V& v, RunConfig& c) {
  v.section("world", [&](auto& s) { visit(s, c.world); });
  v.section("features", [&](auto& s) { visit(s, c.features); });
  v.section("emotion_space", [&](auto& s) { visit(s, c.emotion_space); });
  v.section("predictor", [&](auto& s) { visit(s, c.predictor); });
  v.section("transformer", [&](auto& s) { visit(s, c.transformer); });
  v.section("renderer", [&](auto& s) { visit(s, c.renderer); });
  v.section("sync", [&](auto& s) { visit(s, c.sync); });
  v.section("training", [&](auto& s) { visit(s, c.training); });
  v.section("evaluation", [&](auto& s) { visit(s, c.evaluation); });
  v.section("inference", [&](auto& s) { visit(s, c.inference); });
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

PredictMode parse_predict_mode(const std::string& s) {
  if (s == "mean") return PredictMode::kMean;
  if (s == "sample") return PredictMode::kSample;
  throw ConfigError("predict mode must be 'mean' or 'sample', got '" + s + "'");
}

void RunConfig::validate() const {
  const int K = world.keypoints;
  const int Da = features.dim;
  require(predictor.audio_dim == Da, "predictor.audio_dim must equal features.dim");
  require(transformer.audio_dim == Da, "transformer.audio_dim must equal features.dim");
  require(sync.audio_dim == Da, "sync.audio_dim must equal features.dim");
  require(transformer.keypoints == K, "transformer.keypoints must equal world.keypoints");
  require(sync.keypoint_dim == 3 * K, "sync.keypoint_dim must equal 3 * world.keypoints");
  require(transformer.emotion_dim == emotion_space.emotion_dim,
          "transformer.emotion_dim must equal emotion_space.emotion_dim");
  require(world.sample_rate == features.sample_rate, "world.sample_rate must equal features.sample_rate");
  require(features.hop > 0 && std::abs(static_cast<double>(features.sample_rate) / features.hop - world.fps) < 1e-9,
          "features.sample_rate / features.hop must equal world.fps");
  require(transformer.max_frames >= world.frames_per_clip, "transformer.max_frames is shorter than a clip");
  require(inference.default_level >= 1 && inference.default_level <= 3, "inference.default_level must be 1, 2 or 3");
  require(evaluation.beat_sigma > 0.0, "evaluation.beat_sigma must be positive");
  parse_predict_mode(inference.predict_mode);
  transformer.validate();
  renderer.validate();
  sync.validate();
  training.validate();
}

nlohmann::json to_json(const RunConfig& config) {
  Writer w;
  RunConfig copy = config;
  visit(w, copy);
  return w.j;
}

RunConfig merge_config(const RunConfig& base, const nlohmann::json& overrides) {
  RunConfig c = base;
  Reader r(overrides, "");
  visit(r, c);
  r.finish();
  c.validate();
  return c;
}

RunConfig config_from_json(const nlohmann::json& j) { return merge_config(RunConfig{}, j); }

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace emoint
