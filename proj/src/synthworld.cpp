#include "emoint/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "emoint/errors.hpp"
#include "emoint/rng.hpp"

namespace emoint {

namespace {

constexpr int kMouthPoints = 3;

KeypointMatrix base_layout(int k) {
  KeypointMatrix m(k, 3);
  const int ring = k - kMouthPoints;
  for (int i = 0; i < ring; ++i) {
    const double th = 2.0 * std::numbers::pi * i / ring;
    m.row(i) << static_cast<float>(std::cos(th)), static_cast<float>(std::sin(th)),
        static_cast<float>(0.2 * std::cos(2.0 * th));
  }
  m.row(ring + 0) << -0.3f, -0.5f, 0.1f;
  m.row(ring + 1) << 0.0f, -0.55f, 0.15f;
  m.row(ring + 2) << 0.3f, -0.5f, 0.1f;
  return m;
}

// Smooth curve through knots spaced `spacing` frames apart (cosine interpolation).
std::vector<double> interpolate_knots(const std::vector<double>& knots, int spacing, int frames) {
  std::vector<double> out(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    const int i = t / spacing;
    const double u = static_cast<double>(t % spacing) / spacing;
    const double w = 0.5 - 0.5 * std::cos(std::numbers::pi * u);
    const double a = knots[static_cast<std::size_t>(i)];
    const double b = knots[std::min(knots.size() - 1, static_cast<std::size_t>(i + 1))];
    out[static_cast<std::size_t>(t)] = (1.0 - w) * a + w * b;
  }
  return out;
}

std::vector<double> intensity_envelope(Rng& rng, int level, const SynthWorldConfig& c) {
  static constexpr double kBase[3] = {0.3, 0.55, 0.8};
  const double base = kBase[level - 1];
  const int nknots = c.frames_per_clip / c.knot_spacing + 2;
  std::vector<double> knots(static_cast<std::size_t>(nknots));
  // Redraw until the envelope actually moves; a flat envelope carries no
  // frame-level information.
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (auto& k : knots) k = std::clamp(base + rng.uniform(-c.envelope_wiggle, c.envelope_wiggle), 0.05, 1.0);
    const auto [lo, hi] = std::minmax_element(knots.begin(), knots.end());
    if (*hi - *lo >= 0.8 * c.envelope_wiggle) break;
  }
  return interpolate_knots(knots, c.knot_spacing, c.frames_per_clip);
}

// Syllable-rate mouth opening as a continuous function of time (seconds).
struct SyllableSignal {
  double rate_hz = 4.0;
  double phase = 0.0;
  std::vector<double> gate_knots;  // speech/pause gating, one knot per second
  double at(double t) const {
    const double g_pos = t;
    const auto i = static_cast<std::size_t>(std::floor(g_pos));
    const double u = g_pos - std::floor(g_pos);
    const double a = gate_knots[std::min(i, gate_knots.size() - 1)];
    const double b = gate_knots[std::min(i + 1, gate_knots.size() - 1)];
    const double w = 0.5 - 0.5 * std::cos(std::numbers::pi * u);
    const double gate = (1.0 - w) * a + w * b;
    const double wobble = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (rate_hz * t + phase));
    return gate * wobble;
  }
};

double interp_frames(const std::vector<double>& v, double frame_pos) {
  if (frame_pos <= 0.0) return v.front();
  const double last = static_cast<double>(v.size() - 1);
  if (frame_pos >= last) return v.back();
  const auto i = static_cast<std::size_t>(frame_pos);
  const double u = frame_pos - static_cast<double>(i);
  return (1.0 - u) * v[i] + u * v[i + 1];
}

}  // namespace

SynthWorld build_world(const SynthWorldConfig& c) {
  if (c.keypoints < kMouthPoints + 3) throw ConfigError("synthetic world needs at least 6 keypoints");
  if (c.identities < 1) throw ConfigError("synthetic world needs at least one identity");
  if (c.emotions.empty()) throw ConfigError("synthetic world needs at least one emotion");
  if (c.frames_per_clip < 10) throw ConfigError("clips must have at least 10 frames");
  if (c.knot_spacing < 1) throw ConfigError("knot_spacing must be positive");
  if (c.neutral_fraction <= 0.0 || c.neutral_fraction >= 1.0) {
    throw ConfigError("neutral_fraction must lie in (0, 1)");
  }
  if (std::find(c.emotions.begin(), c.emotions.end(), "neutral") != c.emotions.end()) {
    throw ConfigError("'neutral' is implicit and must not be listed among emotions");
  }
  SynthWorld w;
  w.config = c;
  const KeypointMatrix base = base_layout(c.keypoints);
  w.canonical = KeypointMatrix::Zero(c.keypoints, 3);
  for (int i = 0; i < c.identities; ++i) {
    Rng rng(c.seed, "identity/" + std::to_string(i));
    KeypointMatrix t = base + rng.normal_matrix(c.keypoints, 3, c.identity_spread).cast<float>();
    w.identity_ids.push_back("id" + std::to_string(i));
    w.canonical += t;
    w.identity_templates.push_back(std::move(t));
  }
  w.canonical /= static_cast<float>(c.identities);

  for (int attempt = 0;; ++attempt) {
    if (attempt >= 100) throw ConfigError("could not draw separable emotion directions");
    w.emotion_directions.clear();
    for (const auto& e : c.emotions) {
      Rng rng(c.seed, "emotion/" + e + "/" + std::to_string(attempt));
      ag::Matrix d = rng.normal_matrix(c.keypoints, 3);
      d /= d.norm();
      w.emotion_directions[e] = d.cast<float>();
    }
    bool separable = true;
    for (auto a = w.emotion_directions.begin(); a != w.emotion_directions.end(); ++a) {
      for (auto b = std::next(a); b != w.emotion_directions.end(); ++b) {
        const double cosine = a->second.cast<double>().cwiseProduct(b->second.cast<double>()).sum();
        separable = separable && cosine < c.max_direction_cosine;
      }
    }
    if (separable) break;
  }

  w.mouth_direction = KeypointMatrix::Zero(c.keypoints, 3);
  const int first_mouth = c.keypoints - kMouthPoints;
  const float jaw[kMouthPoints] = {-0.5f, -1.0f, -0.5f};
  for (int m = 0; m < kMouthPoints; ++m) {
    w.mouth_keypoints.push_back(first_mouth + m);
    w.mouth_direction(first_mouth + m, 1) = jaw[m];
  }
  return w;
}

Clip generate_clip(const SynthWorld& w, int index, const AudioFeatureConfig& fc) {
  const auto& c = w.config;
  if (fc.sample_rate != c.sample_rate) throw ConfigError("feature and world sample rates differ");
  Rng rng(c.seed, "clip/" + std::to_string(index));
  const int identity = index % c.identities;
  const int slot = index / c.identities;
  const int period = std::max(2, static_cast<int>(std::lround(1.0 / c.neutral_fraction)));
  const bool neutral = slot % period == 0;
  const int level = 1 + static_cast<int>(rng.index(3));
  const std::string emotion = neutral ? "neutral" : c.emotions[rng.index(c.emotions.size())];
  const int T = c.frames_per_clip;

  std::vector<double> intensity(static_cast<std::size_t>(T), 0.0);
  if (!neutral) intensity = intensity_envelope(rng, level, c);

  SyllableSignal syl;
  syl.rate_hz = rng.uniform(3.0, 5.0);
  syl.phase = rng.uniform();
  const double seconds = T / c.fps;
  for (int i = 0; i <= static_cast<int>(std::ceil(seconds)) + 1; ++i) {
    syl.gate_knots.push_back(rng.uniform() < 0.2 ? 0.1 : rng.uniform(0.6, 1.0));
  }

  Clip clip;
  auto& seq = clip.keypoints;
  seq.clip_id = "clip" + std::to_string(10000 + index).substr(1);
  seq.identity_id = w.identity_ids[static_cast<std::size_t>(identity)];
  seq.emotion_label = emotion;
  seq.fps = c.fps;
  if (!neutral) seq.intensity_level = level;
  const int bucket = index % 10;
  seq.split = bucket == 8 ? "val" : bucket == 9 ? "test" : "train";

  const KeypointMatrix& tmpl = w.identity_templates[static_cast<std::size_t>(identity)];
  const KeypointMatrix* dir = neutral ? nullptr : &w.emotion_directions.at(emotion);
  for (int t = 0; t < T; ++t) {
    const double time = (t + 0.5) / c.fps;
    const double opening = syl.at(time);
    clip.syllable.push_back(opening);
    KeypointFrame f;
    f.frame_index = t;
    f.points = tmpl + static_cast<float>(c.speech_amplitude * opening) * w.mouth_direction;
    if (dir) f.points += static_cast<float>(intensity[static_cast<std::size_t>(t)] * c.emotion_scale) * *dir;
    seq.frames.push_back(std::move(f));
  }

  clip.gt_intensity.values = intensity;
  clip.gt_intensity.fps = c.fps;
  clip.gt_intensity.normalized = true;
  clip.gt_intensity.clip_id = seq.clip_id;

  // Audio: harmonic tone, pitch and loudness rise with intensity, amplitude
  // gated by the syllable signal.
  const double pitch_offset = 12.0 * (identity - (c.identities - 1) / 2.0);
  const auto samples = static_cast<std::size_t>(std::llround(seconds * c.sample_rate));
  clip.audio.sample_rate = c.sample_rate;
  clip.audio.samples.resize(samples);
  double phase = 0.0;
  Rng noise(c.seed, "clip-noise/" + std::to_string(index));
  for (std::size_t n = 0; n < samples; ++n) {
    const double time = static_cast<double>(n) / c.sample_rate;
    const double inten = interp_frames(intensity, time * c.fps - 0.5);
    const double f0 = 110.0 + pitch_offset + 150.0 * inten;
    phase += 2.0 * std::numbers::pi * f0 / c.sample_rate;
    double tone = 0.0;
    for (int h = 1; h <= 8; ++h) tone += std::sin(h * phase) / h;
    const double amp = 0.25 * (0.1 + 0.9 * syl.at(time)) * (0.4 + 0.6 * inten);
    const double v = amp * tone * 0.5 + 0.003 * noise.normal();
    clip.audio.samples[n] = static_cast<std::int16_t>(std::clamp(std::lround(v * 32767.0), -32767L, 32767L));
  }
  clip.features = extract_features(clip.audio, fc);
  clip.features.clip_id = seq.clip_id;
  if (clip.features.frames() != T) {
    throw ConfigError("audio hop does not align with the keypoint frame rate");
  }
  return clip;
}

std::vector<Clip> generate_corpus(const SynthWorld& world, const AudioFeatureConfig& features) {
  std::vector<Clip> clips;
  clips.reserve(static_cast<std::size_t>(world.config.clips));
  for (int i = 0; i < world.config.clips; ++i) clips.push_back(generate_clip(world, i, features));
  return clips;
}

namespace {

nlohmann::json matrix_json(const KeypointMatrix& m) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index k = 0; k < m.rows(); ++k) a.push_back({m(k, 0), m(k, 1), m(k, 2)});
  return a;
}

KeypointMatrix matrix_from(const nlohmann::json& a) {
  KeypointMatrix m(static_cast<Eigen::Index>(a.size()), 3);
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (int c = 0; c < 3; ++c) m(static_cast<Eigen::Index>(k), c) = a[k][static_cast<std::size_t>(c)].get<float>();
  }
  return m;
}

}  // namespace

nlohmann::json world_to_json(const SynthWorld& w) {
  const auto& c = w.config;
  nlohmann::json j;
  j["config"] = {{"identities", c.identities},         {"keypoints", c.keypoints},
                 {"emotions", c.emotions},             {"clips", c.clips},
                 {"frames_per_clip", c.frames_per_clip}, {"fps", c.fps},
                 {"sample_rate", c.sample_rate},       {"neutral_fraction", c.neutral_fraction},
                 {"emotion_scale", c.emotion_scale},   {"speech_amplitude", c.speech_amplitude},
                 {"identity_spread", c.identity_spread}, {"knot_spacing", c.knot_spacing},
                 {"envelope_wiggle", c.envelope_wiggle}, {"max_direction_cosine", c.max_direction_cosine},
                 {"seed", c.seed}};
  j["identity_ids"] = w.identity_ids;
  j["identity_templates"] = nlohmann::json::array();
  for (const auto& t : w.identity_templates) j["identity_templates"].push_back(matrix_json(t));
  for (const auto& [e, d] : w.emotion_directions) j["emotion_directions"][e] = matrix_json(d);
  j["mouth_direction"] = matrix_json(w.mouth_direction);
  j["mouth_keypoints"] = w.mouth_keypoints;
  j["canonical"] = matrix_json(w.canonical);
  return j;
}

SynthWorld world_from_json(const nlohmann::json& j) {
  SynthWorld w;
  const auto& c = j.at("config");
  w.config.identities = c.at("identities");
  w.config.keypoints = c.at("keypoints");
  w.config.emotions = c.at("emotions").get<std::vector<std::string>>();
  w.config.clips = c.at("clips");
  w.config.frames_per_clip = c.at("frames_per_clip");
  w.config.fps = c.at("fps");
  w.config.sample_rate = c.at("sample_rate");
  w.config.neutral_fraction = c.at("neutral_fraction");
  w.config.emotion_scale = c.at("emotion_scale");
  w.config.speech_amplitude = c.at("speech_amplitude");
  w.config.identity_spread = c.at("identity_spread");
  w.config.knot_spacing = c.at("knot_spacing");
  w.config.envelope_wiggle = c.at("envelope_wiggle");
  w.config.max_direction_cosine = c.at("max_direction_cosine");
  w.config.seed = c.at("seed");
  w.identity_ids = j.at("identity_ids").get<std::vector<std::string>>();
  for (const auto& t : j.at("identity_templates")) w.identity_templates.push_back(matrix_from(t));
  for (const auto& [e, d] : j.at("emotion_directions").items()) w.emotion_directions[e] = matrix_from(d);
  w.mouth_direction = matrix_from(j.at("mouth_direction"));
  w.mouth_keypoints = j.at("mouth_keypoints").get<std::vector<int>>();
  w.canonical = matrix_from(j.at("canonical"));
  return w;
}

void write_corpus_dir(const std::filesystem::path& dir, const SynthWorld& world,
                      const std::vector<Clip>& clips) {
  std::filesystem::create_directories(dir / "audio");
  std::vector<KeypointSequence> seqs;
  std::vector<AudioFeatureSequence> feats;
  std::vector<IntensitySequence> gts;
  for (const auto& c : clips) {
    seqs.push_back(c.keypoints);
    feats.push_back(c.features);
    gts.push_back(c.gt_intensity);
    write_wav(dir / "audio" / (c.clip_id() + ".wav"), c.audio);
  }
  write_corpus(dir / "corpus.jsonl", seqs);
  write_features(dir / "features.jsonl", feats);
  write_intensities(dir / "gt_intensity.jsonl", gts);
  write_json(dir / "world.json", world_to_json(world));
}

CorpusBundle read_corpus_dir(const std::filesystem::path& dir) {
  CorpusBundle b;
  b.sequences = read_corpus(dir / "corpus.jsonl");
  b.features = read_features(dir / "features.jsonl");
  if (std::filesystem::exists(dir / "gt_intensity.jsonl")) {
    b.gt_intensity = read_intensities(dir / "gt_intensity.jsonl");
  }
  return b;
}

}  // namespace emoint
