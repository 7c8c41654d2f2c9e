#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "emoint/archive.hpp"
#include "emoint/config.hpp"
#include "emoint/errors.hpp"
#include "emoint/synthworld.hpp"
#include "test_support.hpp"

namespace emoint {
namespace {

namespace fs = std::filesystem;

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

struct Labeled {
  SynthWorld world;
  std::vector<Clip> clips;
  std::vector<NeutralReference> neutrals;
  NormalizationSpec norm;
};

const Labeled& world_corpus() {
  static const Labeled l = [] {
    Labeled out;
    SynthWorldConfig c;
    c.clips = 60;
    out.world = build_world(c);
    out.clips = generate_corpus(out.world, AudioFeatureConfig{});
    std::vector<KeypointSequence> seqs;
    for (const auto& clip : out.clips) seqs.push_back(clip.keypoints);
    out.neutrals = neutral_references(seqs);
    out.norm = fit_normalization(seqs, out.neutrals, "train");
    return out;
  }();
  return l;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("emoint_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(SynthWorld, ClipInvariants) {
  const auto& w = world_corpus();
  for (const auto& c : w.clips) {
    const auto T = c.keypoints.size();
    EXPECT_EQ(c.gt_intensity.size(), T);
    EXPECT_EQ(static_cast<std::size_t>(c.features.frames()), T);
    EXPECT_EQ(c.audio.samples.size(), T * 16000 / 25);
    EXPECT_EQ(c.features.clip_id, c.keypoints.clip_id);
    for (double v : c.gt_intensity.values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    if (c.keypoints.emotion_label == "neutral") {
      EXPECT_FALSE(c.keypoints.intensity_level.has_value());
      for (double v : c.gt_intensity.values) EXPECT_EQ(v, 0.0);
    }
  }
  const auto& dirs = w.world.emotion_directions;
  for (auto a = dirs.begin(); a != dirs.end(); ++a) {
    EXPECT_NEAR(a->second.cast<double>().norm(), 1.0, 1e-6);
    for (auto b = std::next(a); b != dirs.end(); ++b) {
      EXPECT_LT(a->second.cast<double>().cwiseProduct(b->second.cast<double>()).sum(), 0.8);
    }
  }
}

TEST(SynthWorld, SameSeedSameCorpusDifferentSeedDifferentCorpus) {
  SynthWorldConfig c;
  c.clips = 6;
  c.frames_per_clip = 20;
  const auto a = generate_corpus(build_world(c), AudioFeatureConfig{});
  const auto b = generate_corpus(build_world(c), AudioFeatureConfig{});
  c.seed = 8;
  const auto other = generate_corpus(build_world(c), AudioFeatureConfig{});
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].audio.samples, b[i].audio.samples);
    EXPECT_EQ(a[i].features.features, b[i].features.features);
    for (std::size_t t = 0; t < a[i].keypoints.size(); ++t) {
      EXPECT_EQ(a[i].keypoints.frames[t].points, b[i].keypoints.frames[t].points);
    }
    differs = differs || a[i].audio.samples != other[i].audio.samples;
  }
  EXPECT_TRUE(differs);
}

TEST(SynthWorld, CorpusFilesAreBitIdenticalPerSeed) {
  SynthWorldConfig c;
  c.clips = 4;
  c.frames_per_clip = 20;
  const auto w = build_world(c);
  const auto dir_a = scratch("corpus_a"), dir_b = scratch("corpus_b");
  write_corpus_dir(dir_a, w, generate_corpus(w, AudioFeatureConfig{}));
  write_corpus_dir(dir_b, w, generate_corpus(w, AudioFeatureConfig{}));
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir_a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir_a);
    EXPECT_EQ(slurp(e.path()), slurp(dir_b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 4 + 4);
}

TEST(SynthWorld, PseudoLabelsTrackGroundTruth) {
  const auto& w = world_corpus();
  int emotional = 0;
  for (const auto& c : w.clips) {
    const auto labels = label_sequence(c.keypoints, find_neutral(w.neutrals, c.keypoints.identity_id), w.norm);
    if (c.keypoints.emotion_label == "neutral") {
      for (double v : labels.values) EXPECT_LT(v, 0.05) << c.clip_id();
    } else {
      EXPECT_GT(pearson(labels.values, c.gt_intensity.values), 0.95) << c.clip_id();
      ++emotional;
    }
  }
  EXPECT_GT(emotional, 30);
}

TEST(SynthWorld, KnownParametersInvertPseudoIntensity) {
  const auto& w = world_corpus();
  for (const auto& c : w.clips) {
    if (c.keypoints.emotion_label == "neutral") continue;
    const auto& dir = w.world.emotion_directions.at(c.keypoints.emotion_label);
    const double gain = w.world.config.emotion_scale * dir.cast<double>().cwiseAbs().sum();
    const auto raw = raw_intensity_sequence(c.keypoints, find_neutral(w.neutrals, c.keypoints.identity_id));
    double mae = 0.0;
    for (std::size_t t = 0; t < raw.size(); ++t) mae += std::abs(raw.values[t] / gain - c.gt_intensity.values[t]);
    EXPECT_LT(mae / static_cast<double>(raw.size()), 0.05) << c.clip_id();
  }
}

TEST(SynthWorld, InvalidConfigurations) {
  SynthWorldConfig c;
  c.keypoints = 4;
  EXPECT_THROW(build_world(c), ConfigError);
  c = {};
  c.emotions = {"happy", "neutral"};
  EXPECT_THROW(build_world(c), ConfigError);
  c = {};
  c.neutral_fraction = 1.0;
  EXPECT_THROW(build_world(c), ConfigError);
  c = {};
  AudioFeatureConfig f;
  f.sample_rate = 8000;
  EXPECT_THROW(generate_clip(build_world(c), 0, f), ConfigError);
}

TEST(Persistence, JsonlRoundTripsAreExact) {
  const auto& w = world_corpus();
  const auto dir = scratch("jsonl");
  std::vector<KeypointSequence> seqs;
  std::vector<IntensitySequence> gt;
  std::vector<AudioFeatureSequence> feats;
  for (std::size_t i = 0; i < 5; ++i) {
    seqs.push_back(w.clips[i].keypoints);
    gt.push_back(w.clips[i].gt_intensity);
    feats.push_back(w.clips[i].features);
  }
  write_corpus(dir / "k.jsonl", seqs);
  write_intensities(dir / "i.jsonl", gt);
  write_features(dir / "f.jsonl", feats);
  write_neutrals(dir / "n.jsonl", w.neutrals);
  write_normalization_spec(dir / "norm.json", w.norm);

  const auto k2 = read_corpus(dir / "k.jsonl");
  ASSERT_EQ(k2.size(), seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    EXPECT_EQ(k2[i].clip_id, seqs[i].clip_id);
    EXPECT_EQ(k2[i].identity_id, seqs[i].identity_id);
    EXPECT_EQ(k2[i].emotion_label, seqs[i].emotion_label);
    EXPECT_EQ(k2[i].intensity_level, seqs[i].intensity_level);
    EXPECT_EQ(k2[i].split, seqs[i].split);
    EXPECT_EQ(k2[i].fps, seqs[i].fps);
    for (std::size_t t = 0; t < seqs[i].size(); ++t) {
      EXPECT_EQ(k2[i].frames[t].points, seqs[i].frames[t].points);
      EXPECT_EQ(k2[i].frames[t].frame_index, seqs[i].frames[t].frame_index);
    }
  }
  const auto i2 = read_intensities(dir / "i.jsonl");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    EXPECT_EQ(i2[i].values, gt[i].values);
    EXPECT_EQ(i2[i].normalized, gt[i].normalized);
  }
  const auto f2 = read_features(dir / "f.jsonl");
  for (std::size_t i = 0; i < feats.size(); ++i) EXPECT_EQ(f2[i].features, feats[i].features);
  const auto n2 = read_neutrals(dir / "n.jsonl");
  ASSERT_EQ(n2.size(), w.neutrals.size());
  for (std::size_t i = 0; i < n2.size(); ++i) EXPECT_EQ(n2[i].neutral_points, w.neutrals[i].neutral_points);
  const auto norm2 = read_normalization_spec(dir / "norm.json");
  EXPECT_EQ(norm2.min, w.norm.min);
  EXPECT_EQ(norm2.max, w.norm.max);
}

TEST(Persistence, RandomDoublesRoundTripExactly) {
  Rng rng(3);
  IntensitySequence s;
  for (int i = 0; i < 200; ++i) s.values.push_back(std::abs(rng.normal()) * std::pow(10.0, rng.uniform(-12, 12)));
  const auto dir = scratch("doubles");
  write_intensities(dir / "x.jsonl", {s});
  EXPECT_EQ(read_intensities(dir / "x.jsonl").front().values, s.values);
}

TEST(Persistence, WavRoundTrip) {
  const auto& clip = world_corpus().clips.front();
  const auto dir = scratch("wav");
  write_wav(dir / "a.wav", clip.audio);
  EXPECT_EQ(fs::file_size(dir / "a.wav"), 44 + 2 * clip.audio.samples.size());
  const auto back = read_wav(dir / "a.wav");
  EXPECT_EQ(back.sample_rate, 16000);
  EXPECT_EQ(back.samples, clip.audio.samples);
  {
    std::ofstream junk(dir / "b.wav", std::ios::binary);
    junk << "not a wave file";
  }
  EXPECT_ANY_THROW(read_wav(dir / "b.wav"));
}

TEST(Persistence, CorpusDirectoryRoundTrip) {
  SynthWorldConfig c;
  c.clips = 5;
  c.frames_per_clip = 20;
  const auto w = build_world(c);
  const auto clips = generate_corpus(w, AudioFeatureConfig{});
  const auto dir = scratch("corpus_dir");
  write_corpus_dir(dir, w, clips);
  const auto bundle = read_corpus_dir(dir);
  ASSERT_EQ(bundle.sequences.size(), 5u);
  ASSERT_EQ(bundle.gt_intensity.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(bundle.features[i].features, clips[i].features.features);
    EXPECT_EQ(bundle.gt_intensity[i].values, clips[i].gt_intensity.values);
    EXPECT_TRUE(fs::exists(dir / "audio" / (clips[i].clip_id() + ".wav")));
  }
  const auto w2 = world_from_json(read_json(dir / "world.json"));
  EXPECT_EQ(w2.canonical, w.canonical);
  EXPECT_EQ(w2.identity_templates, w.identity_templates);
  EXPECT_EQ(w2.emotion_directions, w.emotion_directions);
}

TEST(Persistence, ArchiveRoundTrip) {
  Rng rng(4);
  ModelArchive a;
  const ag::Matrix m = rng.normal_matrix(3, 5);
  a.put("w", m);
  a.put("b", rng.normal_matrix(1, 4));
  a.put_text("config", "{\"x\": 1}");
  const auto dir = scratch("archive");
  a.save(dir / "m.bin");
  const auto back = ModelArchive::load(dir / "m.bin");
  EXPECT_EQ(back.get("w"), m.cast<float>().cast<double>());
  EXPECT_EQ(back.get("b").cols(), 4);
  EXPECT_EQ(back.text("config"), "{\"x\": 1}");
  EXPECT_THROW(back.get("missing"), std::out_of_range);
  EXPECT_EQ(back.names_with_prefix("").size(), 2u);
}

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  const auto j = to_json(c);
  const RunConfig back = config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_NO_THROW(back.validate());
  EXPECT_EQ(j.at("training").at("weights").at("exp"), 100.0);
  EXPECT_EQ(j.at("emotion_space").at("level_norms"), nlohmann::json::array({5.0, 15.0, 30.0}));
}

TEST(Config, UnknownKeysAndBadTypesAreRejected) {
  EXPECT_THROW(config_from_json({{"trainning", nlohmann::json::object()}}), ConfigError);
  EXPECT_THROW(config_from_json({{"training", {{"weigths", nlohmann::json::object()}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"predictor", {{"latent_dim", "sixteen"}}}}), ConfigError);
  try {
    config_from_json({{"transformer", {{"head", 4}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("transformer.head"), std::string::npos);
  }
}

TEST(Config, OverridesMergeAndValidate) {
  const RunConfig base;
  const RunConfig c = merge_config(base, {{"training", {{"weights", {{"sync", 30.0}}}, {"finetune_steps", 5}}}});
  EXPECT_EQ(c.training.weights.sync, 30.0);
  EXPECT_EQ(c.training.finetune_steps, 5);
  EXPECT_EQ(c.training.weights.exp, 100.0);
  EXPECT_THROW(merge_config(base, {{"transformer", {{"emotion_dim", 7}}}}).validate(), ConfigError);

  const auto dir = scratch("config");
  write_json(dir / "c.json", {{"world", {{"clips", 12}}}});
  EXPECT_EQ(load_config(dir / "c.json").world.clips, 12);
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
  EXPECT_EQ(parse_predict_mode("sample"), PredictMode::kSample);
  EXPECT_THROW(parse_predict_mode("median"), ConfigError);
}

}  // namespace
}  // namespace emoint
