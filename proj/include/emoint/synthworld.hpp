#pragma once

// Synthetic talking-face world with known ground truth. Keypoints are an
// identity template, plus an emotion direction scaled by a smooth intensity
// envelope, plus mouth opening driven by a syllable signal. The audio is a
// harmonic tone whose pitch and loudness follow the intensity envelope and
// whose amplitude follows the syllable signal.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "emoint/audio_features.hpp"
#include "emoint/corpus_io.hpp"
#include "emoint/keypoint_intensity.hpp"

namespace emoint {

struct SynthWorldConfig {
  int identities = 3;
  int keypoints = kDefaultKeypoints;
  std::vector<std::string> emotions = {"happy", "sad", "angry", "surprised"};
  int clips = 200;
  int frames_per_clip = 100;
  double fps = kDefaultFps;
  int sample_rate = 16000;
  double neutral_fraction = 0.25;
  double emotion_scale = 1.5;     // keypoint displacement at intensity 1 (unit-norm direction)
  double speech_amplitude = 0.06; // peak mouth opening
  double identity_spread = 0.1;
  int knot_spacing = 20;          // frames between envelope knots
  double envelope_wiggle = 0.25;
  double max_direction_cosine = 0.8;
  std::uint64_t seed = 7;
};

struct SynthWorld {
  SynthWorldConfig config;
  std::vector<std::string> identity_ids;
  std::vector<KeypointMatrix> identity_templates;
  std::map<std::string, KeypointMatrix> emotion_directions;  // unit Frobenius norm
  KeypointMatrix mouth_direction;
  std::vector<int> mouth_keypoints;
  KeypointMatrix canonical;  // mean identity template; the renderer's face layout
};

struct Clip {
  KeypointSequence keypoints;
  Waveform audio;
  AudioFeatureSequence features;
  IntensitySequence gt_intensity;
  std::vector<double> syllable;  // per-frame mouth opening in [0,1]

  const std::string& clip_id() const { return keypoints.clip_id; }
};

// Throws ConfigError on an invalid configuration (e.g. emotion directions
// that cannot be made separable, too few keypoints for the mouth).
SynthWorld build_world(const SynthWorldConfig& config);

Clip generate_clip(const SynthWorld& world, int index, const AudioFeatureConfig& features);
std::vector<Clip> generate_corpus(const SynthWorld& world, const AudioFeatureConfig& features);

// Corpus directory layout:
//   corpus.jsonl        keypoint sequences (with clip_id and split)
//   features.jsonl      stub audio features per clip
//   gt_intensity.jsonl  ground-truth intensity envelopes
//   audio/<clip>.wav    16 kHz PCM
//   world.json          generator parameters (templates, directions)
void write_corpus_dir(const std::filesystem::path& dir, const SynthWorld& world,
                      const std::vector<Clip>& clips);

struct CorpusBundle {
  std::vector<KeypointSequence> sequences;
  std::vector<AudioFeatureSequence> features;
  std::vector<IntensitySequence> gt_intensity;  // empty when absent
};

CorpusBundle read_corpus_dir(const std::filesystem::path& dir);

nlohmann::json world_to_json(const SynthWorld& world);
SynthWorld world_from_json(const nlohmann::json& j);

}  // namespace emoint
