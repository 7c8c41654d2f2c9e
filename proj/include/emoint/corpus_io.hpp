#pragma once

// On-disk formats. Sequence-like records are line-delimited JSON, one record
// per line; numbers are written with round-trip precision.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoint/autograd.hpp"
#include "emoint/keypoint_intensity.hpp"

namespace emoint {

struct AudioFeatureSequence {
  ag::Matrix features;  // T × D_a
  double fps = kDefaultFps;
  std::string clip_id;

  Eigen::Index frames() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

struct Waveform {
  std::vector<std::int16_t> samples;
  int sample_rate = 16000;
};

nlohmann::json to_json(const KeypointSequence& seq);
KeypointSequence keypoint_sequence_from_json(const nlohmann::json& j);
nlohmann::json to_json(const IntensitySequence& seq);
IntensitySequence intensity_sequence_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AudioFeatureSequence& seq);
AudioFeatureSequence feature_sequence_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NormalizationSpec& spec);
NormalizationSpec normalization_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NeutralReference& ref);
NeutralReference neutral_reference_from_json(const nlohmann::json& j);

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

std::vector<KeypointSequence> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<KeypointSequence>& corpus);
std::vector<IntensitySequence> read_intensities(const std::filesystem::path& path);
void write_intensities(const std::filesystem::path& path, const std::vector<IntensitySequence>& seqs);
std::vector<AudioFeatureSequence> read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const std::vector<AudioFeatureSequence>& seqs);
NormalizationSpec read_normalization_spec(const std::filesystem::path& path);
void write_normalization_spec(const std::filesystem::path& path, const NormalizationSpec& spec);
std::vector<NeutralReference> read_neutrals(const std::filesystem::path& path);
void write_neutrals(const std::filesystem::path& path, const std::vector<NeutralReference>& refs);

// 16-bit little-endian mono PCM with a canonical 44-byte RIFF header.
void write_wav(const std::filesystem::path& path, const Waveform& wave);
Waveform read_wav(const std::filesystem::path& path);

// Index a list of records by clip id; throws on duplicates.
template <typename T>
std::map<std::string, const T*> index_by_clip(const std::vector<T>& items) {
  std::map<std::string, const T*> out;
  for (const auto& it : items) {
    if (!out.emplace(it.clip_id, &it).second) {
      throw std::runtime_error("duplicate clip id '" + it.clip_id + "'");
    }
  }
  return out;
}

}  // namespace emoint
