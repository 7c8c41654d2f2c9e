#include "emoint/corpus_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace emoint {

using nlohmann::json;

json to_json(const KeypointSequence& seq) {
  json frames = json::array();
  for (const auto& f : seq.frames) {
    json pts = json::array();
    for (Eigen::Index k = 0; k < f.points.rows(); ++k) {
      pts.push_back({f.points(k, 0), f.points(k, 1), f.points(k, 2)});
    }
    frames.push_back(std::move(pts));
  }
  json j = {{"clip_id", seq.clip_id},
            {"identity_id", seq.identity_id},
            {"emotion_label", seq.emotion_label},
            {"fps", seq.fps},
            {"frames", std::move(frames)}};
  j["intensity_level"] = seq.intensity_level ? json(*seq.intensity_level) : json(nullptr);
  if (!seq.split.empty()) j["split"] = seq.split;
  return j;
}

KeypointSequence keypoint_sequence_from_json(const json& j) {
  KeypointSequence seq;
  seq.clip_id = j.value("clip_id", "");
  seq.identity_id = j.at("identity_id").get<std::string>();
  seq.emotion_label = j.at("emotion_label").get<std::string>();
  seq.fps = j.value("fps", kDefaultFps);
  seq.split = j.value("split", "");
  if (j.contains("intensity_level") && !j.at("intensity_level").is_null()) {
    const int level = j.at("intensity_level").get<int>();
    if (level < 1 || level > 3) throw DomainError("intensity_level must be 1, 2 or 3");
    seq.intensity_level = level;
  }
  const auto& frames = j.at("frames");
  seq.frames.reserve(frames.size());
  int idx = 0;
  for (const auto& fj : frames) {
    KeypointFrame f;
    f.frame_index = idx++;
    f.points.resize(static_cast<Eigen::Index>(fj.size()), 3);
    Eigen::Index k = 0;
    for (const auto& p : fj) {
      if (p.size() != 3) throw DimensionError("keypoint entries must have 3 coordinates");
      for (int c = 0; c < 3; ++c) f.points(k, c) = p.at(c).get<float>();
      ++k;
    }
    seq.frames.push_back(std::move(f));
  }
  seq.validate();
  return seq;
}

json to_json(const IntensitySequence& seq) {
  return {{"clip_id", seq.clip_id}, {"fps", seq.fps}, {"normalized", seq.normalized}, {"values", seq.values}};
}

IntensitySequence intensity_sequence_from_json(const json& j) {
  IntensitySequence s;
  s.clip_id = j.value("clip_id", "");
  s.fps = j.value("fps", kDefaultFps);
  s.normalized = j.at("normalized").get<bool>();
  s.values = j.at("values").get<std::vector<double>>();
  for (double v : s.values) {
    if (!std::isfinite(v) || v < 0.0 || (s.normalized && v > 1.0)) {
      throw DomainError("intensity value out of range in clip '" + s.clip_id + "'");
    }
  }
  return s;
}

json to_json(const AudioFeatureSequence& seq) {
  json rows = json::array();
  for (Eigen::Index t = 0; t < seq.features.rows(); ++t) {
    std::vector<double> r(seq.features.row(t).data(), seq.features.row(t).data() + seq.features.cols());
    rows.push_back(std::move(r));
  }
  return {{"clip_id", seq.clip_id}, {"fps", seq.fps}, {"features", std::move(rows)}};
}

AudioFeatureSequence feature_sequence_from_json(const json& j) {
  AudioFeatureSequence s;
  s.clip_id = j.value("clip_id", "");
  s.fps = j.value("fps", kDefaultFps);
  const auto& rows = j.at("features");
  if (rows.empty()) throw DimensionError("audio feature sequence must have at least one frame");
  const auto dim = static_cast<Eigen::Index>(rows.front().size());
  s.features.resize(static_cast<Eigen::Index>(rows.size()), dim);
  Eigen::Index t = 0;
  for (const auto& r : rows) {
    if (static_cast<Eigen::Index>(r.size()) != dim) throw DimensionError("ragged audio feature rows");
    for (Eigen::Index c = 0; c < dim; ++c) s.features(t, c) = r.at(c).get<double>();
    ++t;
  }
  if (!s.features.allFinite()) throw DomainError("non-finite audio feature");
  return s;
}

json to_json(const NormalizationSpec& spec) {
  return {{"kind", "minmax"}, {"min", spec.min}, {"max", spec.max}};
}

NormalizationSpec normalization_spec_from_json(const json& j) {
  if (j.at("kind").get<std::string>() != "minmax") {
    throw std::runtime_error("unsupported normalization kind '" + j.at("kind").get<std::string>() + "'");
  }
  return NormalizationSpec{j.at("min").get<double>(), j.at("max").get<double>()};
}

json to_json(const NeutralReference& ref) {
  json pts = json::array();
  for (Eigen::Index k = 0; k < ref.neutral_points.rows(); ++k) {
    pts.push_back({ref.neutral_points(k, 0), ref.neutral_points(k, 1), ref.neutral_points(k, 2)});
  }
  return {{"identity_id", ref.identity_id}, {"neutral_points", std::move(pts)}};
}

NeutralReference neutral_reference_from_json(const json& j) {
  NeutralReference ref;
  ref.identity_id = j.at("identity_id").get<std::string>();
  const auto& pts = j.at("neutral_points");
  ref.neutral_points.resize(static_cast<Eigen::Index>(pts.size()), 3);
  Eigen::Index k = 0;
  for (const auto& p : pts) {
    for (int c = 0; c < 3; ++c) ref.neutral_points(k, c) = p.at(c).get<float>();
    ++k;
  }
  return ref;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) os << r.dump() << '\n';
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  return json::parse(is);
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << doc.dump(2) << '\n';
}

namespace {

template <typename T, typename FromJson>
std::vector<T> read_records(const std::filesystem::path& path, FromJson from_json) {
  std::vector<T> out;
  for (const auto& j : read_jsonl(path)) out.push_back(from_json(j));
  return out;
}

template <typename T>
void write_records(const std::filesystem::path& path, const std::vector<T>& items) {
  std::vector<json> recs;
  recs.reserve(items.size());
  for (const auto& it : items) recs.push_back(to_json(it));
  write_jsonl(path, recs);
}

}  // namespace

std::vector<KeypointSequence> read_corpus(const std::filesystem::path& path) {
  return read_records<KeypointSequence>(path, keypoint_sequence_from_json);
}
void write_corpus(const std::filesystem::path& path, const std::vector<KeypointSequence>& corpus) {
  write_records(path, corpus);
}
std::vector<IntensitySequence> read_intensities(const std::filesystem::path& path) {
  return read_records<IntensitySequence>(path, intensity_sequence_from_json);
}
void write_intensities(const std::filesystem::path& path, const std::vector<IntensitySequence>& seqs) {
  write_records(path, seqs);
}
std::vector<AudioFeatureSequence> read_features(const std::filesystem::path& path) {
  return read_records<AudioFeatureSequence>(path, feature_sequence_from_json);
}
void write_features(const std::filesystem::path& path, const std::vector<AudioFeatureSequence>& seqs) {
  write_records(path, seqs);
}
NormalizationSpec read_normalization_spec(const std::filesystem::path& path) {
  return normalization_spec_from_json(read_json(path));
}
void write_normalization_spec(const std::filesystem::path& path, const NormalizationSpec& spec) {
  write_json(path, to_json(spec));
}
std::vector<NeutralReference> read_neutrals(const std::filesystem::path& path) {
  std::vector<NeutralReference> out;
  const json doc = read_json(path);
  for (const auto& j : doc.at("neutrals")) out.push_back(neutral_reference_from_json(j));
  return out;
}
void write_neutrals(const std::filesystem::path& path, const std::vector<NeutralReference>& refs) {
  json arr = json::array();
  for (const auto& r : refs) arr.push_back(to_json(r));
  write_json(path, {{"neutrals", std::move(arr)}});
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}
std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  os.write("RIFF", 4);
  put_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  put_u32(os, 16);
  put_u16(os, 1);  // PCM
  put_u16(os, 1);  // mono
  put_u32(os, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(os, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put_u16(os, 2);
  put_u16(os, 16);
  os.write("data", 4);
  put_u32(os, data_bytes);
  for (std::int16_t s : wave.samples) put_u16(os, static_cast<std::uint16_t>(s));
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error("'" + path.string() + "' is not a RIFF/WAVE file");
  }
  Waveform w;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = get_u32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + size > bytes.size()) throw std::runtime_error("truncated WAV chunk");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (get_u16(body) != 1 || get_u16(body + 2) != 1 || get_u16(body + 14) != 16) {
        throw std::runtime_error("only 16-bit mono PCM WAV is supported");
      }
      w.sample_rate = static_cast<int>(get_u32(body + 4));
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("WAV data chunk before fmt chunk");
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = static_cast<std::int16_t>(get_u16(body + 2 * i));
      }
      return w;
    }
    pos += 8 + size + (size & 1);
  }
  throw std::runtime_error("WAV file has no data chunk");
}

}  // namespace emoint
