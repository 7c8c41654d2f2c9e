#include "emoint/archive.hpp"

#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace emoint {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'O', 'A'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("model archive: truncated file");
  return v;
}

std::string read_string(std::istream& is, std::uint64_t len) {
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("model archive: truncated string");
  return s;
}

}  // namespace

void ModelArchive::put(const std::string& name, const ag::Matrix& m) {
  ArchiveTensor t;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  // Row-major storage matches the in-memory layout.
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[i] = static_cast<float>(m.data()[i]);
  tensors_[name] = std::move(t);
}

void ModelArchive::put_text(const std::string& name, std::string text) {
  texts_[name] = std::move(text);
}

ag::Matrix ModelArchive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("model archive: missing tensor '" + name + "'");
  const auto& t = it->second;
  Eigen::Index rows = 1;
  Eigen::Index cols = 1;
  if (t.shape.size() == 1) {
    cols = static_cast<Eigen::Index>(t.shape[0]);
  } else if (t.shape.size() == 2) {
    rows = static_cast<Eigen::Index>(t.shape[0]);
    cols = static_cast<Eigen::Index>(t.shape[1]);
  } else {
    throw std::runtime_error("model archive: tensor '" + name + "' is not 1-D or 2-D");
  }
  ag::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(t.data[i]);
  return m;
}

const std::string& ModelArchive::text(const std::string& name) const {
  auto it = texts_.find(name);
  if (it == texts_.end()) throw std::out_of_range("model archive: missing text entry '" + name + "'");
  return it->second;
}

std::vector<std::string> ModelArchive::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (auto it = tensors_.lower_bound(prefix); it != tensors_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.push_back(it->first);
  }
  return out;
}

void ModelArchive::merge(const ModelArchive& other) {
  for (const auto& [k, v] : other.tensors_) tensors_[k] = v;
  for (const auto& [k, v] : other.texts_) texts_[k] = v;
}

void ModelArchive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("model archive: cannot open '" + path.string() + "' for writing");
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors_.size() + texts_.size()));
  for (const auto& [name, t] : tensors_) {
    write_pod<std::uint8_t>(os, 0);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  for (const auto& [name, s] : texts_) {
    write_pod<std::uint8_t>(os, 1);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  if (!os) throw std::runtime_error("model archive: write failed for '" + path.string() + "'");
}

ModelArchive ModelArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("model archive: cannot open '" + path.string() + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("model archive: bad magic in '" + path.string() + "'");
  }
  if (read_pod<std::uint32_t>(is) != kVersion) {
    throw std::runtime_error("model archive: unsupported version");
  }
  const auto count = read_pod<std::uint32_t>(is);
  ModelArchive ar;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind = read_pod<std::uint8_t>(is);
    const auto name = read_string(is, read_pod<std::uint32_t>(is));
    if (kind == 0) {
      ArchiveTensor t;
      t.shape.resize(read_pod<std::uint32_t>(is));
      for (auto& d : t.shape) d = read_pod<std::uint64_t>(is);
      const std::uint64_t n = std::accumulate(t.shape.begin(), t.shape.end(), std::uint64_t{1},
                                              std::multiplies<>());
      t.data.resize(n);
      is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
      if (!is) throw std::runtime_error("model archive: truncated tensor '" + name + "'");
      ar.tensors_[name] = std::move(t);
    } else if (kind == 1) {
      ar.texts_[name] = read_string(is, read_pod<std::uint64_t>(is));
    } else {
      throw std::runtime_error("model archive: unknown entry kind");
    }
  }
  return ar;
}

}  // namespace emoint
