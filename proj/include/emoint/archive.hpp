#pragma once

// Single-file model archive: named, shape-annotated float32 arrays plus a
// few named text entries (model configuration, vocabulary metadata).
//
// Layout (little-endian):
//   "EMOA" u32 version u32 entry_count
//   per entry: u8 kind, u32 name_len, name, then
//     kind 0 (tensor): u32 ndim, u64 dims[ndim], f32 data[prod(dims)]
//     kind 1 (text):   u64 len, bytes

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "emoint/autograd.hpp"

namespace emoint {

struct ArchiveTensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
};

class ModelArchive {
 public:
  void put(const std::string& name, const ag::Matrix& m);
  void put_text(const std::string& name, std::string text);

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  bool has_text(const std::string& name) const { return texts_.count(name) != 0; }
  // Throws std::out_of_range naming the missing entry.
  ag::Matrix get(const std::string& name) const;
  const std::string& text(const std::string& name) const;

  const std::map<std::string, ArchiveTensor>& tensors() const { return tensors_; }
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  // Copies every entry of other into this archive, replacing duplicates.
  void merge(const ModelArchive& other);

  void save(const std::filesystem::path& path) const;
  static ModelArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, ArchiveTensor> tensors_;
  std::map<std::string, std::string> texts_;
};

}  // namespace emoint
