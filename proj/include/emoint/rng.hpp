#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "emoint/autograd.hpp"

namespace emoint {

// Derives an independent seed for a named substream of a run seed, so every
// consumer of randomness can be traced back to the single run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream) : engine_(derive_seed(seed, stream)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  ag::Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0);
  ag::Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace emoint
