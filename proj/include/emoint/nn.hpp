#pragma once

// Parameter storage, basic layers and the Adam optimizer.

#include <map>
#include <string>
#include <vector>

#include "emoint/archive.hpp"
#include "emoint/autograd.hpp"
#include "emoint/rng.hpp"

namespace emoint::nn {

using ag::Matrix;
using ag::Var;

// Named trainable tensors. Names double as archive keys.
class ParamStore {
 public:
  Var create(const std::string& name, Matrix init);
  const Var& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  const std::map<std::string, Var>& params() const { return params_; }

  // Names sharing a prefix (e.g. "adapt." or "xf.enc.l1.").
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  void save_to(ModelArchive& archive) const;
  // Overwrites every parameter from archive; shapes must match.
  void load_from(const ModelArchive& archive);

 private:
  std::map<std::string, Var> params_;
};

// y = x W + b, W stored in×out.
struct Linear {
  Var weight;
  Var bias;  // undefined when created without bias

  Var operator()(const Var& x) const;
  Eigen::Index in_features() const { return weight.rows(); }
  Eigen::Index out_features() const { return weight.cols(); }
};

Linear make_linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                   Rng& rng, bool with_bias = true, double gain = 1.0);
Linear linear_from(const ParamStore& store, const std::string& prefix);

// Same-length 1-D convolution over rows (time). Weight is (kernel*in)×out,
// tap j applied to x[t + (j - (kernel-1)/2) * dilation].
struct Conv1d {
  Var weight;
  Var bias;
  int kernel = 1;
  int dilation = 1;
  bool transposed = false;  // stride-1 transposed convolution (scatter form)
  bool circular = false;    // circular instead of zero padding

  Var operator()(const Var& x) const;
};

Conv1d make_conv1d(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                   int kernel, int dilation, Rng& rng, double gain = 1.0);

struct LayerNorm {
  Var gamma;
  Var beta;
  Var operator()(const Var& x) const { return ag::layer_norm_rows(x, gamma, beta); }
};

LayerNorm make_layer_norm(ParamStore& store, const std::string& prefix, Eigen::Index dim);

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip_norm = 0.0;  // global-norm clip; 0 disables
  // Per-prefix learning-rate overrides, longest matching prefix wins.
  std::map<std::string, double> lr_by_prefix;
};

class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(std::move(config)) {}

  // Applies one update to every parameter in store that has a gradient.
  void step(ParamStore& store);
  void reset();
  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  double lr_for(const std::string& name) const;

  AdamConfig config_;
  long t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

// Global l2 norm of all gradients currently held by store.
double grad_norm(const ParamStore& store);

}  // namespace emoint::nn
