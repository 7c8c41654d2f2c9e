#include "emoint/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace emoint::nn {

Var ParamStore::create(const std::string& name, Matrix init) {
  if (params_.count(name)) throw std::logic_error("parameter '" + name + "' already exists");
  Var v(std::move(init), /*requires_grad=*/true);
  params_.emplace(name, v);
  return v;
}

const Var& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (auto it = params_.lower_bound(prefix); it != params_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.push_back(it->first);
  }
  return out;
}

void ParamStore::save_to(ModelArchive& archive) const {
  for (const auto& [name, v] : params_) archive.put(name, v.value());
}

void ParamStore::load_from(const ModelArchive& archive) {
  for (auto& [name, v] : params_) {
    Matrix m = archive.get(name);
    if (m.rows() != v.rows() || m.cols() != v.cols()) {
      throw std::runtime_error("parameter '" + name + "': archive shape " + std::to_string(m.rows()) +
                               "x" + std::to_string(m.cols()) + " does not match model shape " +
                               std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
    }
    v.mutable_value() = std::move(m);
  }
}

Var Linear::operator()(const Var& x) const {
  Var y = ag::matmul(x, weight);
  return bias.defined() ? ag::add_row(y, bias) : y;
}

Linear make_linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                   Rng& rng, bool with_bias, double gain) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  Linear l;
  l.weight = store.create(prefix + ".weight", rng.uniform_matrix(in, out, -a, a));
  if (with_bias) l.bias = store.create(prefix + ".bias", Matrix::Zero(1, out));
  return l;
}

Linear linear_from(const ParamStore& store, const std::string& prefix) {
  Linear l;
  l.weight = store.at(prefix + ".weight");
  if (store.contains(prefix + ".bias")) l.bias = store.at(prefix + ".bias");
  return l;
}

Var Conv1d::operator()(const Var& x) const {
  const Eigen::Index in = weight.rows() / kernel;
  if (x.cols() != in) {
    throw std::invalid_argument("conv1d: expected " + std::to_string(in) + " input channels, got " +
                                std::to_string(x.cols()));
  }
  const int center = (kernel - 1) / 2;
  Var y;
  if (kernel == 1) {
    y = ag::matmul(x, weight);
  } else {
    std::vector<Var> taps;
    taps.reserve(static_cast<std::size_t>(kernel));
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index d = static_cast<Eigen::Index>(j - center) * dilation;
      taps.push_back(ag::shift_rows(x, transposed ? d : -d, circular));
    }
    y = ag::matmul(ag::concat_cols(taps), weight);
  }
  return bias.defined() ? ag::add_row(y, bias) : y;
}

Conv1d make_conv1d(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                   int kernel, int dilation, Rng& rng, double gain) {
  const double fan_in = static_cast<double>(in * kernel);
  const double a = gain * std::sqrt(6.0 / (fan_in + static_cast<double>(out)));
  Conv1d c;
  c.kernel = kernel;
  c.dilation = dilation;
  c.weight = store.create(prefix + ".weight", rng.uniform_matrix(in * kernel, out, -a, a));
  c.bias = store.create(prefix + ".bias", Matrix::Zero(1, out));
  return c;
}

LayerNorm make_layer_norm(ParamStore& store, const std::string& prefix, Eigen::Index dim) {
  LayerNorm ln;
  ln.gamma = store.create(prefix + ".gamma", Matrix::Ones(1, dim));
  ln.beta = store.create(prefix + ".beta", Matrix::Zero(1, dim));
  return ln;
}

double grad_norm(const ParamStore& store) {
  double s = 0.0;
  for (const auto& [_, v] : store.params()) {
    if (v.has_grad()) s += v.grad().squaredNorm();
  }
  return std::sqrt(s);
}

double Adam::lr_for(const std::string& name) const {
  double lr = config_.learning_rate;
  std::size_t best = 0;
  for (const auto& [prefix, value] : config_.lr_by_prefix) {
    if (prefix.size() >= best && name.compare(0, prefix.size(), prefix) == 0) {
      best = prefix.size();
      lr = value;
    }
  }
  return lr;
}

void Adam::step(ParamStore& store) {
  ++t_;
  double clip = 1.0;
  if (config_.grad_clip_norm > 0.0) {
    const double n = grad_norm(store);
    if (n > config_.grad_clip_norm) clip = config_.grad_clip_norm / n;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, cv] : store.params()) {
    if (!cv.has_grad()) continue;
    Var v = cv;
    auto [it, inserted] = moments_.try_emplace(name);
    auto& [m, s] = it->second;
    if (inserted) {
      m = Matrix::Zero(v.rows(), v.cols());
      s = Matrix::Zero(v.rows(), v.cols());
    }
    const Matrix g = v.grad() * clip;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    s = config_.beta2 * s + (1.0 - config_.beta2) * g.cwiseAbs2();
    const double lr = lr_for(name);
    v.mutable_value().array() -=
        lr * (m.array() / bc1) / ((s.array() / bc2).sqrt() + config_.epsilon);
  }
}

void Adam::reset() {
  t_ = 0;
  moments_.clear();
}

}  // namespace emoint::nn
