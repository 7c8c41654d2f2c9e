#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Rows index time (frames), columns index channels.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace emoint::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void add_grad(const Matrix& g);
  template <typename Expr>
  void add_grad_expr(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  static Var scalar(double v);

  const Matrix& value() const { return node_->value; }
  // Mutable access for optimizers; never call while a graph referencing
  // this variable is alive.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Var make_result(Matrix value, std::vector<Var> parents,
                         std::function<void(Node&)> backward);
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var make_result(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward);

// Seeds d(root)/d(root) = 1 and propagates through the recorded graph.
void backward(const Var& root);

// ---- elementwise / shape ops -------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);          // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);    // a (n×m) + row (1×m) broadcast
Var mul_col(const Var& a, const Var& col);    // a (n×m) * col (n×1) broadcast
Var mul_const(const Var& a, const Matrix& c); // elementwise by constant
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);    // a * b^T
Var transpose(const Var& a);

Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var sqrt(const Var& a);
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);        // 1×1
Var mean(const Var& a);       // 1×1
Var sum_rows(const Var& a);   // n×m -> 1×m (sum over rows)
Var sum_cols(const Var& a);   // n×m -> n×1 (sum over columns)
Var mean_rows(const Var& a);  // n×m -> 1×m

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var repeat_rows(const Var& row, Eigen::Index n);  // 1×m -> n×m
Var reverse_cols(const Var& a);

// Row r of the result is row (r - offset) of a; rows that fall outside are
// zero, or wrap around when circular is set.
Var shift_rows(const Var& a, Eigen::Index offset, bool circular = false);

Var softmax_rows(const Var& a, const Matrix* additive_mask = nullptr);
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);

}  // namespace emoint::ag
