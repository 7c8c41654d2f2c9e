#include "emoint/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace emoint::ag {

namespace {

thread_local bool g_grad_enabled = true;

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

void Node::add_grad(const Matrix& g) { add_grad_expr(g); }

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Var(std::move(m));
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) {
    throw std::logic_error("item() requires a 1x1 value");
  }
  return node_->value(0, 0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var make_result(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  Node* r = root.node().get();
  r->add_grad_expr(Matrix::Ones(r->value.rows(), r->value.cols()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

#define EMOINT_IF_GRAD(i) if (self.parents[i]->requires_grad)

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    EMOINT_IF_GRAD(0) parent(self, 0).add_grad(self.grad);
    EMOINT_IF_GRAD(1) parent(self, 1).add_grad(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    EMOINT_IF_GRAD(0) parent(self, 0).add_grad(self.grad);
    EMOINT_IF_GRAD(1) parent(self, 1).add_grad_expr(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    EMOINT_IF_GRAD(0) parent(self, 0).add_grad_expr(self.grad.cwiseProduct(parent(self, 1).value));
    EMOINT_IF_GRAD(1) parent(self, 1).add_grad_expr(self.grad.cwiseProduct(parent(self, 0).value));
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    parent(self, 0).add_grad_expr(self.grad * s);
  });
}

Var add_scalar(const Var& a, double s) {
  return make_result((a.value().array() + s).matrix(), {a},
                     [](Node& self) { parent(self, 0).add_grad(self.grad); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row: row must be 1x" + std::to_string(a.cols()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    EMOINT_IF_GRAD(0) parent(self, 0).add_grad(self.grad);
    EMOINT_IF_GRAD(1) parent(self, 1).add_grad_expr(self.grad.colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw std::invalid_argument("mul_col: column must be " + std::to_string(a.rows()) + "x1");
  }
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return make_result(std::move(out), {a, col}, [](Node& self) {
    const Matrix& av = parent(self, 0).value;
    const Matrix& cv = parent(self, 1).value;
    EMOINT_IF_GRAD(0) {
      Matrix g = self.grad.array().colwise() * cv.col(0).array();
      parent(self, 0).add_grad(g);
    }
    EMOINT_IF_GRAD(1) parent(self, 1).add_grad_expr(self.grad.cwiseProduct(av).rowwise().sum());
  });
}

Var mul_const(const Var& a, const Matrix& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    throw std::invalid_argument("mul_const: shape mismatch");
  }
  return make_result(a.value().cwiseProduct(c), {a}, [c](Node& self) {
    parent(self, 0).add_grad_expr(self.grad.cwiseProduct(c));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch (" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + ")");
  }
  Matrix out;
  out.noalias() = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    EMOINT_IF_GRAD(0) {
      Matrix g;
      g.noalias() = self.grad * parent(self, 1).value.transpose();
      parent(self, 0).add_grad(g);
    }
    EMOINT_IF_GRAD(1) {
      Matrix g;
      g.noalias() = parent(self, 0).value.transpose() * self.grad;
      parent(self, 1).add_grad(g);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  }
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    EMOINT_IF_GRAD(0) {
      Matrix g;
      g.noalias() = self.grad * parent(self, 1).value;
      parent(self, 0).add_grad(g);
    }
    EMOINT_IF_GRAD(1) {
      Matrix g;
      g.noalias() = self.grad.transpose() * parent(self, 0).value;
      parent(self, 1).add_grad(g);
    }
  });
}

Var transpose(const Var& a) {
  return make_result(a.value().transpose(), {a}, [](Node& self) {
    parent(self, 0).add_grad_expr(self.grad.transpose());
  });
}

Var relu(const Var& a) {
  return make_result(a.value().cwiseMax(0.0), {a}, [](Node& self) {
    const Matrix& x = parent(self, 0).value;
    parent(self, 0).add_grad_expr((x.array() > 0.0).select(self.grad, 0.0));
  });
}

Var tanh(const Var& a) {
  return make_result(a.value().array().tanh().matrix(), {a}, [](Node& self) {
    parent(self, 0).add_grad_expr(
        (self.grad.array() * (1.0 - self.value.array().square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return make_result(std::move(out), {a}, [](Node& self) {
    parent(self, 0).add_grad_expr(
        (self.grad.array() * self.value.array() * (1.0 - self.value.array())).matrix());
  });
}

Var exp(const Var& a) {
  return make_result(a.value().array().exp().matrix(), {a}, [](Node& self) {
    parent(self, 0).add_grad_expr(self.grad.cwiseProduct(self.value));
  });
}

Var log(const Var& a) {
  return make_result(a.value().array().log().matrix(), {a}, [](Node& self) {
    parent(self, 0).add_grad_expr(
        (self.grad.array() / parent(self, 0).value.array()).matrix());
  });
}

Var square(const Var& a) {
  return make_result(a.value().array().square().matrix(), {a}, [](Node& self) {
    parent(self, 0).add_grad_expr(
        (2.0 * self.grad.array() * parent(self, 0).value.array()).matrix());
  });
}

Var abs(const Var& a) {
  return make_result(a.value().cwiseAbs(), {a}, [](Node& self) {
    parent(self, 0).add_grad_expr(
        (self.grad.array() * parent(self, 0).value.array().sign()).matrix());
  });
}

Var sqrt(const Var& a) {
  return make_result(a.value().array().sqrt().matrix(), {a}, [](Node& self) {
    parent(self, 0).add_grad_expr((0.5 * self.grad.array() / self.value.array()).matrix());
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return make_result(a.value().cwiseMax(lo).cwiseMin(hi), {a}, [lo, hi](Node& self) {
    const auto& x = parent(self, 0).value.array();
    parent(self, 0).add_grad_expr(((x >= lo) && (x <= hi)).select(self.grad.array(), 0.0).matrix());
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    const Node& p = parent(self, 0);
    parent(self, 0).add_grad_expr(Matrix::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(const Var& a) {
  return make_result(a.value().colwise().sum(), {a}, [](Node& self) {
    const Node& p = parent(self, 0);
    parent(self, 0).add_grad_expr(self.grad.replicate(p.value.rows(), 1));
  });
}

Var sum_cols(const Var& a) {
  return make_result(a.value().rowwise().sum(), {a}, [](Node& self) {
    const Node& p = parent(self, 0);
    parent(self, 0).add_grad_expr(self.grad.replicate(1, p.value.cols()));
  });
}

Var mean_rows(const Var& a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows())); }

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Eigen::Index c = 0;
    for (auto& p : self.parents) {
      const Eigen::Index w = p->value.cols();
      if (p->requires_grad) p->add_grad_expr(self.grad.middleCols(c, w));
      c += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Eigen::Index r = 0;
    for (auto& p : self.parents) {
      const Eigen::Index h = p->value.rows();
      if (p->requires_grad) p->add_grad_expr(self.grad.middleRows(r, h));
      r += h;
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::out_of_range("slice_rows: range out of bounds");
  }
  return make_result(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
    Node& p = parent(self, 0);
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g.middleRows(start, count) = self.grad;
    p.add_grad(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range out of bounds");
  }
  return make_result(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    Node& p = parent(self, 0);
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g.middleCols(start, count) = self.grad;
    p.add_grad(g);
  });
}

Var repeat_rows(const Var& row, Eigen::Index n) {
  if (row.rows() != 1) throw std::invalid_argument("repeat_rows: expects a single row");
  return make_result(row.value().replicate(n, 1), {row}, [](Node& self) {
    parent(self, 0).add_grad_expr(self.grad.colwise().sum());
  });
}

Var reverse_cols(const Var& a) {
  return make_result(a.value().rowwise().reverse(), {a}, [](Node& self) {
    parent(self, 0).add_grad_expr(self.grad.rowwise().reverse());
  });
}

Var shift_rows(const Var& a, Eigen::Index offset, bool circular) {
  const Eigen::Index n = a.rows();
  Matrix out = Matrix::Zero(n, a.cols());
  auto src_of = [n, offset, circular](Eigen::Index r) -> Eigen::Index {
    Eigen::Index s = r - offset;
    if (circular) {
      s %= n;
      if (s < 0) s += n;
      return s;
    }
    return (s >= 0 && s < n) ? s : -1;
  };
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index s = src_of(r);
    if (s >= 0) out.row(r) = a.value().row(s);
  }
  return make_result(std::move(out), {a}, [src_of, n](Node& self) {
    Node& p = parent(self, 0);
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::Index s = src_of(r);
      if (s >= 0) g.row(s) += self.grad.row(r);
    }
    p.add_grad(g);
  });
}

Var softmax_rows(const Var& a, const Matrix* additive_mask) {
  Matrix x = a.value();
  if (additive_mask) {
    if (additive_mask->rows() != x.rows() || additive_mask->cols() != x.cols()) {
      throw std::invalid_argument("softmax_rows: mask shape mismatch");
    }
    x += *additive_mask;
  }
  Eigen::VectorXd row_max = x.rowwise().maxCoeff();
  Matrix e = (x.colwise() - row_max).array().exp().matrix();
  Eigen::VectorXd denom = e.rowwise().sum();
  Matrix out = e.array().colwise() / denom.array();
  return make_result(std::move(out), {a}, [](Node& self) {
    const Matrix& y = self.value;
    Eigen::VectorXd dot = (self.grad.cwiseProduct(y)).rowwise().sum();
    Matrix g = y.array() * (self.grad.array().colwise() - dot.array());
    parent(self, 0).add_grad(g);
  });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = a.cols();
  if (gamma.rows() != 1 || gamma.cols() != m || beta.rows() != 1 || beta.cols() != m) {
    throw std::invalid_argument("layer_norm_rows: gamma/beta must be 1x" + std::to_string(m));
  }
  const Matrix& x = a.value();
  Eigen::VectorXd mu = x.rowwise().mean();
  Matrix xc = x.colwise() - mu;
  Eigen::VectorXd inv_std =
      ((xc.array().square().rowwise().sum() / static_cast<double>(m)) + eps).rsqrt();
  Matrix xhat = xc.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  return make_result(std::move(out), {a, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](Node& self) {
                       (void)n;
                       const Matrix& gam = parent(self, 1).value;
                       EMOINT_IF_GRAD(0) {
                         Matrix gx = self.grad.array().rowwise() * gam.row(0).array();
                         Eigen::VectorXd mean_g = gx.rowwise().mean();
                         Eigen::VectorXd mean_gx = (gx.cwiseProduct(xhat)).rowwise().mean();
                         Matrix g = (gx.colwise() - mean_g) -
                                    Matrix(xhat.array().colwise() * mean_gx.array());
                         g = g.array().colwise() * inv_std.array();
                         parent(self, 0).add_grad(g);
                       }
                       EMOINT_IF_GRAD(1) parent(self, 1).add_grad_expr(
                           self.grad.cwiseProduct(xhat).colwise().sum());
                       EMOINT_IF_GRAD(2) parent(self, 2).add_grad_expr(self.grad.colwise().sum());
                       (void)m;
                     });
}

#undef EMOINT_IF_GRAD

}  // namespace emoint::ag
