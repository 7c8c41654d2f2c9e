#include <gtest/gtest.h>

#include "emoint/autograd.hpp"
#include "emoint/nn.hpp"
#include "test_support.hpp"

using namespace emoint;
using emoint::testutil::gradient_error;

namespace {

// Reduces any matrix-valued op to a scalar with fixed random weights so
// every output entry contributes to the checked gradient.
ag::Var weighted(const ag::Var& y, std::uint64_t seed) {
  Rng rng(seed);
  return ag::sum(ag::mul_const(y, rng.normal_matrix(y.rows(), y.cols())));
}

}  // namespace

TEST(Autograd, ElementwiseGradients) {
  Rng rng(1);
  ag::Var a(rng.normal_matrix(3, 4), true);
  ag::Var b(rng.normal_matrix(3, 4), true);
  ag::Var pos(rng.uniform_matrix(3, 4, 0.5, 2.0), true);
  EXPECT_LT(gradient_error([&] { return weighted(ag::add(a, b), 2); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::sub(a, b), 2); }, b), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::mul(a, b), 2); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::scale(a, -1.7), 2); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::tanh(a), 3); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::sigmoid(a), 3); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::exp(a), 3); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::log(pos), 3); }, pos), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::sqrt(pos), 3); }, pos), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::square(a), 3); }, a), 1e-6);
}

TEST(Autograd, PiecewiseGradientsAwayFromKinks) {
  Rng rng(2);
  ag::Matrix m = rng.normal_matrix(4, 5);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    if (std::abs(v) < 0.05) v = 0.3;
    if (std::abs(v - 0.5) < 0.05) v = 0.8;
  }
  ag::Var a(m, true);
  EXPECT_LT(gradient_error([&] { return weighted(ag::relu(a), 4); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::abs(a), 4); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::clamp(a, -0.5, 0.5), 4); }, a), 1e-6);
}

TEST(Autograd, ClampPassesNoGradientOutsideRange) {
  ag::Var a(ag::Matrix::Constant(1, 3, 2.0), true);
  ag::backward(ag::sum(ag::clamp(a, 0.0, 1.0)));
  EXPECT_EQ(a.grad().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Autograd, MatrixProductsAndBroadcasts) {
  Rng rng(3);
  ag::Var a(rng.normal_matrix(3, 4), true);
  ag::Var b(rng.normal_matrix(4, 2), true);
  ag::Var c(rng.normal_matrix(5, 4), true);
  ag::Var row(rng.normal_matrix(1, 4), true);
  ag::Var col(rng.normal_matrix(3, 1), true);
  EXPECT_LT(gradient_error([&] { return weighted(ag::matmul(a, b), 5); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::matmul(a, b), 5); }, b), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::matmul_nt(a, c), 5); }, c), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::transpose(a), 5); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::add_row(a, row), 5); }, row), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::mul_col(a, col), 5); }, col), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::mul_col(a, col), 5); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::repeat_rows(row, 6), 5); }, row), 1e-6);
}

TEST(Autograd, Reductions) {
  Rng rng(4);
  ag::Var a(rng.normal_matrix(3, 4), true);
  EXPECT_LT(gradient_error([&] { return ag::mean(ag::square(a)); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::sum_rows(a), 6); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::sum_cols(a), 6); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::mean_rows(a), 6); }, a), 1e-6);
  EXPECT_NEAR(ag::mean(a).item(), a.value().mean(), 1e-15);
}

TEST(Autograd, SlicingAndConcatenation) {
  Rng rng(5);
  ag::Var a(rng.normal_matrix(5, 4), true);
  ag::Var b(rng.normal_matrix(5, 2), true);
  EXPECT_LT(gradient_error([&] { return weighted(ag::concat_cols({a, b, a}), 7); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::concat_rows({a, a}), 7); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::slice_rows(a, 1, 3), 7); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::slice_cols(a, 2, 2), 7); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::reverse_cols(a), 7); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::shift_rows(a, 2), 7); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::shift_rows(a, -3, true), 7); }, a), 1e-6);
}

TEST(Autograd, ShiftRowsSemantics) {
  ag::Matrix m(4, 1);
  m << 1, 2, 3, 4;
  const ag::Matrix zero_pad = ag::shift_rows(ag::Var(m), 1).value();
  const ag::Matrix circ = ag::shift_rows(ag::Var(m), -1, true).value();
  EXPECT_EQ(zero_pad(0, 0), 0.0);
  EXPECT_EQ(zero_pad(1, 0), 1.0);
  EXPECT_EQ(zero_pad(3, 0), 3.0);
  EXPECT_EQ(circ(0, 0), 2.0);
  EXPECT_EQ(circ(3, 0), 1.0);
}

TEST(Autograd, SoftmaxRowsWithMask) {
  Rng rng(6);
  ag::Var a(rng.normal_matrix(4, 5), true);
  ag::Matrix mask = ag::Matrix::Zero(4, 5);
  mask(0, 4) = -1e30;
  mask(2, 1) = -1e30;
  const ag::Matrix p = ag::softmax_rows(a, &mask).value();
  for (Eigen::Index r = 0; r < 4; ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
  EXPECT_EQ(p(0, 4), 0.0);
  EXPECT_EQ(p(2, 1), 0.0);
  EXPECT_LT(gradient_error([&] { return weighted(ag::softmax_rows(a, &mask), 8); }, a), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::softmax_rows(a), 8); }, a), 1e-6);
}

TEST(Autograd, LayerNormRows) {
  Rng rng(7);
  ag::Var x(rng.normal_matrix(3, 6, 2.0), true);
  ag::Var g(rng.normal_matrix(1, 6), true);
  ag::Var b(rng.normal_matrix(1, 6), true);
  ag::Var ones(ag::Matrix::Ones(1, 6));
  ag::Var zeros(ag::Matrix::Zero(1, 6));
  const ag::Matrix y = ag::layer_norm_rows(x, ones, zeros).value();
  for (Eigen::Index r = 0; r < 3; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).squaredNorm() / 6.0, 1.0, 1e-4);
  }
  EXPECT_LT(gradient_error([&] { return weighted(ag::layer_norm_rows(x, g, b), 9); }, x), 1e-5);
  EXPECT_LT(gradient_error([&] { return weighted(ag::layer_norm_rows(x, g, b), 9); }, g), 1e-6);
  EXPECT_LT(gradient_error([&] { return weighted(ag::layer_norm_rows(x, g, b), 9); }, b), 1e-6);
}

TEST(Autograd, SharedSubgraphAccumulates) {
  Rng rng(8);
  ag::Var a(rng.normal_matrix(2, 2), true);
  auto f = [&] {
    const ag::Var h = ag::tanh(a);
    return ag::sum(ag::mul(h, ag::add(h, a)));
  };
  EXPECT_LT(gradient_error(f, a), 1e-6);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  ag::Var a(ag::Matrix::Ones(2, 2), true);
  {
    ag::NoGradGuard g;
    EXPECT_FALSE(ag::grad_enabled());
    const ag::Var y = ag::scale(a, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(ag::grad_enabled());
}

TEST(Nn, LinearAndConvGradients) {
  Rng rng(9);
  nn::ParamStore store;
  const auto lin = nn::make_linear(store, "lin", 4, 3, rng);
  const auto conv = nn::make_conv1d(store, "conv", 3, 2, 3, 2, rng);
  ag::Var x(rng.normal_matrix(7, 4), true);
  auto f = [&] { return weighted(conv(ag::tanh(lin(x))), 10); };
  EXPECT_LT(gradient_error(f, x), 1e-6);
  ag::Var w = store.at("conv.weight");
  EXPECT_LT(gradient_error(f, w), 1e-6);
  ag::Var lb = store.at("lin.bias");
  EXPECT_LT(gradient_error(f, lb), 1e-6);
}

TEST(Nn, ConvMatchesDirectConvolution) {
  Rng rng(10);
  nn::ParamStore store;
  const auto conv = nn::make_conv1d(store, "c", 2, 3, 3, 2, rng);
  const ag::Matrix x = rng.normal_matrix(9, 2);
  const ag::Matrix y = conv(ag::Var(x)).value();
  const ag::Matrix& W = conv.weight.value();
  const ag::Matrix& b = conv.bias.value();
  for (int t = 0; t < 9; ++t) {
    for (int o = 0; o < 3; ++o) {
      double acc = b(0, o);
      for (int j = 0; j < 3; ++j) {
        const int src = t + (j - 1) * 2;
        if (src < 0 || src >= 9) continue;
        for (int i = 0; i < 2; ++i) acc += x(src, i) * W(j * 2 + i, o);
      }
      EXPECT_NEAR(y(t, o), acc, 1e-12);
    }
  }
}

TEST(Nn, AdamMinimizesQuadratic) {
  Rng rng(11);
  nn::ParamStore store;
  ag::Var p = store.create("p", rng.normal_matrix(1, 5));
  nn::AdamConfig c;
  c.learning_rate = 0.05;
  c.beta1 = 0.9;
  nn::Adam adam(c);
  for (int i = 0; i < 500; ++i) {
    store.zero_grad();
    ag::backward(ag::sum(ag::square(ag::add_scalar(p, -3.0))));
    adam.step(store);
  }
  EXPECT_LT((p.value().array() - 3.0).abs().maxCoeff(), 1e-2);
}

TEST(Nn, AdamPrefixLearningRates) {
  nn::ParamStore store;
  ag::Var fast = store.create("xf.a", ag::Matrix::Zero(1, 1));
  ag::Var slow = store.create("other", ag::Matrix::Zero(1, 1));
  nn::AdamConfig c;
  c.learning_rate = 0.1;
  c.lr_by_prefix["xf."] = 0.01;
  nn::Adam adam(c);
  ag::backward(ag::add(ag::sum(fast), ag::sum(slow)));
  adam.step(store);
  // The first bias-corrected Adam step has magnitude equal to the learning rate.
  EXPECT_NEAR(fast.value()(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(slow.value()(0, 0), -0.1, 1e-9);
}

TEST(Nn, ParamStoreArchiveRoundTrip) {
  Rng rng(12);
  nn::ParamStore a;
  nn::make_linear(a, "l", 3, 4, rng);
  ModelArchive ar;
  a.save_to(ar);
  nn::ParamStore b;
  Rng other(99);
  nn::make_linear(b, "l", 3, 4, other);
  b.load_from(ar);
  EXPECT_LT((a.at("l.weight").value() - b.at("l.weight").value()).cwiseAbs().maxCoeff(), 1e-7);
  nn::ParamStore c;
  nn::make_linear(c, "l", 3, 5, other);
  EXPECT_ANY_THROW(c.load_from(ar));
}
