#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "icudg/autodiff.hpp"
#include "icudg/error.hpp"
#include "icudg/matrix.hpp"
#include "oracles.hpp"

using namespace icudg;

namespace {

using GemmFn = void (*)(const Matrix&, const Matrix&, Matrix&);

struct GemmCase {
  GemmFn fast, reference;
  bool ta, tb;
};

}  // namespace

TEST(Matrix, KernelsMatchSerialReference) {
  const GemmCase cases[] = {
      {kernels::gemm_nn, kernels::serial::gemm_nn, false, false},
      {kernels::gemm_nt, kernels::serial::gemm_nt, false, true},
      {kernels::gemm_tn, kernels::serial::gemm_tn, true, false},
  };
  // Sizes on both sides of the parallel threshold.
  for (const std::size_t n : {3, 17, 64, 150}) {
    for (const auto& c : cases) {
      const auto a = c.ta ? fixtures::random_matrix(n + 1, n, n) : fixtures::random_matrix(n, n + 1, n);
      const auto b = c.tb ? fixtures::random_matrix(n + 2, n + 1, n + 7) : fixtures::random_matrix(n + 1, n + 2, n + 7);
      Matrix fast(n, n + 2, 0.5), ref(n, n + 2, 0.5);
      c.fast(a, b, fast);
      c.reference(a, b, ref);
      // The reference sums each dot product before adding it to `out`, so the
      // two agree to rounding rather than bitwise.
      for (std::size_t i = 0; i < fast.size(); ++i)
        EXPECT_NEAR(fast.data()[i], ref.data()[i], 1e-12 * (1.0 + std::abs(ref.data()[i]))) << "n=" << n;
    }
  }
}

TEST(Matrix, MatmulShapesAndTranspose) {
  const Matrix a{{1, 2, 3}, {4, 5, 6}};
  const Matrix b{{1, 0}, {0, 1}, {1, 1}};
  EXPECT_EQ(matmul(a, b), (Matrix{{4, 5}, {10, 11}}));
  EXPECT_EQ(transpose(a), (Matrix{{1, 4}, {2, 5}, {3, 6}}));
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Autodiff, SigmoidAtZero) {
  ad::Tape tape;
  auto x = tape.variable(Matrix::scalar(0.0));
  auto y = ad::sigmoid(x);
  EXPECT_DOUBLE_EQ(y.item(), 0.5);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x.id())[0], 0.25);
}

TEST(Autodiff, MeanDistributesEvenly) {
  ad::Tape tape;
  auto x = tape.variable(Matrix::row_vector(std::vector<double>{1, 2, 3}));
  auto m = ad::mean(x);
  EXPECT_DOUBLE_EQ(m.item(), 2.0);
  tape.backward(m);
  for (const double g : tape.grad(x.id()).values()) EXPECT_DOUBLE_EQ(g, 1.0 / 3.0);
}

TEST(Autodiff, MatmulShapeMismatchThrows) {
  ad::Tape tape;
  auto a = tape.variable(Matrix(2, 3));
  auto b = tape.variable(Matrix(4, 2));
  EXPECT_THROW(ad::matmul(a, b), ShapeError);
}

TEST(Autodiff, SumOfSquares) {
  ad::Tape tape;
  auto w = tape.variable(Matrix::row_vector(std::vector<double>{1, 2}));
  auto unused = tape.variable(Matrix(2, 2, 1.0));
  tape.backward(ad::sum(ad::mul(w, w)));
  EXPECT_EQ(tape.grad(w.id()), Matrix::row_vector(std::vector<double>{2, 4}));
  EXPECT_EQ(tape.grad(unused.id()), Matrix(2, 2, 0.0));
}

namespace {

// Random three-layer perceptron touching most primitives; 14 parameters.
ad::Var mlp(ad::Tape& tape, std::span<const double> theta, std::vector<ad::Var>& leaves) {
  std::size_t k = 0;
  auto take = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (auto& v : m.values()) v = theta[k++];
    leaves.push_back(tape.variable(std::move(m)));
    return leaves.back();
  };
  const auto x = tape.constant(fixtures::random_matrix(4, 3, 91));
  auto w1 = take(3, 2), b1 = take(1, 2), w2 = take(2, 2), w3 = take(2, 1);
  auto h1 = ad::tanh(ad::add(ad::matmul(x, w1), b1));
  auto h2 = ad::sigmoid(ad::matmul(h1, w2));
  const std::vector<ad::Var> parts{h1, h2};
  auto v = ad::variance_rows(ad::concat_cols(parts), 1);
  auto out = ad::matmul(h2, w3);
  auto loss = ad::mean(ad::bce_with_logits(out, Matrix(4, 1, 1.0)));
  loss = loss + ad::sum(ad::sqrt(ad::add_scalar(v, 1.0)));
  loss = loss + ad::mean(ad::exp(ad::scale(ad::slice_rows(out, 1, 2), 0.1)));
  loss = loss + ad::mean(ad::log(ad::add_scalar(ad::square(ad::transpose(h1)), 1.0)));
  return loss + ad::mean(ad::gather_rows(ad::relu(h1 - h2), {0, 0, 3}));
}

std::vector<double> mlp_grad(std::span<const double> theta) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  tape.backward(mlp(tape, theta, leaves));
  std::vector<double> g;
  for (const auto& l : leaves)
    for (const double v : tape.grad(l.id()).values()) g.push_back(v);
  return g;
}

}  // namespace

TEST(Autodiff, PerceptronMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::vector<double> theta(14);
    CounterRng rng(seed);
    for (auto& t : theta) t = rng.normal();
    const auto f = [](std::span<const double> th) {
      ad::Tape tape;
      std::vector<ad::Var> leaves;
      return mlp(tape, th, leaves).item();
    };
    const auto check = oracle::finite_difference(f, theta, mlp_grad(theta), 1e-3);
    EXPECT_LT(check.max_rel_error, 1e-4) << "seed " << seed << " worst index " << check.worst;
  }
}

TEST(Autodiff, BackwardIsBitwiseDeterministic) {
  std::vector<double> theta(14);
  CounterRng rng(4);
  for (auto& t : theta) t = rng.normal();
  EXPECT_EQ(mlp_grad(theta), mlp_grad(theta));
}

TEST(Autodiff, BroadcastAddAccumulatesIntoRowOperand) {
  ad::Tape tape;
  auto a = tape.variable(Matrix(3, 2, 1.0));
  auto b = tape.variable(Matrix(1, 2, 0.0));
  tape.backward(ad::sum(a + b));
  EXPECT_EQ(tape.grad(b.id()), (Matrix{{3, 3}}));
}
