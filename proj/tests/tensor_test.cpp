#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "amtl/grad_check.hpp"
#include "amtl/rng.hpp"
#include "amtl/tensor.hpp"

using amtl::backward;
using amtl::Error;
using amtl::ErrorKind;
using amtl::GradReport;
using amtl::Rng;
using amtl::Tensor;

namespace {

Tensor vec(std::vector<double> v, bool rg = false, std::string name = "") {
  const int n = static_cast<int>(v.size());
  return Tensor::from({n}, std::move(v), rg, std::move(name));
}

}  // namespace

TEST(Softmax, UniformInputsGiveUniformOutput) {
  Tensor y = amtl::softmax(vec({0.0, 0.0, 0.0}));
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
  Tensor y = amtl::softmax(vec({1000.0, 0.0}));
  ASSERT_TRUE(y.all_finite());
  EXPECT_NEAR(y.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
}

TEST(Softmax, MatchesDirectEvaluation) {
  // independent direct evaluation of exp(x_i)/sum_j exp(x_j)
  const std::vector<double> x = {1.0, 2.0, 3.0};
  double z = 0.0;
  for (double v : x) z += std::exp(v);
  Tensor y = amtl::softmax(vec(x));
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(y.data()[i], std::exp(x[i]) / z, 1e-14);
  EXPECT_NEAR(y.data()[0], 0.0900, 5e-5);
  EXPECT_NEAR(y.data()[1], 0.2447, 5e-5);
  EXPECT_NEAR(y.data()[2], 0.6652, 5e-5);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 12));
    std::vector<double> x(n);
    for (double& v : x) v = 20.0 * (rng.uniform() - 0.5);
    Tensor y = amtl::softmax(vec(x));
    double s = 0.0;
    for (double v : y.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0 + 1e-12);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    const double c = 100.0 * (rng.uniform() - 0.5);
    std::vector<double> shifted = x;
    for (double& v : shifted) v += c;
    Tensor y2 = amtl::softmax(vec(shifted));
    for (int i = 0; i < n; ++i)
      EXPECT_NEAR(y.data()[static_cast<std::size_t>(i)],
                  y2.data()[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(Softmax, NonFiniteInputIsRejected) {
  try {
    amtl::softmax(vec({1.0, std::nan("")}));
    FAIL() << "expected invalid_input error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
  }
}

TEST(SoftArgmax, MassAtOneIndex) {
  EXPECT_NEAR(amtl::soft_argmax(vec({0.0, 100.0, 0.0})).value(), 1.0, 1e-12);
}

TEST(SoftArgmax, UniformGivesMidpoint) {
  EXPECT_NEAR(amtl::soft_argmax(vec({2.0, 2.0, 2.0, 2.0, 2.0})).value(), 2.0, 1e-12);
}

TEST(SoftArgmax, TwoPointExpectation) {
  // softmax([ln 1, ln 3]) = (0.25, 0.75) so the expectation is 0.75
  EXPECT_NEAR(amtl::soft_argmax(vec({std::log(1.0), std::log(3.0)})).value(), 0.75,
              1e-12);
}

TEST(SoftArgmax, ShiftInvariantAndInRange) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 9));
    std::vector<double> x(n);
    for (double& v : x) v = 8.0 * (rng.uniform() - 0.5);
    const double a = amtl::soft_argmax(vec(x)).value();
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, static_cast<double>(n - 1));
    std::vector<double> shifted = x;
    for (double& v : shifted) v += 42.0;
    EXPECT_NEAR(a, amtl::soft_argmax(vec(shifted)).value(), 1e-10);
  }
}

TEST(SoftArgmax, EmptyInputIsRejected) {
  try {
    amtl::soft_argmax(Tensor::from({0}, {}));
    FAIL() << "expected invalid_input error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
  }
}

TEST(Backward, SumOfSquaresGradient) {
  Tensor p = vec({1.0, -2.0, 3.0}, true, "p");
  backward(amtl::sum(amtl::mul(p, p)));
  EXPECT_NEAR(p.grad()[0], 2.0, 1e-14);
  EXPECT_NEAR(p.grad()[1], -4.0, 1e-14);
  EXPECT_NEAR(p.grad()[2], 6.0, 1e-14);
}

TEST(Backward, ConstantLossLeavesGradZero) {
  Tensor p = vec({1.0, 2.0}, true, "p");
  p.zero_grad();
  Tensor c = Tensor::scalar(5.0);
  backward(c);  // no parameter dependence
  EXPECT_NEAR(p.grad()[0], 0.0, 0.0);
  EXPECT_NEAR(p.grad()[1], 0.0, 0.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor p = vec({1.5, -0.5}, true, "p");
  Tensor loss = amtl::sum(amtl::mul(p, p));
  backward(loss);
  backward(loss);
  EXPECT_NEAR(p.grad()[0], 2.0 * 2.0 * 1.5, 1e-14);
  EXPECT_NEAR(p.grad()[1], 2.0 * 2.0 * -0.5, 1e-14);
}

TEST(Backward, LinearityOverLossSum) {
  Rng rng(31);
  std::vector<double> init(6);
  for (double& v : init) v = rng.uniform() - 0.5;

  Tensor p1 = vec(init, true, "p");
  Tensor l1 = amtl::sum(amtl::mul(p1, p1));
  Tensor l2 = amtl::sum(amtl::sigmoid(p1));
  backward(amtl::add(l1, l2));
  const std::vector<double> combined = p1.grad();

  Tensor p2 = vec(init, true, "p");
  backward(amtl::sum(amtl::mul(p2, p2)));
  backward(amtl::sum(amtl::sigmoid(p2)));
  for (std::size_t i = 0; i < init.size(); ++i)
    EXPECT_NEAR(combined[i], p2.grad()[i], 1e-12);
}

TEST(Backward, NonScalarLossIsRejected) {
  Tensor p = vec({1.0, 2.0}, true, "p");
  try {
    backward(amtl::mul(p, p));
    FAIL() << "expected contract error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
}

TEST(GradCheck, SumOfSquares) {
  Tensor p = vec({0.3, -1.2, 0.7}, true, "p");
  std::vector<Tensor> params = {p};
  auto f = [&] { return amtl::sum(amtl::mul(p, p)); };
  GradReport r = amtl::grad_check(f, params, 1e-5);
  EXPECT_LT(r.max_rel_err, 1e-8);
}

TEST(GradCheck, SigmoidOfFirstCoordinate) {
  Tensor p = vec({0.4, 2.0}, true, "p");
  std::vector<Tensor> params = {p};
  auto f = [&] {
    Tensor sel = Tensor::from({2}, {1.0, 0.0});
    return amtl::sum(amtl::mul(amtl::sigmoid(p), sel));
  };
  GradReport r = amtl::grad_check(f, params, 1e-5);
  EXPECT_LT(r.max_rel_err, 1e-6);
  // analytic cross-check of sigma' = sigma(1-sigma)
  p.zero_grad();
  backward(f());
  const double s = 1.0 / (1.0 + std::exp(-0.4));
  EXPECT_NEAR(p.grad()[0], s * (1.0 - s), 1e-12);
  EXPECT_NEAR(p.grad()[1], 0.0, 0.0);
}

TEST(GradCheck, RejectsBadEps) {
  Tensor p = vec({1.0}, true, "p");
  std::vector<Tensor> params = {p};
  auto f = [&] { return amtl::sum(p); };
  EXPECT_THROW(amtl::grad_check(f, params, 0.5), Error);
  EXPECT_THROW(amtl::grad_check(f, params, 0.0), Error);
}

TEST(GradCheck, DetectsNondeterminism) {
  Tensor p = vec({1.0}, true, "p");
  std::vector<Tensor> params = {p};
  int calls = 0;
  auto f = [&] {
    ++calls;
    return amtl::scale(amtl::sum(p), 1.0 + 0.01 * calls);
  };
  try {
    amtl::grad_check(f, params, 1e-5);
    FAIL() << "expected nondeterminism error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::nondeterminism);
  }
}

// Composite graph exercising every op the encoder uses.
TEST(GradCheck, CompositeGraphOps) {
  Rng rng(99);
  const int m = 3, n = 4;
  auto randvec = [&](int count) {
    std::vector<double> v(static_cast<std::size_t>(count));
    for (double& x : v) x = rng.uniform() - 0.5;
    return v;
  };
  Tensor a = Tensor::from({m, n}, randvec(m * n), true, "a");
  Tensor b = Tensor::from({n, n}, randvec(n * n), true, "b");
  Tensor g = Tensor::from({n}, randvec(n), true, "g");
  Tensor c = Tensor::from({n}, randvec(n), true, "c");
  std::vector<Tensor> params = {a, b, g, c};
  auto f = [&] {
    Tensor h = amtl::matmul(a, b);
    h = amtl::layer_norm(h, g, c);
    Tensor att = amtl::softmax(amtl::scale(amtl::matmul_nt(h, h), 0.5));
    h = amtl::matmul(att, h);
    Tensor t = amtl::tanh_op(amtl::slice_cols(h, 0, 2));
    Tensor u = amtl::exp_op(amtl::scale(amtl::slice_cols(h, 2, 4), 0.1));
    Tensor cat = amtl::concat_cols({t, u});
    Tensor lse = amtl::logsumexp(cat);
    Tensor picked = amtl::rows_pick(cat, {0, 1, 2});
    Tensor sm = amtl::soft_argmax(amtl::flatten(amtl::gather_rows(cat, {1})));
    return amtl::add(amtl::add(amtl::sum(lse), amtl::sum(amtl::sub(picked, lse))),
                     amtl::add(sm, amtl::mean(amtl::div(
                                       amtl::add_const(amtl::sigmoid(cat), 1.0),
                                       amtl::add_const(amtl::mul(cat, cat), 2.0)))));
  };
  GradReport r = amtl::grad_check(f, params, 1e-5);
  EXPECT_LT(r.max_rel_err, 1e-6) << "worst at " << r.worst_param_path;
}

TEST(GradCheck, EmbeddingAndBroadcastAdd) {
  Rng rng(123);
  Tensor table = Tensor::gaussian({5, 3}, 1.0, rng, true, "table");
  Tensor bias = Tensor::gaussian({3}, 1.0, rng, true, "bias");
  std::vector<Tensor> params = {table, bias};
  const std::vector<int> ids = {4, 0, 2, 0};
  auto f = [&] {
    Tensor x = amtl::embedding(table, ids);
    return amtl::sum(amtl::mul(amtl::add(x, bias), amtl::add(x, bias)));
  };
  GradReport r = amtl::grad_check(f, params, 1e-5);
  EXPECT_LT(r.max_rel_err, 1e-7) << "worst at " << r.worst_param_path;
}
