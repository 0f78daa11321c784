#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pclformer/error.hpp"
#include "pclformer/ops.hpp"
#include "pclformer/random.hpp"
#include "pclformer/tensor.hpp"

using namespace pclformer;

namespace {

Tensor random_tensor(CounterRng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

void expect_values(const Tensor& t, const std::vector<double>& want, double tol) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.at(i), want[i], tol) << "index " << i;
}

}  // namespace

TEST(TensorTest, RejectsZeroExtentAndSizeMismatch) {
  EXPECT_THROW(Tensor({2, 0}, {}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_EQ(shape_to_string({2, 3}), "[2x3]");
}

TEST(TensorTest, MatmulIdentity) {
  auto out = ops::matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{1, 2}, {3, 4}}));
  expect_values(out, {1, 2, 3, 4}, 0.0);
}

TEST(TensorTest, MatmulZeroAnnihilates) {
  CounterRng rng(3);
  auto out = ops::matmul(Tensor::zeros({2, 3}), random_tensor(rng, {3, 4}));
  EXPECT_EQ(out.shape(), (Shape{2, 4}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(TensorTest, MatmulHandExample) {
  auto out = ops::matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5, 6}, {7, 8}}));
  expect_values(out, {19, 22, 43, 50}, 0.0);
}

TEST(TensorTest, MatmulShapeMismatchNamesShapes) {
  try {
    ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(TensorTest, MatmulMatchesTripleLoopOracle) {
  CounterRng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = static_cast<std::size_t>(rng.uniform_int(1, 16));
    const auto k = static_cast<std::size_t>(rng.uniform_int(1, 16));
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 16));
    auto a = random_tensor(rng, {m, k}), b = random_tensor(rng, {k, n});
    auto want = oracle::matmul({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}, m, k, n);
    auto got = ops::matmul(a, b);
    for (std::size_t i = 0; i < want.size(); ++i) {
      EXPECT_LE(std::abs(got.at(i) - want[i]), 1e-9 * std::max(1.0, std::abs(want[i])));
    }
  }
}

TEST(TensorTest, SoftmaxExamples) {
  expect_values(ops::softmax(Tensor({3}, {0, 0, 0}), 0), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-12);
  expect_values(ops::softmax(Tensor({2}, {1000, 0}), 0), {1, 0}, 1e-9);
  expect_values(ops::softmax(Tensor({2}, {1, 2}), 0), {0.26894, 0.73106}, 1e-5);
  EXPECT_THROW(ops::softmax(Tensor({2}, {1, 2}), 1), DimensionError);
}

TEST(TensorTest, SoftmaxSlicesAreDistributionsAtExtremes) {
  CounterRng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const auto c = static_cast<std::size_t>(rng.uniform_int(1, 8));
    auto x = random_tensor(rng, {r, c}, -1e4, 1e4);
    for (std::size_t axis : {std::size_t{0}, std::size_t{1}}) {
      auto y = ops::softmax(x, axis);
      for (double v : y.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        EXPECT_TRUE(std::isfinite(v));
      }
      const std::size_t slices = axis == 0 ? c : r, len = axis == 0 ? r : c;
      for (std::size_t s = 0; s < slices; ++s) {
        double total = 0.0;
        for (std::size_t i = 0; i < len; ++i) total += axis == 0 ? y.at(i * c + s) : y.at(s * c + i);
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
    }
  }
}

TEST(TensorTest, LayerNormExamples) {
  auto g1 = Tensor::ones({3}), b0 = Tensor::zeros({3});
  expect_values(ops::layer_norm(Tensor({3}, {2, 2, 2}), g1, b0), {0, 0, 0}, 1e-12);
  expect_values(ops::layer_norm(Tensor({2}, {1, 3}), Tensor::ones({2}), Tensor::zeros({2}), 1e-12), {-1, 1}, 1e-9);
  CounterRng rng(2);
  auto x = random_tensor(rng, {4, 3});
  auto out = ops::layer_norm(x, Tensor::zeros({3}), Tensor({3}, {0.5, -1, 2}));
  for (std::size_t r = 0; r < 4; ++r) expect_values(ops::pick(out, r * 3), {0.5}, 0.0);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.at(i), (std::vector<double>{0.5, -1, 2})[i % 3]);
  EXPECT_THROW(ops::layer_norm(x, Tensor::ones({3}), Tensor::zeros({3}), 0.0), ParameterError);
  EXPECT_THROW(ops::layer_norm(x, Tensor::ones({4}), Tensor::zeros({4})), DimensionError);
}

TEST(TensorTest, LayerNormNormalizesEachRow) {
  CounterRng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto r = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const auto c = static_cast<std::size_t>(rng.uniform_int(2, 8));
    auto x = random_tensor(rng, {r, c});
    auto y = ops::layer_norm(x, Tensor::ones({c}), Tensor::zeros({c}), 1e-12);
    for (std::size_t i = 0; i < r; ++i) {
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < c; ++j) mean += y.at(i * c + j);
      mean /= static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) var += (y.at(i * c + j) - mean) * (y.at(i * c + j) - mean);
      var /= static_cast<double>(c);
      EXPECT_NEAR(mean, 0.0, 1e-6);
      EXPECT_NEAR(var, 1.0, 1e-6);
    }
  }
}

TEST(TensorTest, GeluExamplesAndMonotonicity) {
  expect_values(ops::gelu(Tensor({3}, {0.0, 1.0, 20.0})), {0.0, 0.84134, 20.0}, 1e-5);
  // Exact GELU dips below zero for x < 0 but is nondecreasing from its minimum near -0.75.
  double prev = -1e9;
  for (double x = -0.7; x <= 6.0; x += 0.01) {
    const double y = ops::gelu(Tensor({1}, {x})).item();
    EXPECT_GE(y, prev);
    prev = y;
  }
}

TEST(TensorTest, BackwardExamples) {
  CounterRng rng(1);
  auto x = random_tensor(rng, {3, 2}).set_requires_grad(true);
  backward(ops::sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  auto y = random_tensor(rng, {5}).set_requires_grad(true);
  backward(ops::sum(ops::mul(y, y)));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(y.grad()[i], 2.0 * y.at(i));

  auto z = random_tensor(rng, {4}).set_requires_grad(true);
  auto used = ops::scale(z, 1.0);
  backward(ops::add(ops::sum(used), ops::sum(used)));
  for (double g : z.grad()) EXPECT_EQ(g, 2.0);
}

TEST(TensorTest, BackwardRejectsNonScalarLoss) {
  auto x = Tensor::ones({2}, true);
  EXPECT_THROW(backward(ops::scale(x, 2.0)), ContractError);
}

TEST(TensorTest, GraphIsTopologicallyOrdered) {
  auto x = Tensor::ones({2, 2}, true);
  auto h = ops::matmul(x, x);
  auto loss = ops::sum(ops::add(h, ops::gelu(h)));
  auto graph = ComputeGraph::trace(loss);
  auto names = graph.op_names();
  ASSERT_EQ(names.size(), 4u);
  EXPECT_GE(graph.size(), names.size());
  const auto pos = [&](const std::string& op) {
    return std::find(names.begin(), names.end(), op) - names.begin();
  };
  EXPECT_LT(pos("matmul"), pos("gelu"));
  EXPECT_LT(pos("gelu"), pos("add"));
  EXPECT_LT(pos("add"), pos("sum"));
}

TEST(TensorTest, BackwardIsDeterministic) {
  CounterRng rng(4);
  auto a = random_tensor(rng, {4, 6}).set_requires_grad(true);
  auto b = random_tensor(rng, {6, 3}).set_requires_grad(true);
  auto run = [&] {
    a.zero_grad();
    b.zero_grad();
    backward(ops::sum(ops::softmax(ops::gelu(ops::matmul(a, b)), 1)));
    return std::vector<double>(a.grad().begin(), a.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(TensorTest, ForwardValuesStayFinite) {
  CounterRng rng(6);
  auto x = random_tensor(rng, {8, 8}, -50, 50);
  for (const auto& t : {ops::softmax(x, 1), ops::gelu(x), ops::layer_norm(x, Tensor::ones({8}), Tensor::zeros({8})),
                        ops::log(ops::clamp_min(x, 1e-12))}) {
    for (double v : t.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(TensorTest, NoGradGuardSkipsRecording) {
  auto x = Tensor::ones({2}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_TRUE(ops::scale(x, 2.0).is_leaf());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(ops::scale(x, 2.0).is_leaf());
}

TEST(RandomTest, CounterRngIsReproducibleAndKeyed) {
  CounterRng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    EXPECT_NE(va, c.next_u64());
  }
  CounterRng u(7);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
    const auto k = u.uniform_int(-2, 3);
    EXPECT_GE(k, -2);
    EXPECT_LE(k, 3);
  }
  EXPECT_NE(derive_key(1, "a"), derive_key(1, "b"));
  EXPECT_EQ(derive_key(1, "a"), derive_key(1, "a"));
}

TEST(RandomTest, NormalHasUnitMoments) {
  CounterRng rng(99);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}
