#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include "kernels.hpp"
#include "palt/ops.hpp"
#include "palt/tape.hpp"
#include "test_support.hpp"

namespace palt {
namespace {

using ::testing::HasSubstr;
using testing::random_tensor;

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
  const Tensor x({2}, {0.0, 0.0});
  EXPECT_EQ(vec(ops::softmax(x)), (std::vector<double>{0.5, 0.5}));
}

TEST(Ops, MatmulByIdentityReturnsInput) {
  Rng rng(3);
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor x = random_tensor({3, 4}, rng);
  EXPECT_EQ(vec(ops::matmul(eye, x)), vec(x));
}

TEST(Ops, LayerNormHandExample) {
  const Tensor x({3}, {1, 2, 3});
  const Tensor g({3}, {1, 1, 1});
  const Tensor b({3}, {0, 0, 0});
  const auto y = vec(ops::layer_norm(x, g, b, 1e-12));
  // population variance of {1,2,3} is 2/3
  const double sd = std::sqrt(2.0 / 3.0 + 1e-12);
  EXPECT_NEAR(y[0], -1.0 / sd, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], 1.0 / sd, 1e-12);
  EXPECT_NEAR(y[0], -1.2247, 1e-4);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 5});
  try {
    ops::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_THAT(e.what(), HasSubstr("matmul"));
    EXPECT_THAT(e.what(), HasSubstr(to_string(a.shape())));
    EXPECT_THAT(e.what(), HasSubstr(to_string(b.shape())));
  }
  EXPECT_THROW(ops::add(a, Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(ops::mul(a, Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(ops::reshape(a, {4}), ShapeError);
}

TEST(Ops, NonFiniteInputIdentifiesTensor) {
  const Tensor x({2}, {0.0, std::numeric_limits<double>::quiet_NaN()}, false, "logits");
  try {
    ops::softmax(x);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_THAT(e.what(), HasSubstr("logits"));
  }
  const Tensor g({2}, {1, 1}), b({2}, {0, 0});
  EXPECT_THROW(ops::layer_norm(x, g, b, 1e-12), NonFiniteError);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({7, 13}, rng, 5.0);
    const auto y = vec(ops::softmax(x));
    for (int r = 0; r < 7; ++r) {
      const double s = std::accumulate(y.begin() + r * 13, y.begin() + (r + 1) * 13, 0.0);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Ops, LayerNormRowsHaveZeroMean) {
  Rng rng(12);
  const Tensor g = Tensor::full({9}, 1.0), b = Tensor::zeros({9});
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({5, 9}, rng, 10.0);
    const auto y = vec(ops::layer_norm(x, g, b, 1e-12));
    for (int r = 0; r < 5; ++r) {
      const double mean = std::accumulate(y.begin() + r * 9, y.begin() + (r + 1) * 9, 0.0) / 9.0;
      EXPECT_LT(std::abs(mean), 1e-10);
    }
  }
}

TEST(Ops, MaskedSoftmaxGivesMaskedKeysExactZero) {
  const Tensor x({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 0, 0};
  const auto y = vec(ops::masked_softmax(x, mask));
  EXPECT_EQ(y[2], 0.0);
  EXPECT_EQ(y[4], 0.0);
  EXPECT_EQ(y[5], 0.0);
  EXPECT_EQ(y[3], 1.0);
  EXPECT_NEAR(y[0] + y[1], 1.0, 1e-15);
}

TEST(Ops, GatherRowsRejectsOutOfRangeIndex) {
  const Tensor table = Tensor::zeros({3, 2});
  const std::vector<std::int64_t> rows = {0, 3};
  EXPECT_THROW(ops::gather_rows(table, rows), std::out_of_range);
}

TEST(Ops, CrossEntropyMatchesScalarFormula) {
  const Tensor logits({2, 2}, {std::log(3.0), 0.0, 0.0, 1.0});
  const std::vector<int> labels = {0, 1};
  const std::vector<double> weights = {2.0, 0.5};
  ops::BinaryNllStats stats;
  const double l = ops::cross_entropy2(logits, labels, weights, &stats).item();
  const double p1 = std::exp(1.0) / (1.0 + std::exp(1.0));
  EXPECT_NEAR(l, -2.0 * std::log(0.75) - 0.5 * std::log(p1), 1e-12);
  EXPECT_NEAR(stats.target_probability[0], 0.75, 1e-15);
  EXPECT_EQ(stats.clamp_count, 0);
}

TEST(Ops, CrossEntropyCountsClampedRows) {
  const Tensor logits({1, 2}, {0.0, 100.0});
  const std::vector<int> labels = {0};
  const std::vector<double> weights = {1.0};
  ops::BinaryNllStats stats;
  const double l = ops::cross_entropy2(logits, labels, weights, &stats).item();
  EXPECT_EQ(stats.clamp_count, 1);
  EXPECT_NEAR(l, -std::log(1e-12), 1e-9);
}

TEST(Ops, DropoutIsIdentityAtZeroAndScalesKeptUnits) {
  Rng rng(5);
  const Tensor x = Tensor::full({1000}, 1.0);
  EXPECT_EQ(vec(ops::dropout(x, 0.0, rng)), vec(x));
  const auto y = vec(ops::dropout(x, 0.25, rng));
  for (double v : y) EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
}

TEST(Ops, NothingRecordedWithoutGradOrTape) {
  Tape tape;
  {
    TapeScope scope(tape);
    ops::tanh(Tensor::zeros({3}));
  }
  EXPECT_EQ(tape.size(), 0u);
  const Tensor w = Tensor::zeros({3}, true);
  ops::tanh(w);  // no tape active
  {
    TapeScope scope(tape);
    ops::tanh(w);
  }
  EXPECT_EQ(tape.size(), 1u);
}

// Plain triple loop with the same per-element accumulation order.
std::vector<double> naive_gemm(int m, int n, int k, const std::vector<double>& a,
                               const std::vector<double>& b) {
  std::vector<double> c(static_cast<std::size_t>(m * n), 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc = std::fma(a[i * k + p], b[p * n + j], acc);
      c[i * n + j] = acc;
    }
  }
  return c;
}

TEST(Kernels, GemmMatchesNaiveLoopBitForBit) {
  Rng rng(21);
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, {3, 5, 7}, {4, 32, 16}, {9, 65, 33}, {17, 31, 1},
                         {64, 64, 64}}) {
    std::vector<double> a(m * k), b(k * n);
    for (double& x : a) x = rng.normal(0, 1);
    for (double& x : b) x = rng.normal(0, 1);
    std::vector<double> c(m * n, -1.0);
    kernels::gemm(m, n, k, a.data(), b.data(), c.data(), false);
    EXPECT_EQ(c, naive_gemm(m, n, k, a, b)) << m << "x" << n << "x" << k;
  }
}

TEST(Kernels, RowResultIndependentOfBatchRows) {
  Rng rng(22);
  const int n = 37, k = 29;
  std::vector<double> a(13 * k), b(k * n);
  for (double& x : a) x = rng.normal(0, 1);
  for (double& x : b) x = rng.normal(0, 1);
  std::vector<double> all(13 * n), one(n);
  kernels::gemm(13, n, k, a.data(), b.data(), all.data(), false);
  for (int r = 0; r < 13; ++r) {
    kernels::gemm(1, n, k, a.data() + r * k, b.data(), one.data(), false);
    EXPECT_TRUE(std::equal(one.begin(), one.end(), all.begin() + r * n)) << "row " << r;
  }
}

TEST(Kernels, TransposeRoundTrip) {
  std::vector<double> src(6);
  std::iota(src.begin(), src.end(), 0.0);
  std::vector<double> t(6), back(6);
  kernels::transpose(2, 3, src.data(), t.data());
  EXPECT_EQ(t, (std::vector<double>{0, 3, 1, 4, 2, 5}));
  kernels::transpose(3, 2, t.data(), back.data());
  EXPECT_EQ(back, src);
}

}  // namespace
}  // namespace palt
