#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "palt/rng.hpp"
#include "palt/tensor.hpp"

// Differentiable primitives. Each op records itself on the active tape when
// any input requires grad; without an active tape nothing is recorded and the
// op is a pure function of its inputs.
namespace palt::ops {

/// a[..., K] x b[K, N] -> [..., N]; with transpose_b, b is [N, K].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// a[G, M, K] x b[G, K, N] -> [G, M, N]; with transpose_b, b is [G, N, K].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// Elementwise a + b, where b's shape must be a suffix of a's (broadcast over leading dims).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor tanh(const Tensor& a);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);

/// Softmax over the last axis.
Tensor softmax(const Tensor& a);

/// Keys excluded by the mask get probability exactly 0.
///
/// `a` has leading dim B; `key_mask` is [B, K] with K == a.dim(-1), nonzero
/// meaning "may attend". Every row belonging to batch b uses mask row b.
Tensor masked_softmax(const Tensor& a, std::span<const std::uint8_t> key_mask);

/// Layer normalization over the last axis with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

/// table[R, D] gathered at `rows` -> [rows.size(), D].
Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> rows);

/// a[Ra, D] stacked over b[Rb, D] -> [Ra + Rb, D].
Tensor concat_rows(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);

/// Axis permutation for tensors of rank <= 4.
Tensor permute(const Tensor& a, std::span<const int> order);

Tensor sum(const Tensor& a);

/// Inverted dropout; identity when probability == 0.
Tensor dropout(const Tensor& a, double probability, Rng& rng);

struct BinaryNllStats {
  /// Probability the model assigned to each row's target class.
  std::vector<double> target_probability;
  std::int64_t clamp_count = 0;
};

/// Weighted negative log-likelihood over 2-class logits.
///
/// Returns sum_i weights[i] * -ln(clamp(p_i[labels[i]])), where p_i is the
/// softmax of logits row i and the clamp keeps p in [1e-12, 1 - 1e-12].
/// Clamped rows contribute no gradient and are counted in `stats`.
Tensor cross_entropy2(const Tensor& logits, std::span<const int> labels,
                      std::span<const double> weights, BinaryNllStats* stats = nullptr);

inline constexpr double kProbabilityFloor = 1e-12;

}  // namespace palt::ops
