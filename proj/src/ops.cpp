#include "palt/ops.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>

#include "kernels.hpp"
#include "palt/tape.hpp"

namespace palt::ops {
namespace {

using Values = std::vector<double>;

[[noreturn]] void shape_error(std::string_view op, const Tensor& a, const Tensor& b,
                              std::string_view detail = {}) {
  std::string msg(op);
  msg += ": shape mismatch ";
  msg += to_string(a.shape());
  msg += " vs ";
  msg += to_string(b.shape());
  if (!detail.empty()) {
    msg += " (";
    msg += detail;
    msg += ')';
  }
  throw ShapeError(msg);
}

void require_finite(std::string_view op, const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(op) + ": non-finite value in input " + t.label());
    }
  }
}

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape();
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

// Runs `compute`, wraps the result and records the node when a tape is live.
Tensor finish(OpKind kind, Tape* tape, std::vector<Tensor> inputs, Shape shape,
              std::function<Values()> compute,
              std::function<void(const Tensor& out)> backward) {
  Values values = compute();
  Tensor out(std::move(shape), std::move(values), tape != nullptr);
  if (tape != nullptr) {
    TapeNode node;
    node.kind = kind;
    node.inputs = std::move(inputs);
    node.output = out;
    node.backward = [out, backward = std::move(backward)] { backward(out); };
    node.recompute = std::move(compute);
    tape->record(std::move(node));
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() < 1 || b.rank() != 2) shape_error("matmul", a, b, "need a[...,K] and 2-D b");
  const std::int64_t k = a.dim(-1);
  const std::int64_t n = transpose_b ? b.dim(0) : b.dim(1);
  if ((transpose_b ? b.dim(1) : b.dim(0)) != k) shape_error("matmul", a, b, "inner dims");
  const std::int64_t m = k == 0 ? 0 : a.size() / k;
  Shape shape = a.shape();
  shape.back() = n;

  auto compute = [a, b, transpose_b, m, n, k] {
    Values out(static_cast<std::size_t>(m * n));
    if (transpose_b) {
      Values bt(static_cast<std::size_t>(k * n));
      kernels::transpose(n, k, b.values().data(), bt.data());
      kernels::gemm(m, n, k, a.values().data(), bt.data(), out.data(), false);
    } else {
      kernels::gemm(m, n, k, a.values().data(), b.values().data(), out.data(), false);
    }
    return out;
  };
  auto backward = [a, b, transpose_b, m, n, k](const Tensor& out) mutable {
    const double* g = out.grad().data();
    if (auto ga = a.grad_accumulator(); !ga.empty()) {
      if (transpose_b) {
        kernels::gemm(m, k, n, g, b.values().data(), ga.data(), true);
      } else {
        Values bt(static_cast<std::size_t>(k * n));
        kernels::transpose(k, n, b.values().data(), bt.data());
        kernels::gemm(m, k, n, g, bt.data(), ga.data(), true);
      }
    }
    if (auto gb = b.grad_accumulator(); !gb.empty()) {
      if (transpose_b) {
        Values gt(static_cast<std::size_t>(n * m));
        kernels::transpose(m, n, g, gt.data());
        kernels::gemm(n, k, m, gt.data(), a.values().data(), gb.data(), true);
      } else {
        Values at(static_cast<std::size_t>(k * m));
        kernels::transpose(m, k, a.values().data(), at.data());
        kernels::gemm(k, n, m, at.data(), g, gb.data(), true);
      }
    }
  };
  return finish(OpKind::kMatMul, recording_tape({&a, &b}), {a, b}, std::move(shape),
                std::move(compute), std::move(backward));
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    shape_error("bmm", a, b, "need [G,M,K] and [G,K,N]");
  }
  const std::int64_t groups = a.dim(0);
  const std::int64_t m = a.dim(1);
  const std::int64_t k = a.dim(2);
  const std::int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != k) shape_error("bmm", a, b, "inner dims");

  auto compute = [a, b, transpose_b, groups, m, n, k] {
    Values out(static_cast<std::size_t>(groups * m * n));
    Values bt(transpose_b ? static_cast<std::size_t>(k * n) : 0);
    for (std::int64_t g = 0; g < groups; ++g) {
      const double* ap = a.values().data() + g * m * k;
      const double* bp = b.values().data() + g * k * n;
      if (transpose_b) {
        kernels::transpose(n, k, bp, bt.data());
        bp = bt.data();
      }
      kernels::gemm(m, n, k, ap, bp, out.data() + g * m * n, false);
    }
    return out;
  };
  auto backward = [a, b, transpose_b, groups, m, n, k](const Tensor& out) mutable {
    auto ga = a.grad_accumulator();
    auto gb = b.grad_accumulator();
    Values scratch(static_cast<std::size_t>(std::max(k * n, m * std::max(n, k))));
    for (std::int64_t grp = 0; grp < groups; ++grp) {
      const double* g = out.grad().data() + grp * m * n;
      const double* ap = a.values().data() + grp * m * k;
      const double* bp = b.values().data() + grp * k * n;
      if (!ga.empty()) {
        double* dst = ga.data() + grp * m * k;
        if (transpose_b) {
          kernels::gemm(m, k, n, g, bp, dst, true);
        } else {
          kernels::transpose(k, n, bp, scratch.data());
          kernels::gemm(m, k, n, g, scratch.data(), dst, true);
        }
      }
      if (!gb.empty()) {
        double* dst = gb.data() + grp * k * n;
        if (transpose_b) {
          kernels::transpose(m, n, g, scratch.data());
          kernels::gemm(n, k, m, scratch.data(), ap, dst, true);
        } else {
          kernels::transpose(m, k, ap, scratch.data());
          kernels::gemm(k, n, m, scratch.data(), g, dst, true);
        }
      }
    }
  };
  return finish(OpKind::kBatchedMatMul, recording_tape({&a, &b}), {a, b},
                {groups, m, n}, std::move(compute), std::move(backward));
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
    shape_error("add", a, b, "second operand must match trailing dims");
  }
  const std::int64_t inner = b.size();
  auto compute = [a, b, inner] {
    Values out(a.values().begin(), a.values().end());
    if (inner == 0) return out;
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); i += static_cast<std::size_t>(inner)) {
      for (std::int64_t j = 0; j < inner; ++j) out[i + j] += bv[j];
    }
    return out;
  };
  auto backward = [a, b, inner](const Tensor& out) mutable {
    const auto g = out.grad();
    if (auto ga = a.grad_accumulator(); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (auto gb = b.grad_accumulator(); !gb.empty() && inner > 0) {
      for (std::size_t i = 0; i < g.size(); i += static_cast<std::size_t>(inner)) {
        for (std::int64_t j = 0; j < inner; ++j) gb[j] += g[i + j];
      }
    }
  };
  return finish(OpKind::kAdd, recording_tape({&a, &b}), {a, b}, as, std::move(compute),
                std::move(backward));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  auto compute = [a, b] {
    Values out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return out;
  };
  auto backward = [a, b](const Tensor& out) mutable {
    const auto g = out.grad();
    if (auto ga = a.grad_accumulator(); !ga.empty()) {
      const auto bv = b.values();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (auto gb = b.grad_accumulator(); !gb.empty()) {
      const auto av = a.values();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  };
  return finish(OpKind::kMul, recording_tape({&a, &b}), {a, b}, a.shape(), std::move(compute),
                std::move(backward));
}

Tensor scale(const Tensor& a, double factor) {
  auto compute = [a, factor] {
    Values out(a.values().begin(), a.values().end());
    for (double& v : out) v *= factor;
    return out;
  };
  auto backward = [a, factor](const Tensor& out) mutable {
    const auto g = out.grad();
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  };
  return finish(OpKind::kScale, recording_tape({&a}), {a}, a.shape(), std::move(compute),
                std::move(backward));
}

Tensor tanh(const Tensor& a) {
  auto compute = [a] {
    Values out(a.values().begin(), a.values().end());
    for (double& v : out) v = std::tanh(v);
    return out;
  };
  auto backward = [a](const Tensor& out) mutable {
    const auto g = out.grad();
    const auto y = out.values();
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  };
  return finish(OpKind::kTanh, recording_tape({&a}), {a}, a.shape(), std::move(compute),
                std::move(backward));
}

Tensor gelu(const Tensor& a) {
  auto compute = [a] {
    Values out(a.values().begin(), a.values().end());
    for (double& v : out) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return out;
  };
  auto backward = [a](const Tensor& out) mutable {
    const auto g = out.grad();
    const auto x = a.values();
    auto ga = a.grad_accumulator();
    const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] += g[i] * (cdf + x[i] * pdf);
    }
  };
  return finish(OpKind::kGelu, recording_tape({&a}), {a}, a.shape(), std::move(compute),
                std::move(backward));
}

namespace {

Tensor softmax_impl(const Tensor& a, std::span<const std::uint8_t> key_mask, bool masked) {
  if (a.rank() < 1) throw ShapeError("softmax: scalar input " + a.label());
  const std::int64_t cols = a.dim(-1);
  const std::int64_t rows = cols == 0 ? 0 : a.size() / cols;
  std::int64_t rows_per_batch = rows;
  std::shared_ptr<std::vector<std::uint8_t>> mask;
  if (masked) {
    const std::int64_t batch = a.rank() >= 2 ? a.dim(0) : 1;
    if (static_cast<std::int64_t>(key_mask.size()) != batch * cols) {
      throw ShapeError("masked_softmax: mask of " + std::to_string(key_mask.size()) +
                       " entries vs input " + to_string(a.shape()));
    }
    rows_per_batch = batch == 0 ? 0 : rows / batch;
    mask = std::make_shared<std::vector<std::uint8_t>>(key_mask.begin(), key_mask.end());
  }
  auto compute = [a, mask, rows, cols, rows_per_batch] {
    require_finite(mask ? "masked_softmax" : "softmax", a);
    Values out(static_cast<std::size_t>(rows * cols), 0.0);
    const auto x = a.values();
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::uint8_t* keep = mask ? mask->data() + (r / rows_per_batch) * cols : nullptr;
      const double* xr = x.data() + r * cols;
      double* yr = out.data() + r * cols;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t c = 0; c < cols; ++c) {
        if (!keep || keep[c]) mx = std::max(mx, xr[c]);
      }
      if (!std::isfinite(mx)) continue;  // every key masked
      double total = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) {
        if (keep && !keep[c]) continue;
        yr[c] = std::exp(xr[c] - mx);
        total += yr[c];
      }
      for (std::int64_t c = 0; c < cols; ++c) yr[c] /= total;
    }
    return out;
  };
  auto backward = [a, rows, cols](const Tensor& out) mutable {
    const auto g = out.grad();
    const auto y = out.values();
    auto ga = a.grad_accumulator();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * cols;
      const double* yr = y.data() + r * cols;
      double dot = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      for (std::int64_t c = 0; c < cols; ++c) ga[r * cols + c] += yr[c] * (gr[c] - dot);
    }
  };
  return finish(OpKind::kSoftmax, recording_tape({&a}), {a}, a.shape(), std::move(compute),
                std::move(backward));
}

}  // namespace

Tensor softmax(const Tensor& a) { return softmax_impl(a, {}, false); }

Tensor masked_softmax(const Tensor& a, std::span<const std::uint8_t> key_mask) {
  return softmax_impl(a, key_mask, true);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input " + x.label());
  const std::int64_t cols = x.dim(-1);
  if (gamma.shape() != Shape{cols}) shape_error("layer_norm", x, gamma, "gamma");
  if (beta.shape() != Shape{cols}) shape_error("layer_norm", x, beta, "beta");
  const std::int64_t rows = cols == 0 ? 0 : x.size() / cols;

  struct Cache {
    Values normalized;
    Values inv_std;
  };
  auto cache = std::make_shared<Cache>();
  auto compute = [x, gamma, beta, eps, rows, cols, cache] {
    require_finite("layer_norm", x);
    cache->normalized.assign(static_cast<std::size_t>(rows * cols), 0.0);
    cache->inv_std.assign(static_cast<std::size_t>(rows), 0.0);
    Values out(static_cast<std::size_t>(rows * cols));
    const auto xv = x.values();
    const auto gv = gamma.values();
    const auto bv = beta.values();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* xr = xv.data() + r * cols;
      double mean = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) mean += xr[c];
      mean /= static_cast<double>(cols);
      double var = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
      var /= static_cast<double>(cols);
      const double inv = 1.0 / std::sqrt(var + eps);
      cache->inv_std[r] = inv;
      for (std::int64_t c = 0; c < cols; ++c) {
        const double xh = (xr[c] - mean) * inv;
        cache->normalized[r * cols + c] = xh;
        out[r * cols + c] = gv[c] * xh + bv[c];
      }
    }
    return out;
  };
  auto backward = [x, gamma, beta, rows, cols, cache](const Tensor& out) mutable {
    const auto g = out.grad();
    const auto gv = gamma.values();
    auto gx = x.grad_accumulator();
    auto ggamma = gamma.grad_accumulator();
    auto gbeta = beta.grad_accumulator();
    Values dxhat(static_cast<std::size_t>(cols));
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * cols;
      const double* xh = cache->normalized.data() + r * cols;
      if (!ggamma.empty()) {
        for (std::int64_t c = 0; c < cols; ++c) ggamma[c] += gr[c] * xh[c];
      }
      if (!gbeta.empty()) {
        for (std::int64_t c = 0; c < cols; ++c) gbeta[c] += gr[c];
      }
      if (gx.empty()) continue;
      double sum_d = 0.0;
      double sum_dx = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) {
        dxhat[c] = gr[c] * gv[c];
        sum_d += dxhat[c];
        sum_dx += dxhat[c] * xh[c];
      }
      const double n = static_cast<double>(cols);
      const double inv = cache->inv_std[r];
      for (std::int64_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += inv / n * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
      }
    }
  };
  return finish(OpKind::kLayerNorm, recording_tape({&x, &gamma, &beta}), {x, gamma, beta},
                x.shape(), std::move(compute), std::move(backward));
}

Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> rows) {
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be 2-D, got " + table.label());
  const std::int64_t nrows = table.dim(0);
  const std::int64_t cols = table.dim(1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= nrows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(rows[i]) + " at position " +
                              std::to_string(i) + " outside table " + table.label() + " " +
                              to_string(table.shape()));
    }
  }
  auto ids = std::make_shared<std::vector<std::int64_t>>(rows.begin(), rows.end());
  auto compute = [table, ids, cols] {
    Values out(ids->size() * static_cast<std::size_t>(cols));
    const auto tv = table.values();
    for (std::size_t i = 0; i < ids->size(); ++i) {
      std::copy_n(tv.data() + (*ids)[i] * cols, cols, out.data() + i * cols);
    }
    return out;
  };
  auto backward = [table, ids, cols](const Tensor& out) mutable {
    const auto g = out.grad();
    auto gt = table.grad_accumulator();
    for (std::size_t i = 0; i < ids->size(); ++i) {
      double* dst = gt.data() + (*ids)[i] * cols;
      const double* src = g.data() + i * cols;
      for (std::int64_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  };
  return finish(OpKind::kGatherRows, recording_tape({&table}), {table},
                {static_cast<std::int64_t>(ids->size()), cols}, std::move(compute),
                std::move(backward));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    shape_error("concat_rows", a, b, "need [Ra,D] and [Rb,D]");
  }
  auto compute = [a, b] {
    Values out(a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    return out;
  };
  auto backward = [a, b](const Tensor& out) mutable {
    const auto g = out.grad();
    const auto split = static_cast<std::size_t>(a.size());
    if (auto ga = a.grad_accumulator(); !ga.empty()) {
      for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
    }
    if (auto gb = b.grad_accumulator(); !gb.empty()) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
    }
  };
  return finish(OpKind::kConcatRows, recording_tape({&a, &b}), {a, b},
                {a.dim(0) + b.dim(0), a.dim(1)}, std::move(compute), std::move(backward));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.size()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " vs " + to_string(shape));
  }
  auto compute = [a] { return Values(a.values().begin(), a.values().end()); };
  auto backward = [a](const Tensor& out) mutable {
    const auto g = out.grad();
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return finish(OpKind::kReshape, recording_tape({&a}), {a}, std::move(shape),
                std::move(compute), std::move(backward));
}

Tensor permute(const Tensor& a, std::span<const int> order) {
  const auto r = static_cast<std::size_t>(a.rank());
  if (order.size() != r || r > 4) {
    throw ShapeError("permute: order of length " + std::to_string(order.size()) +
                     " for shape " + to_string(a.shape()));
  }
  std::array<bool, 4> seen{};
  for (int o : order) {
    if (o < 0 || static_cast<std::size_t>(o) >= r || seen[o]) {
      throw ShapeError("permute: invalid axis order for " + to_string(a.shape()));
    }
    seen[o] = true;
  }
  // Pad to 4-D with leading unit axes.
  std::array<std::int64_t, 4> in_dims{1, 1, 1, 1};
  std::array<int, 4> perm{0, 1, 2, 3};
  const std::size_t pad = 4 - r;
  for (std::size_t i = 0; i < r; ++i) {
    in_dims[pad + i] = a.shape()[i];
    perm[pad + i] = order[i] + static_cast<int>(pad);
  }
  std::array<std::int64_t, 4> in_strides{};
  in_strides[3] = 1;
  for (int i = 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_dims[i + 1];
  std::array<std::int64_t, 4> out_dims{};
  std::array<std::int64_t, 4> src_strides{};
  for (int i = 0; i < 4; ++i) {
    out_dims[i] = in_dims[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  Shape out_shape;
  for (std::size_t i = 0; i < r; ++i) out_shape.push_back(a.shape()[order[i]]);

  // Source offset for each output position, shared by forward and backward.
  auto index = std::make_shared<std::vector<std::int64_t>>();
  index->reserve(static_cast<std::size_t>(a.size()));
  for (std::int64_t i0 = 0; i0 < out_dims[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < out_dims[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < out_dims[2]; ++i2)
        for (std::int64_t i3 = 0; i3 < out_dims[3]; ++i3)
          index->push_back(i0 * src_strides[0] + i1 * src_strides[1] + i2 * src_strides[2] +
                           i3 * src_strides[3]);

  auto compute = [a, index] {
    Values out(index->size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[(*index)[i]];
    return out;
  };
  auto backward = [a, index](const Tensor& out) mutable {
    const auto g = out.grad();
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) ga[(*index)[i]] += g[i];
  };
  return finish(OpKind::kPermute, recording_tape({&a}), {a}, std::move(out_shape),
                std::move(compute), std::move(backward));
}

Tensor sum(const Tensor& a) {
  auto compute = [a] {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return Values{s};
  };
  auto backward = [a](const Tensor& out) mutable {
    const double g = out.grad()[0];
    for (double& v : a.grad_accumulator()) v += g;
  };
  return finish(OpKind::kSum, recording_tape({&a}), {a}, {}, std::move(compute),
                std::move(backward));
}

Tensor dropout(const Tensor& a, double probability, Rng& rng) {
  if (probability < 0.0 || probability >= 1.0) {
    throw std::invalid_argument("dropout: probability must be in [0, 1), got " +
                                std::to_string(probability));
  }
  if (probability == 0.0) return a;
  auto keep = std::make_shared<Values>(static_cast<std::size_t>(a.size()));
  const double kept_scale = 1.0 / (1.0 - probability);
  for (double& k : *keep) k = rng.uniform() >= probability ? kept_scale : 0.0;
  auto compute = [a, keep] {
    Values out(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*keep)[i];
    return out;
  };
  auto backward = [a, keep](const Tensor& out) mutable {
    const auto g = out.grad();
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*keep)[i];
  };
  return finish(OpKind::kDropout, recording_tape({&a}), {a}, a.shape(), std::move(compute),
                std::move(backward));
}

Tensor cross_entropy2(const Tensor& logits, std::span<const int> labels,
                      std::span<const double> weights, BinaryNllStats* stats) {
  if (logits.rank() != 2 || logits.dim(1) != 2) {
    throw ShapeError("cross_entropy2: logits must be [N,2], got " + to_string(logits.shape()));
  }
  const std::int64_t rows = logits.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != rows ||
      static_cast<std::int64_t>(weights.size()) != rows) {
    throw ShapeError("cross_entropy2: " + std::to_string(labels.size()) + " labels and " +
                     std::to_string(weights.size()) + " weights for logits " +
                     to_string(logits.shape()));
  }
  for (int label : labels) {
    if (label != 0 && label != 1) {
      throw std::invalid_argument("cross_entropy2: label must be 0 or 1, got " +
                                  std::to_string(label));
    }
  }
  struct Cache {
    std::vector<int> labels;
    Values weights;
    Values probs;  // softmax, row-major [N,2]
    std::vector<std::uint8_t> clamped;
  };
  auto cache = std::make_shared<Cache>();
  cache->labels.assign(labels.begin(), labels.end());
  cache->weights.assign(weights.begin(), weights.end());

  auto compute = [logits, rows, cache] {
    require_finite("cross_entropy2", logits);
    cache->probs.assign(static_cast<std::size_t>(rows * 2), 0.0);
    cache->clamped.assign(static_cast<std::size_t>(rows), 0);
    const auto lv = logits.values();
    double total = 0.0;
    for (std::int64_t i = 0; i < rows; ++i) {
      const double l0 = lv[2 * i];
      const double l1 = lv[2 * i + 1];
      const double mx = std::max(l0, l1);
      const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
      cache->probs[2 * i] = std::exp(l0 - lse);
      cache->probs[2 * i + 1] = std::exp(l1 - lse);
      const int y = cache->labels[i];
      const double log_p = lv[2 * i + y] - lse;
      const double p = std::exp(log_p);
      double term = -log_p;
      if (p < kProbabilityFloor) {
        term = -std::log(kProbabilityFloor);
        cache->clamped[i] = 1;
      } else if (p > 1.0 - kProbabilityFloor) {
        term = -std::log(1.0 - kProbabilityFloor);
        cache->clamped[i] = 1;
      }
      total += cache->weights[i] * term;
    }
    return Values{total};
  };
  auto backward = [logits, rows, cache](const Tensor& out) mutable {
    const double g = out.grad()[0];
    auto gl = logits.grad_accumulator();
    for (std::int64_t i = 0; i < rows; ++i) {
      if (cache->clamped[i]) continue;
      const int y = cache->labels[i];
      const double w = g * cache->weights[i];
      gl[2 * i] += w * (cache->probs[2 * i] - (y == 0 ? 1.0 : 0.0));
      gl[2 * i + 1] += w * (cache->probs[2 * i + 1] - (y == 1 ? 1.0 : 0.0));
    }
  };
  Tensor out = finish(OpKind::kCrossEntropy2, recording_tape({&logits}), {logits}, {},
                      std::move(compute), std::move(backward));
  if (stats != nullptr) {
    stats->target_probability.resize(static_cast<std::size_t>(rows));
    for (std::int64_t i = 0; i < rows; ++i) {
      stats->target_probability[i] = cache->probs[2 * i + cache->labels[i]];
      stats->clamp_count += cache->clamped[i];
    }
  }
  return out;
}

}  // namespace palt::ops
