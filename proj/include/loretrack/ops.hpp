#pragma once

// Differentiable tensor operations. Each op documents its gradient rule next
// to the backward closure. All arithmetic is 64-bit and single-threaded; loop
// order is fixed, so results are bitwise reproducible.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "loretrack/tensor.hpp"

namespace loretrack {

namespace detail {

// Gradient buffer of parent i, or nullptr when it takes no gradient.
inline double* pgrad(Node& n, std::size_t i) {
  Node& p = *n.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

inline const std::vector<double>& pdata(const Node& n, std::size_t i) {
  return n.parents[i]->data;
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_str(t.shape()));
}

// C[m×n] += A[m×k] · B[k×n]. Four k-steps per pass over a C row; every
// C element still accumulates over k in ascending order.
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict crow = c + i * n;
    const double* arow = a + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
      const double* __restrict b0 = b + p * n;
      const double* __restrict b1 = b0 + n;
      const double* __restrict b2 = b1 + n;
      const double* __restrict b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j) {
        double t = crow[j];
        t += a0 * b0[j];
        t += a1 * b1[j];
        t += a2 * b2[j];
        t += a3 * b3[j];
        crow[j] = t;
      }
    }
    for (; p < k; ++p) {
      const double av = arow[p];
      const double* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k×n] += Aᵀ · G where A is [m×k], G is [m×n]. Blocked over four rows of
// A and G, same accumulation order per C element.
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* __restrict g0 = g + i * n;
    const double* __restrict g1 = g0 + n;
    const double* __restrict g2 = g1 + n;
    const double* __restrict g3 = g2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      double* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        double t = crow[j];
        t += v0 * g0[j];
        t += v1 * g1[j];
        t += v2 * g2[j];
        t += v3 * g3[j];
        crow[j] = t;
      }
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    const double* __restrict grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

inline std::vector<double> transpose_buf(const double* a, std::size_t m,
                                         std::size_t n) {
  std::vector<double> t(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  // d/da = g · bᵀ,  d/db = aᵀ · g
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (double* ga = detail::pgrad(self, 0)) {
      auto bt = detail::transpose_buf(detail::pdata(self, 1).data(), k, n);
      detail::gemm_nn(g, bt.data(), ga, m, n, k);
    }
    if (double* gb = detail::pgrad(self, 1))
      detail::gemm_tn(detail::pdata(self, 0).data(), g, gb, m, k, n);
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto out = detail::transpose_buf(a.data().data(), m, n);
  return make_result({n, m}, std::move(out), {a}, [m, n](Node& self) {
    if (double* ga = detail::pgrad(self, 0)) {
      const double* g = self.grad.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    }
  });
}

// ---------------------------------------------------------------- elementwise

enum class UnaryOp { kSquare, kGelu, kSigmoid, kLogSigmoid, kLog, kAbs, kRelu, kNeg };
enum class BinaryOp { kAdd, kSub, kMul, kDiv, kMin, kMax };

namespace detail {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

inline double unary_f(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::kSquare: return x * x;
    case UnaryOp::kGelu: {
      const double u = kGeluC * (x + kGeluA * x * x * x);
      return 0.5 * x * (1.0 + std::tanh(u));
    }
    case UnaryOp::kSigmoid:
      return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
    case UnaryOp::kLogSigmoid: return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
    case UnaryOp::kLog: return std::log(x);
    case UnaryOp::kAbs: return std::abs(x);
    case UnaryOp::kRelu: return x > 0 ? x : 0.0;
    case UnaryOp::kNeg: return -x;
  }
  return 0.0;
}

// Derivative given input x and output y.
inline double unary_df(UnaryOp op, double x, double y) {
  switch (op) {
    case UnaryOp::kSquare: return 2.0 * x;
    case UnaryOp::kGelu: {
      const double u = kGeluC * (x + kGeluA * x * x * x);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }
    case UnaryOp::kSigmoid: return y * (1.0 - y);
    case UnaryOp::kLogSigmoid: return unary_f(UnaryOp::kSigmoid, -x);
    case UnaryOp::kLog: return 1.0 / x;
    case UnaryOp::kAbs: return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    case UnaryOp::kRelu: return x > 0 ? 1.0 : 0.0;
    case UnaryOp::kNeg: return -1.0;
  }
  return 0.0;
}

inline double binary_f(BinaryOp op, double x, double y) {
  switch (op) {
    case BinaryOp::kAdd: return x + y;
    case BinaryOp::kSub: return x - y;
    case BinaryOp::kMul: return x * y;
    case BinaryOp::kDiv: return x / y;
    case BinaryOp::kMin: return x <= y ? x : y;
    case BinaryOp::kMax: return x >= y ? x : y;
  }
  return 0.0;
}

// Partial derivatives (d/dx, d/dy). Ties in min/max route to x.
inline std::pair<double, double> binary_df(BinaryOp op, double x, double y) {
  switch (op) {
    case BinaryOp::kAdd: return {1.0, 1.0};
    case BinaryOp::kSub: return {1.0, -1.0};
    case BinaryOp::kMul: return {y, x};
    case BinaryOp::kDiv: return {1.0 / y, -x / (y * y)};
    case BinaryOp::kMin: return x <= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
    case BinaryOp::kMax: return x >= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
  }
  return {0.0, 0.0};
}

}  // namespace detail

inline Tensor elementwise(UnaryOp op, const Tensor& x) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::unary_f(op, xd[i]);
  return make_result(x.shape(), std::move(out), {x}, [op](Node& self) {
    if (double* gx = detail::pgrad(self, 0)) {
      const auto& xv = detail::pdata(self, 0);
      for (std::size_t i = 0; i < xv.size(); ++i)
        gx[i] += self.grad[i] * detail::unary_df(op, xv[i], self.data[i]);
    }
  });
}

// y must match x's shape, or hold exactly cols(x) values (broadcast per row).
inline Tensor elementwise(BinaryOp op, const Tensor& x, const Tensor& y) {
  const bool same = x.shape() == y.shape();
  const std::size_t cols = x.cols();
  const bool rowwise = !same && y.numel() == cols &&
                       (y.rank() == 1 || (y.rank() == 2 && y.dim(0) == 1));
  if (!same && !rowwise)
    throw DimensionError("elementwise: cannot broadcast " + shape_str(y.shape()) +
                         " onto " + shape_str(x.shape()));
  const auto xd = x.data();
  const auto yd = y.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = detail::binary_f(op, xd[i], yd[same ? i : i % cols]);
  return make_result(x.shape(), std::move(out), {x, y},
                     [op, same, cols](Node& self) {
    const auto& xv = detail::pdata(self, 0);
    const auto& yv = detail::pdata(self, 1);
    double* gx = detail::pgrad(self, 0);
    double* gy = detail::pgrad(self, 1);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const std::size_t j = same ? i : i % cols;
      auto [dx, dy] = detail::binary_df(op, xv[i], yv[j]);
      if (gx) gx[i] += self.grad[i] * dx;
      if (gy) gy[j] += self.grad[i] * dy;
    }
  });
}

// a·x + b
inline Tensor affine(const Tensor& x, double a, double b = 0.0) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * xd[i] + b;
  return make_result(x.shape(), std::move(out), {x}, [a](Node& self) {
    if (double* gx = detail::pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += a * self.grad[i];
  });
}

// Gradient passes only where lo < x < hi.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xd[i], lo, hi);
  return make_result(x.shape(), std::move(out), {x}, [lo, hi](Node& self) {
    if (double* gx = detail::pgrad(self, 0)) {
      const auto& xv = detail::pdata(self, 0);
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (xv[i] > lo && xv[i] < hi) gx[i] += self.grad[i];
    }
  });
}

inline Tensor add(const Tensor& x, const Tensor& y) { return elementwise(BinaryOp::kAdd, x, y); }
inline Tensor sub(const Tensor& x, const Tensor& y) { return elementwise(BinaryOp::kSub, x, y); }
inline Tensor hadamard(const Tensor& x, const Tensor& y) { return elementwise(BinaryOp::kMul, x, y); }
inline Tensor divide(const Tensor& x, const Tensor& y) { return elementwise(BinaryOp::kDiv, x, y); }
inline Tensor minimum(const Tensor& x, const Tensor& y) { return elementwise(BinaryOp::kMin, x, y); }
inline Tensor maximum(const Tensor& x, const Tensor& y) { return elementwise(BinaryOp::kMax, x, y); }
inline Tensor scale(const Tensor& x, double s) { return affine(x, s, 0.0); }
inline Tensor square(const Tensor& x) { return elementwise(UnaryOp::kSquare, x); }
inline Tensor gelu(const Tensor& x) { return elementwise(UnaryOp::kGelu, x); }
inline Tensor sigmoid(const Tensor& x) { return elementwise(UnaryOp::kSigmoid, x); }
inline Tensor log(const Tensor& x) { return elementwise(UnaryOp::kLog, x); }
inline Tensor log_sigmoid(const Tensor& x) { return elementwise(UnaryOp::kLogSigmoid, x); }
inline Tensor abs(const Tensor& x) { return elementwise(UnaryOp::kAbs, x); }
inline Tensor relu(const Tensor& x) { return elementwise(UnaryOp::kRelu, x); }

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [](Node& self) {
    if (double* gx = detail::pgrad(self, 0)) {
      const double g = self.grad[0];
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  });
}

inline Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// Mean over all elements of (a-b)²; gradient 2(a-b)/N into both sides.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mse: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const auto ad = a.data();
  const auto bd = b.data();
  const double inv_n = 1.0 / static_cast<double>(ad.size());
  double s = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double d = ad[i] - bd[i];
    s += d * d;
  }
  return make_result({1}, {s * inv_n}, {a, b}, [inv_n](Node& self) {
    const auto& av = detail::pdata(self, 0);
    const auto& bv = detail::pdata(self, 1);
    const double g = self.grad[0] * 2.0 * inv_n;
    double* ga = detail::pgrad(self, 0);
    double* gb = detail::pgrad(self, 1);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = g * (av[i] - bv[i]);
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  });
}

// ---------------------------------------------------------------- normalization

// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank2(x, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xd = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xd.data() + i * n;
    double* o = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(row[j] - mx);
      z += o[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  // dx = y ⊙ (g − Σ g⊙y)
  return make_result({m, n}, std::move(out), {x}, [m, n](Node& self) {
    if (double* gx = detail::pgrad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = self.data.data() + i * n;
        const double* g = self.grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[j] * (g[j] - dot);
      }
    }
  });
}

// Per-row normalization with population variance, then gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  detail::require_rank2(x, "layer_norm");
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.numel() != n || bias.numel() != n)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match width " +
                         std::to_string(n));
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xd.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[i * n + j] = h;
      out[i * n + j] = h * gd[j] + bd[j];
    }
  }
  return make_result(
      {m, n}, std::move(out), {x, gain, bias},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = detail::pdata(self, 1);
        double* gx = detail::pgrad(self, 0);
        double* ggain = detail::pgrad(self, 1);
        double* gbias = detail::pgrad(self, 2);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          const double* g = self.grad.data() + i * n;
          const double* h = xhat.data() + i * n;
          if (ggain)
            for (std::size_t j = 0; j < n; ++j) ggain[j] += g[j] * h[j];
          if (gbias)
            for (std::size_t j = 0; j < n; ++j) gbias[j] += g[j];
          if (gx) {
            // dx = inv_std · (g' − mean(g') − x̂ · mean(g' ⊙ x̂)),  g' = g ⊙ gain
            double mg = 0.0, mgh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double gp = g[j] * gv[j];
              mg += gp;
              mgh += gp * h[j];
            }
            mg *= inv_n;
            mgh *= inv_n;
            for (std::size_t j = 0; j < n; ++j)
              gx[i * n + j] += inv_std[i] * (g[j] * gv[j] - mg - h[j] * mgh);
          }
        }
      });
}

// ---------------------------------------------------------------- structure

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    if (double* gx = detail::pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

// Rows of `a` followed by rows of `b`.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "concat_rows");
  detail::require_rank2(b, "concat_rows");
  if (a.dim(1) != b.dim(1))
    throw DimensionError("concat_rows: column mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  const std::size_t split = a.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return make_result({a.dim(0) + b.dim(0), a.dim(1)}, std::move(out), {a, b},
                     [split](Node& self) {
    if (double* ga = detail::pgrad(self, 0))
      for (std::size_t i = 0; i < split; ++i) ga[i] += self.grad[i];
    if (double* gb = detail::pgrad(self, 1))
      for (std::size_t i = split; i < self.grad.size(); ++i)
        gb[i - split] += self.grad[i];
  });
}

// Rows [start, start+count).
inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  detail::require_rank2(x, "slice_rows");
  if (count == 0 || start + count > x.dim(0))
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " +
                         shape_str(x.shape()));
  const std::size_t n = x.dim(1);
  const std::size_t off = start * n;
  std::vector<double> out(x.data().begin() + off,
                          x.data().begin() + off + count * n);
  return make_result({count, n}, std::move(out), {x}, [off](Node& self) {
    if (double* gx = detail::pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[off + i] += self.grad[i];
  });
}

// Inverse of concat_rows: first p rows, remaining rows. Requires 0 < p < rows.
inline std::pair<Tensor, Tensor> split_rows(const Tensor& x, std::size_t p) {
  detail::require_rank2(x, "split_rows");
  if (p == 0 || p >= x.dim(0))
    throw DimensionError("split_rows: split point " + std::to_string(p) +
                         " invalid for " + shape_str(x.shape()));
  return {slice_rows(x, 0, p), slice_rows(x, p, x.dim(0) - p)};
}

// Columns [start, start+count).
inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || start + count > n)
    throw DimensionError("slice_cols: columns out of range for " + shape_str(x.shape()));
  std::vector<double> out(m * count);
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xd.data() + i * n + start, count, out.data() + i * count);
  return make_result({m, count}, std::move(out), {x},
                     [m, n, start, count](Node& self) {
    if (double* gx = detail::pgrad(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j)
          gx[i * n + start + j] += self.grad[i * count + j];
  });
}

// Side-by-side concatenation of equally tall matrices.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != m)
      throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pd.data() + i * widths[k], widths[k], out.data() + i * total + c0);
    c0 += widths[k];
  }
  return make_result({m, total}, std::move(out), parts,
                     [m, total, widths = std::move(widths)](Node& self) {
    std::size_t c = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (double* gp = detail::pgrad(self, k))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            gp[i * widths[k] + j] += self.grad[i * total + c + j];
      c += widths[k];
    }
  });
}

// ---------------------------------------------------------------- resampling

// One bilinear tap along an axis: two source indices and the weight of the second.
struct BilinearTap {
  std::size_t i0, i1;
  double w1;
};

// Half-pixel-centre source coordinate, clamped to [0, in-1].
inline BilinearTap bilinear_tap(std::size_t out_idx, std::size_t in_size,
                                std::size_t out_size) {
  double s = (static_cast<double>(out_idx) + 0.5) * static_cast<double>(in_size) /
                 static_cast<double>(out_size) -
             0.5;
  s = std::clamp(s, 0.0, static_cast<double>(in_size - 1));
  const auto i0 = static_cast<std::size_t>(std::floor(s));
  const std::size_t i1 = std::min(i0 + 1, in_size - 1);
  return {i0, i1, s - static_cast<double>(i0)};
}

// Bilinear resampling of an [h × w × c] grid to [out_h × out_w × c].
inline Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3)
    throw DimensionError("bilinear_resize: expected [h x w x c], got " +
                         shape_str(x.shape()));
  if (out_h == 0 || out_w == 0)
    throw DimensionError("bilinear_resize: output size must be positive");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h == out_h && w == out_w) {
    std::vector<double> copy(x.data().begin(), x.data().end());
    return make_result(x.shape(), std::move(copy), {x}, [](Node& self) {
      if (double* gx = detail::pgrad(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    });
  }
  std::vector<BilinearTap> ty(out_h), tx(out_w);
  for (std::size_t i = 0; i < out_h; ++i) ty[i] = bilinear_tap(i, h, out_h);
  for (std::size_t j = 0; j < out_w; ++j) tx[j] = bilinear_tap(j, w, out_w);
  const auto xd = x.data();
  std::vector<double> out(out_h * out_w * c);
  for (std::size_t i = 0; i < out_h; ++i) {
    const auto& a = ty[i];
    for (std::size_t j = 0; j < out_w; ++j) {
      const auto& b = tx[j];
      const double w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1;
      const double w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
      const double* p00 = xd.data() + (a.i0 * w + b.i0) * c;
      const double* p01 = xd.data() + (a.i0 * w + b.i1) * c;
      const double* p10 = xd.data() + (a.i1 * w + b.i0) * c;
      const double* p11 = xd.data() + (a.i1 * w + b.i1) * c;
      double* o = out.data() + (i * out_w + j) * c;
      for (std::size_t k = 0; k < c; ++k)
        o[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
    }
  }
  // Gradient scatters each output cell back onto its four source corners.
  return make_result({out_h, out_w, c}, std::move(out), {x},
                     [w, c, out_h, out_w, ty = std::move(ty),
                      tx = std::move(tx)](Node& self) {
    double* gx = detail::pgrad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& b = tx[j];
        const double w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1;
        const double w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
        const double* g = self.grad.data() + (i * out_w + j) * c;
        double* p00 = gx + (a.i0 * w + b.i0) * c;
        double* p01 = gx + (a.i0 * w + b.i1) * c;
        double* p10 = gx + (a.i1 * w + b.i0) * c;
        double* p11 = gx + (a.i1 * w + b.i1) * c;
        for (std::size_t k = 0; k < c; ++k) {
          p00[k] += w00 * g[k];
          p01[k] += w01 * g[k];
          p10[k] += w10 * g[k];
          p11[k] += w11 * g[k];
        }
      }
    }
  });
}

}  // namespace loretrack
