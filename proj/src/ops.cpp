#include "lgd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lgd/errors.hpp"

namespace lgd {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ImplPtr = std::shared_ptr<TensorImpl>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_rank(const char* op, const Tensor& x, int64_t rank) {
  if (x.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
}

bool wants_grad(const ImplPtr& p) { return p && p->requires_grad; }

// dst[m,n] (+)= op(a)[m,k] * op(b)[k,n], all buffers row-major; `ta`/`tb` mean
// the operand is stored transposed. Eigen's packed GEMM sums each output in a
// fixed k order, but vector-shaped and tiny products go to GEMV/coefficient
// kernels whose reduction order depends on operand alignment and row
// position. Those shapes are evaluated here instead: every output accumulates
// its k products in increasing k with fused multiply-adds.
void matmul(float* dst, const float* a, bool ta, const float* b, bool tb, int64_t m, int64_t n, int64_t k,
            bool accumulate) {
  if (m > 1 && n > 1 && m + n + k >= 24) {
    // Remainder rows of a GEMM block take a differently ordered kernel; padding
    // m keeps every output row on the full-block path wherever it sits.
    constexpr int64_t kRowBlock = 8;
    if (m % kRowBlock != 0) {
      const int64_t mp = (m + kRowBlock - 1) / kRowBlock * kRowBlock;
      std::vector<float> ap(static_cast<size_t>(mp * k), 0.0f), dp(static_cast<size_t>(mp * n));
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) ap[i * k + kk] = ta ? a[kk * m + i] : a[i * k + kk];
      matmul(dp.data(), ap.data(), false, b, tb, mp, n, k, false);
      for (int64_t i = 0; i < m * n; ++i) dst[i] = accumulate ? dst[i] + dp[i] : dp[i];
      return;
    }
    MatMap d(dst, m, n);
    const ConstMatMap am(a, ta ? k : m, ta ? m : k), bm(b, tb ? n : k, tb ? k : n);
    if (!accumulate) d.setZero();
    if (!ta && !tb) d.noalias() += am * bm;
    else if (ta && !tb) d.noalias() += am.transpose() * bm;
    else if (!ta && tb) d.noalias() += am * bm.transpose();
    else d.noalias() += am.transpose() * bm.transpose();
    return;
  }
  if (!accumulate) std::fill(dst, dst + m * n, 0.0f);
  for (int64_t i = 0; i < m; ++i) {
    float* d = dst + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const float av = ta ? a[kk * m + i] : a[i * k + kk];
      if (!tb) {
        const float* br = b + kk * n;
        for (int64_t j = 0; j < n; ++j) d[j] = std::fma(av, br[j], d[j]);
      } else {
        for (int64_t j = 0; j < n; ++j) d[j] = std::fma(av, b[j * k + kk], d[j]);
      }
    }
  }
}

template <typename F>
Tensor unary(const char* name, const Tensor& x, F f, std::function<float(float, float)> df) {
  const auto xs = x.data();
  std::vector<float> out(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  auto xi = x.impl();
  return detail::make_result(name, x.shape(), std::move(out), {xi},
                             [xi, df](const TensorImpl& o) {
                               float* g = xi->grad_buffer();
                               for (size_t i = 0; i < o.grad.size(); ++i)
                                 g[i] += o.grad[i] * df(xi->data[i], o.data[i]);
                             });
}

inline float sigmoidf(float v) {
  return v >= 0 ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto as = a.data(), bs = b.data();
  std::vector<float> out(as.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result("add", a.shape(), std::move(out), {ai, bi}, [ai, bi](const TensorImpl& o) {
    for (const auto& in : {ai, bi}) {
      if (!wants_grad(in)) continue;
      float* g = in->grad_buffer();
      for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto as = a.data(), bs = b.data();
  std::vector<float> out(as.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result("sub", a.shape(), std::move(out), {ai, bi}, [ai, bi](const TensorImpl& o) {
    if (wants_grad(ai)) {
      float* g = ai->grad_buffer();
      for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (wants_grad(bi)) {
      float* g = bi->grad_buffer();
      for (size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto as = a.data(), bs = b.data();
  std::vector<float> out(as.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result("mul", a.shape(), std::move(out), {ai, bi}, [ai, bi](const TensorImpl& o) {
    if (wants_grad(ai)) {
      float* g = ai->grad_buffer();
      for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bi->data[i];
    }
    if (wants_grad(bi)) {
      float* g = bi->grad_buffer();
      for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& x, float s) {
  return unary("scale", x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor relu(const Tensor& x) {
  // Subgradient 0 at the kink.
  return unary("relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
               [](float in, float) { return in > 0.0f ? 1.0f : 0.0f; });
}

namespace {

using ArrMap = Eigen::Map<Eigen::ArrayXf>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXf>;

// Vectorized logistic function into `out`. Every element, the tail included,
// goes through the same fixed-size packet path, so a value never depends on
// its position or the buffer's alignment (Eigen's scalar exp differs from
// its packet exp in the last bits).
void logistic(std::span<const float> x, float* out) {
  using Block = Eigen::Array<float, 16, 1>;
  const size_t n = x.size();
  Block in, res;
  for (size_t i = 0; i < n; i += 16) {
    const size_t m = std::min<size_t>(16, n - i);
    in.setZero();
    std::copy_n(x.data() + i, m, in.data());
    res = 1.0f / (1.0f + (-in).exp());
    std::copy_n(res.data(), m, out + i);
  }
}

}  // namespace

Tensor silu(const Tensor& x) {
  const auto xs = x.data();
  const auto n = static_cast<Eigen::Index>(xs.size());
  std::vector<float> out(xs.size());
  logistic(xs, out.data());
  ArrMap(out.data(), n) *= ConstArrMap(xs.data(), n);
  auto xi = x.impl();
  return detail::make_result("silu", x.shape(), std::move(out), {xi}, [xi, n](const TensorImpl& o) {
    std::vector<float> s(static_cast<size_t>(n));
    logistic(xi->data, s.data());
    const auto in = ConstArrMap(xi->data.data(), n);
    const auto sg = ConstArrMap(s.data(), n);
    ArrMap(xi->grad_buffer(), n) += ConstArrMap(o.grad.data(), n) * sg * (1.0f + in * (1.0f - sg));
  });
}

Tensor sigmoid(const Tensor& x) {
  const auto xs = x.data();
  const auto n = static_cast<Eigen::Index>(xs.size());
  std::vector<float> out(xs.size());
  logistic(xs, out.data());
  auto xi = x.impl();
  return detail::make_result("sigmoid", x.shape(), std::move(out), {xi}, [xi, n](const TensorImpl& o) {
    const auto y = ConstArrMap(o.data.data(), n);
    ArrMap(xi->grad_buffer(), n) += ConstArrMap(o.grad.data(), n) * y * (1.0f - y);
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto xi = x.impl();
  std::vector<float> out(x.data().begin(), x.data().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {xi}, [xi](const TensorImpl& o) {
    float* g = xi->grad_buffer();
    for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_channel_bias", x, 4);
  require_rank("add_channel_bias", bias, 2);
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (bias.dim(0) != n || bias.dim(1) != c)
    throw ShapeError("add_channel_bias: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  const auto xs = x.data(), bs = bias.data();
  std::vector<float> out(xs.size());
  for (int64_t nc = 0; nc < n * c; ++nc)
    for (int64_t p = 0; p < hw; ++p) out[nc * hw + p] = xs[nc * hw + p] + bs[nc];
  auto xi = x.impl(), bi = bias.impl();
  return detail::make_result("add_channel_bias", x.shape(), std::move(out), {xi, bi},
                             [xi, bi, n, c, hw](const TensorImpl& o) {
                               if (wants_grad(xi)) {
                                 float* g = xi->grad_buffer();
                                 for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                               }
                               if (wants_grad(bi)) {
                                 float* g = bi->grad_buffer();
                                 for (int64_t nc = 0; nc < n * c; ++nc) {
                                   float acc = 0.0f;
                                   for (int64_t p = 0; p < hw; ++p) acc += o.grad[nc * hw + p];
                                   g[nc] += acc;
                                 }
                               }
                             });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  require_rank("embedding", table, 2);
  const int64_t vocab = table.dim(0), d = table.dim(1);
  std::vector<float> out(ids.size() * static_cast<size_t>(d));
  const auto ts = table.data();
  for (size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= vocab)
      throw RangeError("embedding: id " + std::to_string(ids[r]) + " outside [0," + std::to_string(vocab) + ")");
    std::copy_n(ts.begin() + ids[r] * d, d, out.begin() + static_cast<int64_t>(r) * d);
  }
  auto ti = table.impl();
  return detail::make_result("embedding", Shape{static_cast<int64_t>(ids.size()), d}, std::move(out), {ti},
                             [ti, ids, d](const TensorImpl& o) {
                               float* g = ti->grad_buffer();
                               for (size_t r = 0; r < ids.size(); ++r)
                                 for (int64_t j = 0; j < d; ++j)
                                   g[ids[r] * d + j] += o.grad[static_cast<int64_t>(r) * d + j];
                             });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  auto xi = x.impl();
  return detail::make_result("sum", Shape{}, {static_cast<float>(acc)}, {xi}, [xi](const TensorImpl& o) {
    float* g = xi->grad_buffer();
    for (size_t i = 0; i < xi->data.size(); ++i) g[i] += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const auto n = static_cast<float>(x.numel());
  auto xi = x.impl();
  return detail::make_result("mean", Shape{}, {static_cast<float>(acc / n)}, {xi}, [xi, n](const TensorImpl& o) {
    float* g = xi->grad_buffer();
    for (size_t i = 0; i < xi->data.size(); ++i) g[i] += o.grad[0] / n;
  });
}

Tensor reduce_sq_err(const Tensor& a, const Tensor& b) {
  require_same_shape("reduce_sq_err", a, b);
  if (a.numel() == 0) throw ShapeError("reduce_sq_err of empty tensors");
  const auto as = a.data(), bs = b.data();
  double acc = 0.0;
  for (size_t i = 0; i < as.size(); ++i) {
    const double d = static_cast<double>(as[i]) - bs[i];
    acc += d * d;
  }
  const auto n = static_cast<float>(as.size());
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result("reduce_sq_err", Shape{}, {static_cast<float>(acc / n)}, {ai, bi},
                             [ai, bi, n](const TensorImpl& o) {
                               const float s = 2.0f * o.grad[0] / n;
                               float* ga = wants_grad(ai) ? ai->grad_buffer() : nullptr;
                               float* gb = wants_grad(bi) ? bi->grad_buffer() : nullptr;
                               for (size_t i = 0; i < ai->data.size(); ++i) {
                                 const float d = s * (ai->data[i] - bi->data[i]);
                                 if (ga) ga[i] += d;
                                 if (gb) gb[i] -= d;
                               }
                             });
}

Tensor reduce_bce(const Tensor& logits, const Tensor& targets) {
  require_same_shape("reduce_bce", logits, targets);
  if (logits.numel() == 0) throw ShapeError("reduce_bce of empty tensors");
  const auto xs = logits.data(), ts = targets.data();
  double acc = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (!(ts[i] >= 0.0f && ts[i] <= 1.0f))
      throw DomainError("reduce_bce: target " + std::to_string(ts[i]) + " outside [0,1]");
    const double x = xs[i];
    acc += std::max(x, 0.0) - x * ts[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const auto n = static_cast<float>(xs.size());
  auto xi = logits.impl(), ti = targets.impl();
  return detail::make_result("reduce_bce", Shape{}, {static_cast<float>(acc / n)}, {xi, ti},
                             [xi, ti, n](const TensorImpl& o) {
                               const float s = o.grad[0] / n;
                               float* gx = wants_grad(xi) ? xi->grad_buffer() : nullptr;
                               float* gt = wants_grad(ti) ? ti->grad_buffer() : nullptr;
                               for (size_t i = 0; i < xi->data.size(); ++i) {
                                 if (gx) gx[i] += s * (sigmoidf(xi->data[i]) - ti->data[i]);
                                 if (gt) gt[i] -= s * xi->data[i];
                               }
                             });
}

namespace {

// Row-wise log-softmax of logits[R,K].
std::vector<float> log_softmax_rows(std::span<const float> x, int64_t rows, int64_t k) {
  std::vector<float> out(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = x.data() + r * k;
    const float mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double lz = mx + std::log(z);
    for (int64_t j = 0; j < k; ++j) out[r * k + j] = static_cast<float>(row[j] - lz);
  }
  return out;
}

}  // namespace

Tensor reduce_ce(const Tensor& logits, const Tensor& targets) {
  require_rank("reduce_ce", logits, 2);
  require_same_shape("reduce_ce", logits, targets);
  const int64_t rows = logits.dim(0), k = logits.dim(1);
  if (rows == 0) throw ShapeError("reduce_ce of empty tensors");
  const auto ts = targets.data();
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const float t = ts[r * k + j];
      if (!(t >= 0.0f && t <= 1.0f)) throw DomainError("reduce_ce: target probability outside [0,1]");
      s += t;
    }
    if (std::abs(s - 1.0) > 1e-4) throw DomainError("reduce_ce: target row does not sum to 1");
  }
  auto lsm = log_softmax_rows(logits.data(), rows, k);
  double acc = 0.0;
  for (size_t i = 0; i < lsm.size(); ++i) acc -= static_cast<double>(ts[i]) * lsm[i];
  const auto n = static_cast<float>(rows);
  auto xi = logits.impl(), ti = targets.impl();
  return detail::make_result(
      "reduce_ce", Shape{}, {static_cast<float>(acc / n)}, {xi, ti},
      [xi, ti, lsm = std::move(lsm), rows, k, n](const TensorImpl& o) {
        const float s = o.grad[0] / n;
        float* gx = wants_grad(xi) ? xi->grad_buffer() : nullptr;
        float* gt = wants_grad(ti) ? ti->grad_buffer() : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
          double tsum = 0.0;
          for (int64_t j = 0; j < k; ++j) tsum += ti->data[r * k + j];
          for (int64_t j = 0; j < k; ++j) {
            const int64_t i = r * k + j;
            if (gx) gx[i] += s * static_cast<float>(std::exp(lsm[i]) * tsum - ti->data[i]);
            if (gt) gt[i] -= s * lsm[i];
          }
        }
      });
}

Tensor reduce_ce(const Tensor& logits, const std::vector<int>& labels) {
  require_rank("reduce_ce", logits, 2);
  const int64_t rows = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != rows)
    throw ShapeError("reduce_ce: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  std::vector<float> onehot(static_cast<size_t>(rows * k), 0.0f);
  for (int64_t r = 0; r < rows; ++r) {
    const int l = labels[static_cast<size_t>(r)];
    if (l < 0 || l >= k) throw DomainError("reduce_ce: label " + std::to_string(l) + " is not a valid class");
    onehot[static_cast<size_t>(r * k + l)] = 1.0f;
  }
  return reduce_ce(logits, Tensor(logits.shape(), std::move(onehot)));
}

// ---------------------------------------------------------------------------

namespace {

struct ConvGeom {
  int64_t c, h, w, kh, kw, stride, pad, ho, wo;
  int64_t ckk() const { return c * kh * kw; }
  int64_t hwo() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Column block of one sample: rows (ch, ki, kj), `ld` floats apart; each row holds ho*wo outputs.
void im2col(const float* x, const ConvGeom& g, float* cols, int64_t ld) {
  for (int64_t ch = 0; ch < g.c; ++ch)
    for (int64_t ki = 0; ki < g.kh; ++ki)
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        float* dst = cols + ((ch * g.kh + ki) * g.kw + kj) * ld;
        const float* src = x + ch * g.h * g.w;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ki;
          float* drow = dst + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(drow, drow + g.wo, 0.0f);
            continue;
          }
          const float* srow = src + iy * g.w;
          if (g.stride == 1) {
            const int64_t lo = std::clamp<int64_t>(g.pad - kj, 0, g.wo);
            const int64_t hi = std::clamp<int64_t>(g.w + g.pad - kj, lo, g.wo);
            std::fill(drow, drow + lo, 0.0f);
            std::copy(srow + lo - g.pad + kj, srow + hi - g.pad + kj, drow + lo);
            std::fill(drow + hi, drow + g.wo, 0.0f);
            continue;
          }
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kj;
            drow[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : 0.0f;
          }
        }
      }
}

void col2im_add(const float* cols, const ConvGeom& g, float* x, int64_t ld) {
  for (int64_t ch = 0; ch < g.c; ++ch)
    for (int64_t ki = 0; ki < g.kh; ++ki)
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        const float* src = cols + ((ch * g.kh + ki) * g.kw + kj) * ld;
        float* dst = x + ch * g.h * g.w;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          float* drow = dst + iy * g.w;
          const float* srow = src + oy * g.wo;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
          }
        }
      }
}

// Per-thread scratch reused across calls; contents are always overwritten before use.
std::vector<float>& scratch(int slot, size_t size) {
  thread_local std::vector<float> buf[3];
  if (buf[slot].size() < size) buf[slot].resize(size);
  return buf[slot];
}

// Columns of the whole batch: [ckk, n * hwo], sample b in columns [b*hwo, (b+1)*hwo).
void batch_im2col(const float* x, const ConvGeom& g, int64_t n, float* cols) {
  const int64_t ld = n * g.hwo();
  for (int64_t b = 0; b < n; ++b) {
    const float* xb = x + b * g.c * g.h * g.w;
    if (g.pointwise()) {
      for (int64_t ch = 0; ch < g.c; ++ch) std::copy(xb + ch * g.hwo(), xb + (ch + 1) * g.hwo(), cols + ch * ld + b * g.hwo());
    } else {
      im2col(xb, g, cols + b * g.hwo(), ld);
    }
  }
}

}  // namespace

// Samples per im2col block, sized so one block of columns stays cache-resident.
static int64_t conv_chunk(const ConvGeom& g, int64_t n) {
  constexpr int64_t kBlockFloats = int64_t{1} << 18;
  return std::clamp<int64_t>(kBlockFloats / std::max<int64_t>(1, g.ckk() * g.hwo()), 1, n);
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  require_rank("conv2d", input, 4);
  require_rank("conv2d", weight, 4);
  const int64_t n = input.dim(0), k = weight.dim(0);
  ConvGeom g{input.dim(1), input.dim(2), input.dim(3), weight.dim(2), weight.dim(3), stride, padding, 0, 0};
  if (weight.dim(1) != g.c)
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)) +
                     " input channels, input is " + shape_str(input.shape()));
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv2d: kernel dims must be odd");
  if (padding < 0 || stride < 1) throw ShapeError("conv2d: need padding >= 0 and stride >= 1");
  const int64_t span_h = g.h + 2 * padding - g.kh, span_w = g.w + 2 * padding - g.kw;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0)
    throw ShapeError("conv2d: output size not integral for input " + shape_str(input.shape()) + ", kernel " +
                     shape_str(weight.shape()) + ", stride " + std::to_string(stride) + ", padding " +
                     std::to_string(padding));
  g.ho = span_h / stride + 1;
  g.wo = span_w / stride + 1;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != k))
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(k) + " filters");

  const int64_t hwo = g.hwo(), in_sz = g.c * g.h * g.w;
  std::vector<float> out(static_cast<size_t>(n * k * hwo));
  const float* wm = weight.data().data();
  const float* xs = input.data().data();
  const int64_t chunk = conv_chunk(g, n);
  for (int64_t b0 = 0; b0 < n; b0 += chunk) {
    const int64_t m = std::min(chunk, n - b0), cols_n = m * hwo;
    if (m == 1 && g.pointwise()) {
      matmul(out.data() + b0 * k * hwo, wm, false, xs + b0 * in_sz, false, k, hwo, g.c, false);
      continue;
    }
    auto& cols = scratch(0, static_cast<size_t>(g.ckk() * cols_n));
    batch_im2col(xs + b0 * in_sz, g, m, cols.data());
    if (m == 1) {
      matmul(out.data() + b0 * k * hwo, wm, false, cols.data(), false, k, hwo, g.ckk(), false);
      continue;
    }
    auto& y = scratch(1, static_cast<size_t>(k * cols_n));
    matmul(y.data(), wm, false, cols.data(), false, k, cols_n, g.ckk(), false);
    for (int64_t b = 0; b < m; ++b)
      for (int64_t kk = 0; kk < k; ++kk)
        std::copy(y.data() + kk * cols_n + b * hwo, y.data() + kk * cols_n + (b + 1) * hwo,
                  out.data() + ((b0 + b) * k + kk) * hwo);
  }
  if (bias.defined()) {
    const auto bs = bias.data();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t kk = 0; kk < k; ++kk) {
        float* row = out.data() + (b * k + kk) * hwo;
        for (int64_t i = 0; i < hwo; ++i) row[i] += bs[kk];
      }
  }

  auto xi = input.impl(), wi = weight.impl(), bi = bias.impl();
  return detail::make_result(
      "conv2d", Shape{n, k, g.ho, g.wo}, std::move(out), {xi, wi, bi}, [xi, wi, bi, g, n, k](const TensorImpl& o) {
        const int64_t hwo = g.hwo(), in_sz = g.c * g.h * g.w;
        const bool gx = wants_grad(xi), gw = wants_grad(wi), gb = wants_grad(bi);
        if (gb) {
          float* bgrad = bi->grad_buffer();
          for (int64_t b = 0; b < n; ++b)
            for (int64_t kk = 0; kk < k; ++kk) {
              const float* row = o.grad.data() + (b * k + kk) * hwo;
              float acc = 0.0f;
              for (int64_t i = 0; i < hwo; ++i) acc += row[i];
              bgrad[kk] += acc;
            }
        }
        if (!gx && !gw) return;
        const float* wm = wi->data.data();
        float* wgrad = gw ? wi->grad_buffer() : nullptr;
        float* xgrad = gx ? xi->grad_buffer() : nullptr;
        const int64_t chunk = conv_chunk(g, n);
        for (int64_t b0 = 0; b0 < n; b0 += chunk) {
          const int64_t m = std::min(chunk, n - b0), cols_n = m * hwo;
          // Output grad of the block laid out as [k, m * hwo] to match the columns.
          auto& gy = scratch(1, static_cast<size_t>(k * cols_n));
          for (int64_t b = 0; b < m; ++b)
            for (int64_t kk = 0; kk < k; ++kk)
              std::copy(o.grad.data() + ((b0 + b) * k + kk) * hwo, o.grad.data() + ((b0 + b) * k + kk + 1) * hwo,
                        gy.data() + kk * cols_n + b * hwo);
          auto& cols = scratch(0, static_cast<size_t>(g.ckk() * cols_n));
          if (gw) {
            batch_im2col(xi->data.data() + b0 * in_sz, g, m, cols.data());
            matmul(wgrad, gy.data(), false, cols.data(), true, k, g.ckk(), cols_n, true);
          }
          if (gx) {
            matmul(cols.data(), wm, true, gy.data(), false, g.ckk(), cols_n, k, false);
            for (int64_t b = 0; b < m; ++b) {
              float* xg = xgrad + (b0 + b) * in_sz;
              if (g.pointwise()) {
                for (int64_t ch = 0; ch < g.c; ++ch) {
                  const float* src = cols.data() + ch * cols_n + b * hwo;
                  for (int64_t i = 0; i < hwo; ++i) xg[ch * hwo + i] += src[i];
                }
              } else {
                col2im_add(cols.data() + b * hwo, g, xg, cols_n);
              }
            }
          }
        }
      });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", weight, 2);
  if (input.rank() < 1) throw ShapeError("linear: input must have at least one dim");
  const int64_t dout = weight.dim(0), din = weight.dim(1);
  if (input.dim(-1) != din)
    throw ShapeError("linear: input " + shape_str(input.shape()) + " trailing dim != " + std::to_string(din));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != dout))
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match Dout " + std::to_string(dout));
  const int64_t rows = input.numel() / din;
  Shape oshape = input.shape();
  oshape.back() = dout;
  std::vector<float> out(static_cast<size_t>(rows * dout));
  matmul(out.data(), input.data().data(), false, weight.data().data(), true, rows, dout, din, false);
  if (bias.defined()) {
    const auto bs = bias.data();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t o = 0; o < dout; ++o) out[static_cast<size_t>(r * dout + o)] += bs[static_cast<size_t>(o)];
  }

  auto xi = input.impl(), wi = weight.impl(), bi = bias.impl();
  return detail::make_result("linear", std::move(oshape), std::move(out), {xi, wi, bi},
                             [xi, wi, bi, rows, din, dout](const TensorImpl& o) {
                               const float* gy = o.grad.data();
                               if (wants_grad(xi))
                                 matmul(xi->grad_buffer(), gy, false, wi->data.data(), false, rows, din, dout, true);
                               if (wants_grad(wi))
                                 matmul(wi->grad_buffer(), gy, true, xi->data.data(), false, dout, din, rows, true);
                               if (wants_grad(bi)) {
                                 float* bg = bi->grad_buffer();
                                 for (int64_t r = 0; r < rows; ++r)
                                   for (int64_t c = 0; c < dout; ++c) bg[c] += gy[r * dout + c];
                               }
                             });
}

// ---------------------------------------------------------------------------

RunningStats RunningStats::init(int64_t features) {
  return {Tensor::zeros({features}), Tensor::ones({features})};
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats, NormMode mode,
                  float momentum, float eps) {
  require_rank("batch_norm", x, 2);
  const int64_t rows = x.dim(0), d = x.dim(1);
  if (stats.mean.numel() != d || stats.var.numel() != d)
    throw ShapeError("batch_norm: running stats length " + std::to_string(stats.mean.numel()) +
                     " does not match feature dim " + std::to_string(d));
  if ((gamma.defined() && gamma.numel() != d) || (beta.defined() && beta.numel() != d))
    throw ShapeError("batch_norm: affine parameters do not match feature dim");
  if (rows == 0) throw ShapeError("batch_norm: empty batch");

  const auto xs = x.data();
  std::vector<float> mu(static_cast<size_t>(d)), rstd(static_cast<size_t>(d));
  if (mode == NormMode::kTrain) {
    std::vector<double> s(static_cast<size_t>(d), 0.0), ss(static_cast<size_t>(d), 0.0);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < d; ++j) s[j] += xs[r * d + j];
    for (int64_t j = 0; j < d; ++j) s[j] /= static_cast<double>(rows);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < d; ++j) {
        const double c = xs[r * d + j] - s[j];
        ss[j] += c * c;
      }
    auto rm = stats.mean.mutable_data(), rv = stats.var.mutable_data();
    for (int64_t j = 0; j < d; ++j) {
      const double var = ss[j] / static_cast<double>(rows);
      const double unbiased = rows > 1 ? ss[j] / static_cast<double>(rows - 1) : var;
      mu[j] = static_cast<float>(s[j]);
      rstd[j] = static_cast<float>(1.0 / std::sqrt(var + eps));
      rm[j] = (1.0f - momentum) * rm[j] + momentum * static_cast<float>(s[j]);
      rv[j] = (1.0f - momentum) * rv[j] + momentum * static_cast<float>(unbiased);
    }
  } else {
    const auto rm = stats.mean.data(), rv = stats.var.data();
    for (int64_t j = 0; j < d; ++j) {
      if (!(rv[j] >= 0.0f)) throw NumericError("batch_norm: running variance is negative");
      mu[j] = rm[j];
      rstd[j] = 1.0f / std::sqrt(rv[j] + eps);
    }
  }

  std::vector<float> out(xs.size());
  const float* gs = gamma.defined() ? gamma.data().data() : nullptr;
  const float* bs = beta.defined() ? beta.data().data() : nullptr;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) {
      float v = (xs[r * d + j] - mu[j]) * rstd[j];
      if (gs) v *= gs[j];
      if (bs) v += bs[j];
      out[r * d + j] = v;
    }

  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  const bool train = mode == NormMode::kTrain;
  return detail::make_result(
      "batch_norm", x.shape(), std::move(out), {xi, gi, bi},
      [xi, gi, bi, mu = std::move(mu), rstd = std::move(rstd), rows, d, train](const TensorImpl& o) {
        const float* gs = gi ? gi->data.data() : nullptr;
        std::vector<double> sum_dy(static_cast<size_t>(d), 0.0), sum_dy_xhat(static_cast<size_t>(d), 0.0);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) {
            const float dy = o.grad[r * d + j];
            const float xhat = (xi->data[r * d + j] - mu[j]) * rstd[j];
            sum_dy[j] += dy;
            sum_dy_xhat[j] += static_cast<double>(dy) * xhat;
          }
        if (wants_grad(gi)) {
          float* g = gi->grad_buffer();
          for (int64_t j = 0; j < d; ++j) g[j] += static_cast<float>(sum_dy_xhat[j]);
        }
        if (wants_grad(bi)) {
          float* g = bi->grad_buffer();
          for (int64_t j = 0; j < d; ++j) g[j] += static_cast<float>(sum_dy[j]);
        }
        if (!wants_grad(xi)) return;
        float* gx = xi->grad_buffer();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) {
            const float gam = gs ? gs[j] : 1.0f;
            const float dy = o.grad[r * d + j];
            if (!train) {
              gx[r * d + j] += dy * gam * rstd[j];
              continue;
            }
            const float xhat = (xi->data[r * d + j] - mu[j]) * rstd[j];
            const double m_dy = sum_dy[j] / static_cast<double>(rows);
            const double m_dyx = sum_dy_xhat[j] / static_cast<double>(rows);
            gx[r * d + j] += static_cast<float>(gam * rstd[j] * (dy - m_dy - xhat * m_dyx));
          }
      });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, float eps) {
  require_rank("group_norm", x, 4);
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups < 1 || c % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) +
                     " groups");
  if ((gamma.defined() && gamma.numel() != c) || (beta.defined() && beta.numel() != c))
    throw ShapeError("group_norm: affine parameters do not match channel count");
  const int64_t cpg = c / groups, m = cpg * hw;
  const auto xs = x.data();
  std::vector<float> mu(static_cast<size_t>(n * groups)), rstd(static_cast<size_t>(n * groups));
  for (int64_t ng = 0; ng < n * groups; ++ng) {
    const float* p = xs.data() + ng * m;
    double s = 0.0;
    for (int64_t i = 0; i < m; ++i) s += p[i];
    const double mean = s / static_cast<double>(m);
    double ss = 0.0;
    for (int64_t i = 0; i < m; ++i) ss += (p[i] - mean) * (p[i] - mean);
    mu[ng] = static_cast<float>(mean);
    rstd[ng] = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(m) + eps));
  }
  std::vector<float> out(xs.size());
  const float* gs = gamma.defined() ? gamma.data().data() : nullptr;
  const float* bs = beta.defined() ? beta.data().data() : nullptr;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const int64_t ng = b * groups + ch / cpg;
      const float a = rstd[ng] * (gs ? gs[ch] : 1.0f);
      const float off = (bs ? bs[ch] : 0.0f) - mu[ng] * a;
      const float* src = xs.data() + (b * c + ch) * hw;
      float* dst = out.data() + (b * c + ch) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * a + off;
    }

  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return detail::make_result(
      "group_norm", x.shape(), std::move(out), {xi, gi, bi},
      [xi, gi, bi, mu = std::move(mu), rstd = std::move(rstd), n, c, hw, groups, cpg, m](const TensorImpl& o) {
        const float* gs = gi ? gi->data.data() : nullptr;
        float* ggam = wants_grad(gi) ? gi->grad_buffer() : nullptr;
        float* gbet = wants_grad(bi) ? bi->grad_buffer() : nullptr;
        float* gx = wants_grad(xi) ? xi->grad_buffer() : nullptr;
        for (int64_t b = 0; b < n; ++b)
          for (int64_t gidx = 0; gidx < groups; ++gidx) {
            const int64_t ng = b * groups + gidx;
            double s_dxhat = 0.0, s_dxhat_xhat = 0.0;
            for (int64_t cc = 0; cc < cpg; ++cc) {
              const int64_t ch = gidx * cpg + cc;
              const float gam = gs ? gs[ch] : 1.0f;
              const float* xp = xi->data.data() + (b * c + ch) * hw;
              const float* gp = o.grad.data() + (b * c + ch) * hw;
              double cg = 0.0, cb = 0.0;
              for (int64_t i = 0; i < hw; ++i) {
                const float xhat = (xp[i] - mu[ng]) * rstd[ng];
                cg += static_cast<double>(gp[i]) * xhat;
                cb += gp[i];
                s_dxhat += static_cast<double>(gp[i]) * gam;
                s_dxhat_xhat += static_cast<double>(gp[i]) * gam * xhat;
              }
              if (ggam) ggam[ch] += static_cast<float>(cg);
              if (gbet) gbet[ch] += static_cast<float>(cb);
            }
            if (!gx) continue;
            const double md = s_dxhat / static_cast<double>(m), mdx = s_dxhat_xhat / static_cast<double>(m);
            for (int64_t cc = 0; cc < cpg; ++cc) {
              const int64_t ch = gidx * cpg + cc;
              const float gam = gs ? gs[ch] : 1.0f;
              const float* xp = xi->data.data() + (b * c + ch) * hw;
              const float* gp = o.grad.data() + (b * c + ch) * hw;
              float* dst = gx + (b * c + ch) * hw;
              for (int64_t i = 0; i < hw; ++i) {
                const float xhat = (xp[i] - mu[ng]) * rstd[ng];
                dst[i] += static_cast<float>(rstd[ng] * (gp[i] * gam - md - xhat * mdx));
              }
            }
          }
      });
}

Tensor resize_nearest(const Tensor& x, int64_t out_h, int64_t out_w) {
  require_rank("resize_nearest", x, 4);
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_nearest: output dims must be >= 1");
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<int64_t> src(static_cast<size_t>(out_h * out_w));
  for (int64_t i = 0; i < out_h; ++i)
    for (int64_t j = 0; j < out_w; ++j) src[i * out_w + j] = (i * h / out_h) * w + (j * w / out_w);
  const auto xs = x.data();
  std::vector<float> out(static_cast<size_t>(nc * out_h * out_w));
  for (int64_t p = 0; p < nc; ++p)
    for (size_t q = 0; q < src.size(); ++q) out[p * src.size() + q] = xs[p * h * w + src[q]];
  auto xi = x.impl();
  return detail::make_result("resize_nearest", Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {xi},
                             [xi, src = std::move(src), nc, h, w](const TensorImpl& o) {
                               float* g = xi->grad_buffer();
                               for (int64_t p = 0; p < nc; ++p)
                                 for (size_t q = 0; q < src.size(); ++q)
                                   g[p * h * w + src[q]] += o.grad[p * src.size() + q];
                             });
}

Tensor avg_pool2d(const Tensor& x, int k) {
  require_rank("avg_pool2d", x, 4);
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k < 1 || h % k != 0 || w % k != 0)
    throw ShapeError("avg_pool2d: " + shape_str(x.shape()) + " not divisible by window " + std::to_string(k));
  const int64_t ho = h / k, wo = w / k;
  const float inv = 1.0f / static_cast<float>(k * k);
  const auto xs = x.data();
  std::vector<float> out(static_cast<size_t>(nc * ho * wo), 0.0f);
  for (int64_t p = 0; p < nc; ++p)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) out[(p * ho + i / k) * wo + j / k] += xs[(p * h + i) * w + j];
  for (float& v : out) v *= inv;
  auto xi = x.impl();
  return detail::make_result("avg_pool2d", Shape{x.dim(0), x.dim(1), ho, wo}, std::move(out), {xi},
                             [xi, nc, h, w, ho, wo, k, inv](const TensorImpl& o) {
                               float* g = xi->grad_buffer();
                               for (int64_t p = 0; p < nc; ++p)
                                 for (int64_t i = 0; i < h; ++i)
                                   for (int64_t j = 0; j < w; ++j)
                                     g[(p * h + i) * w + j] += o.grad[(p * ho + i / k) * wo + j / k] * inv;
                             });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  for (const auto& t : xs) require_rank("concat_channels", t, 4);
  const int64_t n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int64_t ctot = 0;
  for (const auto& t : xs) {
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
      throw ShapeError("concat_channels: " + shape_str(t.shape()) + " incompatible with " + shape_str(xs[0].shape()));
    ctot += t.dim(1);
  }
  const int64_t hw = h * w;
  std::vector<float> out(static_cast<size_t>(n * ctot * hw));
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const auto& t : xs) {
    const int64_t ci = t.dim(1);
    const auto ts = t.data();
    for (int64_t b = 0; b < n; ++b)
      std::copy_n(ts.begin() + b * ci * hw, ci * hw, out.begin() + (b * ctot + off) * hw);
    inputs.push_back(t.impl());
    offsets.push_back(off);
    off += ci;
  }
  auto ins = inputs;
  return detail::make_result("concat_channels", Shape{n, ctot, h, w}, std::move(out), std::move(inputs),
                             [ins, offsets, n, ctot, hw](const TensorImpl& o) {
                               for (size_t k = 0; k < ins.size(); ++k) {
                                 if (!wants_grad(ins[k])) continue;
                                 const int64_t ci = ins[k]->shape[1];
                                 float* g = ins[k]->grad_buffer();
                                 for (int64_t b = 0; b < n; ++b)
                                   for (int64_t i = 0; i < ci * hw; ++i)
                                     g[b * ci * hw + i] += o.grad[(b * ctot + offsets[k]) * hw + i];
                               }
                             });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: empty input list");
  for (const auto& t : xs) require_rank("concat_cols", t, 2);
  const int64_t rows = xs[0].dim(0);
  int64_t dtot = 0;
  for (const auto& t : xs) {
    if (t.dim(0) != rows) throw ShapeError("concat_cols: row count mismatch");
    dtot += t.dim(1);
  }
  std::vector<float> out(static_cast<size_t>(rows * dtot));
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const auto& t : xs) {
    const int64_t d = t.dim(1);
    const auto ts = t.data();
    for (int64_t r = 0; r < rows; ++r) std::copy_n(ts.begin() + r * d, d, out.begin() + r * dtot + off);
    inputs.push_back(t.impl());
    offsets.push_back(off);
    off += d;
  }
  auto ins = inputs;
  return detail::make_result("concat_cols", Shape{rows, dtot}, std::move(out), std::move(inputs),
                             [ins, offsets, rows, dtot](const TensorImpl& o) {
                               for (size_t k = 0; k < ins.size(); ++k) {
                                 if (!wants_grad(ins[k])) continue;
                                 const int64_t d = ins[k]->shape[1];
                                 float* g = ins[k]->grad_buffer();
                                 for (int64_t r = 0; r < rows; ++r)
                                   for (int64_t j = 0; j < d; ++j) g[r * d + j] += o.grad[r * dtot + offsets[k] + j];
                               }
                             });
}

Tensor nchw_to_rows(const Tensor& x) {
  require_rank("nchw_to_rows", x, 4);
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto xs = x.data();
  std::vector<float> out(xs.size());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t p = 0; p < hw; ++p) out[(b * hw + p) * c + ch] = xs[(b * c + ch) * hw + p];
  auto xi = x.impl();
  return detail::make_result("nchw_to_rows", Shape{n * hw, c}, std::move(out), {xi}, [xi, n, c, hw](const TensorImpl& o) {
    float* g = xi->grad_buffer();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < hw; ++p) g[(b * c + ch) * hw + p] += o.grad[(b * hw + p) * c + ch];
  });
}

Tensor rows_to_nchw(const Tensor& rows, int64_t n, int64_t h, int64_t w) {
  require_rank("rows_to_nchw", rows, 2);
  const int64_t hw = h * w, c = rows.dim(1);
  if (rows.dim(0) != n * hw)
    throw ShapeError("rows_to_nchw: " + shape_str(rows.shape()) + " cannot form " + std::to_string(n) + "x" +
                     std::to_string(h) + "x" + std::to_string(w));
  const auto rs = rows.data();
  std::vector<float> out(rs.size());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t p = 0; p < hw; ++p) out[(b * c + ch) * hw + p] = rs[(b * hw + p) * c + ch];
  auto ri = rows.impl();
  return detail::make_result("rows_to_nchw", Shape{n, c, h, w}, std::move(out), {ri}, [ri, n, c, hw](const TensorImpl& o) {
    float* g = ri->grad_buffer();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < hw; ++p) g[(b * hw + p) * c + ch] += o.grad[(b * c + ch) * hw + p];
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx) {
  require_rank("gather_rows", x, 2);
  const int64_t rows = x.dim(0), d = x.dim(1);
  const auto xs = x.data();
  std::vector<float> out(idx.size() * static_cast<size_t>(d));
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= rows) throw RangeError("gather_rows: row index out of range");
    std::copy_n(xs.begin() + idx[r] * d, d, out.begin() + static_cast<int64_t>(r) * d);
  }
  auto xi = x.impl();
  return detail::make_result("gather_rows", Shape{static_cast<int64_t>(idx.size()), d}, std::move(out), {xi},
                             [xi, idx, d](const TensorImpl& o) {
                               float* g = xi->grad_buffer();
                               for (size_t r = 0; r < idx.size(); ++r)
                                 for (int64_t j = 0; j < d; ++j)
                                   g[idx[r] * d + j] += o.grad[static_cast<int64_t>(r) * d + j];
                             });
}

}  // namespace lgd
