#pragma once

#include <vector>

#include "lgd/tensor.hpp"

namespace lgd {

// ---- elementwise / structural -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// x[N,C,H,W] + bias[N,C] broadcast over the spatial dims.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Rows of `table` selected by `ids` -> [ids.size(), D].
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// mean((a - b)^2) over all elements.
Tensor reduce_sq_err(const Tensor& a, const Tensor& b);
/// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1].
Tensor reduce_bce(const Tensor& logits, const Tensor& targets);
/// Mean cross-entropy over rows of logits[R,K] against soft targets[R,K]
/// (each row a distribution).
Tensor reduce_ce(const Tensor& logits, const Tensor& targets);
/// Mean cross-entropy over rows of logits[R,K] against hard class indices.
Tensor reduce_ce(const Tensor& logits, const std::vector<int>& labels);

// ---- network layers -------------------------------------------------------

/// Cross-correlation of input[N,C,H,W] with weight[K,C,kh,kw]; bias[K] may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

/// Affine map over the last dim: input[...,Din] x weight[Dout,Din]^T + bias[Dout].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

enum class NormMode { kTrain, kEval };

struct RunningStats {
  Tensor mean;  // [D]
  Tensor var;   // [D]
  static RunningStats init(int64_t features);
};

/// Batch normalization over rows of x[R,D] with optional affine gamma/beta[D].
/// Train mode normalizes with batch statistics and updates `stats` as
/// stats = (1 - momentum) * stats + momentum * batch (unbiased variance);
/// eval mode uses `stats` only.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  NormMode mode, float momentum = 0.1f, float eps = 1e-5f);

/// Group normalization of x[N,C,H,W] with per-channel affine gamma/beta[C].
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  float eps = 1e-5f);

/// Nearest-neighbour resize; source index floor(i * H / out_h).
Tensor resize_nearest(const Tensor& x, int64_t out_h, int64_t out_w);

/// Non-overlapping k x k average pooling; H and W must be divisible by k.
Tensor avg_pool2d(const Tensor& x, int k);

/// Order-preserving channel stacking of [N,Ci,H,W] tensors.
Tensor concat_channels(const std::vector<Tensor>& xs);

/// Concatenation along the last dim of 2-D tensors [R,Ai] -> [R,sum Ai].
Tensor concat_cols(const std::vector<Tensor>& xs);

/// [N,C,H,W] -> [N*H*W, C], one row per pixel (n-major, then y, then x).
Tensor nchw_to_rows(const Tensor& x);
/// Inverse of nchw_to_rows.
Tensor rows_to_nchw(const Tensor& rows, int64_t n, int64_t h, int64_t w);

/// Selects rows of x[R,D] by index -> [idx.size(), D].
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx);

}  // namespace lgd
