// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. All inputs of one call must share a
// dtype. Image-like tensors are laid out [C x H x W]; token matrices are
// [tokens x features] (row-vector convention).

#pragma once

#include <cstddef>
#include <vector>

#include "gfit/tensor.hpp"

namespace gfit::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m x k] . [n x k]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// x[m x n] + bias[n] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
/// x[C x ...] + bias[C] broadcast over the trailing extents.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Softmax over the last extent, stabilized by per-slice max subtraction.
Tensor softmax_lastdim(const Tensor& x);
Tensor silu(const Tensor& x);

/// Group normalization of x[C x ...] with optional affine gamma/beta[C]
/// (pass undefined tensors to skip). `groups` must divide C.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t groups,
                  double eps = 1e-5);

/// Cross-correlation of x[Cin x H x W] with kernel[Cout x Cin x k x k].
/// `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

Tensor reshape(const Tensor& x, Shape shape);
/// 2-D transpose (copies).
Tensor transpose(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor upsample_nearest2x(const Tensor& x);
/// [C x H x W] -> [C*p*p x H/p x W/p]; output channel = c*p*p + dy*p + dx.
Tensor space_to_depth(const Tensor& x, std::size_t p);
Tensor depth_to_space(const Tensor& x, std::size_t p);

/// [C x H x W] -> [H*W x C]
Tensor to_tokens(const Tensor& x);
/// [H*W x C] -> [C x H x W]
Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

/// Multi-head scaled dot-product attention over row-token matrices:
/// q[n x d], k[m x d], v[m x d] -> [n x d]. Head h uses columns
/// [h*d/heads, (h+1)*d/heads) and scale 1/sqrt(d/heads); head outputs are
/// concatenated along features.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

}  // namespace gfit::ops
