#pragma once

// Differentiable operations over hrf::diff::Tensor. Binary elementwise
// ops broadcast with trailing-dimension alignment; extent-1 axes stretch.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "hrf/tensor.hpp"

namespace hrf::diff {

// elementwise, broadcasting
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);

// elementwise, unary
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sqrt(const Tensor& a);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [B,m,k] x [B,k,n] -> [B,m,n]
Tensor bmm(const Tensor& a, const Tensor& b);
// [..., m, n] -> [..., n, m]
Tensor transpose_last2(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor max(const Tensor& a);
Tensor max(const Tensor& a, std::size_t axis);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start,
              std::size_t len);
// out[..., i, ...] = sum_{j < i} in[..., j, ...]
Tensor cumsum_exclusive(const Tensor& a, std::size_t axis);
Tensor detach(const Tensor& a);

// Row selection over the leading axis. gather may repeat rows; scatter
// requires unique targets and fills unused rows with `fill`.
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows);
Tensor scatter_rows(const Tensor& a, const std::vector<std::size_t>& rows,
                    std::size_t n_rows, double fill);

// x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] or undefined
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor avg_pool2(const Tensor& x);

// Bilinear lookup of map [C,H,W] at continuous pixel coords (u,v) with
// texel centers at half-integers. Rows for points outside [0,W]x[0,H]
// are zero when zero_outside; otherwise coords clamp to the border.
Tensor grid_sample_bilinear(const Tensor& map,
                            std::span<const std::array<double, 2>> uv,
                            bool zero_outside);

Tensor softmax_lastaxis(const Tensor& a);
// x: [N,in], w: [in,out], b: [out] or undefined
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace hrf::diff
