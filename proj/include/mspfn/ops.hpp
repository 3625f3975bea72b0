#pragma once

#include "mspfn/autograd.hpp"
#include "mspfn/tensor.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
  int output_padding = 0;  // transpose only: extra rows/cols at the bottom/right
};

/// Zero-padded cross-correlation. weight is [Cout, Cin, kh, kw] with odd
/// kernel extents; bias is [1, Cout, 1, 1] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1,
              int padding = 0);

/// Adjoint of conv2d with respect to its input. weight is [Cin, Cout, kh, kw].
/// Output extent is (H - 1) * stride - 2 * padding + kh + output_padding.
Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        int stride = 1, int padding = 0, int output_padding = 0);

// Binary ops take identical shapes, or b of shape [1|N, C, 1, 1] broadcast
// across the spatial plane (and batch when its leading extent is 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
/// Clamp to [lo, hi]; gradient passes only where the input lies inside.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Channels [begin, end) of x.
Tensor slice_channels(const Tensor& x, int begin, int end);

Tensor global_avg_pool(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Identity in the forward pass; multiplies the incoming gradient by
/// `factor` in the backward pass.
Tensor grad_scale(const Tensor& x, double factor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// Output extent of a convolution along one axis.
int conv_out_extent(int in, int kernel, int stride, int padding);
int conv_transpose_out_extent(int in, int kernel, int stride, int padding, int output_padding);

}  // namespace MSPFN_ABI
}  // namespace mspfn
