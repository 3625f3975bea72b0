#include "mspfn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

namespace mspfn {
inline namespace MSPFN_ABI {

namespace {

using MatR = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatR>;
using MutMap = Eigen::Map<MatR>;

// Layout of a patch matrix: rows index (channel, ky, kx), columns index the
// positions of the sliding-window grid.
struct PatchLayout {
  int channels;
  int img_h, img_w;    // image extents
  int kh, kw;
  int stride, pad;
  int grid_h, grid_w;  // window grid extents
  [[nodiscard]] std::size_t rows() const {
    return static_cast<std::size_t>(channels) * kh * kw;
  }
  [[nodiscard]] std::size_t cols() const {
    return static_cast<std::size_t>(grid_h) * grid_w;
  }
};

// Range of grid columns [lo, hi) whose tap at offset k lands inside [0, extent).
void valid_range(int grid, int extent, int k, int stride, int pad, int& lo, int& hi) {
  // need 0 <= g * stride - pad + k < extent
  const int a = pad - k;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const int b = extent + pad - k;  // g * stride < b
  hi = b <= 0 ? 0 : std::min(grid, (b + stride - 1) / stride);
  if (hi < lo) hi = lo;
}

void im2col(const real* img, const PatchLayout& L, real* col) {
  const std::size_t P = L.cols();
  for (int c = 0; c < L.channels; ++c) {
    const real* plane = img + static_cast<std::size_t>(c) * L.img_h * L.img_w;
    for (int ky = 0; ky < L.kh; ++ky) {
      for (int kx = 0; kx < L.kw; ++kx) {
        real* row = col + ((static_cast<std::size_t>(c) * L.kh + ky) * L.kw + kx) * P;
        int xlo = 0, xhi = 0;
        valid_range(L.grid_w, L.img_w, kx, L.stride, L.pad, xlo, xhi);
        for (int gy = 0; gy < L.grid_h; ++gy) {
          real* dst = row + static_cast<std::size_t>(gy) * L.grid_w;
          const int iy = gy * L.stride - L.pad + ky;
          if (iy < 0 || iy >= L.img_h) {
            std::fill(dst, dst + L.grid_w, real{0});
            continue;
          }
          const real* src = plane + static_cast<std::size_t>(iy) * L.img_w;
          // Border runs are a few samples wide; plain loops beat memset calls.
          for (int gx = 0; gx < xlo; ++gx) dst[gx] = 0;
          if (L.stride == 1) {
            const int off = kx - L.pad;
            std::copy(src + xlo + off, src + xhi + off, dst + xlo);
          } else {
            for (int gx = xlo; gx < xhi; ++gx) dst[gx] = src[gx * L.stride - L.pad + kx];
          }
          for (int gx = xhi; gx < L.grid_w; ++gx) dst[gx] = 0;
        }
      }
    }
  }
}

// Scatter-add of a patch matrix back onto the image (adjoint of im2col).
void col2im(const real* col, const PatchLayout& L, real* img) {
  const std::size_t P = L.cols();
  for (int c = 0; c < L.channels; ++c) {
    real* plane = img + static_cast<std::size_t>(c) * L.img_h * L.img_w;
    for (int ky = 0; ky < L.kh; ++ky) {
      for (int kx = 0; kx < L.kw; ++kx) {
        const real* row = col + ((static_cast<std::size_t>(c) * L.kh + ky) * L.kw + kx) * P;
        int xlo = 0, xhi = 0;
        valid_range(L.grid_w, L.img_w, kx, L.stride, L.pad, xlo, xhi);
        for (int gy = 0; gy < L.grid_h; ++gy) {
          const int iy = gy * L.stride - L.pad + ky;
          if (iy < 0 || iy >= L.img_h) continue;
          const real* src = row + static_cast<std::size_t>(gy) * L.grid_w;
          real* dst = plane + static_cast<std::size_t>(iy) * L.img_w;
          for (int gx = xlo; gx < xhi; ++gx) dst[gx * L.stride - L.pad + kx] += src[gx];
        }
      }
    }
  }
}

bool is_pointwise(const PatchLayout& L) {
  return L.kh == 1 && L.kw == 1 && L.stride == 1 && L.pad == 0;
}

void check_bias(const Tensor& bias, int channels, const char* op) {
  if (!bias.defined()) return;
  const Shape expected{1, channels, 1, 1};
  if (!(bias.shape() == expected)) {
    throw ShapeError(std::string(op) + ": bias shape " + bias.shape().str() + " expected " +
                     expected.str());
  }
}

void add_bias(Tensor& out, const Tensor& bias) {
  if (!bias.defined()) return;
  const Shape& s = out.shape();
  const std::size_t plane = s.plane();
  real* o = out.mutable_ptr();
  const real* b = bias.ptr();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      real* p = o + (static_cast<std::size_t>(n) * s.c + c) * plane;
      const real v = b[c];
      for (std::size_t i = 0; i < plane; ++i) p[i] += v;
    }
}

std::vector<real> bias_grad(const Tensor& dout) {
  const Shape& s = dout.shape();
  const std::size_t plane = s.plane();
  std::vector<accum> acc(static_cast<std::size_t>(s.c), 0.0);
  const real* g = dout.grad().data();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const real* p = g + (static_cast<std::size_t>(n) * s.c + c) * plane;
      accum a = 0.0;
      for (std::size_t i = 0; i < plane; ++i) a += p[i];
      acc[static_cast<std::size_t>(c)] += a;
    }
  return {acc.begin(), acc.end()};
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

int conv_transpose_out_extent(int in, int kernel, int stride, int padding, int output_padding) {
  return (in - 1) * stride - 2 * padding + kernel + output_padding;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input " + xs.str() + " has " + std::to_string(xs.c) +
                     " channels but weight " + ws.str() + " expects " + std::to_string(ws.c));
  }
  if (ws.h % 2 == 0 || ws.w % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, weight " + ws.str());
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  if (xs.h + 2 * padding < ws.h || xs.w + 2 * padding < ws.w) {
    throw ShapeError("conv2d: input " + xs.str() + " smaller than kernel " + ws.str());
  }
  check_bias(bias, ws.n, "conv2d");

  const PatchLayout L{xs.c, xs.h, xs.w, ws.h, ws.w, stride, padding,
                      conv_out_extent(xs.h, ws.h, stride, padding),
                      conv_out_extent(xs.w, ws.w, stride, padding)};
  const int cout = ws.n;
  const auto K = static_cast<Eigen::Index>(L.rows());
  const auto P = static_cast<Eigen::Index>(L.cols());
  Tensor out({xs.n, cout, L.grid_h, L.grid_w});
  {
    std::vector<real> col(is_pointwise(L) ? 0 : L.rows() * L.cols());
    const std::size_t in_stride = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
    const std::size_t out_stride = static_cast<std::size_t>(cout) * L.cols();
    ConstMap wm(weight.ptr(), cout, K);
    for (int n = 0; n < xs.n; ++n) {
      const real* src = input.ptr() + n * in_stride;
      if (!col.empty()) {
        im2col(src, L, col.data());
        src = col.data();
      }
      MutMap(out.mutable_ptr() + n * out_stride, cout, P).noalias() = wm * ConstMap(src, K, P);
    }
  }
  add_bias(out, bias);

  return record(OpKind::Conv2d, {input, weight, bias}, out, [L, cout, K, P](TapeNode& node) {
    Tensor& x = node.inputs[0];
    Tensor& w = node.inputs[1];
    Tensor& b = node.inputs[2];
    const Tensor& y = node.output;
    const Shape& xs = x.shape();
    const std::size_t in_stride = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
    const std::size_t out_stride = static_cast<std::size_t>(cout) * L.cols();
    const bool pointwise = is_pointwise(L);
    std::vector<real> col(pointwise ? 0 : L.rows() * L.cols());
    ConstMap wm(w.ptr(), cout, K);

    if (w.requires_grad()) {
      MatR dw = MatR::Zero(cout, K);
      for (int n = 0; n < xs.n; ++n) {
        const real* src = x.ptr() + n * in_stride;
        if (!pointwise) {
          im2col(src, L, col.data());
          src = col.data();
        }
        dw.noalias() += ConstMap(y.grad().data() + n * out_stride, cout, P) *
                        ConstMap(src, K, P).transpose();
      }
      accumulate_grad(w, {dw.data(), static_cast<std::size_t>(dw.size())});
    }
    if (b.defined() && b.requires_grad()) {
      const auto db = bias_grad(y);
      accumulate_grad(b, db);
    }
    if (x.requires_grad()) {
      auto gx = x.grad_buffer();
      for (int n = 0; n < xs.n; ++n) {
        ConstMap gy(y.grad().data() + n * out_stride, cout, P);
        if (pointwise) {
          MutMap(gx.data() + n * in_stride, K, P).noalias() += wm.transpose() * gy;
        } else {
          MutMap(col.data(), K, P).noalias() = wm.transpose() * gy;
          col2im(col.data(), L, gx.data() + n * in_stride);
        }
      }
    }
  });
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        int stride, int padding, int output_padding) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws.n != xs.c) {
    throw ShapeError("conv2d_transpose: input " + xs.str() + " has " + std::to_string(xs.c) +
                     " channels but weight " + ws.str() + " expects " + std::to_string(ws.n));
  }
  if (stride < 1 || padding < 0 || output_padding < 0 || output_padding >= stride) {
    throw ShapeError("conv2d_transpose: invalid stride/padding/output_padding");
  }
  const int cout = ws.c;
  check_bias(bias, cout, "conv2d_transpose");
  const int oh = conv_transpose_out_extent(xs.h, ws.h, stride, padding, output_padding);
  const int ow = conv_transpose_out_extent(xs.w, ws.w, stride, padding, output_padding);
  if (oh <= 0 || ow <= 0) {
    throw ShapeError("conv2d_transpose: empty output for input " + xs.str() + " and weight " +
                     ws.str());
  }
  // The output image plays the role of the convolution input; the input is
  // the window grid.
  const PatchLayout L{cout, oh, ow, ws.h, ws.w, stride, padding, xs.h, xs.w};
  const int cin = xs.c;
  const auto K = static_cast<Eigen::Index>(L.rows());
  const auto P = static_cast<Eigen::Index>(L.cols());
  Tensor out({xs.n, cout, oh, ow});
  {
    const std::size_t in_stride = static_cast<std::size_t>(cin) * L.cols();
    const std::size_t out_stride = static_cast<std::size_t>(cout) * oh * ow;
    ConstMap wm(weight.ptr(), cin, K);
    std::vector<real> col(L.rows() * L.cols());
    for (int n = 0; n < xs.n; ++n) {
      MutMap(col.data(), K, P).noalias() =
          wm.transpose() * ConstMap(input.ptr() + n * in_stride, cin, P);
      col2im(col.data(), L, out.mutable_ptr() + n * out_stride);
    }
  }
  add_bias(out, bias);

  return record(OpKind::Conv2dTranspose, {input, weight, bias}, out,
                [L, cin, K, P](TapeNode& node) {
                  Tensor& x = node.inputs[0];
                  Tensor& w = node.inputs[1];
                  Tensor& b = node.inputs[2];
                  const Tensor& y = node.output;
                  const Shape& xs = x.shape();
                  const std::size_t in_stride = static_cast<std::size_t>(cin) * L.cols();
                  const std::size_t out_stride =
                      static_cast<std::size_t>(L.channels) * L.img_h * L.img_w;
                  std::vector<real> col(L.rows() * L.cols());
                  ConstMap wm(w.ptr(), cin, K);
                  MatR dw;
                  if (w.requires_grad()) dw = MatR::Zero(cin, K);
                  for (int n = 0; n < xs.n; ++n) {
                    im2col(y.grad().data() + n * out_stride, L, col.data());
                    ConstMap dcol(col.data(), K, P);
                    if (w.requires_grad()) {
                      dw.noalias() += ConstMap(x.ptr() + n * in_stride, cin, P) * dcol.transpose();
                    }
                    if (x.requires_grad()) {
                      auto gx = x.grad_buffer();
                      MutMap(gx.data() + n * in_stride, cin, P).noalias() += wm * dcol;
                    }
                  }
                  if (w.requires_grad()) {
                    accumulate_grad(w, {dw.data(), static_cast<std::size_t>(dw.size())});
                  }
                  if (b.defined() && b.requires_grad()) accumulate_grad(b, bias_grad(y));
                });
}

namespace {

enum class Bcast { Same, PerChannel, PerSampleChannel };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as == bs) return Bcast::Same;
  if (bs.c == as.c && bs.h == 1 && bs.w == 1) {
    if (bs.n == 1) return Bcast::PerChannel;
    if (bs.n == as.n) return Bcast::PerSampleChannel;
  }
  throw ShapeError(std::string(op) + ": shapes " + as.str() + " and " + bs.str() +
                   " are not broadcastable");
}

// Index into b for element (n, c) under the broadcast rule.
inline std::size_t bcast_index(Bcast k, int n, int c, int channels) {
  return k == Bcast::PerChannel ? static_cast<std::size_t>(c)
                                : static_cast<std::size_t>(n) * channels + c;
}

// Reduces a full-shape gradient to b's broadcast shape.
std::vector<real> reduce_to(Bcast k, const Shape& full, const Shape& bshape,
                            std::span<const real> g) {
  std::vector<accum> acc(bshape.numel(), 0.0);
  const std::size_t plane = full.plane();
  for (int n = 0; n < full.n; ++n)
    for (int c = 0; c < full.c; ++c) {
      const real* p = g.data() + (static_cast<std::size_t>(n) * full.c + c) * plane;
      accum a = 0.0;
      for (std::size_t i = 0; i < plane; ++i) a += p[i];
      acc[bcast_index(k, n, c, full.c)] += a;
    }
  return {acc.begin(), acc.end()};
}

template <typename F>
Tensor binary_forward(const Tensor& a, const Tensor& b, Bcast k, F f) {
  Tensor out(a.shape());
  const real* pa = a.ptr();
  const real* pb = b.ptr();
  real* po = out.mutable_ptr();
  if (k == Bcast::Same) {
    for (std::size_t i = 0; i < a.numel(); ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  const Shape& s = a.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      const real v = pb[bcast_index(k, n, c, s.c)];
      for (std::size_t i = 0; i < plane; ++i) po[base + i] = f(pa[base + i], v);
    }
  return out;
}

template <typename F>
Tensor unary_forward(const Tensor& x, F f) {
  Tensor out(x.shape());
  const real* px = x.ptr();
  real* po = out.mutable_ptr();
  for (std::size_t i = 0; i < x.numel(); ++i) po[i] = f(px[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Bcast k = broadcast_kind(a, b, "add");
  Tensor out = binary_forward(a, b, k, [](real x, real y) { return x + y; });
  return record(OpKind::Add, {a, b}, out, [k](TapeNode& node) {
    const auto g = node.output.grad();
    accumulate_grad(node.inputs[0], g);
    Tensor& b = node.inputs[1];
    if (!b.requires_grad()) return;
    if (k == Bcast::Same) {
      accumulate_grad(b, g);
    } else {
      accumulate_grad(b, reduce_to(k, node.output.shape(), b.shape(), g));
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Bcast k = broadcast_kind(a, b, "sub");
  Tensor out = binary_forward(a, b, k, [](real x, real y) { return x - y; });
  return record(OpKind::Sub, {a, b}, out, [k](TapeNode& node) {
    const auto g = node.output.grad();
    accumulate_grad(node.inputs[0], g);
    Tensor& b = node.inputs[1];
    if (!b.requires_grad()) return;
    std::vector<real> neg(g.begin(), g.end());
    for (auto& v : neg) v = -v;
    if (k == Bcast::Same) {
      accumulate_grad(b, neg);
    } else {
      accumulate_grad(b, reduce_to(k, node.output.shape(), b.shape(), neg));
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Bcast k = broadcast_kind(a, b, "mul");
  Tensor out = binary_forward(a, b, k, [](real x, real y) { return x * y; });
  return record(OpKind::Mul, {a, b}, out, [k](TapeNode& node) {
    Tensor& a = node.inputs[0];
    Tensor& b = node.inputs[1];
    const auto g = node.output.grad();
    const Shape& s = node.output.shape();
    if (a.requires_grad()) {
      // da = g * b (broadcast)
      Tensor gt(s, std::vector<real>(g.begin(), g.end()));
      Tensor da = binary_forward(gt, b, k, [](real x, real y) { return x * y; });
      accumulate_grad(a, da.data());
    }
    if (b.requires_grad()) {
      std::vector<real> prod(g.size());
      const real* pa = a.ptr();
      for (std::size_t i = 0; i < g.size(); ++i) prod[i] = g[i] * pa[i];
      if (k == Bcast::Same) {
        accumulate_grad(b, prod);
      } else {
        accumulate_grad(b, reduce_to(k, s, b.shape(), prod));
      }
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = unary_forward(x, [](real v) { return real{1} / (real{1} + std::exp(-v)); });
  return record(OpKind::Sigmoid, {x}, out, [](TapeNode& node) {
    const auto g = node.output.grad();
    const auto y = node.output.data();
    std::vector<real> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * y[i] * (real{1} - y[i]);
    accumulate_grad(node.inputs[0], d);
  });
}

Tensor tanh(const Tensor& x) {
  Tensor out = unary_forward(x, [](real v) { return std::tanh(v); });
  return record(OpKind::Tanh, {x}, out, [](TapeNode& node) {
    const auto g = node.output.grad();
    const auto y = node.output.data();
    std::vector<real> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * (real{1} - y[i] * y[i]);
    accumulate_grad(node.inputs[0], d);
  });
}

Tensor relu(const Tensor& x) {
  Tensor out = unary_forward(x, [](real v) { return v > real{0} ? v : real{0}; });
  return record(OpKind::Relu, {x}, out, [](TapeNode& node) {
    const auto g = node.output.grad();
    const auto in = node.inputs[0].data();
    std::vector<real> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = in[i] > real{0} ? g[i] : real{0};
    accumulate_grad(node.inputs[0], d);
  });
}

Tensor scale(const Tensor& x, double factor) {
  const auto f = static_cast<real>(factor);
  Tensor out = unary_forward(x, [f](real v) { return v * f; });
  return record(OpKind::Scale, {x}, out, [f](TapeNode& node) {
    const auto g = node.output.grad();
    std::vector<real> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * f;
    accumulate_grad(node.inputs[0], d);
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  const auto v = static_cast<real>(value);
  Tensor out = unary_forward(x, [v](real a) { return a + v; });
  return record(OpKind::AddScalar, {x}, out,
                [](TapeNode& node) { accumulate_grad(node.inputs[0], node.output.grad()); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  const auto l = static_cast<real>(lo);
  const auto h = static_cast<real>(hi);
  Tensor out = unary_forward(x, [l, h](real v) { return std::clamp(v, l, h); });
  return record(OpKind::Clamp, {x}, out, [l, h](TapeNode& node) {
    const auto g = node.output.grad();
    const auto in = node.inputs[0].data();
    std::vector<real> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = (in[i] >= l && in[i] <= h) ? g[i] : real{0};
    accumulate_grad(node.inputs[0], d);
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: mismatched extents " + as.str() + " and " + bs.str());
  }
  const Shape os{as.n, as.c + bs.c, as.h, as.w};
  Tensor out(os);
  const std::size_t pa = static_cast<std::size_t>(as.c) * as.plane();
  const std::size_t pb = static_cast<std::size_t>(bs.c) * bs.plane();
  for (int n = 0; n < os.n; ++n) {
    real* dst = out.mutable_ptr() + n * (pa + pb);
    std::copy_n(a.ptr() + n * pa, pa, dst);
    std::copy_n(b.ptr() + n * pb, pb, dst + pa);
  }
  return record(OpKind::ConcatChannels, {a, b}, out, [pa, pb](TapeNode& node) {
    const auto g = node.output.grad();
    const int batch = node.output.n();
    Tensor& a = node.inputs[0];
    Tensor& b = node.inputs[1];
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (int n = 0; n < batch; ++n) {
        const real* src = g.data() + n * (pa + pb);
        for (std::size_t i = 0; i < pa; ++i) ga[n * pa + i] += src[i];
      }
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (int n = 0; n < batch; ++n) {
        const real* src = g.data() + n * (pa + pb) + pa;
        for (std::size_t i = 0; i < pb; ++i) gb[n * pb + i] += src[i];
      }
    }
  });
}

Tensor slice_channels(const Tensor& x, int begin, int end) {
  const Shape& xs = x.shape();
  if (begin < 0 || end > xs.c || begin > end) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") outside " + xs.str());
  }
  const Shape os{xs.n, end - begin, xs.h, xs.w};
  Tensor out(os);
  const std::size_t plane = xs.plane();
  const std::size_t in_stride = static_cast<std::size_t>(xs.c) * plane;
  const std::size_t out_stride = static_cast<std::size_t>(os.c) * plane;
  const std::size_t off = static_cast<std::size_t>(begin) * plane;
  for (int n = 0; n < xs.n; ++n) {
    std::copy_n(x.ptr() + n * in_stride + off, out_stride, out.mutable_ptr() + n * out_stride);
  }
  return record(OpKind::SliceChannels, {x}, out,
                [in_stride, out_stride, off](TapeNode& node) {
                  const auto g = node.output.grad();
                  auto gx = node.inputs[0].grad_buffer();
                  for (int n = 0; n < node.output.n(); ++n) {
                    real* dst = gx.data() + n * in_stride + off;
                    const real* src = g.data() + n * out_stride;
                    for (std::size_t i = 0; i < out_stride; ++i) dst[i] += src[i];
                  }
                });
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape& xs = x.shape();
  if (xs.plane() == 0) throw ShapeError("global_avg_pool: empty plane " + xs.str());
  Tensor out({xs.n, xs.c, 1, 1});
  const std::size_t plane = xs.plane();
  for (std::size_t k = 0; k < static_cast<std::size_t>(xs.n) * xs.c; ++k) {
    const real* p = x.ptr() + k * plane;
    accum a = 0.0;
    for (std::size_t i = 0; i < plane; ++i) a += p[i];
    out.mutable_ptr()[k] = static_cast<real>(a / static_cast<accum>(plane));
  }
  return record(OpKind::GlobalAvgPool, {x}, out, [plane](TapeNode& node) {
    const auto g = node.output.grad();
    auto gx = node.inputs[0].grad_buffer();
    const real inv = static_cast<real>(1.0 / static_cast<double>(plane));
    for (std::size_t k = 0; k < g.size(); ++k) {
      const real v = g[k] * inv;
      real* dst = gx.data() + k * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += v;
    }
  });
}

Tensor sum(const Tensor& x) {
  accum a = 0.0;
  for (real v : x.data()) a += v;
  Tensor out = Tensor::scalar(static_cast<real>(a));
  return record(OpKind::Sum, {x}, out, [](TapeNode& node) {
    const real g = node.output.grad()[0];
    auto gx = node.inputs[0].grad_buffer();
    for (auto& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  accum a = 0.0;
  for (real v : x.data()) a += v;
  const auto count = static_cast<accum>(x.numel());
  Tensor out = Tensor::scalar(static_cast<real>(a / count));
  return record(OpKind::Mean, {x}, out, [count](TapeNode& node) {
    const real g = static_cast<real>(node.output.grad()[0] / count);
    auto gx = node.inputs[0].grad_buffer();
    for (auto& v : gx) v += g;
  });
}

Tensor grad_scale(const Tensor& x, double factor) {
  Tensor out = x.clone();
  const auto f = static_cast<real>(factor);
  return record(OpKind::GradScale, {x}, out, [f](TapeNode& node) {
    const auto g = node.output.grad();
    std::vector<real> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * f;
    accumulate_grad(node.inputs[0], d);
  });
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
