#pragma once

// Straight-line reference implementations used only by tests. They work on
// plain double arrays and share no code with the library kernels.

#include <cmath>
#include <cstddef>
#include <vector>

#include "mspfn/rng.hpp"
#include "mspfn/tensor.hpp"

namespace oracle {

struct Dims {
  int n, c, h, w;
  [[nodiscard]] std::size_t idx(int a, int b, int y, int x) const {
    return ((static_cast<std::size_t>(a) * c + b) * h + y) * w + x;
  }
  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
};

inline std::vector<double> values(const mspfn::Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

inline Dims dims(const mspfn::Tensor& t) { return {t.n(), t.c(), t.h(), t.w()}; }

inline mspfn::Tensor random_tensor(mspfn::Shape s, std::uint64_t seed, double lo = -1.0,
                                   double hi = 1.0) {
  mspfn::Rng rng(seed);
  mspfn::Tensor t(s);
  for (auto& v : t.mutable_data()) v = static_cast<mspfn::real>(rng.uniform(lo, hi));
  return t;
}

/// Six nested loops over (n, co, oy, ox, ci, ky, kx) with explicit zero padding.
inline std::vector<double> conv2d(const std::vector<double>& x, Dims xd, const std::vector<double>& w,
                                  Dims wd, const std::vector<double>& bias, int stride, int pad,
                                  Dims& out) {
  const int oh = (xd.h + 2 * pad - wd.h) / stride + 1;
  const int ow = (xd.w + 2 * pad - wd.w) / stride + 1;
  out = {xd.n, wd.n, oh, ow};
  std::vector<double> y(out.size(), 0.0);
  for (int n = 0; n < xd.n; ++n)
    for (int co = 0; co < wd.n; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(co)];
          for (int ci = 0; ci < xd.c; ++ci)
            for (int ky = 0; ky < wd.h; ++ky)
              for (int kx = 0; kx < wd.w; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= xd.h || ix < 0 || ix >= xd.w) continue;
                acc += x[xd.idx(n, ci, iy, ix)] * w[wd.idx(co, ci, ky, kx)];
              }
          y[out.idx(n, co, oy, ox)] = acc;
        }
  return y;
}

/// Transpose convolution as a scatter-add: every input sample deposits its
/// kernel-weighted copy onto the output grid.
inline std::vector<double> conv2d_transpose(const std::vector<double>& x, Dims xd,
                                            const std::vector<double>& w, Dims wd,
                                            const std::vector<double>& bias, int stride, int pad,
                                            int output_padding, Dims& out) {
  const int oh = (xd.h - 1) * stride - 2 * pad + wd.h + output_padding;
  const int ow = (xd.w - 1) * stride - 2 * pad + wd.w + output_padding;
  out = {xd.n, wd.c, oh, ow};
  std::vector<double> y(out.size(), 0.0);
  for (int n = 0; n < xd.n; ++n)
    for (int ci = 0; ci < xd.c; ++ci)
      for (int iy = 0; iy < xd.h; ++iy)
        for (int ix = 0; ix < xd.w; ++ix) {
          const double v = x[xd.idx(n, ci, iy, ix)];
          for (int co = 0; co < wd.c; ++co)
            for (int ky = 0; ky < wd.h; ++ky)
              for (int kx = 0; kx < wd.w; ++kx) {
                const int oy = iy * stride - pad + ky;
                const int ox = ix * stride - pad + kx;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                y[out.idx(n, co, oy, ox)] += v * w[wd.idx(ci, co, ky, kx)];
              }
        }
  if (!bias.empty())
    for (int n = 0; n < out.n; ++n)
      for (int co = 0; co < out.c; ++co)
        for (int i = 0; i < oh * ow; ++i) y[out.idx(n, co, 0, 0) + i] += bias[static_cast<std::size_t>(co)];
  return y;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline int mirror(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

/// Direct 2D convolution of one plane with a square kernel, reflect padding.
inline std::vector<double> blur_direct(const std::vector<double>& plane, int h, int w,
                                       const std::vector<std::vector<double>>& k2d) {
  const int r = static_cast<int>(k2d.size()) / 2;
  std::vector<double> out(plane.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double a = 0.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          a += k2d[static_cast<std::size_t>(dy + r)][static_cast<std::size_t>(dx + r)] *
               plane[static_cast<std::size_t>(mirror(y + dy, h)) * w + mirror(x + dx, w)];
      out[static_cast<std::size_t>(y) * w + x] = a;
    }
  return out;
}

/// Laplacian of every plane with reflect padding, written as explicit taps.
inline std::vector<double> laplacian(const std::vector<double>& x, Dims d) {
  std::vector<double> out(x.size());
  for (int n = 0; n < d.n; ++n)
    for (int c = 0; c < d.c; ++c)
      for (int y = 0; y < d.h; ++y)
        for (int xx = 0; xx < d.w; ++xx) {
          out[d.idx(n, c, y, xx)] = x[d.idx(n, c, mirror(y - 1, d.h), xx)] +
                                    x[d.idx(n, c, mirror(y + 1, d.h), xx)] +
                                    x[d.idx(n, c, y, mirror(xx - 1, d.w))] +
                                    x[d.idx(n, c, y, mirror(xx + 1, d.w))] - 4.0 * x[d.idx(n, c, y, xx)];
        }
  return out;
}

inline double charbonnier(const std::vector<double>& a, const std::vector<double>& b, double eps) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += std::sqrt(d * d + eps * eps);
  }
  return s / static_cast<double>(a.size());
}

/// SSIM by visiting every 11x11 window position and summing its weights
/// directly (no separable filtering).
inline double ssim_naive(const std::vector<double>& a, const std::vector<double>& b, Dims d,
                         int win = 11, double sigma = 1.5) {
  std::vector<double> g(static_cast<std::size_t>(win));
  double gs = 0.0;
  for (int i = 0; i < win; ++i) {
    const double t = i - win / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-t * t / (2 * sigma * sigma));
    gs += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= gs;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (int n = 0; n < d.n; ++n)
    for (int c = 0; c < d.c; ++c) {
      double acc = 0.0;
      int count = 0;
      for (int y0 = 0; y0 + win <= d.h; ++y0)
        for (int x0 = 0; x0 + win <= d.w; ++x0) {
          double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
          for (int i = 0; i < win; ++i)
            for (int j = 0; j < win; ++j) {
              const double wt = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
              const double va = a[d.idx(n, c, y0 + i, x0 + j)];
              const double vb = b[d.idx(n, c, y0 + i, x0 + j)];
              mx += wt * va;
              my += wt * vb;
              sxx += wt * va * va;
              syy += wt * vb * vb;
              sxy += wt * va * vb;
            }
          const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
          acc += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
          ++count;
        }
      total += acc / count;
    }
  return total / (d.n * d.c);
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Scalar Conv-LSTM step with separate per-gate kernels sliced from the stacked
/// [4C, Cin, k, k] weights (gate order i, f, o, g).
inline void lstm_step(const std::vector<double>& x, Dims xd, const std::vector<double>& h,
                      const std::vector<double>& c, int C, const std::vector<double>& wx, Dims wxd,
                      const std::vector<double>& wh, Dims whd, const std::vector<double>& b,
                      std::vector<double>& h_out, std::vector<double>& c_out) {
  const int k = wxd.h, pad = k / 2;
  Dims sd{xd.n, C, xd.h, xd.w};
  h_out.assign(sd.size(), 0.0);
  c_out.assign(sd.size(), 0.0);
  for (int n = 0; n < xd.n; ++n)
    for (int ch = 0; ch < C; ++ch)
      for (int y = 0; y < xd.h; ++y)
        for (int xx = 0; xx < xd.w; ++xx) {
          double gate[4];
          for (int g = 0; g < 4; ++g) {
            const int co = g * C + ch;
            double a = b[static_cast<std::size_t>(co)];
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = y - pad + ky, ix = xx - pad + kx;
                if (iy < 0 || iy >= xd.h || ix < 0 || ix >= xd.w) continue;
                for (int ci = 0; ci < xd.c; ++ci) a += wx[wxd.idx(co, ci, ky, kx)] * x[xd.idx(n, ci, iy, ix)];
                for (int ci = 0; ci < C; ++ci) a += wh[whd.idx(co, ci, ky, kx)] * h[sd.idx(n, ci, iy, ix)];
              }
            gate[g] = a;
          }
          const double i = sigmoid(gate[0]), f = sigmoid(gate[1]), o = sigmoid(gate[2]);
          const double g = std::tanh(gate[3]);
          const double cn = f * c[sd.idx(n, ch, y, xx)] + i * g;
          c_out[sd.idx(n, ch, y, xx)] = cn;
          h_out[sd.idx(n, ch, y, xx)] = o * std::tanh(cn);
        }
}

inline double rel_err(double a, double b) {
  const double d = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / d;
}

}  // namespace oracle
