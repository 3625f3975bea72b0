#include "mspfn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "mspfn/pyramid.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("psnr: " + a.shape().str() + " vs " + b.shape().str());
  }
  accum se = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.ptr()[i]) - static_cast<double>(b.ptr()[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

std::string format_psnr(double db, int decimals) {
  if (std::isinf(db)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, db);
  return buf;
}

namespace {

// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                 const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double a = 0.0;
      for (int i = 0; i < k; ++i) a += taps[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = a;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double a = 0.0;
      for (int i = 0; i < k; ++i) a += taps[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = a;
    }
  return out;
}

}  // namespace

SsimResult ssim_components(const Tensor& a, const Tensor& b, const SsimOptions& opt) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("ssim: " + a.shape().str() + " vs " + b.shape().str());
  }
  const Shape& s = a.shape();
  if (s.h < opt.window || s.w < opt.window) {
    throw ShapeError("ssim: image " + s.str() + " smaller than the " +
                     std::to_string(opt.window) + "x" + std::to_string(opt.window) + " window");
  }
  const auto taps = gaussian_kernel(opt.window, opt.sigma).taps;
  const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak);
  const double c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
  const std::size_t plane = s.plane();

  double ssim_total = 0.0;
  double cs_total = 0.0;
  std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const real* pa = a.ptr() + a.offset(n, c, 0, 0);
      const real* pb = b.ptr() + b.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        x[i] = pa[i];
        y[i] = pb[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
      const auto mx = filter_valid(x, s.h, s.w, taps);
      const auto my = filter_valid(y, s.h, s.w, taps);
      const auto sxx = filter_valid(xx, s.h, s.w, taps);
      const auto syy = filter_valid(yy, s.h, s.w, taps);
      const auto sxy = filter_valid(xy, s.h, s.w, taps);
      double acc = 0.0;
      double acc_cs = 0.0;
      for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        const double cs = (2.0 * cov + c2) / (vx + vy + c2);
        const double lum = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
        acc += lum * cs;
        acc_cs += cs;
      }
      ssim_total += acc / static_cast<double>(mx.size());
      cs_total += acc_cs / static_cast<double>(mx.size());
    }
  const double planes = static_cast<double>(s.n) * s.c;
  return {ssim_total / planes, cs_total / planes};
}

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt) {
  return ssim_components(a, b, opt).ssim;
}

Tensor to_luma(const Tensor& rgb) {
  const Shape& s = rgb.shape();
  if (s.c != 3) throw ShapeError("to_luma: expected 3 channels, got " + s.str());
  Tensor out({s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        out.at(n, 0, y, x) = static_cast<real>(0.299 * rgb.at(n, 0, y, x) +
                                               0.587 * rgb.at(n, 1, y, x) +
                                               0.114 * rgb.at(n, 2, y, x));
      }
  return out;
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
