#include "mspfn/pyramid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mspfn/autograd.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

GaussianKernel gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) {
    throw std::invalid_argument("gaussian_kernel: size must be odd and positive, got " +
                                std::to_string(size));
  }
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  GaussianKernel k;
  k.size = size;
  k.sigma = sigma;
  k.taps.resize(static_cast<std::size_t>(size));
  const int r = size / 2;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    k.taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += k.taps[static_cast<std::size_t>(i)];
  }
  for (auto& t : k.taps) t /= total;
  return k;
}

int reflect_index(int i, int extent) {
  if (extent <= 1) return 0;
  const int period = 2 * (extent - 1);
  i %= period;
  if (i < 0) i += period;
  return i < extent ? i : period - i;
}

Tensor gaussian_blur(const Tensor& img, const GaussianKernel& kernel) {
  const Shape& s = img.shape();
  const int r = kernel.size / 2;
  Tensor out(s);
  std::vector<accum> tmp(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const real* src = img.ptr() + img.offset(n, c, 0, 0);
      real* dst = out.mutable_ptr() + out.offset(n, c, 0, 0);
      // horizontal pass
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          accum a = 0.0;
          for (int k = -r; k <= r; ++k) {
            a += kernel.taps[static_cast<std::size_t>(k + r)] *
                 src[static_cast<std::size_t>(y) * s.w + reflect_index(x + k, s.w)];
          }
          tmp[static_cast<std::size_t>(y) * s.w + x] = a;
        }
      // vertical pass
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          accum a = 0.0;
          for (int k = -r; k <= r; ++k) {
            a += kernel.taps[static_cast<std::size_t>(k + r)] *
                 tmp[static_cast<std::size_t>(reflect_index(y + k, s.h)) * s.w + x];
          }
          dst[static_cast<std::size_t>(y) * s.w + x] = static_cast<real>(a);
        }
    }
  return out;
}

Tensor downsample(const Tensor& img, const GaussianKernel& kernel) {
  const Shape& s = img.shape();
  if (s.h < 2 || s.w < 2) {
    throw ShapeError("downsample: image " + s.str() + " too small to halve");
  }
  const Tensor blurred = gaussian_blur(img, kernel);
  Tensor out({s.n, s.c, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / 2; ++y)
        for (int x = 0; x < s.w / 2; ++x) out.at(n, c, y, x) = blurred.at(n, c, 2 * y, 2 * x);
  return out;
}

PyramidSet build_pyramid(const Tensor& img, int levels, const GaussianKernel& kernel) {
  if (levels < 1) {
    throw std::invalid_argument("build_pyramid: levels must be >= 1, got " +
                                std::to_string(levels));
  }
  PyramidSet p;
  p.levels.resize(static_cast<std::size_t>(levels));
  p.levels.back() = img;
  for (int i = levels - 2; i >= 0; --i) {
    p.levels[static_cast<std::size_t>(i)] =
        downsample(p.levels[static_cast<std::size_t>(i + 1)], kernel);
  }
  return p;
}

Tensor laplacian_map(const Tensor& img) {
  const Shape s = img.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const real* src = img.ptr() + img.offset(n, c, 0, 0);
      real* dst = out.mutable_ptr() + out.offset(n, c, 0, 0);
      for (int y = 0; y < s.h; ++y) {
        const std::size_t up = static_cast<std::size_t>(reflect_index(y - 1, s.h)) * s.w;
        const std::size_t dn = static_cast<std::size_t>(reflect_index(y + 1, s.h)) * s.w;
        const std::size_t row = static_cast<std::size_t>(y) * s.w;
        for (int x = 0; x < s.w; ++x) {
          const int l = reflect_index(x - 1, s.w);
          const int r = reflect_index(x + 1, s.w);
          dst[row + x] = src[up + x] + src[dn + x] + src[row + l] + src[row + r] -
                         real{4} * src[row + x];
        }
      }
    }
  return record(OpKind::Laplacian, {img}, out, [s](TapeNode& node) {
    const auto g = node.output.grad();
    auto gx = node.inputs[0].grad_buffer();
    const std::size_t plane = s.plane();
    for (std::size_t k = 0; k < static_cast<std::size_t>(s.n) * s.c; ++k) {
      const real* go = g.data() + k * plane;
      real* gi = gx.data() + k * plane;
      for (int y = 0; y < s.h; ++y) {
        const std::size_t up = static_cast<std::size_t>(reflect_index(y - 1, s.h)) * s.w;
        const std::size_t dn = static_cast<std::size_t>(reflect_index(y + 1, s.h)) * s.w;
        const std::size_t row = static_cast<std::size_t>(y) * s.w;
        for (int x = 0; x < s.w; ++x) {
          const real v = go[row + x];
          gi[up + x] += v;
          gi[dn + x] += v;
          gi[row + reflect_index(x - 1, s.w)] += v;
          gi[row + reflect_index(x + 1, s.w)] += v;
          gi[row + x] -= real{4} * v;
        }
      }
    }
  });
}

Tensor pad_to_multiple(const Tensor& img, int multiple) {
  if (multiple < 1) throw std::invalid_argument("pad_to_multiple: multiple must be >= 1");
  const Shape& s = img.shape();
  const int h = (s.h + multiple - 1) / multiple * multiple;
  const int w = (s.w + multiple - 1) / multiple * multiple;
  if (h == s.h && w == s.w) return img.clone();
  Tensor out({s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.at(n, c, y, x) = img.at(n, c, reflect_index(y, s.h), reflect_index(x, s.w));
  return out;
}

Tensor crop(const Tensor& img, int height, int width) {
  const Shape& s = img.shape();
  if (height > s.h || width > s.w) {
    throw ShapeError("crop: " + std::to_string(height) + "x" + std::to_string(width) +
                     " exceeds " + s.str());
  }
  Tensor out({s.n, s.c, height, width});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) out.at(n, c, y, x) = img.at(n, c, y, x);
  return out;
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
