#include "mspfn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "mspfn/rng.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

void RainParams::validate() const {
  if (!(angle_deg >= -45.0 && angle_deg <= 45.0)) {
    throw std::invalid_argument("rain angle must lie in [-45, 45] degrees");
  }
  if (streak_length_px < 1) throw std::invalid_argument("streak length must be >= 1");
  if (!(density >= 0.0 && density <= 1.0)) throw std::invalid_argument("density must lie in [0, 1]");
  if (!(intensity >= 0.0 && intensity <= 1.0)) {
    throw std::invalid_argument("intensity must lie in [0, 1]");
  }
}

Tensor streak_layer(int height, int width, const RainParams& p) {
  p.validate();
  Tensor layer({1, 1, height, width});
  if (p.density == 0.0 || p.intensity == 0.0) return layer;

  const int len = p.streak_length_px;
  const double slope = std::tan(p.angle_deg * std::numbers::pi / 180.0);
  std::vector<std::pair<int, int>> taps;  // (dy, dx), one per row
  for (int k = 0; k < len; ++k) {
    const int dy = k - len / 2;
    taps.emplace_back(dy, static_cast<int>(std::lround(dy * slope)));
  }

  const double seed_prob = p.density / len;
  const double threshold = 1.0 - seed_prob;
  const int margin = len + 1;
  Rng rng(p.seed);
  real* out = layer.mutable_ptr();
  for (int cy = -margin; cy < height + margin; ++cy) {
    for (int cx = -margin; cx < width + margin; ++cx) {
      if (rng.uniform() < threshold) continue;
      const auto brightness = static_cast<real>(p.intensity * (0.6 + 0.4 * rng.uniform()));
      for (const auto& [dy, dx] : taps) {
        const int y = cy + dy;
        const int x = cx + dx;
        if (y < 0 || y >= height || x < 0 || x >= width) continue;
        real& v = out[static_cast<std::size_t>(y) * width + x];
        v = std::max(v, brightness);
      }
    }
  }
  return layer;
}

Tensor synth_rain(const Tensor& clean, const RainParams& p) {
  const Shape& s = clean.shape();
  const Tensor layer = streak_layer(s.h, s.w, p);
  Tensor rain(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          rain.at(n, c, y, x) =
              std::clamp(clean.at(n, c, y, x) + layer.at(0, 0, y, x), real{0}, real{1});
        }
  return rain;
}

Tensor procedural_scene(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  Tensor img({1, 3, height, width});
  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.15, 0.55);
    gx[c] = rng.uniform(-0.25, 0.25);
    gy[c] = rng.uniform(-0.25, 0.25);
  }
  struct Blob {
    double cx, cy, rx, ry, col[3];
    bool box;
  };
  std::vector<Blob> blobs(4 + rng.below(4));
  for (auto& b : blobs) {
    b.cx = rng.uniform(0.0, width);
    b.cy = rng.uniform(0.0, height);
    b.rx = rng.uniform(0.08, 0.3) * width;
    b.ry = rng.uniform(0.08, 0.3) * height;
    for (double& c : b.col) c = rng.uniform(0.05, 0.75);
    b.box = rng.uniform() < 0.5;
  }
  const double fx = rng.uniform(0.05, 0.3);
  const double fy = rng.uniform(0.05, 0.3);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = static_cast<double>(x) / width;
      const double v = static_cast<double>(y) / height;
      double px[3];
      for (int c = 0; c < 3; ++c) px[c] = base[c] + gx[c] * u + gy[c] * v;
      for (const auto& b : blobs) {
        const double dx = (x - b.cx) / b.rx;
        const double dy = (y - b.cy) / b.ry;
        const double d = b.box ? std::max(std::abs(dx), std::abs(dy)) : std::sqrt(dx * dx + dy * dy);
        // soft edge over roughly 1.5 px
        const double edge = 1.5 / std::min(b.rx, b.ry);
        const double a = std::clamp((1.0 - d) / edge + 0.5, 0.0, 1.0);
        for (int c = 0; c < 3; ++c) px[c] = (1.0 - a) * px[c] + a * b.col[c];
      }
      const double tex = 0.04 * std::sin(fx * x + phase) * std::cos(fy * y);
      for (int c = 0; c < 3; ++c) {
        img.at(0, c, y, x) = static_cast<real>(std::clamp(px[c] + tex, 0.0, 1.0));
      }
    }
  return img;
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
