#pragma once

#include <cstdint>

#include "mspfn/tensor.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

struct RainParams {
  double angle_deg = 0.0;     // from vertical, [-45, 45]
  int streak_length_px = 8;   // rows spanned by one streak
  double density = 0.02;      // target fraction of pixels covered by streaks
  double intensity = 0.8;     // peak streak brightness added to the image
  std::uint64_t seed = 0;

  void validate() const;
};

/// Single-channel additive streak layer [1,1,H,W] with values in [0,1].
///
/// Seed pixels are drawn by thresholding uniform noise at 1 - density/L on a
/// canvas padded by L on every side, each seed is smeared along a rasterized
/// line of L rows at `angle_deg`, and the result is scaled by `intensity`.
/// Overlapping streaks keep the brightest value.
Tensor streak_layer(int height, int width, const RainParams& p);

/// clamp(clean + streak_layer, 0, 1), the same layer added to every channel.
Tensor synth_rain(const Tensor& clean, const RainParams& p);

/// Smooth procedural RGB scene in [0,1] used as clean imagery: colour
/// gradients, soft-edged shapes and low-amplitude texture.
Tensor procedural_scene(int height, int width, std::uint64_t seed);

}  // namespace MSPFN_ABI
}  // namespace mspfn
