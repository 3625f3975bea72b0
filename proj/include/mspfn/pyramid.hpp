#pragma once

#include <vector>

#include "mspfn/tensor.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

/// Normalized, separable sampled Gaussian. `taps` is the 1D profile; the 2D
/// kernel is its outer product.
struct GaussianKernel {
  int size = 1;
  double sigma = 1.0;
  std::vector<double> taps;
  [[nodiscard]] double at(int row, int col) const {
    return taps[static_cast<std::size_t>(row)] * taps[static_cast<std::size_t>(col)];
  }
};

GaussianKernel gaussian_kernel(int size = 5, double sigma = 1.0);

/// Mirror index into [0, extent) without repeating the edge sample
/// (-1 -> 1, extent -> extent - 2). Extent 1 always maps to 0.
int reflect_index(int i, int extent);

/// Gaussian blur (reflect padding) followed by keeping every second sample
/// from index 0. Not differentiable; pyramids are built from input images.
Tensor downsample(const Tensor& img, const GaussianKernel& kernel);

/// Blur only, same extents as the input.
Tensor gaussian_blur(const Tensor& img, const GaussianKernel& kernel);

/// Image pyramid, index 0 coarsest, back() is the input itself.
struct PyramidSet {
  std::vector<Tensor> levels;
  [[nodiscard]] std::size_t size() const { return levels.size(); }
  [[nodiscard]] const Tensor& coarsest() const { return levels.front(); }
  [[nodiscard]] const Tensor& finest() const { return levels.back(); }
};

PyramidSet build_pyramid(const Tensor& img, int levels,
                         const GaussianKernel& kernel = gaussian_kernel());

/// Per-channel 4-neighbour Laplacian with reflect padding. Differentiable.
Tensor laplacian_map(const Tensor& img);

/// Reflect-pads the bottom and right edges so H and W become multiples of
/// `multiple`.
Tensor pad_to_multiple(const Tensor& img, int multiple);
/// Top-left crop to the given extents.
Tensor crop(const Tensor& img, int height, int width);

}  // namespace MSPFN_ABI
}  // namespace mspfn
