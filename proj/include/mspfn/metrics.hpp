#pragma once

#include <string>

#include "mspfn/tensor.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

/// 10 log10(peak^2 / MSE) over all elements; +infinity when MSE is zero.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Renders a PSNR value, "inf" for identical images.
std::string format_psnr(double db, int decimals = 4);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

struct SsimResult {
  double ssim = 0.0;
  double contrast_structure = 0.0;  // luminance term omitted
};

/// Single-scale SSIM with a Gaussian window, averaged over valid window
/// positions and then over channels (and batch).
SsimResult ssim_components(const Tensor& a, const Tensor& b, const SsimOptions& opt = {});
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {});

/// BT.601 luma of an RGB image, [N,1,H,W].
Tensor to_luma(const Tensor& rgb);

}  // namespace MSPFN_ABI
}  // namespace mspfn
