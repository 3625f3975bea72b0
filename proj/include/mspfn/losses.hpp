#pragma once

#include "mspfn/tensor.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

struct LossConfig {
  double epsilon = 1e-3;
  double lambda = 0.05;  // weight of the edge term
};

/// mean(sqrt((pred - target)^2 + eps^2)) over every element. Differentiable
/// in both arguments, including at pred == target.
Tensor charbonnier(const Tensor& pred, const Tensor& target, double eps);

/// Charbonnier distance between Laplacian edge maps of the two images.
Tensor edge_loss(const Tensor& clean, const Tensor& derained, double eps);

struct LossTerms {
  Tensor total;
  Tensor l_con;
  Tensor l_edge;
};

/// l_con + lambda * l_edge on already-computed terms.
Tensor combine_losses(const Tensor& l_con, const Tensor& l_edge, double lambda);

/// Content loss on the residual plus the weighted edge loss on the
/// derained image.
LossTerms total_loss(const Tensor& residual_pred, const Tensor& residual_true,
                     const Tensor& clean, const Tensor& derained, const LossConfig& cfg);

}  // namespace MSPFN_ABI
}  // namespace mspfn
