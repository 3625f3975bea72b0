#include "mspfn/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "mspfn/autograd.hpp"
#include "mspfn/ops.hpp"
#include "mspfn/pyramid.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

Tensor charbonnier(const Tensor& pred, const Tensor& target, double eps) {
  if (!(pred.shape() == target.shape())) {
    throw ShapeError("charbonnier: prediction " + pred.shape().str() + " vs target " +
                     target.shape().str());
  }
  if (!(eps > 0.0)) throw std::invalid_argument("charbonnier: epsilon must be positive");
  if (pred.numel() == 0) throw ShapeError("charbonnier: empty input");
  const double eps2 = eps * eps;
  accum total = 0.0;
  const real* p = pred.ptr();
  const real* t = target.ptr();
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    total += std::sqrt(d * d + eps2);
  }
  const auto count = static_cast<double>(pred.numel());
  Tensor out = Tensor::scalar(static_cast<real>(total / count));
  return record(OpKind::Charbonnier, {pred, target}, out, [eps2, count](TapeNode& node) {
    const double g = static_cast<double>(node.output.grad()[0]) / count;
    Tensor& a = node.inputs[0];
    Tensor& b = node.inputs[1];
    const real* pa = a.ptr();
    const real* pb = b.ptr();
    std::vector<real> d(a.numel());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double diff = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
      d[i] = static_cast<real>(g * diff / std::sqrt(diff * diff + eps2));
    }
    accumulate_grad(a, d);
    if (b.requires_grad()) {
      for (auto& v : d) v = -v;
      accumulate_grad(b, d);
    }
  });
}

Tensor edge_loss(const Tensor& clean, const Tensor& derained, double eps) {
  if (!(clean.shape() == derained.shape())) {
    throw ShapeError("edge_loss: clean " + clean.shape().str() + " vs derained " +
                     derained.shape().str());
  }
  return charbonnier(laplacian_map(clean.detach()), laplacian_map(derained), eps);
}

Tensor combine_losses(const Tensor& l_con, const Tensor& l_edge, double lambda) {
  return add(l_con, scale(l_edge, lambda));
}

LossTerms total_loss(const Tensor& residual_pred, const Tensor& residual_true,
                     const Tensor& clean, const Tensor& derained, const LossConfig& cfg) {
  if (cfg.lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be >= 0");
  LossTerms terms;
  terms.l_con = charbonnier(residual_pred, residual_true, cfg.epsilon);
  terms.l_edge = edge_loss(clean, derained, cfg.epsilon);
  terms.total = combine_losses(terms.l_con, terms.l_edge, cfg.lambda);
  return terms;
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
