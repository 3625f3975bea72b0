#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mspfn/tensor.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

enum class OpKind {
  Conv2d,
  Conv2dTranspose,
  Add,
  Sub,
  Mul,
  Sigmoid,
  Tanh,
  Relu,
  Scale,
  AddScalar,
  Clamp,
  ConcatChannels,
  SliceChannels,
  GlobalAvgPool,
  Sum,
  Mean,
  GradScale,
  Laplacian,
  Charbonnier,
};

const char* op_name(OpKind kind);

struct TapeNode;
using BackwardFn = std::function<void(TapeNode&)>;

struct TapeNode {
  OpKind op_kind;
  std::vector<std::size_t> input_ids;  // producer node of each input, kNoNode for leaves
  std::vector<Tensor> inputs;
  Tensor output;
  BackwardFn backward;  // captures the saved context it needs
};

/// Append-only record of differentiable operations on one thread.
class Tape {
 public:
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const std::vector<TapeNode>& nodes() const { return nodes_; }
  std::vector<TapeNode>& nodes() { return nodes_; }
  std::size_t push(TapeNode node);
  void reset() { nodes_.clear(); }

 private:
  std::vector<TapeNode> nodes_;
};

/// Tape of the calling thread.
Tape& current_tape();

bool grad_enabled();

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Records `output` as produced by `kind` from `inputs` when recording is on
/// and at least one input requires a gradient. Returns `output`.
Tensor record(OpKind kind, std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

/// Reverse sweep from a scalar loss. Gradients accumulate into every tensor
/// with requires_grad set; the current tape is reset afterwards.
void backward(Tensor& loss);

/// Adds `values` into the gradient of `t` if it participates in autodiff.
void accumulate_grad(Tensor& t, std::span<const real> values);

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t coords_checked = 0;
  bool pass = false;
};

using ScalarClosure = std::function<Tensor(std::span<Tensor>)>;

struct GradCheckOptions {
  double step = 1e-6;
  double tol = 1e-5;
  std::size_t max_coords = 10000;  // above this, a seeded random subset is checked
  std::uint64_t seed = 0;
  double denom_floor = 1e-3;       // relative error denominator floor
};

/// Compares reverse-mode gradients of `fn` against central differences over
/// every coordinate of `inputs` (or a seeded subset). Never throws on mismatch.
GradCheckReport grad_check(const ScalarClosure& fn, std::span<Tensor> inputs,
                           const GradCheckOptions& opt);

}  // namespace MSPFN_ABI
}  // namespace mspfn
