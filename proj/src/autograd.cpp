#include "mspfn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mspfn/rng.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Conv2dTranspose: return "conv2d_transpose";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Clamp: return "clamp";
    case OpKind::ConcatChannels: return "concat_channels";
    case OpKind::SliceChannels: return "slice_channels";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::GradScale: return "grad_scale";
    case OpKind::Laplacian: return "laplacian";
    case OpKind::Charbonnier: return "charbonnier";
  }
  return "unknown";
}

namespace {
thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t Tape::push(TapeNode node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Tape& current_tape() { return g_tape; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor record(OpKind kind, std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  if (!g_grad_enabled) return output;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return output;

  TapeNode node;
  node.op_kind = kind;
  node.input_ids.reserve(inputs.size());
  for (const auto& t : inputs) node.input_ids.push_back(t.defined() ? t.producer() : kNoNode);
  node.inputs = std::move(inputs);
  node.output = output;
  node.backward = std::move(backward);
  output.set_requires_grad(true);
  const std::size_t id = g_tape.push(std::move(node));
  output.set_producer(id);
  return output;
}

void accumulate_grad(Tensor& t, std::span<const real> values) {
  if (!t.defined() || !t.requires_grad()) return;
  auto g = t.grad_buffer();
  for (std::size_t i = 0; i < values.size(); ++i) g[i] += values[i];
}

void backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got " + loss.shape().str());
  }
  auto& nodes = g_tape.nodes();
  if (!loss.requires_grad()) {
    g_tape.reset();
    return;
  }
  loss.grad_buffer()[0] += real{1};
  for (std::size_t i = nodes.size(); i-- > 0;) {
    TapeNode& node = nodes[i];
    if (!node.output.has_grad()) continue;
    node.backward(node);
  }
  g_tape.reset();
}

namespace {

double eval_scalar(const ScalarClosure& fn, std::span<Tensor> inputs) {
  NoGradGuard guard;
  return static_cast<double>(fn(inputs).item());
}

}  // namespace

GradCheckReport grad_check(const ScalarClosure& fn, std::span<Tensor> inputs,
                           const GradCheckOptions& opt) {
  GradCheckReport report;
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  current_tape().reset();
  {
    Tensor loss = fn(inputs);
    backward(loss);
  }

  // (input index, coordinate) pairs to probe.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t total = 0;
  for (const auto& t : inputs) total += t.numel();
  if (total <= opt.max_coords) {
    for (std::size_t k = 0; k < inputs.size(); ++k)
      for (std::size_t i = 0; i < inputs[k].numel(); ++i) coords.emplace_back(k, i);
  } else {
    Rng rng(opt.seed);
    std::vector<std::size_t> offsets(inputs.size() + 1, 0);
    for (std::size_t k = 0; k < inputs.size(); ++k) offsets[k + 1] = offsets[k] + inputs[k].numel();
    for (std::size_t s = 0; s < opt.max_coords; ++s) {
      const std::size_t flat = rng.below(total);
      const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
      const std::size_t k = static_cast<std::size_t>(it - offsets.begin()) - 1;
      coords.emplace_back(k, flat - offsets[k]);
    }
  }

  for (const auto& [k, i] : coords) {
    Tensor& t = inputs[k];
    const double analytic = t.has_grad() ? static_cast<double>(t.grad()[i]) : 0.0;
    real* p = t.mutable_ptr() + i;
    const real saved = *p;
    *p = static_cast<real>(static_cast<double>(saved) + opt.step);
    const double plus = eval_scalar(fn, inputs);
    *p = static_cast<real>(static_cast<double>(saved) - opt.step);
    const double minus = eval_scalar(fn, inputs);
    *p = saved;
    const double numeric = (plus - minus) / (2.0 * opt.step);
    const double abs_err = std::abs(analytic - numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.denom_floor});
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
  }
  report.coords_checked = coords.size();
  report.pass = report.max_rel_err < opt.tol;
  return report;
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
