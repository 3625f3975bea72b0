#include "mspfn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mspfn {
inline namespace MSPFN_ABI {

std::string Shape::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + "]";
}

namespace {
void validate(const Shape& s) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw ShapeError("negative tensor extent " + s.str());
  }
}
}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
  validate(shape);
  impl_->shape = shape;
  impl_->data.assign(shape.numel(), real{0});
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<real> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  validate(shape);
  if (data.size() != shape.numel()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape.str());
  }
  impl_->shape = shape;
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  Tensor t(shape, requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

void Tensor::throw_undefined() { throw std::logic_error("access to undefined tensor"); }

real Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape().str());
  }
  return impl().data[0];
}

std::span<real> Tensor::grad_buffer() {
  auto& im = impl();
  if (im.grad.empty()) im.grad.assign(im.data.size(), real{0});
  return im.grad;
}

void Tensor::zero_grad() {
  auto& im = impl();
  if (!im.grad.empty()) std::fill(im.grad.begin(), im.grad.end(), real{0});
}

Tensor Tensor::clone() const {
  return Tensor(shape(), impl().data, false);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  return std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(real)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("max_abs_diff shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  double m = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(da[i]) - static_cast<double>(db[i])));
  }
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](real v) { return std::isfinite(v); });
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
