#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mspfn/config.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

/// NCHW extents of a rank-4 tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  [[nodiscard]] std::size_t plane() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::size_t producer = kNoNode;  // tape node that produced this tensor
};

/// Shared handle to NCHW storage with optional gradient tracking.
///
/// Copies of a Tensor alias the same storage. Forward operators always
/// allocate fresh outputs; only parameter updates and gradient accumulation
/// write into existing storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<real> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(shape, requires_grad);
  }
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false) {
    return full({1, 1, 1, 1}, value, requires_grad);
  }

  [[nodiscard]] bool defined() const { return impl_ != nullptr; }
  [[nodiscard]] const Shape& shape() const { return impl().shape; }
  [[nodiscard]] int n() const { return shape().n; }
  [[nodiscard]] int c() const { return shape().c; }
  [[nodiscard]] int h() const { return shape().h; }
  [[nodiscard]] int w() const { return shape().w; }
  [[nodiscard]] std::size_t numel() const { return impl().data.size(); }

  [[nodiscard]] std::span<const real> data() const& { return impl().data; }
  // A temporary tensor hands out a copy so `for (v : f(x).data())` stays valid.
  [[nodiscard]] std::vector<real> data() const&& { return impl().data; }
  [[nodiscard]] std::span<real> mutable_data() { return impl().data; }
  [[nodiscard]] const real* ptr() const { return impl().data.data(); }
  [[nodiscard]] real* mutable_ptr() { return impl().data.data(); }

  [[nodiscard]] real at(int n, int c, int h, int w) const {
    return impl().data[offset(n, c, h, w)];
  }
  real& at(int n, int c, int h, int w) { return impl().data[offset(n, c, h, w)]; }
  [[nodiscard]] std::size_t offset(int n, int c, int h, int w) const {
    const Shape& s = shape();
    return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
  }

  /// Value of a single-element tensor.
  [[nodiscard]] real item() const;

  [[nodiscard]] bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool value) { impl().requires_grad = value; }

  [[nodiscard]] bool has_grad() const { return !impl().grad.empty(); }
  [[nodiscard]] std::span<const real> grad() const { return impl().grad; }
  /// Gradient buffer, allocated (zero-filled) on first use.
  std::span<real> grad_buffer();
  void zero_grad();
  void clear_grad() { impl().grad.clear(); }

  [[nodiscard]] std::size_t producer() const { return impl().producer; }
  void set_producer(std::size_t node) { impl().producer = node; }

  /// Deep copy without gradient or tape history.
  [[nodiscard]] Tensor clone() const;
  /// Deep copy detached from the tape with requires_grad cleared.
  [[nodiscard]] Tensor detach() const { return clone(); }

  [[nodiscard]] bool same_storage(const Tensor& other) const {
    return impl_ == other.impl_;
  }

 private:
  TensorImpl& impl() const {
    if (!impl_) throw_undefined();
    return *impl_;
  }
  [[noreturn]] static void throw_undefined();
  std::shared_ptr<TensorImpl> impl_;
};

/// Tensors with identical shape and bit-identical data.
bool bit_equal(const Tensor& a, const Tensor& b);
/// Largest |a - b| over all elements; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace MSPFN_ABI
}  // namespace mspfn
