#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sne {

#ifdef SNE_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  // Lazily allocated; empty means "no gradient arrived yet" (reads as zero).
  std::vector<real> grad;
  bool requires_grad = false;
  bool leaf = true;

  std::vector<real>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), real(0));
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

// Dense row-major array with optional gradient. Copies share storage, like a
// handle; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, real fill = real(0));
  Tensor(Shape shape, std::vector<real> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), real(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), real(1)); }
  static Tensor scalar(real v) { return Tensor(Shape{1}, v); }
  static Tensor from(Shape shape, std::initializer_list<real> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<real> data() { return impl_->data; }
  std::span<const real> data() const { return impl_->data; }
  real operator[](std::size_t i) const { return impl_->data[i]; }
  real& operator[](std::size_t i) { return impl_->data[i]; }
  real item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return impl_->leaf; }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  // Gradient view; allocates zeros on first access.
  std::span<real> grad() { return impl_->grad_buffer(); }
  std::span<const real> grad() const { return impl_->grad_buffer(); }
  Tensor grad_tensor() const;
  void zero_grad();

  // Same values, no gradient tracking, fresh storage.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const detail::ImplPtr& impl() const { return impl_; }
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  detail::ImplPtr impl_;
};

// Records differentiable operations in execution order. Each thread has its
// own default tape; TapeScope installs a fresh one for a forward/backward
// pass. Entries hold references to their inputs, so clear() releases the
// intermediate activations of a pass.
class Tape {
 public:
  struct Entry {
    detail::ImplPtr output;
    std::function<void()> backward;
    std::string op;
  };

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  // Reverse replay from a scalar loss. Gradients of non-leaf tensors are reset
  // first, so repeated calls accumulate only into leaves.
  void backward(const Tensor& loss);

  static Tape& current();

 private:
  std::vector<Entry> entries_;
};

class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* previous_;
};

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

void backward(const Tensor& loss);

namespace detail {

// Marks `out` as a non-leaf that tracks gradients and registers its backward
// closure on the current tape. Callers check any_requires_grad() first.
bool any_requires_grad(std::initializer_list<const Tensor*> inputs);
bool any_requires_grad(const std::vector<Tensor>& inputs);
void record(const Tensor& out, std::function<void()> backward, std::string op);

}  // namespace detail

}  // namespace sne
