#include "sne/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace sne {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, real fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<real> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " holds " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::from(Shape shape, std::initializer_list<real> values) {
  return Tensor(std::move(shape), std::vector<real>(values));
}

real Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item(): tensor of shape " + shape_str(shape()) +
                                " is not a scalar");
  }
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad_tensor() const {
  auto g = grad();
  return Tensor(shape(), std::vector<real>(g.begin(), g.end()));
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

namespace {

thread_local Tape default_tape;
thread_local Tape* active_tape = &default_tape;
thread_local bool recording = true;

}  // namespace

Tape& Tape::current() { return *active_tape; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : "<undefined>"));
  }
  for (auto& e : entries_) e.output->grad.clear();
  const auto& root = loss.impl();
  if (!root->requires_grad) {
    throw std::invalid_argument("backward: loss does not depend on any tracked tensor");
  }
  root->grad_buffer()[0] += real(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

TapeScope::TapeScope() : previous_(active_tape) { active_tape = &tape_; }
TapeScope::~TapeScope() { active_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }

bool grad_enabled() { return recording; }

void backward(const Tensor& loss) { Tape::current().backward(loss); }

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!recording) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  if (!recording) return false;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

void record(const Tensor& out, std::function<void()> backward, std::string op) {
  out.impl()->requires_grad = true;
  out.impl()->leaf = false;
  Tape::current().record({out.impl(), std::move(backward), std::move(op)});
}

}  // namespace detail

}  // namespace sne
