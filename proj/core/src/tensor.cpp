#include "tst/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace tst {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), Real(0));
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data.assign(values.begin(), values.end());
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

static const detail::ImplPtr& checked(const detail::ImplPtr& p) {
  if (!p) throw std::logic_error("use of an undefined tensor");
  return p;
}

const Shape& Tensor::shape() const { return checked(impl_)->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_)->data.size(); }

std::span<Real> Tensor::values() { return checked(impl_)->data; }
std::span<const Real> Tensor::values() const { return checked(impl_)->data; }

Real Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  checked(impl_)->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }

std::span<const Real> Tensor::grad() const {
  if (!has_grad()) return {};
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

std::optional<std::size_t> Tensor::tape_id() const { return impl_ ? impl_->node : std::nullopt; }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

void Tensor::assign(const Tensor& other) {
  if (other.shape() != shape()) {
    throw DimensionError("assign: shape " + shape_string(other.shape()) + " into " + shape_string(shape()));
  }
  impl_->data = other.impl_->data;
}

Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(shape_numel(shape), Real(0));
  impl->shape = std::move(shape);
  if (g_active_tape) {
    for (const Tensor* in : inputs) {
      if (in && in->requires_grad()) {
        impl->requires_grad = true;
        break;
      }
    }
  }
  return Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------

Tape::~Tape() { clear(); }

std::size_t Tape::record(std::string_view kind, std::vector<detail::ImplPtr> inputs, const Tensor& output,
                         BackwardFn fn) {
  const auto& out = checked(output.impl());
  std::size_t id = nodes_.size();
  out->tape = this;
  out->node = id;
  nodes_.push_back(Node{std::string(kind), std::move(inputs), out, std::move(fn)});
  return id;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw std::logic_error("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  const auto& impl = loss.impl();
  if (impl->tape != this || !impl->node) {
    throw std::logic_error("backward: loss was not recorded on this tape");
  }
  const std::size_t last = *impl->node;
  for (std::size_t i = 0; i <= last; ++i) nodes_[i].output->grad.clear();
  impl->grad.assign(1, Real(1));
  for (std::size_t i = last + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.output->grad.empty()) continue;  // unreachable from loss
    node.fn();
  }
}

void Tape::clear() {
  for (auto& node : nodes_) {
    node.output->tape = nullptr;
    node.output->node.reset();
  }
  nodes_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  if (!loss.defined() || !loss.impl()->tape) {
    throw std::logic_error("backward: loss is not on a tape (was a TapeScope active?)");
  }
  loss.impl()->tape->backward(loss);
}

}  // namespace tst
