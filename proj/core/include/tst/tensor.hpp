#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tst {

#ifdef TST_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocation. Vectorized kernels split their work by
/// address alignment, so aligned buffers keep results bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlignment}); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<Real, AlignedAllocator<Real>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised for incompatible shapes or invalid dimension arguments.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation cannot produce a finite, meaningful result.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { Train, Eval };

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until something accumulates into it
  bool requires_grad = false;
  Tape* tape = nullptr;
  std::optional<std::size_t> node;

  Buffer& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

/// Dense row-major array with optional gradient.
///
/// A Tensor is a handle: copies share storage. Use clone() or detach() for a
/// deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static Tensor scalar(Real value, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<Real> values();
  std::span<const Real> values() const;
  Real item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  /// Empty span when no gradient has been accumulated.
  std::span<const Real> grad() const;
  void zero_grad();

  std::optional<std::size_t> tape_id() const;

  /// Deep copy detached from any tape; requires_grad is cleared.
  Tensor detach() const;
  /// Deep copy keeping requires_grad, detached from any tape.
  Tensor clone() const;
  /// Overwrite values in place from a same-shaped tensor.
  void assign(const Tensor& other);

  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const detail::ImplPtr& impl() const { return impl_; }

 private:
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}
  detail::ImplPtr impl_;
  friend class Tape;
  friend Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs);
};

/// Append-only record of differentiable operations (define-by-run).
///
/// Ops record a node only while a tape is active (see TapeScope) and at least
/// one input requires a gradient. backward() walks nodes in strict reverse
/// append order.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  std::size_t record(std::string_view kind, std::vector<detail::ImplPtr> inputs, const Tensor& output,
                     BackwardFn fn);

  /// Seeds d(loss)=1 and propagates. Leaf gradients accumulate across calls;
  /// intermediate gradients are reset at the start of every call.
  void backward(const Tensor& loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }
  std::string_view kind(std::size_t id) const { return nodes_.at(id).kind; }
  std::span<const detail::ImplPtr> inputs(std::size_t id) const { return nodes_.at(id).inputs; }

 private:
  struct Node {
    std::string kind;
    std::vector<detail::ImplPtr> inputs;
    detail::ImplPtr output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

/// Makes `tape` the active tape for the current thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Backward through the tape that produced `loss`.
void backward(const Tensor& loss);

/// Output tensor for an op; it requires a gradient iff a tape is active and
/// any input requires one.
Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs);

}  // namespace tst
