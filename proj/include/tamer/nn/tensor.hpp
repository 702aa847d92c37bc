#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tamer/error.hpp"

namespace tamer::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorKind::ShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 = not recorded

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

/// Dense row-major float64 array with shared ownership. Copies alias the same
/// storage, like a handle.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(nn::numel(shape), 0.0);
    impl->shape = std::move(shape);
    return Tensor(std::move(impl));
  }

  static Tensor from(Shape shape, std::vector<double> data) {
    if (data.size() != nn::numel(shape))
      fail(ErrorKind::ShapeMismatch,
           "data length " + std::to_string(data.size()) + " does not fill shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return Tensor(std::move(impl));
  }

  static Tensor scalar(double v) { return from({}, {v}); }

  /// Leaf that accumulates gradients across tapes.
  static Tensor parameter(Shape shape, std::vector<double> data) {
    Tensor t = from(std::move(shape), std::move(data));
    t.impl_->requires_grad = true;
    return t;
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->ensure_grad(); }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  double item() const {
    if (numel() != 1) fail(ErrorKind::NotScalar, "item() on shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  std::uint64_t tape_id() const { return impl_->tape_id; }

  /// Independent copy of the values, detached from any tape.
  Tensor clone() const { return from(impl_->shape, impl_->data); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<TensorImpl> impl_;
};

/// Records operations while active on the current thread; `backward` replays
/// them in reverse. A tape can be consumed once.
class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(current()) { current() = &tape; }
    ~Scope() { current() = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active() { return current(); }

  std::uint64_t id() const noexcept { return id_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void record(const Tensor& out, std::function<void()> backward) {
    if (consumed_) fail(ErrorKind::TapeConsumed, "cannot record on a consumed tape");
    out.impl()->requires_grad = true;
    out.impl()->tape_id = id_;
    entries_.push_back({out.impl(), std::move(backward)});
  }

  void backward(const Tensor& loss) {
    if (consumed_) fail(ErrorKind::TapeConsumed, "backward() already ran on this tape");
    if (loss.numel() != 1) fail(ErrorKind::NotScalar, "loss has shape " + shape_str(loss.shape()));
    if (loss.tape_id() != id_) fail(ErrorKind::NotOnTape, "loss was not recorded on this tape");
    for (auto& e : entries_) e.out->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    consumed_ = true;
  }

 private:
  struct Entry {
    std::shared_ptr<TensorImpl> out;
    std::function<void()> backward;
  };

  static Tape*& current() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  std::vector<Entry> entries_;
  std::uint64_t id_;
  bool consumed_ = false;
};

namespace detail {

inline Tape* recording(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return tape;
  return nullptr;
}

}  // namespace detail

}  // namespace tamer::nn
