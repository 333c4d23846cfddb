#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qfm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 array. Copies are shallow: two Tensor handles may
// refer to the same storage, which is how the tape links outputs to inputs.
// Use clone() or detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value) { return Tensor(Shape{1}, std::vector<float>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const;

  std::span<const float> data() const;
  // Direct write access; only initializers and optimizers should use this.
  std::span<float> mutable_data();
  float item() const;
  float at(std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const float> grad() const;
  // Lazily allocates a zero-filled gradient buffer. Gradient state belongs to
  // the shared storage, so this is available through const handles.
  std::span<float> mutable_grad() const;
  void zero_grad() const;
  void clear_grad() const;

  // New storage with the same values, no gradient linkage.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

// Throws NumericError if any value of t is NaN or Inf.
void check_finite(const Tensor& t, std::string_view context);

// Ordered record of differentiable operations executed while the tape is the
// active one on the current thread. A Tape activates itself on construction
// and restores the previously active tape on destruction. backward() replays
// the records in reverse order and then discards them.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::string_view op, Tensor output, std::function<void()> backward);

  // loss must hold exactly one element; its gradient is seeded with 1.
  void backward(const Tensor& loss);
  // Vector-Jacobian product: seeds output's gradient with `seed`.
  void backward(const Tensor& output, std::span<const float> seed);

  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> op_names() const;
  void clear() { entries_.clear(); }

  // Called with each op name as backward visits it.
  void set_visit_hook(std::function<void(std::string_view)> hook) { hook_ = std::move(hook); }

 private:
  struct Entry {
    std::string op;
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  Tape* previous_;
  std::function<void(std::string_view)> hook_;
};

// Suspends recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

}  // namespace qfm
