#include "qfm/tensor.hpp"

#include <cmath>
#include <sstream>

#include "qfm/error.hpp"

namespace qfm {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

struct Tensor::Impl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
};

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
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

static void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

Tensor::Tensor(Shape shape) : impl_(std::make_shared<Impl>()) {
  validate_shape(shape);
  impl_->data.assign(shape_numel(shape), 0.0f);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  validate_shape(shape);
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const float> Tensor::data() const { return impl_->data; }
std::span<float> Tensor::mutable_data() { return impl_->data; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const float> Tensor::grad() const { return impl_->grad; }

std::span<float> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

void Tensor::clear_grad() const {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

void check_finite(const Tensor& t, std::string_view context) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in output of " + std::string(context) + " " +
                         shape_str(t.shape()));
    }
  }
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::string_view op, Tensor output, std::function<void()> backward) {
  entries_.push_back({std::string(op), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a single-element loss, got " + shape_str(loss.shape()));
  }
  const float one = 1.0f;
  backward(loss, std::span<const float>(&one, 1));
}

void Tape::backward(const Tensor& output, std::span<const float> seed) {
  if (seed.size() != output.numel()) {
    throw ShapeError("backward(): seed has " + std::to_string(seed.size()) + " values for output " +
                     shape_str(output.shape()));
  }
  auto g = output.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (hook_) hook_(it->op);
    // Outputs that never received gradient contribute nothing upstream.
    if (!it->output.has_grad()) continue;
    it->backward();
  }
  entries_.clear();
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op);
  return names;
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

}  // namespace qfm
