#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "qfm/rng.hpp"
#include "qfm/tensor.hpp"

namespace qfm::testing {

struct GradCheckResult {
  double rel_error = 0.0;  // worst single input
  std::size_t input = 0;
  double joint_rel_error = 0.0;  // all inputs as one vector
};

inline double weighted_sum(const Tensor& out, const std::vector<float>& w) {
  double s = 0.0;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) s += static_cast<double>(d[i]) * w[i];
  return s;
}

// Compares tape gradients of L = sum(w * f(inputs)) against central
// differences. Returns the largest norm-wise relative error over the inputs.
inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, Rng& rng, float h = 5e-3f) {
  for (auto& t : inputs) t.set_requires_grad(true);
  std::vector<float> w;
  {
    Tape tape;
    Tensor out = f(inputs);
    for (std::size_t i = 0; i < out.numel(); ++i) w.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
    tape.backward(out, w);
  }
  GradCheckResult worst;
  double jdiff = 0.0, jna = 0.0, jnn = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<float> analytic(inputs[k].grad().begin(), inputs[k].grad().end());
    if (analytic.empty()) analytic.assign(inputs[k].numel(), 0.0f);
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      auto data = inputs[k].mutable_data();
      const float orig = data[i];
      auto at = [&](float offset) {
        NoGradGuard ng;
        data[i] = orig + offset;
        return weighted_sum(f(inputs), w);
      };
      // Five-point stencil: truncation error O(h^4) rather than O(h^2).
      const double numeric = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) /
                             (12.0 * static_cast<double>(h));
      data[i] = orig;
      diff += (numeric - analytic[i]) * (numeric - analytic[i]);
      na += static_cast<double>(analytic[i]) * analytic[i];
      nn += numeric * numeric;
    }
    jdiff += diff, jna += na, jnn += nn;
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
    const double rel = std::sqrt(diff) / denom;
    if (rel >= worst.rel_error) worst = {rel, k};
  }
  worst.joint_rel_error = std::sqrt(jdiff) / std::max({std::sqrt(jna), std::sqrt(jnn), 1e-6});
  for (auto& t : inputs) t.clear_grad();
  return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace qfm::testing
