#include "qfm/optim.hpp"

#include <cmath>

#include "qfm/error.hpp"

namespace qfm {

void adamw_update(std::span<float> param, std::span<const float> grad, MomentBuffers& moments,
                  std::int64_t step, float lr, const AdamWConfig& cfg) {
  if (param.size() != grad.size()) {
    throw ShapeError("adamw: parameter and gradient sizes differ");
  }
  if (!(lr > 0.0f)) throw ConfigError("adamw: learning rate must be positive");
  if (moments.m.empty()) {
    moments.m.assign(param.size(), 0.0f);
    moments.v.assign(param.size(), 0.0f);
  }
  if (moments.m.size() != param.size()) throw ShapeError("adamw: state size mismatch");
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(step));
  const float decay = 1.0f - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    float& m = moments.m[i];
    float& v = moments.v[i];
    m = cfg.beta1 * m + (1.0f - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0f - cfg.beta2) * g * g;
    const float mhat = static_cast<float>(m / bc1);
    const float vhat = static_cast<float>(v / bc2);
    param[i] = param[i] * decay - lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void AdamW::step(ParamStore& params, float lr) {
  auto& entries = params.entries();
  for (auto& [name, t] : entries) {
    if (!t.has_grad()) continue;
    for (float g : t.grad()) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient for parameter " + name);
    }
  }
  if (moments_.size() != entries.size()) moments_.resize(entries.size());
  ++step_;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& t = entries[i].second;
    if (!t.has_grad()) continue;
    adamw_update(t.mutable_data(), t.grad(), moments_[i], step_, lr, cfg_);
    t.zero_grad();
  }
}

}  // namespace qfm
