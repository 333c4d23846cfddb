#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qfm/params.hpp"

namespace qfm {

struct AdamWConfig {
  float lr = 2e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

struct MomentBuffers {
  std::vector<float> m;
  std::vector<float> v;
};

// One decoupled-weight-decay Adam update of a single buffer. `step` is the
// 1-based step count used for bias correction.
void adamw_update(std::span<float> param, std::span<const float> grad, MomentBuffers& moments,
                  std::int64_t step, float lr, const AdamWConfig& cfg);

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  // Applies one update to every parameter that has a gradient, then clears the
  // gradients. Throws TrainingError naming the first parameter whose gradient
  // is non-finite; no parameter is modified in that case.
  void step(ParamStore& params, float lr);

  std::int64_t steps() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<MomentBuffers> moments_;
};

}  // namespace qfm
