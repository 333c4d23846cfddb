#include "qfm/qcc.hpp"

#include <cmath>
#include <string>

#include "qfm/error.hpp"
#include "qfm/ops.hpp"

namespace qfm {

void MixWeights::validate() const {
  if (!(lambda1 >= 0.0f && lambda1 < 1.0f && lambda2 >= 0.0f && lambda2 < 1.0f)) {
    throw ConfigError("lambda1 and lambda2 must lie in [0, 1)");
  }
  if (!(lambda1 + lambda2 < 1.0f)) throw ConfigError("lambda1 + lambda2 must be below 1");
  if (k < 1) throw ConfigError("K must be at least 1");
}

void LabelMixWeights::validate() const {
  if (!(beta1 >= 0.0f && beta1 < 1.0f && beta2 >= 0.0f && beta2 < 1.0f &&
        beta1 + beta2 < 1.0f)) {
    throw ConfigError("beta1, beta2 must lie in [0, 1) with beta1 + beta2 < 1");
  }
}

FeatureMap mix_features(const FeatureMap& fo, std::span<const FeatureMap> matches_a,
                        std::span<const FeatureMap> matches_b, const MixWeights& w) {
  w.validate();
  for (auto group : {matches_a, matches_b}) {
    for (const FeatureMap& m : group) {
      if (m.tokens.shape() != fo.tokens.shape()) {
        throw ShapeError("mix_features: match " + shape_str(m.tokens.shape()) +
                         " does not match F_o " + shape_str(fo.tokens.shape()));
      }
    }
  }
  const float l1 = matches_a.empty() ? 0.0f : w.lambda1;
  const float l2 = matches_b.empty() ? 0.0f : w.lambda2;
  if (l1 == 0.0f && l2 == 0.0f) return fo;

  std::vector<float> noise(fo.tokens.numel(), 0.0f);
  auto accumulate = [&noise](std::span<const FeatureMap> group, float coeff) {
    for (const FeatureMap& m : group) {
      auto d = m.tokens.data();
      for (std::size_t i = 0; i < noise.size(); ++i) noise[i] += coeff * d[i];
    }
  };
  if (l1 > 0.0f) accumulate(matches_a, l1 / static_cast<float>(matches_a.size()));
  if (l2 > 0.0f) accumulate(matches_b, l2 / static_cast<float>(matches_b.size()));
  const Tensor constant(fo.tokens.shape(), std::move(noise));
  return FeatureMap{ops::add(ops::scale(fo.tokens, 1.0f - l1 - l2), constant)};
}

Tensor qcc_loss(const ModelConfig& cfg, const ParamStore& params, const FeatureMap& fo,
                std::span<const FeatureMap> matches_a, std::span<const FeatureMap> matches_b,
                const MixWeights& w, float y_true) {
  const FeatureMap mixed = mix_features(fo, matches_a, matches_b, w);
  return ops::mse(decode(mixed, cfg, params), y_true);
}

float mix_labels(float y, float y1, float y2, const LabelMixWeights& b) {
  b.validate();
  return (1.0f - b.beta1 - b.beta2) * y + b.beta1 * y1 + b.beta2 * y2;
}

}  // namespace qfm
