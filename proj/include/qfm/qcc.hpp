#pragma once

#include <span>

#include "qfm/model.hpp"

namespace qfm {

struct MixWeights {
  float lambda1 = 1e-7f;
  float lambda2 = 1e-7f;
  std::size_t k = 1;
  void validate() const;
};

// Label-mixing ablation arm only.
struct LabelMixWeights {
  float beta1 = 0.1f;
  float beta2 = 0.1f;
  void validate() const;
};

// (1 - l1 - l2) F + l1/kA * sum(A matches) + l2/kB * sum(B matches), where kA
// and kB are the number of matches actually supplied. An empty match list
// hands its weight back to F. Matches enter as constants. When both effective
// weights are zero the input map itself is returned.
FeatureMap mix_features(const FeatureMap& fo, std::span<const FeatureMap> matches_a,
                        std::span<const FeatureMap> matches_b, const MixWeights& w);

// MSE between decode(mix_features(...)) and y_true.
Tensor qcc_loss(const ModelConfig& cfg, const ParamStore& params, const FeatureMap& fo,
                std::span<const FeatureMap> matches_a, std::span<const FeatureMap> matches_b,
                const MixWeights& w, float y_true);

// (1 - b1 - b2) y + b1 y1 + b2 y2
float mix_labels(float y, float y1, float y2, const LabelMixWeights& b);

}  // namespace qfm
