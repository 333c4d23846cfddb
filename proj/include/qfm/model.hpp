#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfm/params.hpp"
#include "qfm/rng.hpp"
#include "qfm/tensor.hpp"

namespace qfm {

struct EncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;

  std::size_t num_patches() const {
    const std::size_t g = image_size / patch_size;
    return g * g;
  }
  std::size_t num_tokens() const { return num_patches() + 1; }
  void validate() const;
};

struct DecoderConfig {
  std::size_t num_queries = 1;
  std::size_t num_layers = 1;
  void validate() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  float ln_eps = 1e-6f;
  // Std of the class token, positional embeddings and decoder queries.
  // Linear layers use fan-in scaled uniform init instead.
  float init_std = 0.02f;
  // Pixels enter the patch projection as (x - pixel_mean) / pixel_std.
  float pixel_mean = 0.5f;
  float pixel_std = 0.25f;

  void validate() const;
  std::size_t feature_length() const { return encoder.num_tokens() * encoder.embed_dim; }
  bool operator==(const ModelConfig&) const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Encoder output F_o: (M+1) x D, row 0 is the class token.
struct FeatureMap {
  Tensor tokens;

  std::size_t rows() const { return tokens.dim(0); }
  std::size_t cols() const { return tokens.dim(1); }
};

// Linear weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); attention
// q/k/v weights Glorot-uniform with zero biases; truncated-normal embeddings;
// unit layer-norm gains.
ParamStore init_params(const ModelConfig& cfg, Rng& rng);

// Token matrix entering the first encoder block: [cls; patches * W + b] + pos.
Tensor embed(const Tensor& image, const ModelConfig& cfg, const ParamStore& params);

FeatureMap encode(const Tensor& image, const ModelConfig& cfg, const ParamStore& params);

// Quality score as a 1 x 1 tensor.
Tensor decode(const FeatureMap& features, const ModelConfig& cfg, const ParamStore& params);

// Row-major concatenation, class token first.
std::vector<float> flatten(const FeatureMap& features);
FeatureMap unflatten(std::span<const float> values, std::size_t rows, std::size_t cols);

// Inference path only: encoder then decoder, nothing recorded.
float predict(const Tensor& image, const ModelConfig& cfg, const ParamStore& params);

}  // namespace qfm
