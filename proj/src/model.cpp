#include "qfm/model.hpp"

#include <cmath>
#include <string>

#include "qfm/error.hpp"
#include "qfm/ops.hpp"

namespace qfm {

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " must be a positive multiple of patch_size " + std::to_string(patch_size));
  }
  if (channels == 0 || embed_dim == 0 || num_layers == 0 || mlp_ratio == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must be divisible by num_heads " +
                      std::to_string(num_heads));
  }
}

void DecoderConfig::validate() const {
  if (num_queries < 1) throw ConfigError("decoder needs at least one query");
  if (num_layers < 1) throw ConfigError("decoder needs at least one layer");
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (!(ln_eps > 0.0f)) throw ConfigError("ln_eps must be positive");
  if (!(pixel_std > 0.0f) || !std::isfinite(pixel_mean)) {
    throw ConfigError("pixel_std must be positive and pixel_mean finite");
  }
}

bool ModelConfig::operator==(const ModelConfig& o) const {
  const auto& a = encoder;
  const auto& b = o.encoder;
  return a.image_size == b.image_size && a.patch_size == b.patch_size &&
         a.channels == b.channels && a.embed_dim == b.embed_dim &&
         a.num_layers == b.num_layers && a.num_heads == b.num_heads &&
         a.mlp_ratio == b.mlp_ratio && decoder.num_queries == o.decoder.num_queries &&
         decoder.num_layers == o.decoder.num_layers && ln_eps == o.ln_eps &&
         pixel_mean == o.pixel_mean && pixel_std == o.pixel_std;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"image_size", cfg.encoder.image_size},
          {"patch_size", cfg.encoder.patch_size},
          {"channels", cfg.encoder.channels},
          {"embed_dim", cfg.encoder.embed_dim},
          {"num_layers", cfg.encoder.num_layers},
          {"num_heads", cfg.encoder.num_heads},
          {"mlp_ratio", cfg.encoder.mlp_ratio},
          {"decoder_queries", cfg.decoder.num_queries},
          {"decoder_layers", cfg.decoder.num_layers},
          {"ln_eps", cfg.ln_eps},
          {"init_std", cfg.init_std},
          {"pixel_mean", cfg.pixel_mean},
          {"pixel_std", cfg.pixel_std}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.encoder.image_size = j.at("image_size").get<std::size_t>();
  cfg.encoder.patch_size = j.at("patch_size").get<std::size_t>();
  cfg.encoder.channels = j.at("channels").get<std::size_t>();
  cfg.encoder.embed_dim = j.at("embed_dim").get<std::size_t>();
  cfg.encoder.num_layers = j.at("num_layers").get<std::size_t>();
  cfg.encoder.num_heads = j.at("num_heads").get<std::size_t>();
  cfg.encoder.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  cfg.decoder.num_queries = j.at("decoder_queries").get<std::size_t>();
  cfg.decoder.num_layers = j.at("decoder_layers").get<std::size_t>();
  cfg.ln_eps = j.value("ln_eps", 1e-6f);
  cfg.init_std = j.value("init_std", 0.02f);
  cfg.pixel_mean = j.value("pixel_mean", 0.5f);
  cfg.pixel_std = j.value("pixel_std", 0.25f);
  cfg.validate();
  return cfg;
}

namespace {

Tensor param(Shape shape, std::vector<float> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

Tensor embedding(Rng& rng, std::size_t rows, std::size_t cols, float stddev) {
  std::vector<float> v(rows * cols);
  for (float& x : v) x = rng.truncated_normal(stddev);
  return param({rows, cols}, std::move(v));
}

Tensor uniform(Rng& rng, Shape shape, float bound) {
  std::vector<float> v(shape_numel(shape));
  for (float& x : v) x = rng.uniform(-bound, bound);
  return param(std::move(shape), std::move(v));
}

float fan_in_bound(std::size_t fan_in) { return 1.0f / std::sqrt(static_cast<float>(fan_in)); }

void add_linear(ParamStore& p, Rng& rng, const std::string& prefix, std::size_t in, std::size_t out) {
  p.add(prefix + "/w", uniform(rng, {in, out}, fan_in_bound(in)));
  p.add(prefix + "/b", uniform(rng, {out}, fan_in_bound(in)));
}

Tensor zeros(std::size_t n) {
  Tensor t({n});
  t.set_requires_grad(true);
  return t;
}

Tensor ones(std::size_t n) {
  Tensor t = Tensor::full({n}, 1.0f);
  t.set_requires_grad(true);
  return t;
}

void add_norm(ParamStore& p, const std::string& prefix, std::size_t d) {
  p.add(prefix + "/gamma", ones(d));
  p.add(prefix + "/beta", zeros(d));
}

void add_attention(ParamStore& p, Rng& rng, const std::string& prefix, std::size_t d) {
  const float glorot = std::sqrt(6.0f / static_cast<float>(2 * d));
  for (const char* m : {"q", "k", "v"}) {
    p.add(prefix + "/w" + m, uniform(rng, {d, d}, glorot));
    p.add(prefix + "/b" + m, zeros(d));
  }
  p.add(prefix + "/wo", uniform(rng, {d, d}, fan_in_bound(d)));
  p.add(prefix + "/bo", zeros(d));
}

void add_mlp(ParamStore& p, Rng& rng, const std::string& prefix, std::size_t d, std::size_t hidden) {
  add_linear(p, rng, prefix + "/fc1", d, hidden);
  add_linear(p, rng, prefix + "/fc2", hidden, d);
}

Tensor norm(const Tensor& x, const ParamStore& p, const std::string& prefix, float eps) {
  return ops::layernorm(x, p.get(prefix + "/gamma"), p.get(prefix + "/beta"), eps);
}

Tensor attention(const Tensor& queries, const Tensor& context, const ParamStore& p,
                 const std::string& prefix, std::size_t heads) {
  const Tensor q = ops::linear(queries, p.get(prefix + "/wq"), p.get(prefix + "/bq"));
  const Tensor k = ops::linear(context, p.get(prefix + "/wk"), p.get(prefix + "/bk"));
  const Tensor v = ops::linear(context, p.get(prefix + "/wv"), p.get(prefix + "/bv"));
  const std::size_t d = q.dim(1);
  const std::size_t dh = d / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = ops::slice_cols(q, h * dh, dh);
    const Tensor kh = ops::slice_cols(k, h * dh, dh);
    const Tensor vh = ops::slice_cols(v, h * dh, dh);
    const Tensor logits = ops::scale(ops::matmul(qh, ops::transpose(kh)), scale);
    outs.push_back(ops::matmul(ops::softmax(logits, 1), vh));
  }
  const Tensor merged = heads == 1 ? outs[0] : ops::concat_cols(outs);
  return ops::linear(merged, p.get(prefix + "/wo"), p.get(prefix + "/bo"));
}

Tensor mlp(const Tensor& x, const ParamStore& p, const std::string& prefix) {
  const Tensor h = ops::gelu(ops::linear(x, p.get(prefix + "/fc1/w"), p.get(prefix + "/fc1/b")));
  return ops::linear(h, p.get(prefix + "/fc2/w"), p.get(prefix + "/fc2/b"));
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto& e = cfg.encoder;
  const std::size_t d = e.embed_dim;
  const std::size_t hidden = d * e.mlp_ratio;
  const float sd = cfg.init_std;
  ParamStore p;
  add_linear(p, rng, "encoder/patch_embed", e.channels * e.patch_size * e.patch_size, d);
  p.add("encoder/cls", embedding(rng, 1, d, sd));
  p.add("encoder/pos", embedding(rng, e.num_tokens(), d, sd));
  for (std::size_t i = 0; i < e.num_layers; ++i) {
    const std::string b = "encoder/block" + std::to_string(i);
    add_norm(p, b + "/norm1", d);
    add_attention(p, rng, b + "/attn", d);
    add_norm(p, b + "/norm2", d);
    add_mlp(p, rng, b + "/mlp", d, hidden);
  }
  add_norm(p, "encoder/norm", d);

  p.add("decoder/queries", embedding(rng, cfg.decoder.num_queries, d, sd));
  for (std::size_t i = 0; i < cfg.decoder.num_layers; ++i) {
    const std::string b = "decoder/layer" + std::to_string(i);
    add_norm(p, b + "/norm_q", d);
    add_norm(p, b + "/norm_kv", d);
    add_attention(p, rng, b + "/cross_attn", d);
    add_norm(p, b + "/norm2", d);
    add_mlp(p, rng, b + "/mlp", d, hidden);
  }
  add_norm(p, "decoder/norm", d);
  add_linear(p, rng, "decoder/head", d, 1);
  return p;
}

Tensor embed(const Tensor& image, const ModelConfig& cfg, const ParamStore& params) {
  const auto& e = cfg.encoder;
  const Shape expected{e.channels, e.image_size, e.image_size};
  if (!image.defined() || image.shape() != expected) {
    throw ShapeError("encode: image shape " + (image.defined() ? shape_str(image.shape()) : "[]") +
                     " does not match configured " + shape_str(expected));
  }
  Tensor patches = ops::patchify(image, e.patch_size);
  if (cfg.pixel_mean != 0.0f || cfg.pixel_std != 1.0f) {
    patches = ops::scale(ops::add(patches, Tensor::scalar(-cfg.pixel_mean)), 1.0f / cfg.pixel_std);
  }
  const Tensor tokens = ops::linear(patches, params.get("encoder/patch_embed/w"),
                                    params.get("encoder/patch_embed/b"));
  const Tensor parts[] = {params.get("encoder/cls"), tokens};
  return ops::add(ops::concat_rows(parts), params.get("encoder/pos"));
}

FeatureMap encode(const Tensor& image, const ModelConfig& cfg, const ParamStore& params) {
  const auto& e = cfg.encoder;
  Tensor x = embed(image, cfg, params);
  for (std::size_t i = 0; i < e.num_layers; ++i) {
    const std::string b = "encoder/block" + std::to_string(i);
    const Tensor h = norm(x, params, b + "/norm1", cfg.ln_eps);
    x = ops::add(x, attention(h, h, params, b + "/attn", e.num_heads));
    x = ops::add(x, mlp(norm(x, params, b + "/norm2", cfg.ln_eps), params, b + "/mlp"));
  }
  return FeatureMap{norm(x, params, "encoder/norm", cfg.ln_eps)};
}

Tensor decode(const FeatureMap& features, const ModelConfig& cfg, const ParamStore& params) {
  const auto& e = cfg.encoder;
  if (features.tokens.rank() != 2 || features.cols() != e.embed_dim) {
    throw ShapeError("decode: feature map " + shape_str(features.tokens.shape()) +
                     " does not have embed_dim " + std::to_string(e.embed_dim) + " columns");
  }
  Tensor q = params.get("decoder/queries");
  for (std::size_t i = 0; i < cfg.decoder.num_layers; ++i) {
    const std::string b = "decoder/layer" + std::to_string(i);
    const Tensor ctx = norm(features.tokens, params, b + "/norm_kv", cfg.ln_eps);
    const Tensor qn = norm(q, params, b + "/norm_q", cfg.ln_eps);
    q = ops::add(q, attention(qn, ctx, params, b + "/cross_attn", e.num_heads));
    q = ops::add(q, mlp(norm(q, params, b + "/norm2", cfg.ln_eps), params, b + "/mlp"));
  }
  Tensor out = norm(q, params, "decoder/norm", cfg.ln_eps);
  if (out.dim(0) > 1) out = ops::mean_rows(out);
  return ops::linear(out, params.get("decoder/head/w"), params.get("decoder/head/b"));
}

std::vector<float> flatten(const FeatureMap& features) {
  return std::vector<float>(features.tokens.data().begin(), features.tokens.data().end());
}

FeatureMap unflatten(std::span<const float> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) {
    throw ShapeError("unflatten: " + std::to_string(values.size()) + " values cannot form " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  return FeatureMap{Tensor({rows, cols}, std::vector<float>(values.begin(), values.end()))};
}

float predict(const Tensor& image, const ModelConfig& cfg, const ParamStore& params) {
  NoGradGuard guard;
  return decode(encode(image, cfg, params), cfg, params).item();
}

}  // namespace qfm
