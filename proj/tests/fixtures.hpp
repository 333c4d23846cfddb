#pragma once

#include <string>
#include <vector>

#include "qfm/config.hpp"
#include "qfm/data.hpp"
#include "qfm/train.hpp"

namespace qfm::testing {

inline TrainConfig tiny_config() {
  TrainConfig cfg;
  auto& e = cfg.model.encoder;
  e.image_size = 8;
  e.patch_size = 4;
  e.channels = 3;
  e.embed_dim = 8;
  e.num_layers = 1;
  e.num_heads = 2;
  e.mlp_ratio = 2;
  cfg.optim.epochs = 2;
  cfg.optim.batch_size = 4;
  cfg.eval_each_epoch = false;
  return cfg;
}

inline Manifest tiny_manifest(std::uint64_t seed, const std::string& prefix, std::size_t contents = 6,
                              std::size_t per_content = 4, bool labeled = true) {
  SyntheticOptions o;
  o.n_contents = contents;
  o.distortions_per_content = per_content;
  o.seed = seed;
  o.image_size = 8;
  o.id_prefix = prefix;
  o.name = prefix.empty() ? "tiny" : prefix;
  o.labeled = labeled;
  return generate_synthetic(o);
}

inline std::vector<const Sample*> pointers(const Manifest& m) {
  std::vector<const Sample*> out;
  for (const auto& s : m.samples) out.push_back(&s);
  return out;
}

}  // namespace qfm::testing
