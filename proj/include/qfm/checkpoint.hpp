#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "qfm/params.hpp"

namespace qfm {

inline constexpr char kCheckpointMagic[8] = {'Q', 'F', 'M', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
  ParamStore params;
  // Free-form metadata stored alongside the parameter table (model config,
  // label normalization, provenance).
  nlohmann::json meta = nlohmann::json::object();
};

// Layout: 8-byte magic "QFMCKPT1", u32 little-endian header length, JSON
// header {"params": [{"name", "shape", "offset"}...], "meta": {...}}, then the
// concatenated little-endian float32 payloads. Offsets are relative to the
// first payload byte.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qfm
