#include "qfm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "qfm/error.hpp"

namespace qfm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian floats");

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.params.entries()) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * sizeof(float);
  }
  nlohmann::json header = {{"params", table}, {"meta", ckpt.meta}};
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& [_, t] : ckpt.params.entries()) {
    out.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError("not a checkpoint: bad magic");
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) {
    len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  }
  if (12 + static_cast<std::size_t>(len) > bytes.size()) {
    throw FormatError("checkpoint header length exceeds file size");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid: ") + e.what());
  }
  const std::size_t payload = 12 + len;
  Checkpoint ckpt;
  if (header.contains("meta")) ckpt.meta = header["meta"];
  for (const auto& entry : header.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = shape_numel(shape);
    if (payload + offset + n * sizeof(float) > bytes.size()) {
      throw FormatError("checkpoint payload for " + name + " is truncated");
    }
    std::vector<float> data(n);
    std::memcpy(data.data(), bytes.data() + payload + offset, n * sizeof(float));
    ckpt.params.add(name, Tensor(shape, std::move(data)));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace qfm
