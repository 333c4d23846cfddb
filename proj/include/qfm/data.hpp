#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qfm/rng.hpp"
#include "qfm/tensor.hpp"

namespace qfm {

struct Sample {
  std::string id;
  std::string path;  // relative to the manifest directory, may be empty in memory
  Tensor image;      // [C x H x W] in [0, 1]; undefined until loaded
  std::optional<float> score;
  std::string reference_id;
};

struct Manifest {
  std::string name;
  std::vector<Sample> samples;
  std::map<std::string, std::string> metadata;
  std::filesystem::path directory;

  bool synthetic() const;
  bool labeled() const;
  // [min, max] over present scores; metadata label_min/label_max win when set.
  std::pair<float, float> label_range() const;
  // Unique ids; labeled manifests need a score on every sample.
  void validate(bool require_scores) const;
  const Sample& find(const std::string& id) const;
};

// Coefficients of the MOS proxy exponent.
struct DistortionWeights {
  float blur = 0.15f;
  float noise = 15.0f;
  float contrast = 3.75f;
  float block = 1.35f;
};

struct DistortionParams {
  float blur_sigma = 0.0f;      // [0, 3]
  float noise_sigma = 0.0f;     // [0, 0.3]
  float contrast = 1.0f;        // [0.4, 1]
  float block_strength = 0.0f;  // [0, 1]
};

// 100 * exp(-(wb s_b^2 + wn s_n^2 + wc (1 - c)^2 + wk k))
float mos_proxy(const DistortionParams& p, const DistortionWeights& w);

Tensor render_content(Rng& rng, std::size_t size);
Tensor apply_distortions(const Tensor& content, const DistortionParams& p, Rng& rng);
DistortionParams sample_distortion(Rng& rng);

struct SyntheticOptions {
  std::size_t n_contents = 80;
  std::size_t distortions_per_content = 16;
  std::uint64_t seed = 0;
  std::size_t image_size = 32;
  DistortionWeights weights;
  std::string name = "synthetic";
  // Sample ids and reference ids are prefixed with this so pools generated
  // from different seeds never collide.
  std::string id_prefix;
  bool labeled = true;
};

// Generates in memory; when out_dir is set also writes PPM images and
// manifest.csv there.
Manifest generate_synthetic(const SyntheticOptions& opts,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Binary P6 with maxval 255.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

// CSV with `#key=value` metadata lines, then header id,path,score,reference_id.
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest load_manifest(const std::filesystem::path& path, bool load_images = true);
Manifest parse_manifest(const std::string& text, const std::string& origin = "<memory>");

struct SplitPlan {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
};

// Synthetic manifests are split by reference_id groups, others by sample id.
std::vector<SplitPlan> split(const Manifest& m, double fraction, std::size_t repeat_count,
                             std::uint64_t seed);

}  // namespace qfm
