#include "qfm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "qfm/error.hpp"

namespace qfm {

namespace fs = std::filesystem;

bool Manifest::synthetic() const {
  auto it = metadata.find("synthetic");
  return it != metadata.end() && it->second == "true";
}

bool Manifest::labeled() const {
  return std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.score; });
}

std::pair<float, float> Manifest::label_range() const {
  float lo = INFINITY, hi = -INFINITY;
  for (const Sample& s : samples) {
    if (!s.score) continue;
    lo = std::min(lo, *s.score);
    hi = std::max(hi, *s.score);
  }
  if (auto it = metadata.find("label_min"); it != metadata.end()) lo = std::stof(it->second);
  if (auto it = metadata.find("label_max"); it != metadata.end()) hi = std::stof(it->second);
  return {lo, hi};
}

void Manifest::validate(bool require_scores) const {
  std::set<std::string> ids;
  const auto [lo, hi] = label_range();
  for (const Sample& s : samples) {
    if (!ids.insert(s.id).second) throw FormatError("manifest " + name + ": duplicate id " + s.id);
    if (require_scores && !s.score) {
      throw FormatError("manifest " + name + ": sample " + s.id + " has no score");
    }
    if (s.score && (*s.score < lo || *s.score > hi)) {
      throw FormatError("manifest " + name + ": score of " + s.id + " outside the label range");
    }
  }
}

const Sample& Manifest::find(const std::string& id) const {
  for (const Sample& s : samples) {
    if (s.id == id) return s;
  }
  throw ConfigError("manifest " + name + " has no sample " + id);
}

float mos_proxy(const DistortionParams& p, const DistortionWeights& w) {
  const float c = 1.0f - p.contrast;
  const float e = w.blur * p.blur_sigma * p.blur_sigma + w.noise * p.noise_sigma * p.noise_sigma +
                  w.contrast * c * c + w.block * p.block_strength;
  return 100.0f * std::exp(-e);
}

namespace {

float& px(Tensor& t, std::size_t c, std::size_t y, std::size_t x, std::size_t size) {
  return t.mutable_data()[(c * size + y) * size + x];
}

void quantize(Tensor& t) {
  for (float& v : t.mutable_data()) {
    v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
  }
}

// Separable Gaussian blur with clamped borders.
Tensor gaussian_blur(const Tensor& img, float sigma) {
  if (sigma <= 0.0f) return img.detach();
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  float total = 0.0f;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5f * (i * i) / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (float& k : kernel) k /= total;
  auto src = img.data();
  std::vector<float> tmp(src.size()), out(src.size());
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = clampi(static_cast<int>(x) + k, static_cast<int>(w));
          acc += kernel[k + radius] * src[(c * h + y) * w + xx];
        }
        tmp[(c * h + y) * w + x] = acc;
      }
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = clampi(static_cast<int>(y) + k, static_cast<int>(h));
          acc += kernel[k + radius] * tmp[(c * h + yy) * w + x];
        }
        out[(c * h + y) * w + x] = acc;
      }
  return Tensor(img.shape(), std::move(out));
}

}  // namespace

Tensor render_content(Rng& rng, std::size_t size) {
  Tensor img({3, size, size});
  const float s = static_cast<float>(size);
  // Background: linear gradient between two colours along a random direction.
  float c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.1f, 0.9f);
    c1[c] = rng.uniform(0.1f, 0.9f);
  }
  const float angle = rng.uniform(0.0f, 6.2831853f);
  const float dx = std::cos(angle), dy = std::sin(angle);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const float t = std::clamp(0.5f + ((x / s - 0.5f) * dx + (y / s - 0.5f) * dy), 0.0f, 1.0f);
      for (std::size_t c = 0; c < 3; ++c) px(img, c, y, x, size) = c0[c] + (c1[c] - c0[c]) * t;
    }
  // Shapes: filled circles and rectangles, enough of them that edges reach
  // most of the frame and blur or blocking is visible everywhere.
  const std::size_t shapes = 6 + rng.index(7);
  for (std::size_t k = 0; k < shapes; ++k) {
    float col[3];
    for (float& v : col) v = rng.uniform(0.0f, 1.0f);
    const bool circle = rng.bernoulli(0.5);
    const float cx = rng.uniform(0.0f, s), cy = rng.uniform(0.0f, s);
    const float r = rng.uniform(0.06f * s, 0.25f * s);
    const float hw = rng.uniform(0.05f * s, 0.2f * s), hh = rng.uniform(0.05f * s, 0.2f * s);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const float fx = x + 0.5f - cx, fy = y + 0.5f - cy;
        const bool inside =
            circle ? fx * fx + fy * fy <= r * r : std::fabs(fx) <= hw && std::fabs(fy) <= hh;
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c) px(img, c, y, x, size) = col[c];
      }
  }
  // Sinusoidal texture.
  {
    const float freq = rng.uniform(0.2f, 0.6f);
    const float theta = rng.uniform(0.0f, 3.1415926f);
    const float amp = rng.uniform(0.05f, 0.12f);
    const float tx = std::cos(theta), ty = std::sin(theta);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const float v = amp * std::sin(freq * (x * tx + y * ty) * 6.2831853f / 2.0f);
        for (std::size_t c = 0; c < 3; ++c) px(img, c, y, x, size) += v;
      }
  }
  // Fixed intensity range, so a contrast change is measurable against it.
  auto d = img.mutable_data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  const float a = *lo, b = std::max(*hi, *lo + 1e-3f);
  for (float& v : d) v = 0.1f + 0.8f * (v - a) / (b - a);
  quantize(img);
  return img;
}

Tensor apply_distortions(const Tensor& content, const DistortionParams& p, Rng& rng) {
  Tensor img = gaussian_blur(content, p.blur_sigma);
  const std::size_t ch = img.dim(0), size = img.dim(1);
  auto d = img.mutable_data();
  if (p.contrast != 1.0f) {
    for (std::size_t c = 0; c < ch; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < size * size; ++i) mean += d[c * size * size + i];
      mean /= static_cast<double>(size * size);
      for (std::size_t i = 0; i < size * size; ++i) {
        float& v = d[c * size * size + i];
        v = static_cast<float>(mean + p.contrast * (v - mean));
      }
    }
  }
  if (p.block_strength > 0.0f) {
    // Blend towards 4x4 block means, a stand-in for coarse DCT quantization.
    constexpr std::size_t kBlock = 4;
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t by = 0; by < size; by += kBlock)
        for (std::size_t bx = 0; bx < size; bx += kBlock) {
          float mean = 0.0f;
          std::size_t n = 0;
          for (std::size_t y = by; y < std::min(size, by + kBlock); ++y)
            for (std::size_t x = bx; x < std::min(size, bx + kBlock); ++x, ++n)
              mean += d[(c * size + y) * size + x];
          mean /= static_cast<float>(n);
          for (std::size_t y = by; y < std::min(size, by + kBlock); ++y)
            for (std::size_t x = bx; x < std::min(size, bx + kBlock); ++x) {
              float& v = d[(c * size + y) * size + x];
              v = (1.0f - p.block_strength) * v + p.block_strength * mean;
            }
        }
  }
  if (p.noise_sigma > 0.0f) {
    for (float& v : d) v += rng.normal(0.0f, p.noise_sigma);
  }
  quantize(img);
  return img;
}

DistortionParams sample_distortion(Rng& rng) {
  DistortionParams p;
  // One distortion type per image, as in synthetic IQA datasets.
  bool active[4] = {false, false, false, false};
  active[rng.index(4)] = true;
  if (active[0]) p.blur_sigma = rng.uniform(0.0f, 3.0f);
  if (active[1]) p.noise_sigma = rng.uniform(0.0f, 0.3f);
  if (active[2]) p.contrast = rng.uniform(0.4f, 1.0f);
  if (active[3]) p.block_strength = rng.uniform(0.0f, 1.0f);
  return p;
}

Manifest generate_synthetic(const SyntheticOptions& opts,
                            const std::optional<fs::path>& out_dir) {
  if (opts.n_contents == 0 || opts.distortions_per_content == 0) {
    throw ConfigError("generate_synthetic: counts must be positive");
  }
  if (out_dir) {
    std::error_code ec;
    fs::create_directories(*out_dir / "images", ec);
    if (ec) throw IoError("cannot create output directory " + out_dir->string() + ": " + ec.message());
  }
  Manifest m;
  m.name = opts.name;
  m.directory = out_dir.value_or(fs::path());
  m.metadata = {
      {"name", opts.name},
      {"synthetic", "true"},
      {"seed", std::to_string(opts.seed)},
      {"label_min", "0"},
      {"label_max", "100"},
      {"mos_formula", "100*exp(-(w_blur*blur^2+w_noise*noise^2+w_contrast*(1-contrast)^2+w_block*block))"},
      {"w_blur", std::to_string(opts.weights.blur)},
      {"w_noise", std::to_string(opts.weights.noise)},
      {"w_contrast", std::to_string(opts.weights.contrast)},
      {"w_block", std::to_string(opts.weights.block)},
  };
  if (!opts.labeled) m.metadata["labeled"] = "false";
  const Rng root(opts.seed);
  const Rng content_root = root.split("content");
  const Rng distortion_root = root.split("distortion");
  m.samples.reserve(opts.n_contents * opts.distortions_per_content);
  for (std::size_t c = 0; c < opts.n_contents; ++c) {
    Rng crng = content_root.split(c);
    const Tensor content = render_content(crng, opts.image_size);
    const std::string ref = opts.id_prefix + "ref" + std::to_string(c);
    for (std::size_t d = 0; d < opts.distortions_per_content; ++d) {
      Rng drng = distortion_root.split(c * opts.distortions_per_content + d);
      const DistortionParams p = sample_distortion(drng);
      Sample s;
      s.id = ref + "_d" + std::to_string(d);
      s.reference_id = ref;
      s.image = apply_distortions(content, p, drng);
      if (opts.labeled) s.score = mos_proxy(p, opts.weights);
      if (out_dir) {
        s.path = "images/" + s.id + ".ppm";
        write_ppm(*out_dir / s.path, s.image);
      }
      m.samples.push_back(std::move(s));
    }
  }
  if (out_dir) write_manifest(*out_dir / "manifest.csv", m);
  return m;
}

void write_ppm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_ppm expects a 3-channel image, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << w << ' ' << h << "\n255\n";
  auto d = image.data();
  std::string buf(h * w * 3, '\0');
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(d[(c * h + y) * w + x], 0.0f, 1.0f);
        buf[(y * w + x) * 3 + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
      }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

Tensor read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image " + path.string());
  std::string magic;
  is >> magic;
  if (magic != "P6") throw FormatError(path.string() + ": not a binary PPM");
  auto next_int = [&]() {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string skip;
      std::getline(is, skip);
      is >> std::ws;
    }
    long v = -1;
    is >> v;
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw FormatError(path.string() + ": unsupported PPM header");
  is.get();
  std::string buf(static_cast<std::size_t>(w * h * 3), '\0');
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!is) throw FormatError(path.string() + ": truncated pixel data");
  const auto uh = static_cast<std::size_t>(h), uw = static_cast<std::size_t>(w);
  Tensor img({3, uh, uw});
  auto d = img.mutable_data();
  for (std::size_t y = 0; y < uh; ++y)
    for (std::size_t x = 0; x < uw; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        d[(c * uh + y) * uw + x] = static_cast<unsigned char>(buf[(y * uw + x) * 3 + c]) / 255.0f;
  return img;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path.string());
  for (const auto& [k, v] : m.metadata) os << '#' << k << '=' << v << '\n';
  os << "id,path,score,reference_id\n";
  char num[32];
  for (const Sample& s : m.samples) {
    os << s.id << ',' << s.path << ',';
    if (s.score) {
      // Shortest representation that round-trips exactly.
      auto res = std::to_chars(num, num + sizeof(num), *s.score);
      os.write(num, res.ptr - num);
    }
    os << ',' << s.reference_id << '\n';
  }
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Manifest parse_manifest(const std::string& text, const std::string& origin) {
  Manifest m;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw FormatError(origin + ":" + std::to_string(lineno) + ": metadata line needs key=value");
      }
      m.metadata[line.substr(1, eq - 1)] = line.substr(eq + 1);
      continue;
    }
    if (!header_seen) {
      if (line != "id,path,score,reference_id") {
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": expected header id,path,score,reference_id");
      }
      header_seen = true;
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != 4 || f[0].empty()) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected 4 fields with an id");
    }
    Sample s;
    s.id = f[0];
    s.path = f[1];
    if (!f[2].empty()) {
      float v = 0.0f;
      auto res = std::from_chars(f[2].data(), f[2].data() + f[2].size(), v);
      if (res.ec != std::errc() || res.ptr != f[2].data() + f[2].size() || !std::isfinite(v)) {
        throw FormatError(origin + ":" + std::to_string(lineno) + ": bad score '" + f[2] + "'");
      }
      s.score = v;
    }
    s.reference_id = f[3];
    m.samples.push_back(std::move(s));
  }
  if (!header_seen) throw FormatError(origin + ": missing header line");
  if (auto it = m.metadata.find("name"); it != m.metadata.end()) m.name = it->second;
  bool labeled = true;
  if (auto it = m.metadata.find("labeled"); it != m.metadata.end()) labeled = it->second != "false";
  m.validate(labeled);
  return m;
}

Manifest load_manifest(const fs::path& path, bool load_images) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  Manifest m = parse_manifest(ss.str(), path.string());
  m.directory = path.parent_path();
  if (m.name.empty()) m.name = path.parent_path().filename().string();
  if (load_images) {
    for (Sample& s : m.samples) {
      if (s.path.empty()) throw FormatError(path.string() + ": sample " + s.id + " has no path");
      s.image = read_ppm(m.directory / s.path);
    }
  }
  return m;
}

std::vector<SplitPlan> split(const Manifest& m, double fraction, std::size_t repeat_count,
                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must be in (0, 1)");
  const bool by_reference = m.synthetic();
  // Group sample ids by reference (synthetic) or by themselves.
  std::vector<std::string> keys;
  std::map<std::string, std::vector<std::string>> groups;
  for (const Sample& s : m.samples) {
    const std::string& key = by_reference ? s.reference_id : s.id;
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) keys.push_back(key);
    it->second.push_back(s.id);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(keys.size())));
  if (n_train == 0 || n_train >= keys.size()) {
    throw ConfigError("split fraction " + std::to_string(fraction) + " leaves an empty side for " +
                      std::to_string(keys.size()) + (by_reference ? " reference groups" : " samples"));
  }
  std::vector<SplitPlan> plans;
  const Rng root(seed);
  for (std::size_t r = 0; r < repeat_count; ++r) {
    Rng rng = root.split(r);
    std::vector<std::string> order = keys;
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::set<std::string> train_keys(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    SplitPlan plan;
    plan.repeat = r;
    plan.seed = seed;
    for (const std::string& key : keys) {
      auto& side = train_keys.count(key) ? plan.train_ids : plan.test_ids;
      side.insert(side.end(), groups[key].begin(), groups[key].end());
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

}  // namespace qfm
