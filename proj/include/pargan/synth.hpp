#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pargan/data.hpp"
#include "pargan/image.hpp"

namespace pargan {

/// Deterministic per-item generator derived from a run seed and an index.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return Rng(seq);
}

struct BeamSpec {
  double cx = 0.5;         // fraction of width
  double cy = 0.5;         // fraction of height
  double intensity = 1.0;  // [0, 1]
  double sigma = 0.25;     // spot std as a fraction of the image diagonal

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    auto unit = [&](double x, const char* name) {
      if (!(x >= 0.0 && x <= 1.0)) v.push_back(std::string(name) + " must lie in [0, 1]");
    };
    unit(cx, "cx");
    unit(cy, "cy");
    unit(intensity, "intensity");
    if (!(sigma > 0.0 && sigma <= 1.0)) v.push_back("sigma must lie in (0, 1]");
    return v;
  }
};

/// Multiplicative dim + Gaussian gain light model.
struct BeamModel {
  double dim = 0.55;
  double gain = 0.9;
};

inline const std::vector<Axis>& beam_axes() {
  static const std::vector<Axis> axes = unit_axes({"cx", "cy", "intensity"});
  return axes;
}

/// Unit-peak Gaussian spot evaluated at pixel centers.
inline double beam_profile(const BeamSpec& spec, int height, int width, int row, int col) {
  const double diag = std::sqrt(double(width) * width + double(height) * height);
  const double sd = spec.sigma * diag;
  const double dx = (col + 0.5) - spec.cx * width;
  const double dy = (row + 0.5) - spec.cy * height;
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sd * sd));
}

/// out = (1 - I) * base + I * clamp(base * (dim + gain * G), -1, 1).
/// Intensity 0 reproduces the base image exactly.
inline Image render_beam(const Image& base, const BeamSpec& spec, const BeamModel& model = {}) {
  const auto bad = spec.violations();
  if (!bad.empty()) throw Error(ErrorCode::validation, "render_beam: " + bad.front());
  if (base.rank() != 4 || base.dim(0) != 1 || base.dim(1) != 3) {
    throw Error(ErrorCode::shape, "render_beam: expected a [1,3,H,W] image");
  }
  const int h = image_height(base), w = image_width(base);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Image out(base.shape());
  const double amount = spec.intensity;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double factor = model.dim + model.gain * beam_profile(spec, h, w, r, c);
      for (int ch = 0; ch < 3; ++ch) {
        const std::size_t i = ch * plane + static_cast<std::size_t>(r) * w + c;
        const double b = base[i];
        const double lit = std::clamp(b * factor, -1.0, 1.0);
        out[i] = static_cast<float>((1.0 - amount) * b + amount * lit);
      }
    }
  }
  return out;
}

namespace detail {
inline void fill_rect(Image& im, int r0, int c0, int r1, int c1, const std::array<float, 3>& color) {
  const int h = image_height(im), w = image_width(im);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int r = std::max(0, r0); r < std::min(h, r1); ++r)
    for (int c = std::max(0, c0); c < std::min(w, c1); ++c)
      for (int ch = 0; ch < 3; ++ch) im[ch * plane + static_cast<std::size_t>(r) * w + c] = color[ch];
}
}  // namespace detail

/// Procedural "book cover": a solid field, a title block and text-like bars.
inline Image make_cover(int size, Rng& rng) {
  std::uniform_real_distribution<float> bright(0.05f, 0.85f);
  std::uniform_real_distribution<float> any(-0.7f, 0.85f);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Image im = make_image(size, size);
  detail::fill_rect(im, 0, 0, size, size, {bright(rng), bright(rng), bright(rng)});

  const int margin = std::max(1, size / 8);
  const int title_top = margin + static_cast<int>(unit(rng) * size / 8);
  const int title_h = std::max(2, size / 6);
  detail::fill_rect(im, title_top, margin, title_top + title_h, size - margin, {any(rng), any(rng), any(rng)});

  const std::array<float, 3> ink{any(rng), any(rng), any(rng)};
  const int bar_h = std::max(1, size / 32);
  const int bars = 3 + static_cast<int>(unit(rng) * 4);
  int row = title_top + title_h + 2 * bar_h + 1;
  for (int b = 0; b < bars && row + bar_h < size - margin / 2; ++b) {
    const int len = static_cast<int>((0.4 + 0.5 * unit(rng)) * (size - 2 * margin));
    detail::fill_rect(im, row, margin, row + bar_h, margin + len, ink);
    row += 3 * bar_h;
  }
  return im;
}

inline std::vector<Image> make_covers(int count, int size, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng = derive_rng(seed, static_cast<std::uint64_t>(i), 0xC0);
    out.push_back(make_cover(size, rng));
  }
  return out;
}

inline std::string indexed_name(const std::string& stem, std::size_t index) {
  std::ostringstream os;
  os << stem << '_' << std::setw(6) << std::setfill('0') << index << ".png";
  return os.str();
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::io, "cannot create output directory '" + dir.string() + "'");
  }
}

/// Writes images to `dir/<stem>_NNNNNN.png` and returns the unlabeled manifest.
inline Manifest write_image_set(const std::vector<Image>& images, const std::filesystem::path& dir,
                                const std::string& stem, const std::string& domain) {
  ensure_directory(dir);
  Manifest m;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto path = std::filesystem::absolute(dir / indexed_name(stem, i)).lexically_normal();
    write_png(path, images[i]);
    m.records.push_back({path, domain, std::nullopt});
  }
  return m;
}

struct BeamDatasetOptions {
  BeamModel model;
  double sigma = 0.25;
  std::string domain = "beam";
  std::string stem = "beam";
};

/// Renders `count` beam images from uniformly drawn bases and BeamSpecs. Each
/// image i uses a generator derived from (seed, i); records carry
/// p = [cx, cy, intensity].
inline Manifest generate_dataset(const std::vector<Image>& bases, int count, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, const BeamDatasetOptions& opt = {}) {
  if (count < 1) throw Error(ErrorCode::validation, "generate_dataset: count must be >= 1");
  if (bases.empty()) throw Error(ErrorCode::validation, "generate_dataset: at least one base image is required");
  ensure_directory(out_dir);
  Manifest m;
  m.axes = beam_axes();
  for (int i = 0; i < count; ++i) {
    Rng rng = derive_rng(seed, static_cast<std::uint64_t>(i), 0xBEA);
    std::uniform_int_distribution<std::size_t> pick(0, bases.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t b = pick(rng);
    BeamSpec spec;
    spec.cx = unit(rng);
    spec.cy = unit(rng);
    spec.intensity = unit(rng);
    spec.sigma = opt.sigma;
    auto path = std::filesystem::absolute(out_dir / indexed_name(opt.stem, i)).lexically_normal();
    write_png(path, render_beam(bases[b], spec, opt.model));
    m.records.push_back({path, opt.domain, std::vector<double>{spec.cx, spec.cy, spec.intensity}});
  }
  return m;
}

struct ToyDomainSpec {
  std::string name;
  std::array<double, 3> color_shift{0.0, 0.0, 0.0};  // each in [-1, 1]
  double brightness_scale = 1.0;                      // [0, 2]
  std::int64_t texture_seed = 0;
};

inline void from_json(const nlohmann::json& j, ToyDomainSpec& s) {
  s.name = j.at("name").get<std::string>();
  if (j.contains("color_shift")) {
    auto v = j.at("color_shift").get<std::vector<double>>();
    if (v.size() != 3) throw Error(ErrorCode::config, "color_shift of '" + s.name + "' must have 3 entries");
    std::copy(v.begin(), v.end(), s.color_shift.begin());
  }
  s.brightness_scale = j.value("brightness_scale", 1.0);
  s.texture_seed = j.value("texture_seed", std::int64_t{0});
}

inline void to_json(nlohmann::json& j, const ToyDomainSpec& s) {
  j = {{"name", s.name},
       {"color_shift", s.color_shift},
       {"brightness_scale", s.brightness_scale},
       {"texture_seed", s.texture_seed}};
}

/// Shared procedural scene: gradient background plus random rectangles.
inline Image make_scene(int size, Rng& rng) {
  std::uniform_real_distribution<float> val(-0.8f, 0.8f);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Image im = make_image(size, size);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  std::array<float, 3> top{val(rng), val(rng), val(rng)}, bottom{val(rng), val(rng), val(rng)};
  for (int r = 0; r < size; ++r) {
    const float t = size > 1 ? float(r) / float(size - 1) : 0.0f;
    for (int c = 0; c < size; ++c)
      for (int ch = 0; ch < 3; ++ch) im[ch * plane + r * size + c] = (1 - t) * top[ch] + t * bottom[ch];
  }
  const int rects = 2 + static_cast<int>(unit(rng) * 4);
  for (int k = 0; k < rects; ++k) {
    const int r0 = static_cast<int>(unit(rng) * size), c0 = static_cast<int>(unit(rng) * size);
    const int rh = 1 + static_cast<int>(unit(rng) * size / 2), cw = 1 + static_cast<int>(unit(rng) * size / 2);
    detail::fill_rect(im, r0, c0, r0 + rh, c0 + cw, {val(rng), val(rng), val(rng)});
  }
  return im;
}

/// Per-channel domain transform: shift, then scale brightness about black.
inline Image apply_domain_transform(const Image& scene, const ToyDomainSpec& spec) {
  Image out(scene.shape());
  const std::size_t plane = scene.size() / 3;
  for (int ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double b = scene[ch * plane + i];
      const double shifted = std::clamp(b + spec.color_shift[ch], -1.0, 1.0);
      out[ch * plane + i] = static_cast<float>(std::clamp(-1.0 + spec.brightness_scale * (shifted + 1.0), -1.0, 1.0));
    }
  }
  return out;
}

inline std::vector<Image> make_scenes(int count, int size, std::uint64_t run_seed, std::int64_t texture_seed) {
  std::vector<Image> out;
  for (int i = 0; i < count; ++i) {
    Rng rng = derive_rng(run_seed ^ (static_cast<std::uint64_t>(texture_seed) * 0x9E3779B97F4A7C15ull),
                         static_cast<std::uint64_t>(i), 0x5CE);
    out.push_back(make_scene(size, rng));
  }
  return out;
}

/// Renders every domain from its texture_seed scenes and writes one image
/// directory plus `<name>.jsonl` manifest per domain under out_dir.
inline std::map<std::string, Manifest> generate_toy_domains(const std::vector<ToyDomainSpec>& specs,
                                                            int count_per_domain, int size, std::uint64_t seed,
                                                            const std::filesystem::path& out_dir) {
  if (specs.empty()) throw Error(ErrorCode::validation, "generate_toy_domains: at least one domain spec is required");
  if (count_per_domain < 1) throw Error(ErrorCode::validation, "generate_toy_domains: count must be >= 1");
  std::set<std::string> names;
  for (const auto& s : specs) {
    if (s.name.empty()) throw Error(ErrorCode::validation, "generate_toy_domains: domain name is empty");
    if (!names.insert(s.name).second) {
      throw Error(ErrorCode::validation, "generate_toy_domains: duplicate domain name '" + s.name + "'");
    }
    for (double v : s.color_shift)
      if (!(v >= -1.0 && v <= 1.0)) throw Error(ErrorCode::validation, "color_shift of '" + s.name + "' outside [-1, 1]");
    if (!(s.brightness_scale >= 0.0 && s.brightness_scale <= 2.0)) {
      throw Error(ErrorCode::validation, "brightness_scale of '" + s.name + "' outside [0, 2]");
    }
  }
  ensure_directory(out_dir);
  std::map<std::string, Manifest> out;
  for (const auto& s : specs) {
    std::vector<Image> images;
    for (const auto& scene : make_scenes(count_per_domain, size, seed, s.texture_seed)) {
      images.push_back(apply_domain_transform(scene, s));
    }
    Manifest m = write_image_set(images, out_dir / s.name, s.name, s.name);
    save_manifest(out_dir / (s.name + ".jsonl"), m);
    out.emplace(s.name, std::move(m));
  }
  return out;
}

}  // namespace pargan
