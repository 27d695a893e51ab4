#pragma once

#include <array>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "pargan/checkpoint.hpp"
#include "pargan/eval.hpp"
#include "pargan/synth.hpp"

namespace pargan {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- hashing -------------------------------------------------------------

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::internal, "sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file_bytes(path)); }

/// Hash of every regular file under `dir`, keyed by relative path, so two
/// trees with identical contents hash equally wherever they live. Manifests
/// are hashed with absolute paths stripped of the tree root.
inline std::string sha256_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  const std::string root = fs::absolute(dir).lexically_normal().string();
  std::string acc;
  for (const auto& f : files) {
    std::string bytes = read_file_bytes(f);
    if (f.extension() == ".jsonl") {
      for (std::size_t pos; (pos = bytes.find(root)) != std::string::npos;) bytes.erase(pos, root.size());
    }
    acc += fs::relative(f, dir).generic_string() + ":" + sha256_hex(bytes) + "\n";
  }
  return sha256_hex(acc);
}

// ---- output directory lock ----------------------------------------------

/// Exclusive lock on an output directory, held for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".pargan.lock") {
    ensure_directory(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      if (errno == EEXIST) {
        throw Error(ErrorCode::busy, "output directory '" + dir.string() + "' is locked by another run (" +
                                         path_.string() + "); remove the lock if no run is active");
      }
      throw Error(ErrorCode::io, "cannot create lock file '" + path_.string() + "'");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~DirectoryLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

// ---- config files --------------------------------------------------------

inline json load_json(const fs::path& path, ErrorCode missing = ErrorCode::io) {
  if (!fs::is_regular_file(path)) throw Error(missing, "file '" + path.string() + "' does not exist");
  return detail::read_json_file(path);
}

/// PARGAN_SEED, when set, replaces seeds read from config files.
inline std::optional<std::uint64_t> seed_override() {
  const char* s = std::getenv("PARGAN_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno || *end) throw Error(ErrorCode::config, std::string("PARGAN_SEED must be a non-negative integer, got '") + s + "'");
  return v;
}

struct TrainingSetup {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  TrainConfig train;
  bool p_dim_given = false;
};

inline TrainingSetup training_setup_from_json(const json& j, bool env_seed = true) {
  TrainingSetup s;
  try {
    const json g = j.value("generator", json::object());
    const json d = j.value("discriminator", json::object());
    s.generator = g.get<GeneratorConfig>();
    s.discriminator = d.get<DiscriminatorConfig>();
    s.train = j.value("train", json::object()).get<TrainConfig>();
    s.p_dim_given = g.contains("p_dim") || d.contains("p_dim");
    if (!d.contains("image_size")) s.discriminator.image_size = s.generator.image_size;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("training config: ") + e.what());
  }
  if (env_seed) {
    if (auto seed = seed_override()) s.train.seed = *seed;
  }
  return s;
}

inline TrainingSetup load_training_setup(const fs::path& path, bool env_seed = true) {
  return training_setup_from_json(load_json(path, ErrorCode::config), env_seed);
}

/// Fills p_dim from the data when the config leaves it out and checks it otherwise.
inline void bind_p_dim(TrainingSetup& s, int data_p_dim) {
  if (!s.p_dim_given) {
    s.generator.p_dim = data_p_dim;
    s.discriminator.p_dim = data_p_dim;
    return;
  }
  if (s.generator.p_dim != data_p_dim || s.discriminator.p_dim != data_p_dim) {
    throw Error(ErrorCode::config, "config p_dim " + std::to_string(s.generator.p_dim) + " does not match the " +
                                       std::to_string(data_p_dim) + " axes of the target manifest");
  }
}

// ---- training ------------------------------------------------------------

struct TrainRequest {
  fs::path config;
  fs::path source;
  fs::path target;
  fs::path out;
  bool resume = false;
  std::function<void(const LossReport&)> on_step;
  bool env_seed = true;  // let PARGAN_SEED replace the config seed
};

inline fs::path train_command(const TrainRequest& req) {
  TrainingSetup setup = load_training_setup(req.config, req.env_seed);
  const Manifest source = load_manifest(req.source);
  const Manifest target = load_manifest(req.target);
  const TrainData data = load_train_data(source, target, setup.generator.image_size);
  bind_p_dim(setup, data.p_dim());

  DirectoryLock lock(req.out);
  const bool has_run = fs::is_directory(req.out / "checkpoints") && !fs::is_empty(req.out / "checkpoints");
  std::optional<ParGanTrainer> trainer;
  if (req.resume) {
    trainer.emplace(load_trainer(latest_checkpoint(req.out)));
    trainer->mutable_config().total_iters = setup.train.total_iters;
    trainer->mutable_config().checkpoint_every = setup.train.checkpoint_every;
  } else {
    if (has_run) {
      throw Error(ErrorCode::config, "'" + req.out.string() + "' already holds a training run; pass --resume or choose another --out");
    }
    trainer.emplace(make_trainer(setup.generator, setup.discriminator, setup.train));
  }
  json echo = {{"generator", setup.generator}, {"discriminator", setup.discriminator}, {"train", setup.train}};
  detail::write_text_file(req.out / "config.json", echo.dump(2) + "\n");
  FitOptions opt;
  opt.on_step = req.on_step;
  return fit(*trainer, data, req.out, opt);
}

/// Accepts a checkpoint directory or a training output directory (latest checkpoint).
inline fs::path resolve_checkpoint(const fs::path& path) {
  if (fs::is_regular_file(path / "meta.json")) return path;
  if (fs::is_directory(path / "checkpoints")) return latest_checkpoint(path);
  throw Error(ErrorCode::io, "'" + path.string() +
                                 "' is not a checkpoint; pass a checkpoint directory (OUT/checkpoints/iter_NNNNNNNN) "
                                 "or the --out directory of a training run");
}

struct LoadedGenerator {
  Generator<float> generator;
  CheckpointMeta meta;
};

inline LoadedGenerator open_generator(const fs::path& ckpt, const std::string& which = "G") {
  if (which != "G" && which != "F") throw Error(ErrorCode::usage, "generator must be G or F, got '" + which + "'");
  const fs::path dir = resolve_checkpoint(ckpt);
  try {
    return {load_generator(dir, which), read_checkpoint_meta(dir)};
  } catch (const Error& e) {
    throw Error(e.code(), std::string(e.what()) + " (checkpoint '" + dir.string() +
                              "' is unreadable; re-run training or point --ckpt at another checkpoint)");
  }
}

/// Validates p against the checkpoint's axes (range errors are not clamped).
inline Tensor<float> checked_p(const LoadedGenerator& g, const std::vector<double>& p) {
  const int p_dim = g.generator.config().p_dim;
  if (static_cast<int>(p.size()) != p_dim) {
    throw Error(ErrorCode::validation, "p has " + std::to_string(p.size()) + " values but the checkpoint expects p_dim " +
                                           std::to_string(p_dim));
  }
  std::vector<Axis> axes = g.meta.axes;
  if (axes.size() != p.size()) {
    axes.clear();
    for (int k = 0; k < p_dim; ++k) axes.push_back({"p" + std::to_string(k), 0.0, 1.0, ""});
  }
  Parametrization::make(p, axes);
  if (p_dim == 0) return Tensor<float>();
  Tensor<float> t({1, p_dim});
  for (int k = 0; k < p_dim; ++k) t[k] = static_cast<float>(p[k]);
  return t;
}

inline Image translate(const LoadedGenerator& g, const Image& x, const std::vector<double>& p) {
  return g.generator.generate(x, checked_p(g, p));
}

inline void infer(const fs::path& ckpt, const fs::path& image, const std::vector<double>& p, const fs::path& out,
                  const std::string& which = "G") {
  const LoadedGenerator g = open_generator(ckpt, which);
  const Image x = load_training_image(image, g.generator.config().image_size);
  write_png(out, translate(g, x, p));
}

// ---- grids ---------------------------------------------------------------

inline constexpr int kMaxGridCells = 100;
inline constexpr int kGutter = 2;

struct GridSpec {
  std::vector<int> axes;                    // parametrization axes varied by the grid
  std::vector<std::vector<double>> values;  // one value list per varied axis
  std::vector<double> base;                 // values of every axis before variation
  int rows = 1;
  int cols = 1;
  bool labels = false;

  int cells() const {
    int n = values.empty() ? 0 : 1;
    for (const auto& v : values) n *= static_cast<int>(v.size());
    return n;
  }

  std::vector<std::string> violations(int p_dim) const {
    std::vector<std::string> v;
    if (axes.empty() || axes.size() != values.size()) v.push_back("grid needs one value list per axis");
    for (int a : axes)
      if (a < 0 || a >= p_dim) v.push_back("grid axis " + std::to_string(a) + " outside [0, " + std::to_string(p_dim) + ")");
    for (const auto& list : values)
      if (list.empty()) v.push_back("grid value lists must be non-empty");
    if (static_cast<int>(base.size()) != p_dim) v.push_back("grid base must have p_dim values");
    if (rows < 1 || cols < 1 || rows * cols != cells()) v.push_back("grid layout rows x cols must equal the number of cells");
    return v;
  }

  /// Cell parametrizations in row-major order; the first axis varies slowest.
  std::vector<std::vector<double>> parametrizations() const {
    std::vector<std::vector<double>> out{base};
    for (std::size_t a = 0; a < axes.size(); ++a) {
      std::vector<std::vector<double>> next;
      for (const auto& p : out)
        for (double v : values[a]) {
          auto q = p;
          q[axes[a]] = v;
          next.push_back(std::move(q));
        }
      out = std::move(next);
    }
    return out;
  }
};

/// One axis gives a 1 x n strip, two axes an n0 x n1 matrix.
inline GridSpec make_grid(std::vector<int> axes, std::vector<std::vector<double>> values, std::vector<double> base,
                          bool labels = false) {
  GridSpec g{std::move(axes), std::move(values), std::move(base), 1, 1, labels};
  if (g.values.size() == 2) {
    g.rows = static_cast<int>(g.values[0].size());
    g.cols = static_cast<int>(g.values[1].size());
  } else {
    g.cols = g.cells();
  }
  return g;
}

namespace detail {

// 3x5 glyphs, one row per 3-bit mask, top to bottom.
inline const std::map<char, std::array<int, 5>>& glyphs() {
  static const std::map<char, std::array<int, 5>> g = {
      {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
      {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
      {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'.', {0, 0, 0, 0, 2}}, {'-', {0, 0, 7, 0, 0}},
      {',', {0, 0, 0, 2, 4}}, {' ', {0, 0, 0, 0, 0}}};
  return g;
}

inline void draw_text(Image& im, int top, int left, int max_width, const std::string& text) {
  const int h = image_height(im), w = image_width(im);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  int x = left;
  for (char ch : text) {
    auto it = glyphs().find(ch);
    if (it == glyphs().end()) continue;
    if (x + 3 > left + max_width) break;
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c)
        if ((it->second[r] >> (2 - c)) & 1) {
          const int yy = top + r, xx = x + c;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w)
            for (int k = 0; k < 3; ++k) im[k * plane + static_cast<std::size_t>(yy) * w + xx] = -1.0f;
        }
    x += 4;
  }
}

inline std::string format_values(const std::vector<double>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << std::setprecision(3) << v[i];
  return os.str();
}

}  // namespace detail

inline constexpr int kLabelHeight = 7;

/// Lays cells out row-major with a white gutter between them. With `labels`
/// each cell gets a strip above it showing its values.
inline Image montage(const std::vector<Image>& cells, int rows, int cols,
                     const std::vector<std::string>& labels = {}) {
  if (cells.empty() || static_cast<int>(cells.size()) != rows * cols) {
    throw Error(ErrorCode::validation, "montage: cell count does not match the layout");
  }
  const int ch = image_height(cells[0]), cw = image_width(cells[0]);
  const int label_h = labels.empty() ? 0 : kLabelHeight;
  const int cell_h = ch + label_h;
  const int H = rows * cell_h + (rows - 1) * kGutter, W = cols * cw + (cols - 1) * kGutter;
  Image out = make_image(H, W, 1.0f);
  const std::size_t plane = static_cast<std::size_t>(H) * W, cplane = static_cast<std::size_t>(ch) * cw;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const Image& c = cells[i * cols + j];
      if (image_height(c) != ch || image_width(c) != cw) throw Error(ErrorCode::shape, "montage: cells differ in size");
      const int top = i * (cell_h + kGutter) + label_h, left = j * (cw + kGutter);
      for (int k = 0; k < 3; ++k)
        for (int r = 0; r < ch; ++r)
          for (int x = 0; x < cw; ++x)
            out[k * plane + static_cast<std::size_t>(top + r) * W + left + x] = c[k * cplane + r * cw + x];
      if (label_h) detail::draw_text(out, top - label_h + 1, left + 1, cw - 1, labels[i * cols + j]);
    }
  }
  return out;
}

inline Image sweep_grid_image(const LoadedGenerator& g, const Image& x, const GridSpec& grid) {
  if (grid.cells() > kMaxGridCells) {
    throw Error(ErrorCode::validation, "grid has " + std::to_string(grid.cells()) + " cells; at most " +
                                           std::to_string(kMaxGridCells) + " are allowed");
  }
  detail::throw_if_invalid(grid.violations(g.generator.config().p_dim), "grid");
  std::vector<Image> cells;
  std::vector<std::string> labels;
  for (const auto& p : grid.parametrizations()) {
    cells.push_back(translate(g, x, p));
    if (grid.labels) {
      std::vector<double> varied;
      for (int a : grid.axes) varied.push_back(p[a]);
      labels.push_back(detail::format_values(varied));
    }
  }
  return montage(cells, grid.rows, grid.cols, labels);
}

inline void sweep_grid(const fs::path& ckpt, const fs::path& image, const GridSpec& grid, const fs::path& out) {
  const LoadedGenerator g = open_generator(ckpt);
  const Image x = load_training_image(image, g.generator.config().image_size);
  write_png(out, sweep_grid_image(g, x, grid));
}

// ---- evaluation commands ------------------------------------------------

inline std::vector<Image> load_images(const Manifest& m, int size, std::size_t limit = 0) {
  std::vector<Image> out;
  for (const auto& r : m.records) {
    if (limit && out.size() >= limit) break;
    out.push_back(load_training_image(r.image_path, size));
  }
  return out;
}

/// Groups parametrized records by their full p; for each grid value on `axis`
/// there must be exactly one group.
inline std::pair<RealSets, std::vector<std::vector<double>>> real_sets_for_grid(const Manifest& reals, int axis,
                                                                                const std::vector<double>& grid,
                                                                                int size, std::size_t limit) {
  std::map<std::vector<double>, std::vector<const SampleRecord*>> groups;
  for (const auto& r : reals.records) {
    if (!r.p) throw Error(ErrorCode::validation, "real record '" + r.image_path.string() + "' lacks p");
    groups[*r.p].push_back(&r);
  }
  RealSets sets;
  std::vector<std::vector<double>> full;
  for (double v : grid) {
    const std::vector<double>* match = nullptr;
    for (const auto& [p, recs] : groups) {
      if (axis < 0 || axis >= static_cast<int>(p.size())) throw Error(ErrorCode::validation, "axis outside p_dim of the real set");
      if (std::abs(p[axis] - v) <= 1e-9) {
        if (match) throw Error(ErrorCode::validation, "several real sets share value " + std::to_string(v) + " on axis " + std::to_string(axis));
        match = &p;
      }
    }
    if (!match) throw Error(ErrorCode::validation, "no real set with value " + std::to_string(v) + " on axis " + std::to_string(axis));
    std::vector<Image> images;
    for (const auto* r : groups.at(*match)) {
      if (limit && images.size() >= limit) break;
      images.push_back(load_training_image(r->image_path, size));
    }
    sets.emplace(*match, std::move(images));
    full.push_back(*match);
  }
  return {std::move(sets), std::move(full)};
}

struct SweepRequest {
  fs::path ckpt;
  fs::path inputs;
  fs::path reals;
  std::vector<double> grid;
  int axis = 0;
  std::string metric = "frechet";
  fs::path out;
  std::size_t samples = kDefaultSweepSamples;
};

inline void write_sweep_csv(const fs::path& path, const SweepMatrix& m, const std::vector<double>& grid) {
  std::ostringstream os;
  os << "real\\generated";
  for (double v : grid) os << ',' << v;
  os << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    os << grid[i];
    for (double v : m.values[i]) os << ',' << std::setprecision(10) << v;
    os << '\n';
  }
  detail::write_text_file(path, os.str());
}

inline SweepMatrix eval_sweep(const SweepRequest& req) {
  const LoadedGenerator g = open_generator(req.ckpt);
  const int size = g.generator.config().image_size;
  const auto inputs = load_images(load_manifest(req.inputs), size, req.samples);
  auto [sets, full] = real_sets_for_grid(load_manifest(req.reals), req.axis, req.grid, size, req.samples);
  for (const auto& p : full) checked_p(g, p);
  const SweepMatrix m = sweep_matrix(generator_handle(g.generator), inputs, sets, full, metric_by_name(req.metric), req.metric);
  if (!req.out.empty()) write_sweep_csv(req.out, m, req.grid);
  return m;
}

/// Spearman correlation between |p_gen - p_real| on the swept axis and the
/// matrix entries, pooled over all cells.
inline double sweep_distance_correlation(const SweepMatrix& m, const std::vector<double>& grid) {
  std::vector<double> gaps, vals;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) {
      gaps.push_back(std::abs(grid[j] - grid[i]));
      vals.push_back(m.values[i][j]);
    }
  return spearman(gaps, vals);
}

struct MonoRequest {
  fs::path ckpt;
  fs::path inputs;
  fs::path source;
  fs::path target;
  std::vector<double> p_values{0.0, 0.25, 0.5, 0.75, 1.0};
  std::string metric = "frechet";
  fs::path out;
  std::size_t samples = kDefaultSweepSamples;
};

inline MonotonicityReport eval_mono(const MonoRequest& req) {
  const LoadedGenerator g = open_generator(req.ckpt);
  if (g.generator.config().p_dim != 1) {
    throw Error(ErrorCode::validation, "monotonicity analysis needs a checkpoint with p_dim 1");
  }
  const int size = g.generator.config().image_size;
  const auto inputs = load_images(load_manifest(req.inputs), size, req.samples);
  const auto source = load_images(load_manifest(req.source), size, req.samples);
  const auto target = load_images(load_manifest(req.target), size, req.samples);
  for (double p : req.p_values) checked_p(g, {p});
  const auto r = monotonicity_report(generator_handle(g.generator), inputs, source, target, req.p_values,
                                     metric_by_name(req.metric));
  if (!req.out.empty()) {
    std::ostringstream os;
    os << "p,dist_to_source,dist_to_target\n";
    for (std::size_t k = 0; k < r.p_values.size(); ++k) {
      os << r.p_values[k] << ',' << std::setprecision(10) << r.dist_to_source[k] << ',' << r.dist_to_target[k] << '\n';
    }
    detail::write_text_file(req.out, os.str());
  }
  return r;
}

struct LatentRequest {
  fs::path ckpt;
  fs::path inputs;
  std::vector<std::vector<double>> grid;
  fs::path out;
  std::size_t samples = 20;
};

inline LatentPca latent_command(const LatentRequest& req) {
  const LoadedGenerator g = open_generator(req.ckpt);
  for (const auto& p : req.grid) checked_p(g, p);
  const auto inputs = load_images(load_manifest(req.inputs), g.generator.config().image_size, req.samples);
  LatentPca r = latent_pca(g.generator, inputs, req.grid);
  if (!req.out.empty()) {
    std::ostringstream os;
    os << "image";
    for (int k = 0; k < g.generator.config().p_dim; ++k) os << ",p" << k;
    os << ",pc1,pc2,pc3\n";
    for (Eigen::Index i = 0; i < r.pca.projections.rows(); ++i) {
      os << r.image_index[i];
      for (double v : r.params[i]) os << ',' << v;
      for (int k = 0; k < 3; ++k) os << ',' << std::setprecision(10) << r.pca.projections(i, k);
      os << '\n';
    }
    detail::write_text_file(req.out, os.str());
  }
  return r;
}

// ---- data commands ------------------------------------------------------

struct RenderRequest {
  fs::path out;
  int count = 2000;
  int size = 64;
  std::uint64_t seed = 0;
  fs::path bases;        // directory of PNG bases; procedural covers when empty
  int covers = 200;      // procedural bases when `bases` is empty
  double sigma = 0.25;
  int test_covers = 0;   // held-out bases for sweep sets
  int sweep_axis = 1;
  std::vector<double> sweep_values;
  std::vector<double> sweep_base{0.5, 0.5, 1.0};
};

/// Writes source.jsonl (unlit bases), beam.jsonl (lit targets with p) and,
/// when test_covers > 0, test_inputs.jsonl plus sweep_reals.jsonl where each
/// held-out base is lit at every sweep value.
inline std::map<std::string, Manifest> render_synth(const RenderRequest& req) {
  if (req.size < 8) throw Error(ErrorCode::validation, "render-synth: size must be >= 8");
  std::vector<Image> bases;
  if (!req.bases.empty()) {
    if (!fs::is_directory(req.bases)) throw Error(ErrorCode::io, "bases directory '" + req.bases.string() + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(req.bases))
      if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) bases.push_back(load_training_image(f, req.size));
    if (bases.empty()) throw Error(ErrorCode::validation, "no PNG bases in '" + req.bases.string() + "'");
  } else {
    if (req.covers < 1) throw Error(ErrorCode::validation, "render-synth: covers must be >= 1");
    bases = make_covers(req.covers, req.size, req.seed);
  }
  std::map<std::string, Manifest> out;
  ensure_directory(req.out);
  out["source"] = write_image_set(bases, req.out / "source", "cover", "source");
  BeamDatasetOptions opt;
  opt.sigma = req.sigma;
  out["beam"] = generate_dataset(bases, req.count, req.seed, req.out / "beam", opt);
  if (req.test_covers > 0) {
    const auto held = make_covers(req.test_covers, req.size, req.seed ^ 0x7E57ull);
    out["test_inputs"] = write_image_set(held, req.out / "test_inputs", "cover", "source");
    if (req.sweep_base.size() != 3) throw Error(ErrorCode::validation, "sweep base must have 3 values (cx, cy, intensity)");
    if (req.sweep_axis < 0 || req.sweep_axis > 2) throw Error(ErrorCode::validation, "sweep axis must be 0, 1 or 2");
    Manifest reals;
    reals.axes = beam_axes();
    for (std::size_t v = 0; v < req.sweep_values.size(); ++v) {
      std::vector<double> p = req.sweep_base;
      p[req.sweep_axis] = req.sweep_values[v];
      const BeamSpec spec{p[0], p[1], p[2], req.sigma};
      const fs::path dir = req.out / "sweep_reals" / ("v" + std::to_string(v));
      ensure_directory(dir);
      for (std::size_t k = 0; k < held.size(); ++k) {
        const auto path = fs::absolute(dir / indexed_name("beam", k)).lexically_normal();
        write_png(path, render_beam(held[k], spec));
        reals.records.push_back({path, "beam", p});
      }
    }
    out["sweep_reals"] = std::move(reals);
  }
  for (const auto& [name, m] : out) save_manifest(req.out / (name + ".jsonl"), m);
  return out;
}

inline std::vector<ToyDomainSpec> load_domain_specs(const fs::path& path) {
  const json j = load_json(path, ErrorCode::config);
  try {
    const json& list = j.is_object() ? j.at("domains") : j;
    return list.get<std::vector<ToyDomainSpec>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, "domain spec '" + path.string() + "': " + e.what());
  }
}

inline Manifest build_soft_command(const fs::path& source, const std::vector<fs::path>& targets, const fs::path& out) {
  std::vector<Manifest> t;
  for (const auto& p : targets) t.push_back(load_manifest(p));
  Manifest m = build_soft_labels(load_manifest(source), t);
  save_manifest(out, m);
  return m;
}

// ---- pipeline -----------------------------------------------------------

struct PipelineConfig {
  std::string name;
  std::string kind;  // "beam" or "soft"
  std::uint64_t seed = 0;
  bool seed_from_env = false;
  fs::path config_path;
  std::map<std::string, fs::path> sub_configs;  // data, training, eval
  json data, training, eval;
};

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  PipelineConfig c;
  c.config_path = fs::absolute(path).lexically_normal();
  const json j = load_json(path, ErrorCode::config);
  try {
    c.name = j.value("name", path.stem().string());
    c.kind = j.at("kind").get<std::string>();
    c.seed = j.value("seed", std::uint64_t{0});
    for (const char* key : {"data", "training", "eval"}) {
      c.sub_configs[key] = (c.config_path.parent_path() / j.at(key).get<std::string>()).lexically_normal();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, "pipeline config '" + path.string() + "': " + e.what());
  }
  if (c.kind != "beam" && c.kind != "soft") throw Error(ErrorCode::config, "pipeline kind must be 'beam' or 'soft'");
  for (const auto& [key, p] : c.sub_configs) {
    if (!fs::is_regular_file(p)) throw Error(ErrorCode::config, key + " sub-config '" + p.string() + "' does not exist");
  }
  c.data = load_json(c.sub_configs["data"], ErrorCode::config);
  c.training = load_json(c.sub_configs["training"], ErrorCode::config);
  c.eval = load_json(c.sub_configs["eval"], ErrorCode::config);
  if (c.kind == "soft") {
    const fs::path domains = (c.sub_configs["data"].parent_path() / c.data.value("domains", std::string())).lexically_normal();
    if (!fs::is_regular_file(domains)) throw Error(ErrorCode::config, "domain spec '" + domains.string() + "' does not exist");
    c.sub_configs["domains"] = domains;
    load_domain_specs(domains);
  }
  training_setup_from_json(c.training);
  if (auto s = seed_override()) {
    c.seed = *s;
    c.seed_from_env = true;
  }
  return c;
}

struct PipelineResult {
  fs::path out;
  json run_manifest;
  std::optional<SweepMatrix> sweep;
  std::vector<double> sweep_grid;
  std::optional<MonotonicityReport> mono;
};

struct PipelineOptions {
  std::function<void(const LossReport&)> on_step;
  std::function<void(const std::string&)> on_stage;
};

/// data -> (soft labels) -> train -> eval -> grids, recorded in OUT/run.json.
inline PipelineResult run_pipeline(const fs::path& config_path, const fs::path& out, const PipelineOptions& opt = {}) {
  const PipelineConfig cfg = load_pipeline_config(config_path);
  DirectoryLock lock(out);
  PipelineResult result;
  result.out = out;
  json& run = result.run_manifest;
  const std::uint64_t data_seed = cfg.seed, train_seed = cfg.seed + 1;
  run = {{"name", cfg.name},
         {"kind", cfg.kind},
         {"status", "running"},
         {"seeds", {{"base", cfg.seed}, {"data", data_seed}, {"train", train_seed}, {"from_env", cfg.seed_from_env}}},
         {"config_hashes", json::object()},
         {"stages", json::array()},
         {"failure", nullptr}};
  run["config_hashes"][cfg.config_path.filename().string()] = sha256_file(cfg.config_path);
  for (const auto& [key, p] : cfg.sub_configs) run["config_hashes"][key] = sha256_file(p);
  auto save_run = [&] { detail::write_text_file(out / "run.json", run.dump(2) + "\n"); };
  save_run();

  const fs::path data_dir = out / "data", train_dir = out / "train", eval_dir = out / "eval", grid_dir = out / "grids";
  const int size = cfg.training.value("generator", json::object()).value("image_size", GeneratorConfig{}.image_size);
  fs::path source_m, target_m, test_inputs, grid_input;
  std::string stage;
  auto record = [&](const std::string& name, json outputs, json extra = json::object()) {
    json s = {{"name", name}, {"status", "ok"}, {"outputs", std::move(outputs)}};
    s.update(extra);
    run["stages"].push_back(std::move(s));
    save_run();
  };

  try {
    stage = "data";
    if (opt.on_stage) opt.on_stage(stage);
    if (cfg.kind == "beam") {
      RenderRequest r;
      r.out = data_dir;
      r.count = cfg.data.value("count", 2000);
      r.size = size;
      r.seed = data_seed;
      r.covers = cfg.data.value("covers", 200);
      r.sigma = cfg.data.value("sigma", 0.25);
      r.test_covers = cfg.data.value("test_covers", kDefaultSweepSamples);
      r.sweep_axis = cfg.eval.value("axis", 1);
      r.sweep_values = cfg.eval.value("grid", std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.9});
      r.sweep_base = cfg.eval.value("base", std::vector<double>{0.5, 0.5, 1.0});
      render_synth(r);
      source_m = data_dir / "source.jsonl";
      target_m = data_dir / "beam.jsonl";
      test_inputs = data_dir / "test_inputs.jsonl";
    } else {
      const auto specs = load_domain_specs(cfg.sub_configs.at("domains"));
      const int count = cfg.data.value("count", 500), test_count = cfg.data.value("test_count", kDefaultSweepSamples);
      generate_toy_domains(specs, count, size, data_seed, data_dir / "train");
      generate_toy_domains(specs, test_count, size, data_seed ^ 0x7E57ull, data_dir / "test");
    }
    record(stage, {{"dir", data_dir.string()}}, {{"checksum", sha256_tree(data_dir)}});

    stage = "build-soft";
    if (opt.on_stage) opt.on_stage(stage);
    if (cfg.kind == "soft") {
      const std::string src = cfg.data.at("source").get<std::string>();
      std::vector<fs::path> targets;
      for (const auto& t : cfg.data.at("targets")) targets.push_back(data_dir / "train" / (t.get<std::string>() + ".jsonl"));
      source_m = data_dir / "train" / (src + ".jsonl");
      target_m = data_dir / "soft_target.jsonl";
      build_soft_command(source_m, targets, target_m);
      test_inputs = data_dir / "test" / (src + ".jsonl");
      record(stage, {{"manifest", target_m.string()}}, {{"checksum", sha256_file(target_m)}});
    } else {
      record(stage, json::object(), {{"status", "skipped"}});
    }

    stage = "train";
    if (opt.on_stage) opt.on_stage(stage);
    json training = cfg.training;
    training["train"]["seed"] = train_seed;
    const fs::path train_cfg = out / "train_config.json";
    detail::write_text_file(train_cfg, training.dump(2) + "\n");
    // The pipeline seed already accounts for PARGAN_SEED.
    TrainRequest tr{train_cfg, source_m, target_m, train_dir, false, opt.on_step, false};
    fs::remove_all(train_dir);
    const fs::path last = train_command(tr);
    record(stage, {{"checkpoint", last.string()}, {"losses", (train_dir / "losses.csv").string()}},
           {{"checksums", {{"losses", sha256_file(train_dir / "losses.csv")}, {"tensors", sha256_file(last / "tensors.bin")}}}});

    stage = "eval";
    if (opt.on_stage) opt.on_stage(stage);
    ensure_directory(eval_dir);
    const std::size_t samples = cfg.eval.value("samples", static_cast<std::size_t>(kDefaultSweepSamples));
    if (cfg.kind == "beam") {
      SweepRequest s;
      s.ckpt = train_dir;
      s.inputs = test_inputs;
      s.reals = data_dir / "sweep_reals.jsonl";
      s.grid = cfg.eval.value("grid", std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.9});
      s.axis = cfg.eval.value("axis", 1);
      s.metric = cfg.eval.value("metric", std::string("pixel_l1"));
      s.out = eval_dir / "matrix.csv";
      s.samples = samples;
      result.sweep = eval_sweep(s);
      result.sweep_grid = s.grid;
      record(stage, {{"matrix", s.out.string()}},
             {{"diagonal_minimum_columns", result.sweep->diagonal_minimum_columns()},
              {"distance_spearman", sweep_distance_correlation(*result.sweep, s.grid)},
              {"checksum", sha256_file(s.out)}});
    } else {
      MonoRequest m;
      m.ckpt = train_dir;
      m.inputs = test_inputs;
      m.source = data_dir / "test" / (cfg.data.at("source").get<std::string>() + ".jsonl");
      m.target = data_dir / "test" / (cfg.data.at("targets").at(0).get<std::string>() + ".jsonl");
      m.p_values = cfg.eval.value("p_values", m.p_values);
      m.metric = cfg.eval.value("metric", std::string("frechet"));
      m.out = eval_dir / "mono.csv";
      m.samples = samples;
      result.mono = eval_mono(m);
      record(stage, {{"report", m.out.string()}},
             {{"rho_source", result.mono->rho_source}, {"rho_target", result.mono->rho_target}, {"checksum", sha256_file(m.out)}});
    }

    stage = "grids";
    if (opt.on_stage) opt.on_stage(stage);
    ensure_directory(grid_dir);
    const LoadedGenerator g = open_generator(train_dir);
    const Manifest inputs = load_manifest(test_inputs);
    const int n_grids = std::min<int>(cfg.eval.value("grid_images", 2), static_cast<int>(inputs.records.size()));
    GridSpec grid;
    if (cfg.kind == "beam") {
      grid = make_grid({cfg.eval.value("axis", 1)}, {cfg.eval.value("grid", std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.9})},
                       cfg.eval.value("base", std::vector<double>{0.5, 0.5, 1.0}));
    } else {
      grid = make_grid({0}, {cfg.eval.value("p_values", std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0})},
                       std::vector<double>(g.generator.config().p_dim, 0.0));
    }
    json grids = json::array();
    for (int k = 0; k < n_grids; ++k) {
      const Image x = load_training_image(inputs.records[k].image_path, size);
      const fs::path path = grid_dir / ("sweep_" + std::to_string(k) + ".png");
      write_png(path, sweep_grid_image(g, x, grid));
      grids.push_back(path.string());
    }
    record(stage, grids);
  } catch (const Error& e) {
    run["status"] = "failed";
    run["failure"] = {{"stage", stage}, {"code", std::string(error_code_name(e.code()))}, {"message", e.what()}};
    save_run();
    throw;
  } catch (const std::exception& e) {
    run["status"] = "failed";
    run["failure"] = {{"stage", stage}, {"code", "E_INTERNAL"}, {"message", e.what()}};
    save_run();
    throw;
  }
  run["status"] = "ok";
  save_run();
  return result;
}

}  // namespace pargan
