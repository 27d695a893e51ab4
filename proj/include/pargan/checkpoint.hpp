#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pargan/archive.hpp"
#include "pargan/train.hpp"

// Checkpoint directory layout:
//   meta.json    schema_version, iteration, configs, axes, sampler state, optimizer steps
//   tensors.bin  tensor archive with network parameters, Adam moments and history pools

namespace pargan {

inline constexpr int kCheckpointSchemaVersion = 1;

struct CheckpointMeta {
  int schema_version = kCheckpointSchemaVersion;
  long long iteration = 0;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  TrainConfig train;
  std::vector<Axis> axes;
};

namespace detail {

inline nlohmann::json axes_to_json(const std::vector<Axis>& axes) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& a : axes) out.push_back({{"name", a.name}, {"min", a.min}, {"max", a.max}, {"unit", a.unit}});
  return out;
}

inline std::vector<Axis> axes_from_json(const nlohmann::json& j) {
  std::vector<Axis> axes;
  for (const auto& a : j) {
    axes.push_back({a.at("name").get<std::string>(), a.value("min", 0.0), a.value("max", 1.0),
                    a.value("unit", std::string())});
  }
  return axes;
}

template <typename T>
void append_store(NamedTensors& out, const ParameterStore<T>& store, const std::string& prefix) {
  for (const auto& e : store.entries()) out.emplace_back(prefix + e.name, e.var.value().template cast<float>());
}

inline void append_adam(NamedTensors& out, Adam<float>& opt, const std::string& prefix) {
  for (std::size_t k = 0; k < opt.size(); ++k) {
    out.emplace_back(prefix + ".m/" + opt.name(k), opt.first_moment(k));
    out.emplace_back(prefix + ".v/" + opt.name(k), opt.second_moment(k));
  }
}

inline void append_pool(NamedTensors& out, const HistoryPool<float>& pool, const std::string& prefix) {
  for (std::size_t k = 0; k < pool.images().size(); ++k) {
    out.emplace_back(prefix + ".image/" + std::to_string(k), pool.images()[k]);
    out.emplace_back(prefix + ".p/" + std::to_string(k), pool.params()[k]);
  }
}

class TensorLookup {
 public:
  explicit TensorLookup(NamedTensors tensors) {
    for (auto& [name, t] : tensors) map_.emplace(name, std::move(t));
  }
  const Tensor<float>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw Error(ErrorCode::io, "checkpoint is missing tensor '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return map_.count(name) > 0; }

 private:
  std::map<std::string, Tensor<float>> map_;
};

inline void copy_into(Tensor<float>& dst, const Tensor<float>& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw Error(ErrorCode::io, "checkpoint tensor '" + name + "' has shape " + shape_string(src.shape()) +
                                   ", expected " + shape_string(dst.shape()));
  }
  dst = src;
}

inline void restore_store(ParameterStore<float>& store, const TensorLookup& tensors, const std::string& prefix) {
  for (auto& e : store.entries()) copy_into(e.var.mutable_value(), tensors.at(prefix + e.name), prefix + e.name);
}

inline void restore_adam(Adam<float>& opt, const TensorLookup& tensors, const std::string& prefix) {
  for (std::size_t k = 0; k < opt.size(); ++k) {
    copy_into(opt.first_moment(k), tensors.at(prefix + ".m/" + opt.name(k)), prefix + ".m/" + opt.name(k));
    copy_into(opt.second_moment(k), tensors.at(prefix + ".v/" + opt.name(k)), prefix + ".v/" + opt.name(k));
  }
}

inline void restore_pool(HistoryPool<float>& pool, const TensorLookup& tensors, const std::string& prefix,
                         std::size_t count) {
  pool.images().clear();
  pool.params().clear();
  for (std::size_t k = 0; k < count; ++k) {
    pool.images().push_back(tensors.at(prefix + ".image/" + std::to_string(k)));
    pool.params().push_back(tensors.at(prefix + ".p/" + std::to_string(k)));
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, "'" + path.string() + "': " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error(ErrorCode::io, "failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

/// Writes the full training state into `dir`. The directory is assembled under
/// a temporary name and renamed, so an interrupted save never replaces a
/// complete checkpoint.
inline void save_checkpoint(const std::filesystem::path& dir, ParGanTrainer& trainer) {
  namespace fs = std::filesystem;
  auto staging = dir;
  staging += ".partial";
  std::error_code ec;
  fs::remove_all(staging, ec);
  fs::create_directories(staging, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create checkpoint directory '" + staging.string() + "'");

  NamedTensors tensors;
  detail::append_store(tensors, trainer.g().parameters(), "G/");
  detail::append_store(tensors, trainer.f().parameters(), "F/");
  detail::append_store(tensors, trainer.dx().parameters(), "DX/");
  detail::append_store(tensors, trainer.dy().parameters(), "DY/");
  detail::append_adam(tensors, trainer.opt_g(), "adam_g");
  detail::append_adam(tensors, trainer.opt_dx(), "adam_dx");
  detail::append_adam(tensors, trainer.opt_dy(), "adam_dy");
  detail::append_pool(tensors, trainer.pool_x(), "pool_x");
  detail::append_pool(tensors, trainer.pool_y(), "pool_y");
  save_tensor_archive(staging / "tensors.bin", tensors);

  std::ostringstream rng_state;
  rng_state << trainer.rng();
  nlohmann::json meta = {
      {"schema_version", kCheckpointSchemaVersion},
      {"iteration", trainer.iteration()},
      {"generator", trainer.g().config()},
      {"discriminator", trainer.dx().config()},
      {"train", trainer.config()},
      {"axes", detail::axes_to_json(trainer.axes())},
      {"sampler_state", rng_state.str()},
      {"adam_steps", {{"g", trainer.opt_g().steps()}, {"dx", trainer.opt_dx().steps()}, {"dy", trainer.opt_dy().steps()}}},
      {"pool_sizes", {{"x", trainer.pool_x().images().size()}, {"y", trainer.pool_y().images().size()}}},
  };
  detail::write_text_file(staging / "meta.json", meta.dump(2) + "\n");

  if (fs::exists(dir)) fs::remove_all(dir);
  fs::rename(staging, dir);
}

inline CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::io, "checkpoint directory '" + dir.string() + "' does not exist");
  }
  const auto j = detail::read_json_file(dir / "meta.json");
  CheckpointMeta m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    m.iteration = j.at("iteration").get<long long>();
    m.generator = j.at("generator").get<GeneratorConfig>();
    m.discriminator = j.at("discriminator").get<DiscriminatorConfig>();
    m.train = j.at("train").get<TrainConfig>();
    m.axes = detail::axes_from_json(j.value("axes", nlohmann::json::array()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, "checkpoint meta '" + (dir / "meta.json").string() + "': " + e.what());
  }
  if (m.schema_version != kCheckpointSchemaVersion) {
    throw Error(ErrorCode::io, "unsupported checkpoint schema_version " + std::to_string(m.schema_version));
  }
  return m;
}

/// Restores a trainer exactly as saved, ready to continue the same trajectory.
inline ParGanTrainer load_trainer(const std::filesystem::path& dir) {
  const CheckpointMeta meta = read_checkpoint_meta(dir);
  const auto j = detail::read_json_file(dir / "meta.json");
  ParGanTrainer trainer = make_trainer(meta.generator, meta.discriminator, meta.train);
  const detail::TensorLookup tensors(load_tensor_archive(dir / "tensors.bin"));
  detail::restore_store(trainer.g().parameters(), tensors, "G/");
  detail::restore_store(trainer.f().parameters(), tensors, "F/");
  detail::restore_store(trainer.dx().parameters(), tensors, "DX/");
  detail::restore_store(trainer.dy().parameters(), tensors, "DY/");
  detail::restore_adam(trainer.opt_g(), tensors, "adam_g");
  detail::restore_adam(trainer.opt_dx(), tensors, "adam_dx");
  detail::restore_adam(trainer.opt_dy(), tensors, "adam_dy");
  trainer.opt_g().set_steps(j.at("adam_steps").at("g").get<long long>());
  trainer.opt_dx().set_steps(j.at("adam_steps").at("dx").get<long long>());
  trainer.opt_dy().set_steps(j.at("adam_steps").at("dy").get<long long>());
  detail::restore_pool(trainer.pool_x(), tensors, "pool_x", j.at("pool_sizes").at("x").get<std::size_t>());
  detail::restore_pool(trainer.pool_y(), tensors, "pool_y", j.at("pool_sizes").at("y").get<std::size_t>());
  std::istringstream rng_state(j.at("sampler_state").get<std::string>());
  rng_state >> trainer.rng();
  if (!rng_state) throw Error(ErrorCode::parse, "checkpoint sampler state is corrupt");
  trainer.set_iteration(meta.iteration);
  trainer.axes() = meta.axes;
  return trainer;
}

/// Loads one generator ("G" forward, "F" inverse) for inference.
inline Generator<float> load_generator(const std::filesystem::path& dir, const std::string& which = "G") {
  const CheckpointMeta meta = read_checkpoint_meta(dir);
  Rng rng(0);
  Generator<float> g(meta.generator, rng);
  const detail::TensorLookup tensors(load_tensor_archive(dir / "tensors.bin"));
  detail::restore_store(g.parameters(), tensors, which + "/");
  return g;
}

inline std::string checkpoint_name(long long iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%08lld", iteration);
  return buf;
}

/// Most recent complete checkpoint under `out_dir/checkpoints`.
inline std::filesystem::path latest_checkpoint(const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  const fs::path root = out_dir / "checkpoints";
  fs::path best;
  if (fs::is_directory(root)) {
    for (const auto& entry : fs::directory_iterator(root)) {
      const auto name = entry.path().filename().string();
      if (!entry.is_directory() || name.rfind("iter_", 0) != 0 || name.find('.') != std::string::npos) continue;
      if (best.empty() || name > best.filename().string()) best = entry.path();
    }
  }
  if (best.empty()) throw Error(ErrorCode::io, "no checkpoint found under '" + root.string() + "'");
  return best;
}

inline std::string loss_csv_header() { return "iteration,gan_xy,gan_yx,cyc,total"; }

inline std::string loss_csv_row(const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g", r.iteration, r.gan_xy, r.gan_yx, r.cyc, r.total);
  return buf;
}

inline std::vector<LossReport> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read loss log '" + path.string() + "'");
  std::vector<LossReport> out;
  std::string line;
  std::getline(in, line);
  if (line != loss_csv_header()) throw Error(ErrorCode::parse, "unexpected loss log header in '" + path.string() + "'");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossReport r;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf", &r.iteration, &r.gan_xy, &r.gan_yx, &r.cyc, &r.total) != 5) {
      throw Error(ErrorCode::parse, "malformed loss log row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

struct FitOptions {
  std::function<void(const LossReport&)> on_step;
};

/// Runs the trainer up to config().total_iters, appending to `out_dir/losses.csv`
/// and checkpointing every checkpoint_every iterations and at the end. A trainer
/// restored from a checkpoint continues the log from its iteration. Returns the
/// final checkpoint directory.
inline std::filesystem::path fit(ParGanTrainer& trainer, const TrainData& data, const std::filesystem::path& out_dir,
                                 const FitOptions& opt = {}) {
  namespace fs = std::filesystem;
  const TrainConfig& cfg = trainer.config();
  if (data.source.empty() || data.target.empty()) throw Error(ErrorCode::validation, "fit: empty training data");
  if (data.p_dim() != trainer.g().config().p_dim) {
    throw Error(ErrorCode::config, "fit: data has " + std::to_string(data.p_dim()) + " parametrization axes but the model expects " +
                                       std::to_string(trainer.g().config().p_dim));
  }
  trainer.axes() = data.axes;
  const fs::path ckpt_root = out_dir / "checkpoints";
  fs::create_directories(ckpt_root);
  const fs::path log_path = out_dir / "losses.csv";

  // Keep only rows up to the trainer's iteration so a resumed log has no gaps or repeats.
  std::vector<std::string> kept;
  if (trainer.iteration() > 0 && fs::exists(log_path)) {
    for (const auto& r : read_loss_csv(log_path)) {
      if (r.iteration <= trainer.iteration()) kept.push_back(loss_csv_row(r));
    }
  }
  {
    std::string text = loss_csv_header() + "\n";
    for (const auto& row : kept) text += row + "\n";
    detail::write_text_file(log_path, text);
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw Error(ErrorCode::io, "cannot append to '" + log_path.string() + "'");

  fs::path last = ckpt_root / checkpoint_name(trainer.iteration());
  if (!fs::exists(last)) save_checkpoint(last, trainer);

  while (trainer.iteration() < cfg.total_iters) {
    const Batch<float> a = draw_batch(data, cfg, trainer.rng());
    const Batch<float> b = draw_batch(data, cfg, trainer.rng());
    LossReport r;
    try {
      r = trainer.step(a, b);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::nonfinite) {
        nlohmann::json snap = {{"iteration", trainer.iteration()},
                               {"error", e.what()},
                               {"last_checkpoint", last.string()}};
        detail::write_text_file(out_dir / "divergence.json", snap.dump(2) + "\n");
      }
      throw;
    }
    log << loss_csv_row(r) << '\n';
    log.flush();
    if (opt.on_step) opt.on_step(r);
    if (trainer.iteration() % cfg.checkpoint_every == 0 || trainer.iteration() == cfg.total_iters) {
      last = ckpt_root / checkpoint_name(trainer.iteration());
      save_checkpoint(last, trainer);
    }
  }
  return last;
}

}  // namespace pargan
