#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pargan/data.hpp"
#include "pargan/image.hpp"
#include "pargan/losses.hpp"
#include "pargan/model.hpp"
#include "pargan/optim.hpp"

namespace pargan {

struct TrainConfig {
  double lambda_cyc = 10.0;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 1;
  long long total_iters = 0;
  std::uint64_t seed = 0;
  bool use_history_buffer = false;
  int history_size = 50;
  bool random_crop = false;
  bool random_flip = false;
  int checkpoint_every = 1000;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(lambda_cyc >= 0.0)) v.push_back("lambda_cyc must be >= 0");
    if (!(lr > 0.0)) v.push_back("lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) v.push_back("betas must lie in [0, 1)");
    if (batch_size < 1) v.push_back("batch_size must be >= 1");
    if (total_iters < 0) v.push_back("total_iters must be >= 0");
    if (history_size < 1) v.push_back("history_size must be >= 1");
    if (checkpoint_every < 1) v.push_back("checkpoint_every must be >= 1");
    return v;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lambda_cyc", c.lambda_cyc},
       {"lr", c.lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"batch_size", c.batch_size},
       {"total_iters", c.total_iters},
       {"seed", c.seed},
       {"use_history_buffer", c.use_history_buffer},
       {"history_size", c.history_size},
       {"random_crop", c.random_crop},
       {"random_flip", c.random_flip},
       {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lambda_cyc = j.value("lambda_cyc", d.lambda_cyc);
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.total_iters = j.value("total_iters", d.total_iters);
  c.seed = j.value("seed", d.seed);
  c.use_history_buffer = j.value("use_history_buffer", d.use_history_buffer);
  c.history_size = j.value("history_size", d.history_size);
  c.random_crop = j.value("random_crop", d.random_crop);
  c.random_flip = j.value("random_flip", d.random_flip);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
}

struct LossReport {
  double gan_xy = 0.0;
  double gan_yx = 0.0;
  double cyc = 0.0;
  double total = 0.0;
  long long iteration = 0;
  double d_x = 0.0;  // discriminator objectives, logged for diagnostics only
  double d_y = 0.0;
};

template <typename T>
struct Batch {
  Tensor<T> x;  // [N, C, S, S] from the source domain
  Tensor<T> y;  // [N, C, S, S] from the target domain
  Tensor<T> p;  // [N, p_dim], the target records' parametrizations
};

/// Image history for discriminator updates: once full, each query returns a
/// stored fake with probability 1/2 and swaps the new one in.
template <typename T>
class HistoryPool {
 public:
  explicit HistoryPool(int capacity = 50) : capacity_(capacity) {}

  std::pair<Tensor<T>, Tensor<T>> query(const Tensor<T>& images, const Tensor<T>& params, Rng& rng) {
    const int n = images.dim(0);
    std::vector<Tensor<T>> out_i, out_p;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (int b = 0; b < n; ++b) {
      Tensor<T> im = batch_item(images, b);
      Tensor<T> p = params.size() ? batch_item(params, b) : Tensor<T>({1, 0});
      if (static_cast<int>(images_.size()) < capacity_) {
        images_.push_back(im);
        params_.push_back(p);
      } else if (coin(rng) < 0.5) {
        std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
        const std::size_t k = pick(rng);
        std::swap(images_[k], im);
        std::swap(params_[k], p);
      }
      out_i.push_back(std::move(im));
      out_p.push_back(std::move(p));
    }
    Tensor<T> pi = stack_batch<T>(out_i);
    Tensor<T> pp = params.size() ? stack_batch<T>(out_p) : params;
    return {std::move(pi), std::move(pp)};
  }

  std::vector<Tensor<T>>& images() { return images_; }
  std::vector<Tensor<T>>& params() { return params_; }
  const std::vector<Tensor<T>>& images() const { return images_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  int capacity_;
  std::vector<Tensor<T>> images_, params_;
};

namespace detail {
inline bool finite(double v) { return std::isfinite(v); }

template <typename Net>
class FreezeGuard {
 public:
  explicit FreezeGuard(Net& net) : net_(net) { net_.parameters().set_requires_grad(false); }
  ~FreezeGuard() { net_.parameters().set_requires_grad(true); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  Net& net_;
};
}  // namespace detail

/// Owns G, F, D_X, D_Y with one Adam state for {G, F} and one per
/// discriminator, and runs the mirrored two-half training iteration.
template <class Gen, class Disc>
class Trainer {
 public:
  using T = typename Gen::scalar_type;

  Trainer(Gen g, Gen f, Disc dx, Disc dy, TrainConfig cfg, Rng rng)
      : g_(std::move(g)), f_(std::move(f)), dx_(std::move(dx)), dy_(std::move(dy)), cfg_(cfg), rng_(rng),
        pool_x_(cfg.history_size), pool_y_(cfg.history_size) {
    detail::throw_if_invalid(cfg_.violations(), "train config");
    const AdamOptions opt{cfg_.lr, cfg_.beta1, cfg_.beta2, 1e-8};
    auto gen_params = prefixed_entries(g_.parameters(), "G/");
    auto f_params = prefixed_entries(f_.parameters(), "F/");
    gen_params.insert(gen_params.end(), f_params.begin(), f_params.end());
    opt_g_ = Adam<T>(std::move(gen_params), opt);
    opt_dx_ = Adam<T>(prefixed_entries(dx_.parameters(), "DX/"), opt);
    opt_dy_ = Adam<T>(prefixed_entries(dy_.parameters(), "DY/"), opt);
  }

  /// Graph of both cycle halves for one iteration.
  struct Cycles {
    Var<T> x_a, y_a, p_a, y_hat, x_rec;  // x-start: y_hat = G(x, p), x_rec = F(y_hat, p)
    Var<T> x_b, y_b, p_b, x_tilde, y_rec;  // y-start: x_tilde = F(y, p'), y_rec = G(x_tilde, p')
  };

  struct Objective {
    Var<T> gan_xy, gan_yx, cyc, total;
  };

  Cycles forward_cycles(const Batch<T>& a, const Batch<T>& b) const {
    Cycles c;
    c.x_a = constant(a.x);
    c.y_a = constant(a.y);
    c.p_a = constant(a.p);
    c.y_hat = g_.forward(c.x_a, c.p_a);
    c.x_rec = f_.forward(c.y_hat, c.p_a);
    c.x_b = constant(b.x);
    c.y_b = constant(b.y);
    c.p_b = constant(b.p);
    c.x_tilde = f_.forward(c.y_b, c.p_b);
    c.y_rec = g_.forward(c.x_tilde, c.p_b);
    return c;
  }

  /// Generator objective gan_xy + gan_yx + lambda * cyc against the current discriminators.
  Objective generator_objective(const Cycles& c) const {
    Objective o;
    o.gan_xy = generator_adversarial_loss(dy_.forward(c.y_hat, c.p_a));
    o.gan_yx = generator_adversarial_loss(dx_.forward(c.x_tilde, c.p_b));
    o.cyc = cycle_loss_var(c.x_a, c.x_rec, c.y_b, c.y_rec);
    o.total = weighted_sum<T>({o.gan_xy, o.gan_yx, o.cyc}, {T(1), T(1), static_cast<T>(cfg_.lambda_cyc)});
    return o;
  }

  /// One Adam step on each discriminator with the fakes detached. Returns (D_X, D_Y) losses.
  std::pair<double, double> update_discriminators(const Cycles& c) {
    Tensor<T> fake_y = c.y_hat.value(), fake_y_p = c.p_a.value();
    Tensor<T> fake_x = c.x_tilde.value(), fake_x_p = c.p_b.value();
    if (cfg_.use_history_buffer) {
      std::tie(fake_y, fake_y_p) = pool_y_.query(fake_y, fake_y_p, rng_);
      std::tie(fake_x, fake_x_p) = pool_x_.query(fake_x, fake_x_p, rng_);
    }
    opt_dy_.zero_grad();
    Var<T> loss_y = discriminator_loss(dy_.forward(c.y_a, c.p_a), dy_.forward(constant(fake_y), constant(fake_y_p)));
    backward(loss_y);
    opt_dx_.zero_grad();
    Var<T> loss_x = discriminator_loss(dx_.forward(c.x_b, c.p_b), dx_.forward(constant(fake_x), constant(fake_x_p)));
    backward(loss_x);
    const double dx_loss = loss_x.item(), dy_loss = loss_y.item();
    if (!detail::finite(dx_loss) || !detail::finite(dy_loss)) {
      std::ostringstream os;
      os << "non-finite discriminator loss at iteration " << iteration_ << ": d_x=" << dx_loss << " d_y=" << dy_loss;
      throw Error(ErrorCode::nonfinite, os.str());
    }
    opt_dy_.step();
    opt_dx_.step();
    return {dx_loss, dy_loss};
  }

  /// One Adam step on {G, F} with the discriminators frozen.
  LossReport update_generators(const Cycles& c) {
    LossReport r;
    {
      detail::FreezeGuard<Disc> fx(dx_), fy(dy_);
      opt_g_.zero_grad();
      Objective o = generator_objective(c);
      r.gan_xy = o.gan_xy.item();
      r.gan_yx = o.gan_yx.item();
      r.cyc = o.cyc.item();
      r.total = o.total.item();
      if (!detail::finite(r.total) || !detail::finite(r.cyc) || !detail::finite(r.gan_xy) ||
          !detail::finite(r.gan_yx)) {
        std::ostringstream os;
        os << "non-finite generator loss at iteration " << iteration_ << ": gan_xy=" << r.gan_xy
           << " gan_yx=" << r.gan_yx << " cyc=" << r.cyc << " total=" << r.total;
        throw Error(ErrorCode::nonfinite, os.str());
      }
      backward(o.total);
    }
    opt_g_.step();
    return r;
  }

  /// Full iteration: `a` feeds the x-start half, `b` (drawn independently) the y-start half.
  LossReport step(const Batch<T>& a, const Batch<T>& b) {
    const Cycles c = forward_cycles(a, b);
    const auto [d_x, d_y] = update_discriminators(c);
    LossReport r = update_generators(c);
    r.d_x = d_x;
    r.d_y = d_y;
    r.iteration = ++iteration_;
    return r;
  }

  Gen& g() { return g_; }
  Gen& f() { return f_; }
  Disc& dx() { return dx_; }
  Disc& dy() { return dy_; }
  const Gen& g() const { return g_; }
  const Gen& f() const { return f_; }
  const Disc& dx() const { return dx_; }
  const Disc& dy() const { return dy_; }
  Adam<T>& opt_g() { return opt_g_; }
  Adam<T>& opt_dx() { return opt_dx_; }
  Adam<T>& opt_dy() { return opt_dy_; }
  HistoryPool<T>& pool_x() { return pool_x_; }
  HistoryPool<T>& pool_y() { return pool_y_; }
  Rng& rng() { return rng_; }
  const TrainConfig& config() const { return cfg_; }
  TrainConfig& mutable_config() { return cfg_; }
  long long iteration() const { return iteration_; }
  void set_iteration(long long it) { iteration_ = it; }
  std::vector<Axis>& axes() { return axes_; }
  const std::vector<Axis>& axes() const { return axes_; }

 private:
  Gen g_, f_;
  Disc dx_, dy_;
  TrainConfig cfg_;
  Rng rng_;
  Adam<T> opt_g_, opt_dx_, opt_dy_;
  HistoryPool<T> pool_x_, pool_y_;
  long long iteration_ = 0;
  std::vector<Axis> axes_;
};

using ParGanTrainer = Trainer<Generator<float>, Discriminator<float>>;

/// Networks initialised from generators derived from cfg.seed (G, F, D_X, D_Y,
/// sampling), so equal seeds give identical trainers.
inline ParGanTrainer make_trainer(const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg,
                                  const TrainConfig& tcfg) {
  if (gcfg.p_dim != dcfg.p_dim) {
    throw Error(ErrorCode::config, "generator p_dim " + std::to_string(gcfg.p_dim) +
                                       " differs from discriminator p_dim " + std::to_string(dcfg.p_dim));
  }
  auto stream = [&](std::uint64_t k) {
    std::seed_seq seq{static_cast<std::uint32_t>(tcfg.seed), static_cast<std::uint32_t>(tcfg.seed >> 32),
                      static_cast<std::uint32_t>(k)};
    return Rng(seq);
  };
  Rng rg = stream(0), rf = stream(1), rdx = stream(2), rdy = stream(3);
  Generator<float> g(gcfg, rg), f(gcfg, rf);
  Discriminator<float> dx(dcfg, rdx), dy(dcfg, rdy);
  return ParGanTrainer(std::move(g), std::move(f), std::move(dx), std::move(dy), tcfg, stream(4));
}

/// Training images held in memory with the target parametrizations.
struct TrainData {
  std::vector<Image> source;
  std::vector<Image> target;
  std::vector<std::vector<double>> target_p;
  std::vector<Axis> axes;

  int p_dim() const { return static_cast<int>(axes.size()); }
};

inline TrainData load_train_data(const Manifest& source, const Manifest& target, int image_size) {
  throw_if_violations(validate_manifest(source), "source manifest");
  if (target.axes.empty()) {
    throw_if_violations(validate_manifest(target), "target manifest");
  } else {
    throw_if_violations(validate_target_manifest(target), "target manifest");
  }
  TrainData d;
  d.axes = target.axes;
  for (const auto& r : source.records) d.source.push_back(load_training_image(r.image_path, image_size));
  for (const auto& r : target.records) {
    d.target.push_back(load_training_image(r.image_path, image_size));
    d.target_p.push_back(r.p.value_or(std::vector<double>{}));
  }
  return d;
}

namespace detail {
inline Image flip_horizontal(const Image& im) {
  Image out(im.shape());
  const int h = image_height(im), w = image_width(im);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < h; ++r)
      for (int x = 0; x < w; ++x) out.at(0, c, r, x) = im.at(0, c, r, w - 1 - x);
  return out;
}

inline Image random_crop(const Image& im, Rng& rng) {
  const int h = image_height(im), w = image_width(im);
  const int pad = std::max(1, h / 8);
  std::uniform_int_distribution<int> off(0, 2 * pad);
  const int dy = off(rng), dx = off(rng);
  Image out(im.shape());
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < h; ++r)
      for (int x = 0; x < w; ++x)
        out.at(0, c, r, x) = im.at(0, c, reflect_index(r + dy - pad, h), reflect_index(x + dx - pad, w));
  return out;
}
}  // namespace detail

/// Draws one batch of (x, y, p) tuples with the trainer's generator.
inline Batch<float> draw_batch(const TrainData& data, const TrainConfig& cfg, Rng& rng) {
  std::vector<Image> xs, ys;
  std::vector<float> ps;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const auto idx = sample_tuple_indices(data.source.size(), data.target.size(), rng);
    Image x = data.source[idx.x];
    Image y = data.target[idx.y];
    if (cfg.random_crop) {
      x = detail::random_crop(x, rng);
      y = detail::random_crop(y, rng);
    }
    if (cfg.random_flip) {
      std::uniform_int_distribution<int> coin(0, 1);
      if (coin(rng)) x = detail::flip_horizontal(x);
      if (coin(rng)) y = detail::flip_horizontal(y);
    }
    xs.push_back(std::move(x));
    ys.push_back(std::move(y));
    for (double v : data.target_p[idx.y]) ps.push_back(static_cast<float>(v));
  }
  Batch<float> batch;
  batch.x = stack_batch<float>(xs);
  batch.y = stack_batch<float>(ys);
  batch.p = Tensor<float>({cfg.batch_size, data.p_dim()}, std::move(ps));
  return batch;
}

}  // namespace pargan
