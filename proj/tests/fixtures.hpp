#pragma once

#include <random>

#include "pargan/train.hpp"
#include "support.hpp"

namespace testing_support {

inline pargan::GeneratorConfig small_generator(int p_dim) {
  pargan::GeneratorConfig c;
  c.image_size = 16;
  c.base_width = 8;
  c.n_downsample = 2;
  c.n_resblocks = 1;
  c.p_dim = p_dim;
  c.p_embed_dim = 8;
  c.p_mlp_layers = 2;
  return c;
}

inline pargan::DiscriminatorConfig small_discriminator(int p_dim) {
  pargan::DiscriminatorConfig c;
  c.image_size = 16;
  c.base_width = 8;
  c.n_layers = 2;
  c.p_dim = p_dim;
  c.p_embed_dim = 8;
  c.p_mlp_layers = 2;
  return c;
}

inline pargan::ParGanTrainer small_trainer(std::uint64_t seed, double lambda = 10.0, int p_dim = 2) {
  pargan::TrainConfig t;
  t.seed = seed;
  t.lambda_cyc = lambda;
  return pargan::make_trainer(small_generator(p_dim), small_discriminator(p_dim), t);
}

inline pargan::Batch<float> random_batch(std::mt19937_64& rng, int n = 1, int p_dim = 2, int size = 16) {
  pargan::Batch<float> b;
  b.x = random_tensor<float>({n, 3, size, size}, rng);
  b.y = random_tensor<float>({n, 3, size, size}, rng);
  b.p = random_tensor<float>({n, p_dim}, rng, 0.0, 1.0);
  return b;
}

// Per-pixel affine generator: out = W x + U p + b, 9 + 3 p_dim + 3 parameters.
// Built as the identity map when `identity` is set.
template <typename T>
struct MicroGenerator {
  using scalar_type = T;
  pargan::ParameterStore<T> store;
  pargan::Var<T> w, u, b;

  MicroGenerator(int p_dim, std::mt19937_64& rng, bool identity = false) {
    w = store.add("w", random_tensor<T>({3, 3, 1, 1}, rng, -0.5, 0.5));
    u = store.add("u", random_tensor<T>({3, p_dim}, rng, -0.5, 0.5));
    b = store.add("b", random_tensor<T>({3}, rng, -0.1, 0.1));
    if (identity) {
      w.mutable_value().fill(T(0));
      for (int c = 0; c < 3; ++c) w.mutable_value().at(c, c, 0, 0) = T(1);
      u.mutable_value().fill(T(0));
      b.mutable_value().fill(T(0));
    }
  }

  pargan::ParameterStore<T>& parameters() { return store; }
  const pargan::ParameterStore<T>& parameters() const { return store; }

  pargan::Var<T> forward(const pargan::Var<T>& x, const pargan::Var<T>& p) const {
    const int h = x.shape()[2], wd = x.shape()[3];
    return pargan::add(pargan::conv2d(x, w, pargan::Var<T>(), 1, 0), pargan::tile_spatial(pargan::linear(p, u, b), h, wd));
  }
};

// Per-pixel linear critic averaged to one score: 3 + p_dim + 1 parameters.
// With `constant_output` every weight is zero and the score is the bias.
template <typename T>
struct MicroDiscriminator {
  using scalar_type = T;
  pargan::ParameterStore<T> store;
  pargan::Var<T> w, u, b;

  MicroDiscriminator(int p_dim, std::mt19937_64& rng, bool constant_output = false) {
    w = store.add("w", random_tensor<T>({1, 3, 1, 1}, rng, -0.5, 0.5));
    u = store.add("u", random_tensor<T>({1, p_dim}, rng, -0.5, 0.5));
    b = store.add("b", random_tensor<T>({1}, rng, -0.1, 0.1));
    if (constant_output) {
      w.mutable_value().fill(T(0));
      u.mutable_value().fill(T(0));
      b.mutable_value().fill(T(0.3));
    }
  }

  pargan::ParameterStore<T>& parameters() { return store; }
  const pargan::ParameterStore<T>& parameters() const { return store; }

  std::vector<pargan::Var<T>> forward(const pargan::Var<T>& x, const pargan::Var<T>& p) const {
    const int h = x.shape()[2], wd = x.shape()[3];
    auto map = pargan::add(pargan::conv2d(x, w, pargan::Var<T>(), 1, 0), pargan::tile_spatial(pargan::linear(p, u, b), h, wd));
    return {pargan::mean_per_sample(map)};
  }
};

using MicroTrainer = pargan::Trainer<MicroGenerator<double>, MicroDiscriminator<double>>;

inline MicroTrainer micro_trainer(std::uint64_t seed, double lambda = 10.0, bool identity = false,
                                  bool constant_critic = false, int p_dim = 1) {
  std::mt19937_64 rng(seed);
  pargan::TrainConfig cfg;
  cfg.lambda_cyc = lambda;
  MicroGenerator<double> g(p_dim, rng, identity), f(p_dim, rng, identity);
  MicroDiscriminator<double> dx(p_dim, rng, constant_critic), dy(p_dim, rng, constant_critic);
  return MicroTrainer(std::move(g), std::move(f), std::move(dx), std::move(dy), cfg, pargan::Rng(seed));
}

template <typename T>
pargan::Batch<T> random_batch_of(std::mt19937_64& rng, int n, int p_dim, int size) {
  pargan::Batch<T> b;
  b.x = random_tensor<T>({n, 3, size, size}, rng);
  b.y = random_tensor<T>({n, 3, size, size}, rng);
  b.p = random_tensor<T>({n, p_dim}, rng, 0.0, 1.0);
  return b;
}

}  // namespace testing_support
