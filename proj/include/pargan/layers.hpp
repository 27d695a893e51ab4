#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pargan/ops.hpp"
#include "pargan/parameters.hpp"

namespace pargan {

/// Convolution with optional reflection padding applied before a zero-pad-free conv.
/// Convs feeding an instance norm are built without bias (the norm removes it).
template <typename T>
struct Conv {
  Var<T> weight;
  Var<T> bias;
  int stride = 1;
  int pad = 0;
  bool reflect = false;

  static Conv make(ParameterStore<T>& store, const std::string& name, int in, int out, int kernel, int stride,
                   int pad, bool reflect, Rng& rng, bool with_bias = true) {
    Conv c;
    c.weight = store.add_normal(name + ".weight", {out, in, kernel, kernel}, rng);
    if (with_bias) c.bias = store.add_constant(name + ".bias", {out}, T(0));
    c.stride = stride;
    c.pad = pad;
    c.reflect = reflect;
    return c;
  }

  int in_channels() const { return weight.shape()[1]; }

  Var<T> operator()(const Var<T>& x) const {
    if (reflect && pad > 0) return conv2d(reflect_pad(x, pad), weight, bias, stride, 0);
    return conv2d(x, weight, bias, stride, pad);
  }
};

/// Stride-2 transposed convolution, kernel 3, doubling the spatial size. Always
/// followed by an instance norm, so it carries no bias.
template <typename T>
struct UpConv {
  Var<T> weight;

  static UpConv make(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng) {
    UpConv c;
    c.weight = store.add_normal(name + ".weight", {in, out, 3, 3}, rng);
    return c;
  }

  int in_channels() const { return weight.shape()[0]; }

  Var<T> operator()(const Var<T>& x) const { return conv_transpose2d(x, weight, Var<T>(), 2, 1, 1); }
};

template <typename T>
struct InstanceNorm {
  Var<T> gamma;
  Var<T> beta;

  static InstanceNorm make(ParameterStore<T>& store, const std::string& name, int channels) {
    return {store.add_constant(name + ".gamma", {channels}, T(1)), store.add_constant(name + ".beta", {channels}, T(0))};
  }

  Var<T> operator()(const Var<T>& x) const { return instance_norm(x, gamma, beta); }
};

/// Stack of fully connected layers mapping a parametrization to an embedding.
/// ReLU between layers, linear output. An empty stack means "no embedding".
/// Fan-in uniform init: with std 0.02 weights the embedding shrinks by ~50x per
/// layer and the network cannot see p.
template <typename T>
struct EmbeddingMlp {
  std::vector<Var<T>> weights;
  std::vector<Var<T>> biases;
  int in_dim = 0;
  int out_dim = 0;

  static EmbeddingMlp make(ParameterStore<T>& store, const std::string& name, int in_dim, int out_dim, int layers,
                           Rng& rng) {
    EmbeddingMlp m;
    m.in_dim = in_dim;
    m.out_dim = out_dim;
    if (in_dim == 0) return m;
    int width = in_dim;
    for (int i = 0; i < layers; ++i) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(width));
      m.weights.push_back(store.add_uniform(name + "." + std::to_string(i) + ".weight", {out_dim, width}, rng, bound));
      m.biases.push_back(store.add_uniform(name + "." + std::to_string(i) + ".bias", {out_dim}, rng, bound));
      width = out_dim;
    }
    return m;
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].value().size() + biases[i].value().size();
    return n;
  }

  /// [N, in_dim] -> [N, out_dim]. Without layers the embedding is identically zero.
  Var<T> operator()(const Var<T>& p, int batch) const {
    if (weights.empty()) return constant(Tensor<T>({batch, out_dim}));
    Var<T> h = p;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      h = linear(h, weights[i], biases[i]);
      if (i + 1 < weights.size()) h = relu(h);
    }
    return h;
  }

  /// Forces the embedding output to zero regardless of the input.
  void zero_output() {
    if (weights.empty()) return;
    weights.back().mutable_value().fill(T(0));
    biases.back().mutable_value().fill(T(0));
  }
};

}  // namespace pargan
