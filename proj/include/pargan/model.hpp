#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pargan/layers.hpp"

namespace pargan {

enum class GeneratorInjection { bottleneck_once, encoder_all, decoder_all };
enum class DiscriminatorInjection { after_stem_once, all_convs };

namespace detail {
template <typename E, std::size_t N>
void enum_to_json(nlohmann::json& j, E value, const std::pair<E, const char*> (&names)[N]) {
  for (const auto& [e, name] : names)
    if (e == value) j = name;
}

template <typename E, std::size_t N>
void enum_from_json(const nlohmann::json& j, E& value, const std::pair<E, const char*> (&names)[N], const char* what) {
  const auto text = j.get<std::string>();
  for (const auto& [e, name] : names) {
    if (text == name) {
      value = e;
      return;
    }
  }
  throw Error(ErrorCode::config, std::string("unknown ") + what + " '" + text + "'");
}

inline constexpr std::pair<GeneratorInjection, const char*> kGeneratorInjectionNames[] = {
    {GeneratorInjection::bottleneck_once, "bottleneck_once"},
    {GeneratorInjection::encoder_all, "encoder_all"},
    {GeneratorInjection::decoder_all, "decoder_all"}};
inline constexpr std::pair<DiscriminatorInjection, const char*> kDiscriminatorInjectionNames[] = {
    {DiscriminatorInjection::after_stem_once, "after_stem_once"}, {DiscriminatorInjection::all_convs, "all_convs"}};
}  // namespace detail

inline void to_json(nlohmann::json& j, GeneratorInjection v) { detail::enum_to_json(j, v, detail::kGeneratorInjectionNames); }
inline void from_json(const nlohmann::json& j, GeneratorInjection& v) {
  detail::enum_from_json(j, v, detail::kGeneratorInjectionNames, "generator injection");
}
inline void to_json(nlohmann::json& j, DiscriminatorInjection v) {
  detail::enum_to_json(j, v, detail::kDiscriminatorInjectionNames);
}
inline void from_json(const nlohmann::json& j, DiscriminatorInjection& v) {
  detail::enum_from_json(j, v, detail::kDiscriminatorInjectionNames, "discriminator injection");
}

struct GeneratorConfig {
  int image_size = 64;
  int in_channels = 3;
  int out_channels = 3;
  int base_width = 64;
  int n_downsample = 2;
  int n_resblocks = 6;
  int p_dim = 0;
  int p_embed_dim = 64;
  int p_mlp_layers = 3;
  GeneratorInjection injection = GeneratorInjection::bottleneck_once;
  bool use_skips = false;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (image_size < 4) v.push_back("image_size must be >= 4");
    if (in_channels < 1 || out_channels < 1) v.push_back("channel counts must be >= 1");
    if (base_width < 1) v.push_back("base_width must be >= 1");
    if (n_downsample < 1) v.push_back("n_downsample must be >= 1");
    if (n_resblocks < 0) v.push_back("n_resblocks must be >= 0");
    if (p_dim < 0) v.push_back("p_dim must be >= 0");
    if (p_embed_dim < 1) v.push_back("p_embed_dim must be >= 1");
    if (p_dim > 0 && p_mlp_layers < 1) v.push_back("p_mlp_layers must be >= 1 when p_dim > 0");
    if (n_downsample >= 1 && n_downsample < 20 && image_size % (1 << n_downsample) != 0)
      v.push_back("image_size must be divisible by 2^n_downsample");
    if (n_downsample >= 1 && n_downsample < 20 && image_size / (1 << n_downsample) < 2)
      v.push_back("bottleneck resolution must be at least 2x2");
    return v;
  }
};

struct DiscriminatorConfig {
  int image_size = 64;
  int in_channels = 3;
  int base_width = 64;
  int n_layers = 3;
  int p_dim = 0;
  int p_embed_dim = 64;
  int p_mlp_layers = 3;
  DiscriminatorInjection injection = DiscriminatorInjection::after_stem_once;
  int n_scales = 1;
  bool multi_scale = false;

  /// Spatial size of the patch score map for a square input of `size`.
  static int score_map_size(int size, int n_layers) {
    int s = size;
    for (int i = 0; i < n_layers; ++i) s = detail::conv_out_size(s, 4, 2, 1);
    s = detail::conv_out_size(s, 4, 1, 1);
    return detail::conv_out_size(s, 4, 1, 1);
  }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (in_channels < 1) v.push_back("in_channels must be >= 1");
    if (base_width < 1) v.push_back("base_width must be >= 1");
    if (n_layers < 1) v.push_back("n_layers must be >= 1");
    if (p_dim < 0) v.push_back("p_dim must be >= 0");
    if (p_embed_dim < 1) v.push_back("p_embed_dim must be >= 1");
    if (p_dim > 0 && p_mlp_layers < 1) v.push_back("p_mlp_layers must be >= 1 when p_dim > 0");
    if (n_scales < 1) v.push_back("n_scales must be >= 1");
    if (n_scales >= 2 && !multi_scale) v.push_back("n_scales >= 2 requires the multi-scale variant");
    if (n_layers >= 1 && n_scales >= 1 && n_scales < 16) {
      const int smallest = image_size >> (n_scales - 1);
      if (score_map_size(smallest, n_layers) < 1)
        v.push_back("image_size too small for n_layers at the coarsest scale");
    }
    return v;
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"image_size", c.image_size}, {"in_channels", c.in_channels},   {"out_channels", c.out_channels},
       {"base_width", c.base_width}, {"n_downsample", c.n_downsample}, {"n_resblocks", c.n_resblocks},
       {"p_dim", c.p_dim},           {"p_embed_dim", c.p_embed_dim},   {"p_mlp_layers", c.p_mlp_layers},
       {"injection", c.injection},   {"use_skips", c.use_skips}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  GeneratorConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.out_channels = j.value("out_channels", d.out_channels);
  c.base_width = j.value("base_width", d.base_width);
  c.n_downsample = j.value("n_downsample", d.n_downsample);
  c.n_resblocks = j.value("n_resblocks", d.n_resblocks);
  c.p_dim = j.value("p_dim", d.p_dim);
  c.p_embed_dim = j.value("p_embed_dim", d.p_embed_dim);
  c.p_mlp_layers = j.value("p_mlp_layers", d.p_mlp_layers);
  c.injection = j.value("injection", d.injection);
  c.use_skips = j.value("use_skips", d.use_skips);
}

inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"image_size", c.image_size}, {"in_channels", c.in_channels}, {"base_width", c.base_width},
       {"n_layers", c.n_layers},     {"p_dim", c.p_dim},             {"p_embed_dim", c.p_embed_dim},
       {"p_mlp_layers", c.p_mlp_layers}, {"injection", c.injection}, {"n_scales", c.n_scales},
       {"multi_scale", c.multi_scale}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  DiscriminatorConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.base_width = j.value("base_width", d.base_width);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.p_dim = j.value("p_dim", d.p_dim);
  c.p_embed_dim = j.value("p_embed_dim", d.p_embed_dim);
  c.p_mlp_layers = j.value("p_mlp_layers", d.p_mlp_layers);
  c.injection = j.value("injection", d.injection);
  c.n_scales = j.value("n_scales", d.n_scales);
  c.multi_scale = j.value("multi_scale", d.multi_scale);
}

namespace detail {
inline void throw_if_invalid(const std::vector<std::string>& violations, const char* what) {
  if (violations.empty()) return;
  std::string msg = std::string("invalid ") + what + ":";
  for (const auto& v : violations) msg += " " + v + ";";
  throw Error(ErrorCode::config, msg);
}

template <typename T>
void check_parametrization(const Var<T>& p, int batch, int p_dim, const char* who) {
  const bool empty = !p.defined() || p.value().size() == 0;
  if (p_dim == 0) {
    if (!empty) {
      throw Error(ErrorCode::shape, std::string(who) + ": network is unconditional but a parametrization was given");
    }
    return;
  }
  if (empty || p.shape() != Shape{batch, p_dim}) {
    throw Error(ErrorCode::shape, std::string(who) + ": parametrization must have shape " +
                                      shape_string({batch, p_dim}) + ", got " +
                                      (empty ? std::string("(empty)") : shape_string(p.shape())));
  }
}
}  // namespace detail

/// Intermediate activations captured during a generator forward pass.
template <typename T>
struct GeneratorTrace {
  Tensor<T> pre_injection;  // bottleneck features after the residual blocks
  Tensor<T> injected;       // input of the first decoder layer (features ++ embedding)
  Tensor<T> mixed;          // output of the first decoder layer
};

/// Hourglass generator G(x, p): conv encoder, residual bottleneck, transposed-conv
/// decoder, tanh output. A p-MLP embedding is tiled spatially and concatenated
/// along channels at the configured injection sites.
template <typename T>
class Generator {
 public:
  using scalar_type = T;

  Generator(GeneratorConfig cfg, Rng& rng) : cfg_(cfg) {
    detail::throw_if_invalid(cfg_.violations(), "generator config");
    const int w = cfg_.base_width;
    const int e = cfg_.p_embed_dim;
    const int nd = cfg_.n_downsample;
    const bool enc_all = cfg_.injection == GeneratorInjection::encoder_all;
    const bool dec_all = cfg_.injection == GeneratorInjection::decoder_all;
    const int enc_extra = enc_all ? e : 0;

    stem_ = Conv<T>::make(params_, "stem.conv", cfg_.in_channels + enc_extra, w, 7, 1, 3, true, rng, false);
    stem_norm_ = InstanceNorm<T>::make(params_, "stem.norm", w);
    for (int i = 1; i <= nd; ++i) {
      const int in = (w << (i - 1)) + enc_extra;
      const std::string name = "down" + std::to_string(i);
      down_.push_back(Conv<T>::make(params_, name + ".conv", in, w << i, 3, 2, 1, false, rng, false));
      down_norm_.push_back(InstanceNorm<T>::make(params_, name + ".norm", w << i));
    }
    const int c = w << nd;
    for (int i = 1; i <= cfg_.n_resblocks; ++i) {
      const std::string name = "res" + std::to_string(i);
      ResBlock rb;
      rb.conv1 = Conv<T>::make(params_, name + ".conv1", c, c, 3, 1, 1, true, rng, false);
      rb.norm1 = InstanceNorm<T>::make(params_, name + ".norm1", c);
      rb.conv2 = Conv<T>::make(params_, name + ".conv2", c, c, 3, 1, 1, true, rng, false);
      rb.norm2 = InstanceNorm<T>::make(params_, name + ".norm2", c);
      res_.push_back(rb);
    }
    for (int j = 1; j <= nd; ++j) {
      const int cj = w << (nd - j + 1);
      int in = cj;
      if (j == 1) {
        if (!enc_all) in += e;
      } else {
        if (cfg_.use_skips) in += (w << (nd - j + 1));
        if (dec_all || cfg_.use_skips) in += e;
      }
      const std::string name = "up" + std::to_string(j);
      up_.push_back(UpConv<T>::make(params_, name + ".conv", in, cj / 2, rng));
      up_norm_.push_back(InstanceNorm<T>::make(params_, name + ".norm", cj / 2));
    }
    int head_in = w;
    if (cfg_.use_skips) head_in += w;
    if (dec_all || cfg_.use_skips) head_in += e;
    head_ = Conv<T>::make(params_, "head.conv", head_in, cfg_.out_channels, 7, 1, 3, true, rng);
    mlp_ = EmbeddingMlp<T>::make(params_, "pmlp", cfg_.p_dim, e, cfg_.p_mlp_layers, rng);
  }

  const GeneratorConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }
  std::int64_t count_parameters() const { return params_.scalar_count(); }
  std::int64_t embedding_parameter_count() const { return mlp_.scalar_count(); }

  /// Channels entering the first decoder layer.
  int first_decoder_in_channels() const { return up_.front().in_channels(); }

  void zero_embedding_output() { mlp_.zero_output(); }

  /// x: [N, C, S, S] in [-1, 1]; p: [N, p_dim] (may be empty when p_dim == 0).
  Var<T> forward(const Var<T>& x, const Var<T>& p, GeneratorTrace<T>* trace = nullptr) const {
    const auto& xs = x.shape();
    if (xs.size() != 4 || xs[1] != cfg_.in_channels || xs[2] != cfg_.image_size || xs[3] != cfg_.image_size) {
      throw Error(ErrorCode::shape, "generator: expected input [N," + std::to_string(cfg_.in_channels) + "," +
                                        std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) +
                                        "], got " + shape_string(xs));
    }
    const int n = xs[0];
    detail::check_parametrization(p, n, cfg_.p_dim, "generator");
    const Var<T> emb = mlp_(p, n);
    const bool enc_all = cfg_.injection == GeneratorInjection::encoder_all;
    const bool dec_all = cfg_.injection == GeneratorInjection::decoder_all;
    auto with_emb = [&](const Var<T>& h) {
      return concat_channels<T>({h, tile_spatial(emb, h.shape()[2], h.shape()[3])});
    };

    std::vector<Var<T>> skips;
    Var<T> h = enc_all ? with_emb(x) : x;
    h = relu(stem_norm_(stem_(h)));
    skips.push_back(h);
    for (std::size_t i = 0; i < down_.size(); ++i) {
      if (enc_all) h = with_emb(h);
      h = relu(down_norm_[i](down_[i](h)));
      skips.push_back(h);
    }
    for (const auto& rb : res_) {
      Var<T> r = relu(rb.norm1(rb.conv1(h)));
      r = rb.norm2(rb.conv2(r));
      h = add(h, r);
    }
    if (trace) trace->pre_injection = h.value();
    if (!enc_all) h = with_emb(h);
    if (trace) trace->injected = h.value();

    const int nd = cfg_.n_downsample;
    for (std::size_t j = 0; j < up_.size(); ++j) {
      if (j > 0) {
        std::vector<Var<T>> parts{h};
        if (cfg_.use_skips) parts.push_back(skips[nd - j]);
        if (dec_all || cfg_.use_skips) parts.push_back(tile_spatial(emb, h.shape()[2], h.shape()[3]));
        if (parts.size() > 1) h = concat_channels(parts);
      }
      h = relu(up_norm_[j](up_[j](h)));
      if (j == 0 && trace) trace->mixed = h.value();
    }
    {
      std::vector<Var<T>> parts{h};
      if (cfg_.use_skips) parts.push_back(skips[0]);
      if (dec_all || cfg_.use_skips) parts.push_back(tile_spatial(emb, h.shape()[2], h.shape()[3]));
      if (parts.size() > 1) h = concat_channels(parts);
    }
    return pargan::tanh(head_(h));
  }

  /// Evaluation-mode forward without graph recording.
  Tensor<T> generate(const Tensor<T>& x, const Tensor<T>& p, GeneratorTrace<T>* trace = nullptr) const {
    NoGradGuard guard;
    return forward(constant(x), constant(p), trace).value();
  }

 private:
  struct ResBlock {
    Conv<T> conv1, conv2;
    InstanceNorm<T> norm1, norm2;
  };

  GeneratorConfig cfg_;
  ParameterStore<T> params_;
  Conv<T> stem_;
  InstanceNorm<T> stem_norm_;
  std::vector<Conv<T>> down_;
  std::vector<InstanceNorm<T>> down_norm_;
  std::vector<ResBlock> res_;
  std::vector<UpConv<T>> up_;
  std::vector<InstanceNorm<T>> up_norm_;
  Conv<T> head_;
  EmbeddingMlp<T> mlp_;
};

template <typename T>
struct DiscriminatorTrace {
  std::vector<Tensor<T>> score_maps;  // per scale, [N, 1, h, w] before pooling
};

/// Patch discriminator D(x, p). The stem sees only the image; the p embedding is
/// concatenated after it (or before every later conv). The patch score map is
/// mean-pooled to one score per image. With the multi-scale variant, identical
/// discriminators run on progressively 2x average-pooled inputs.
template <typename T>
class Discriminator {
 public:
  using scalar_type = T;
  static constexpr double kLeakySlope = 0.2;

  Discriminator(DiscriminatorConfig cfg, Rng& rng) : cfg_(cfg) {
    detail::throw_if_invalid(cfg_.violations(), "discriminator config");
    const int w = cfg_.base_width;
    const int e = cfg_.p_embed_dim;
    const bool all = cfg_.injection == DiscriminatorInjection::all_convs;
    for (int s = 0; s < cfg_.n_scales; ++s) {
      const std::string prefix = "s" + std::to_string(s) + ".";
      Scale sc;
      sc.stem = Conv<T>::make(params_, prefix + "stem.conv", cfg_.in_channels, w, 4, 2, 1, false, rng, false);
      sc.stem_norm = InstanceNorm<T>::make(params_, prefix + "stem.norm", w);
      int ch = w;
      int in = w + e;
      for (int i = 1; i <= cfg_.n_layers; ++i) {
        const bool last = i == cfg_.n_layers;
        const int out = w * std::min(1 << i, 8);
        const std::string name = prefix + "layer" + std::to_string(i);
        sc.convs.push_back(Conv<T>::make(params_, name + ".conv", in, out, 4, last ? 1 : 2, 1, false, rng, false));
        sc.norms.push_back(InstanceNorm<T>::make(params_, name + ".norm", out));
        ch = out;
        in = ch + (all ? e : 0);
      }
      sc.score = Conv<T>::make(params_, prefix + "score.conv", in, 1, 4, 1, 1, false, rng);
      sc.mlp = EmbeddingMlp<T>::make(params_, prefix + "pmlp", cfg_.p_dim, e, cfg_.p_mlp_layers, rng);
      scales_.push_back(std::move(sc));
    }
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }
  std::int64_t count_parameters() const { return params_.scalar_count(); }

  /// Per-scale scores, each of shape [N]. When p_dim == 0 any supplied p is ignored.
  std::vector<Var<T>> forward(const Var<T>& x, const Var<T>& p, DiscriminatorTrace<T>* trace = nullptr) const {
    const auto& xs = x.shape();
    if (xs.size() != 4 || xs[1] != cfg_.in_channels || xs[2] != cfg_.image_size || xs[3] != cfg_.image_size) {
      throw Error(ErrorCode::shape, "discriminator: unexpected input shape " + shape_string(xs));
    }
    const int n = xs[0];
    if (cfg_.p_dim > 0) detail::check_parametrization(p, n, cfg_.p_dim, "discriminator");
    const bool all = cfg_.injection == DiscriminatorInjection::all_convs;
    const T slope = static_cast<T>(kLeakySlope);

    std::vector<Var<T>> scores;
    Var<T> input = x;
    for (std::size_t s = 0; s < scales_.size(); ++s) {
      if (s > 0) input = avg_pool2(input);
      const Scale& sc = scales_[s];
      const Var<T> emb = sc.mlp(p, n);
      auto with_emb = [&](const Var<T>& h) {
        return concat_channels<T>({h, tile_spatial(emb, h.shape()[2], h.shape()[3])});
      };
      Var<T> h = leaky_relu(sc.stem_norm(sc.stem(input)), slope);
      h = with_emb(h);
      for (std::size_t i = 0; i < sc.convs.size(); ++i) {
        h = leaky_relu(sc.norms[i](sc.convs[i](h)), slope);
        if (all) h = with_emb(h);
      }
      Var<T> map = sc.score(h);
      if (trace) trace->score_maps.push_back(map.value());
      scores.push_back(mean_per_sample(map));
    }
    return scores;
  }

 private:
  struct Scale {
    Conv<T> stem;
    InstanceNorm<T> stem_norm;
    std::vector<Conv<T>> convs;
    std::vector<InstanceNorm<T>> norms;
    Conv<T> score;
    EmbeddingMlp<T> mlp;
  };

  DiscriminatorConfig cfg_;
  ParameterStore<T> params_;
  std::vector<Scale> scales_;
};

template <typename Net>
std::int64_t count_parameters(const Net& net) {
  return net.parameters().scalar_count();
}

}  // namespace pargan
