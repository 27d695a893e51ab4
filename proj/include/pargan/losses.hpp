#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "pargan/ops.hpp"

namespace pargan {

struct AdversarialLoss {
  double discriminator = 0.0;
  double generator = 0.0;
};

/// Least-squares adversarial loss on per-sample scores.
///   discriminator: mean(0.5 * [(1 - d_real)^2 + d_fake^2])
///   generator:     mean(0.5 * (1 - d_fake)^2)
inline AdversarialLoss lsgan_loss(std::span<const double> d_real, std::span<const double> d_fake) {
  if (d_real.empty() || d_fake.empty()) throw Error(ErrorCode::validation, "lsgan_loss: empty score batch");
  if (d_real.size() != d_fake.size()) {
    throw Error(ErrorCode::shape, "lsgan_loss: real and fake batches differ in size");
  }
  AdversarialLoss out;
  for (std::size_t i = 0; i < d_real.size(); ++i) {
    if (!std::isfinite(d_real[i]) || !std::isfinite(d_fake[i])) {
      throw Error(ErrorCode::nonfinite, "lsgan_loss: non-finite score");
    }
    out.discriminator += 0.5 * ((1.0 - d_real[i]) * (1.0 - d_real[i]) + d_fake[i] * d_fake[i]);
    out.generator += 0.5 * (1.0 - d_fake[i]) * (1.0 - d_fake[i]);
  }
  out.discriminator /= static_cast<double>(d_real.size());
  out.generator /= static_cast<double>(d_fake.size());
  return out;
}

/// 0.5 * [mean|x_rec - x| + mean|y_rec - y|].
template <typename T>
double cycle_loss(const Tensor<T>& x, const Tensor<T>& x_rec, const Tensor<T>& y, const Tensor<T>& y_rec) {
  if (x.shape() != x_rec.shape() || y.shape() != y_rec.shape()) {
    throw Error(ErrorCode::shape, "cycle_loss: reconstruction shape mismatch");
  }
  if (x.empty() || y.empty()) throw Error(ErrorCode::shape, "cycle_loss: empty batch");
  auto mean_abs = [](const Tensor<T>& a, const Tensor<T>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    return s / static_cast<double>(a.size());
  };
  return 0.5 * (mean_abs(x_rec, x) + mean_abs(y_rec, y));
}

/// Sum of vars with scalar weights, as one scalar node.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  Var<T> out = scale(terms.at(0), weights.at(0));
  for (std::size_t i = 1; i < terms.size(); ++i) out = add(out, scale(terms[i], weights[i]));
  return out;
}

template <typename T>
Var<T> mean_over_scales(const std::vector<Var<T>>& per_scale) {
  if (per_scale.size() == 1) return per_scale.front();
  return weighted_sum(per_scale, std::vector<T>(per_scale.size(), T(1) / static_cast<T>(per_scale.size())));
}

/// Differentiable discriminator objective, averaged over discriminator scales.
template <typename T>
Var<T> discriminator_loss(const std::vector<Var<T>>& real, const std::vector<Var<T>>& fake) {
  std::vector<Var<T>> terms;
  for (std::size_t s = 0; s < real.size(); ++s) {
    terms.push_back(add(half_squared_error(real[s], T(1)), half_squared_error(fake[s], T(0))));
  }
  return mean_over_scales(terms);
}

/// Differentiable generator adversarial term, averaged over discriminator scales.
template <typename T>
Var<T> generator_adversarial_loss(const std::vector<Var<T>>& fake) {
  std::vector<Var<T>> terms;
  for (const auto& f : fake) terms.push_back(half_squared_error(f, T(1)));
  return mean_over_scales(terms);
}

/// Differentiable cycle term: 0.5 * [mean|x_rec - x| + mean|y_rec - y|].
template <typename T>
Var<T> cycle_loss_var(const Var<T>& x, const Var<T>& x_rec, const Var<T>& y, const Var<T>& y_rec) {
  return scale(add(mean_abs_error(x_rec, x), mean_abs_error(y_rec, y)), T(0.5));
}

}  // namespace pargan
