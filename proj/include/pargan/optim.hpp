#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pargan/parameters.hpp"

namespace pargan {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of parameters.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<typename ParameterStore<T>::Entry> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  void step() {
    ++step_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T step_size = static_cast<T>(opt_.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(opt_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& var = params_[k].var;
      if (!var.has_grad()) continue;
      const auto& g = var.grad();
      auto& value = var.mutable_value();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        value[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  long long steps() const { return step_; }
  void set_steps(long long s) { step_ = s; }
  const AdamOptions& options() const { return opt_; }
  std::size_t size() const { return params_.size(); }
  const std::string& name(std::size_t k) const { return params_[k].name; }
  Tensor<T>& first_moment(std::size_t k) { return m_[k]; }
  Tensor<T>& second_moment(std::size_t k) { return v_[k]; }

 private:
  std::vector<typename ParameterStore<T>::Entry> params_;
  std::vector<Tensor<T>> m_, v_;
  AdamOptions opt_;
  long long step_ = 0;
};

/// Prefixes every entry name of a store, for optimizers spanning several networks.
template <typename T>
std::vector<typename ParameterStore<T>::Entry> prefixed_entries(const ParameterStore<T>& store,
                                                                const std::string& prefix) {
  std::vector<typename ParameterStore<T>::Entry> out;
  for (const auto& e : store.entries()) out.push_back({prefix + e.name, e.var});
  return out;
}

}  // namespace pargan
