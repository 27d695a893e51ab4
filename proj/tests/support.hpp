#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pargan/autograd.hpp"
#include "pargan/tensor.hpp"

namespace testing_support {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pargan_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename T>
pargan::Tensor<T> random_tensor(pargan::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  pargan::Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(d(rng));
  return t;
}

struct GradCheck {
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of `loss()` with respect to `leaves` to
/// central differences. At most `max_entries` entries per leaf are probed,
/// spread evenly over the tensor.
inline GradCheck check_gradients(const std::function<pargan::Var<double>()>& loss,
                                 std::vector<pargan::Var<double>> leaves, double h = 1e-6,
                                 std::size_t max_entries = 0) {
  for (auto& l : leaves) l.zero_grad();
  pargan::backward(loss());
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  GradCheck out;
  for (auto& l : leaves) {
    const std::size_t n = l.value().size();
    const bool has = l.has_grad();
    const pargan::Tensor<double> g = has ? l.grad() : pargan::Tensor<double>(l.shape());
    const std::size_t step = (max_entries && n > max_entries) ? n / max_entries : 1;
    for (std::size_t i = 0; i < n; i += step) {
      double& v = l.mutable_value()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss().item();
      v = saved - h;
      const double down = loss().item();
      v = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (numeric - g[i]) * (numeric - g[i]);
      a2 += g[i] * g[i];
      n2 += numeric * numeric;
      ++out.checked;
    }
  }
  out.analytic_norm = std::sqrt(a2);
  out.relative_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return out;
}

}  // namespace testing_support
