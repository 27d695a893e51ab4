#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pargan/image.hpp"
#include "pargan/model.hpp"

namespace pargan {

inline constexpr int kDefaultSweepSamples = 100;

struct FeatureStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  std::size_t n = 0;
};

using FeatureFn = std::function<Eigen::VectorXd(const Image&)>;
using FeatureMapFn = std::function<std::vector<Tensor<float>>(const Image&)>;

/// Sample mean and unbiased covariance of the rows of `features` (one sample per row).
inline FeatureStats stats_from_features(const Eigen::MatrixXd& features) {
  const auto n = features.rows();
  if (n < 2) throw Error(ErrorCode::validation, "feature statistics need at least 2 samples, got " + std::to_string(n));
  FeatureStats s;
  s.n = static_cast<std::size_t>(n);
  s.mu = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
  s.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
  return s;
}

inline FeatureStats extract_stats(const std::vector<Image>& images, const FeatureFn& extractor) {
  if (images.size() < 2) {
    throw Error(ErrorCode::validation, "extract_stats needs at least 2 images, got " + std::to_string(images.size()));
  }
  Eigen::MatrixXd rows;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Eigen::VectorXd f = extractor(images[i]);
    if (i == 0) rows.resize(static_cast<Eigen::Index>(images.size()), f.size());
    if (f.size() != rows.cols()) throw Error(ErrorCode::shape, "extractor returned features of varying length");
    rows.row(static_cast<Eigen::Index>(i)) = f.transpose();
  }
  return stats_from_features(rows);
}

namespace detail {

/// Tr(sqrt(A^{1/2} B A^{1/2})), which equals Tr((AB)^{1/2}) for PSD A, B.
/// Returns false when an eigensolver fails.
inline bool trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double& out) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(0.5 * (a + a.transpose()));
  if (ea.info() != Eigen::Success) return false;
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sqrt_a * b * sqrt_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  if (em.info() != Eigen::Success) return false;
  out = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::isfinite(out);
}

}  // namespace detail

/// Frechet distance between Gaussian fits:
///   |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})
/// clamped at 0.
inline double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mu.size() != b.mu.size() || a.sigma.rows() != a.mu.size() || b.sigma.rows() != b.mu.size()) {
    throw Error(ErrorCode::shape, "frechet_distance: feature dimensions differ (" + std::to_string(a.mu.size()) +
                                      " vs " + std::to_string(b.mu.size()) + ")");
  }
  double tr_sqrt = 0.0;
  if (!detail::trace_sqrt_product(a.sigma, b.sigma, tr_sqrt)) {
    const auto eye = Eigen::MatrixXd::Identity(a.sigma.rows(), a.sigma.cols());
    if (!detail::trace_sqrt_product(a.sigma + 1e-6 * eye, b.sigma + 1e-6 * eye, tr_sqrt)) {
      throw Error(ErrorCode::numeric, "frechet_distance: covariance square root failed after regularization");
    }
  }
  const double d = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt;
  if (!std::isfinite(d)) throw Error(ErrorCode::numeric, "frechet_distance: non-finite result");
  return std::max(0.0, d);
}

/// Fixed random strided conv net used as the default feature extractor:
/// 3 -> 16 -> 32 -> 64 channels, 4x4 kernels, stride 2, leaky ReLU.
class RandomConvExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 17) {
    Rng rng(seed);
    const int widths[] = {3, 16, 32, 64};
    for (int l = 0; l < 3; ++l) {
      const int in = widths[l], out = widths[l + 1];
      const double std = std::sqrt(2.0 / (in * 16.0));
      weights_.push_back(store_.add_normal("w" + std::to_string(l), {out, in, 4, 4}, rng, std));
    }
    store_.set_requires_grad(false);
  }

  int feature_dim() const { return 64; }

  /// Activations of every layer, each [1, C, h, w].
  std::vector<Tensor<float>> feature_maps(const Image& im) const {
    NoGradGuard no_grad;
    std::vector<Tensor<float>> maps;
    Var<float> h = constant(im);
    for (const auto& w : weights_) {
      h = leaky_relu(conv2d(h, w, Var<float>(), 2, 1), 0.2f);
      maps.push_back(h.value());
    }
    return maps;
  }

  /// Spatial mean of the last layer.
  Eigen::VectorXd operator()(const Image& im) const {
    const Tensor<float> last = feature_maps(im).back();
    const int c = last.dim(1);
    const std::size_t plane = last.size() / c;
    Eigen::VectorXd f(c);
    for (int k = 0; k < c; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += last[k * plane + i];
      f[k] = s / static_cast<double>(plane);
    }
    return f;
  }

 private:
  ParameterStore<float> store_;
  std::vector<Var<float>> weights_;
};

inline const RandomConvExtractor& default_extractor() {
  static const RandomConvExtractor extractor(17);
  return extractor;
}

inline FeatureFn default_feature_fn() {
  return [](const Image& im) { return default_extractor()(im); };
}

inline FeatureMapFn default_feature_map_fn() {
  return [](const Image& im) { return default_extractor().feature_maps(im); };
}

/// Per layer: mean over positions of |f1/|f1| - f2/|f2||^2 along channels;
/// layers are averaged.
inline double patch_perceptual_distance(const Image& im1, const Image& im2, const FeatureMapFn& extractor) {
  if (im1.shape() != im2.shape()) {
    throw Error(ErrorCode::shape, "patch_perceptual_distance: shapes " + shape_string(im1.shape()) + " and " +
                                      shape_string(im2.shape()) + " differ");
  }
  const auto fa = extractor(im1), fb = extractor(im2);
  if (fa.size() != fb.size() || fa.empty()) throw Error(ErrorCode::shape, "extractor returned mismatched layers");
  double total = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const int c = fa[l].dim(1);
    const std::size_t plane = fa[l].size() / c;
    double layer = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      double na = 0.0, nb = 0.0;
      for (int k = 0; k < c; ++k) {
        na += double(fa[l][k * plane + i]) * fa[l][k * plane + i];
        nb += double(fb[l][k * plane + i]) * fb[l][k * plane + i];
      }
      na = std::sqrt(na) + 1e-10;
      nb = std::sqrt(nb) + 1e-10;
      double d = 0.0;
      for (int k = 0; k < c; ++k) {
        const double diff = fa[l][k * plane + i] / na - fb[l][k * plane + i] / nb;
        d += diff * diff;
      }
      layer += d;
    }
    total += layer / static_cast<double>(plane);
  }
  return total / static_cast<double>(fa.size());
}

/// Distance between an image set and a reference set.
using SetMetric = std::function<double(const std::vector<Image>&, const std::vector<Image>&)>;

namespace detail {
inline void require_paired(const std::vector<Image>& a, const std::vector<Image>& b, const char* what) {
  if (a.empty() || a.size() != b.size()) {
    throw Error(ErrorCode::shape, std::string(what) + " needs equally sized non-empty paired sets (" +
                                      std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
}
}  // namespace detail

/// Mean absolute pixel difference over index-paired images.
inline SetMetric pixel_l1_metric() {
  return [](const std::vector<Image>& a, const std::vector<Image>& b) {
    detail::require_paired(a, b, "pixel_l1");
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (a[k].shape() != b[k].shape()) throw Error(ErrorCode::shape, "pixel_l1: image shapes differ");
      double s = 0.0;
      for (std::size_t i = 0; i < a[k].size(); ++i) s += std::abs(double(a[k][i]) - double(b[k][i]));
      sum += s / static_cast<double>(a[k].size());
    }
    return sum / static_cast<double>(a.size());
  };
}

inline SetMetric frechet_metric(FeatureFn extractor = default_feature_fn()) {
  return [extractor](const std::vector<Image>& a, const std::vector<Image>& b) {
    return frechet_distance(extract_stats(a, extractor), extract_stats(b, extractor));
  };
}

/// Mean patch perceptual distance over index-paired images.
inline SetMetric perceptual_metric(FeatureMapFn extractor = default_feature_map_fn()) {
  return [extractor](const std::vector<Image>& a, const std::vector<Image>& b) {
    detail::require_paired(a, b, "perceptual");
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) sum += patch_perceptual_distance(a[k], b[k], extractor);
    return sum / static_cast<double>(a.size());
  };
}

inline SetMetric metric_by_name(const std::string& name) {
  if (name == "pixel_l1") return pixel_l1_metric();
  if (name == "frechet") return frechet_metric();
  if (name == "perceptual") return perceptual_metric();
  throw Error(ErrorCode::usage, "unknown metric '" + name + "' (expected pixel_l1, frechet or perceptual)");
}

/// Translates a set of images under one parametrization.
using GenerateFn = std::function<std::vector<Image>(const std::vector<Image>&, const std::vector<double>&)>;

inline GenerateFn generator_handle(const Generator<float>& g) {
  return [&g](const std::vector<Image>& inputs, const std::vector<double>& p) {
    const int p_dim = g.config().p_dim;
    if (static_cast<int>(p.size()) != p_dim) {
      throw Error(ErrorCode::shape, "parametrization has " + std::to_string(p.size()) + " values, generator expects " +
                                        std::to_string(p_dim));
    }
    Tensor<float> pt({1, p_dim});
    for (int k = 0; k < p_dim; ++k) pt[k] = static_cast<float>(p[k]);
    std::vector<Image> out;
    out.reserve(inputs.size());
    for (const auto& x : inputs) out.push_back(g.generate(x, p_dim ? pt : Tensor<float>()));
    return out;
  };
}

struct SweepMatrix {
  std::vector<std::vector<double>> values;  // values[i][j]: generated at col_params[j] vs real at row_params[i]
  std::vector<std::vector<double>> row_params;
  std::vector<std::vector<double>> col_params;
  std::string metric_name;

  std::size_t size() const { return values.size(); }

  /// Columns whose diagonal entry is the column minimum (ties count).
  int diagonal_minimum_columns() const {
    int count = 0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      bool ok = true;
      for (std::size_t i = 0; i < values.size(); ++i) ok = ok && values[j][j] <= values[i][j];
      count += ok;
    }
    return count;
  }
};

using RealSets = std::map<std::vector<double>, std::vector<Image>>;

inline SweepMatrix sweep_matrix(const GenerateFn& gen, const std::vector<Image>& inputs, const RealSets& real_sets,
                                const std::vector<std::vector<double>>& grid, const SetMetric& metric,
                                const std::string& metric_name) {
  if (grid.empty()) throw Error(ErrorCode::validation, "sweep_matrix: empty grid");
  for (const auto& p : grid) {
    if (!real_sets.count(p)) {
      std::ostringstream os;
      os << "sweep_matrix: no real set for p = [";
      for (std::size_t k = 0; k < p.size(); ++k) os << (k ? ", " : "") << p[k];
      os << "]";
      throw Error(ErrorCode::validation, os.str());
    }
  }
  SweepMatrix m;
  m.metric_name = metric_name;
  m.row_params = grid;
  m.col_params = grid;
  const std::size_t k = grid.size();
  m.values.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t j = 0; j < k; ++j) {
    const std::vector<Image> generated = gen(inputs, grid[j]);
    for (std::size_t i = 0; i < k; ++i) {
      const double v = metric(generated, real_sets.at(grid[i]));
      if (!std::isfinite(v) || v < 0.0) throw Error(ErrorCode::numeric, "sweep_matrix: metric returned " + std::to_string(v));
      m.values[i][j] = v;
    }
  }
  return m;
}

/// Ranks with ties sharing their average rank (1-based).
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation; 0 when either side has no variance.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw Error(ErrorCode::validation, "spearman needs two equal lists of length >= 2");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

struct MonotonicityReport {
  std::vector<double> p_values;
  std::vector<double> dist_to_source;
  std::vector<double> dist_to_target;
  double rho_source = 0.0;
  double rho_target = 0.0;
};

inline MonotonicityReport monotonicity_from_distances(std::vector<double> p_values, std::vector<double> to_source,
                                                      std::vector<double> to_target) {
  if (p_values.size() < 3) throw Error(ErrorCode::validation, "monotonicity analysis needs at least 3 p values");
  if (!std::is_sorted(p_values.begin(), p_values.end())) {
    throw Error(ErrorCode::validation, "monotonicity analysis needs p values sorted ascending");
  }
  MonotonicityReport r;
  r.rho_source = spearman(to_source, p_values);
  r.rho_target = spearman(to_target, p_values);
  r.p_values = std::move(p_values);
  r.dist_to_source = std::move(to_source);
  r.dist_to_target = std::move(to_target);
  return r;
}

/// Distances of G(inputs, p) to the source and target sets for scalar soft
/// parametrizations p, with their rank correlations against p.
inline MonotonicityReport monotonicity_report(const GenerateFn& gen, const std::vector<Image>& inputs,
                                              const std::vector<Image>& source_set,
                                              const std::vector<Image>& target_set,
                                              const std::vector<double>& p_values,
                                              const SetMetric& metric = frechet_metric()) {
  if (p_values.size() < 3) throw Error(ErrorCode::validation, "monotonicity_report needs at least 3 p values");
  if (!std::is_sorted(p_values.begin(), p_values.end())) {
    throw Error(ErrorCode::validation, "monotonicity_report needs p values sorted ascending");
  }
  std::vector<double> to_source, to_target;
  for (double p : p_values) {
    const auto generated = gen(inputs, {p});
    to_source.push_back(metric(generated, source_set));
    to_target.push_back(metric(generated, target_set));
  }
  return monotonicity_from_distances(p_values, std::move(to_source), std::move(to_target));
}

struct PcaResult {
  Eigen::MatrixXd projections;        // n x 3
  Eigen::Vector3d explained_variance;  // ratios of total variance
  Eigen::MatrixXd components;         // d x 3
  Eigen::VectorXd mean;
  double total_variance = 0.0;
};

/// Top-3 principal components of the rows of `activations`.
inline PcaResult pca3(const Eigen::MatrixXd& activations) {
  if (activations.rows() < 4) {
    throw Error(ErrorCode::validation, "PCA needs at least 4 activation vectors, got " + std::to_string(activations.rows()));
  }
  PcaResult r;
  r.mean = activations.colwise().mean().transpose();
  const Eigen::MatrixXd centered = activations.rowwise() - r.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(activations.rows());
  r.total_variance = cov.trace();
  if (!(r.total_variance > 1e-12 * std::max(1.0, r.mean.squaredNorm()))) {
    throw Error(ErrorCode::numeric, "PCA input has zero variance (all activation vectors identical)");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  if (es.info() != Eigen::Success) throw Error(ErrorCode::numeric, "PCA eigendecomposition failed");
  const Eigen::Index d = cov.rows();
  r.components = Eigen::MatrixXd::Zero(d, 3);
  r.explained_variance.setZero();
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(3, d); ++k) {
    const Eigen::Index idx = d - 1 - k;  // eigenvalues ascend
    r.components.col(k) = es.eigenvectors().col(idx);
    r.explained_variance[k] = std::max(0.0, es.eigenvalues()[idx]) / r.total_variance;
  }
  r.projections = centered * r.components;
  return r;
}

struct LatentPca {
  PcaResult pca;
  std::vector<std::vector<double>> params;  // parametrization of each projected point
  std::vector<std::size_t> image_index;
};

/// Spatially averaged activations right after p has been mixed into the
/// bottleneck, for every (image, p) pair, reduced to 3 principal components.
inline LatentPca latent_pca(const Generator<float>& g, const std::vector<Image>& images,
                            const std::vector<std::vector<double>>& p_grid) {
  const int p_dim = g.config().p_dim;
  std::vector<Eigen::VectorXd> rows;
  LatentPca out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (const auto& p : p_grid) {
      if (static_cast<int>(p.size()) != p_dim) throw Error(ErrorCode::shape, "latent_pca: p length differs from p_dim");
      Tensor<float> pt({1, p_dim});
      for (int k = 0; k < p_dim; ++k) pt[k] = static_cast<float>(p[k]);
      GeneratorTrace<float> trace;
      g.generate(images[i], p_dim ? pt : Tensor<float>(), &trace);
      const Tensor<float>& a = trace.mixed;
      const int c = a.dim(1);
      const std::size_t plane = a.size() / c;
      Eigen::VectorXd v(c);
      for (int k = 0; k < c; ++k) {
        double s = 0.0;
        for (std::size_t q = 0; q < plane; ++q) s += a[k * plane + q];
        v[k] = s / static_cast<double>(plane);
      }
      rows.push_back(std::move(v));
      out.params.push_back(p);
      out.image_index.push_back(i);
    }
  }
  if (rows.empty()) throw Error(ErrorCode::validation, "latent_pca: no activations");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  out.pca = pca3(m);
  return out;
}

}  // namespace pargan
