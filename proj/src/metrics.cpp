#include "bodhi/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

#include "bodhi/error.hpp"
#include "bodhi/microagg.hpp"

namespace bodhi {

namespace {

void require_same_shape(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b) {
  if (a.layers.size() != b.layers.size()) throw Error(ErrorKind::shape_mismatch, "bundles differ in layer count");
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    if (a.layers[k].size() != b.layers[k].size() || a.layers[k].dim() != b.layers[k].dim()) {
      throw Error(ErrorKind::shape_mismatch, "bundles differ in shape on layer " + std::to_string(a.layers[k].index));
    }
  }
}

template <typename F>
double mean_over_marginals(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b, F&& per_marginal) {
  require_same_shape(a, b);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    for (std::size_t d = 0; d < a.layers[k].dim(); ++d) {
      total += per_marginal(a.layers[k].vectors.column(d), b.layers[k].vectors.column(d));
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

std::pair<double, double> bin_range(const std::vector<double>& reference, const HistogramConfig& config) {
  if (config.bins < 2) throw Error(ErrorKind::invalid_argument, "histogram needs at least 2 bins");
  if (!(config.alpha > 0.0)) throw Error(ErrorKind::invalid_argument, "histogram smoothing must be positive");
  if (config.policy == HistogramConfig::RangePolicy::fixed) return {config.lo, config.hi};
  const auto [lo, hi] = std::minmax_element(reference.begin(), reference.end());
  return {*lo - config.extension, *hi + config.extension};
}

Matrix column_matrix(const std::vector<double>& values) { return Matrix(values.size(), 1, values); }

}  // namespace

std::vector<double> histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
  std::vector<double> counts(bins, 0.0);
  const double width = hi - lo;
  for (double x : values) {
    std::size_t b = 0;
    if (width > 0.0) {
      const double pos = std::floor((x - lo) / width * static_cast<double>(bins));
      b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
    }
    counts[b] += 1.0;
  }
  return counts;
}

double chi_square_counts(std::span<const double> observed, std::span<const double> expected, double alpha) {
  if (observed.size() != expected.size()) throw Error(ErrorKind::shape_mismatch, "histograms differ in bin count");
  double s = 0.0;
  for (std::size_t b = 0; b < observed.size(); ++b) {
    const double diff = observed[b] - expected[b];
    s += diff * diff / (expected[b] + alpha);
  }
  return s;
}

double kl_from_histograms(std::span<const double> p_counts, std::span<const double> q_counts, double alpha) {
  if (p_counts.size() != q_counts.size()) throw Error(ErrorKind::shape_mismatch, "histograms differ in bin count");
  double p_total = 0.0, q_total = 0.0;
  for (std::size_t b = 0; b < p_counts.size(); ++b) {
    p_total += p_counts[b] + alpha;
    q_total += q_counts[b] + alpha;
  }
  double s = 0.0;
  for (std::size_t b = 0; b < p_counts.size(); ++b) {
    const double p = (p_counts[b] + alpha) / p_total;
    const double q = (q_counts[b] + alpha) / q_total;
    if (p > 0.0) s += p * std::log(p / q);
  }
  return std::max(s, 0.0);
}

double rmse(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b) {
  require_same_shape(a, b);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    const auto& x = a.layers[k].vectors.data();
    const auto& y = b.layers[k].vectors.data();
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    n += x.size();
  }
  return n ? std::sqrt(s / static_cast<double>(n)) : 0.0;
}

double chi_square(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b, const HistogramConfig& config) {
  return mean_over_marginals(a, b, [&](const std::vector<double>& x, const std::vector<double>& y) {
    const auto [lo, hi] = bin_range(x, config);
    return chi_square_counts(histogram(y, lo, hi, config.bins), histogram(x, lo, hi, config.bins), config.alpha);
  });
}

double kl_divergence(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b, const HistogramConfig& config) {
  return mean_over_marginals(a, b, [&](const std::vector<double>& x, const std::vector<double>& y) {
    const auto [lo, hi] = bin_range(x, config);
    return kl_from_histograms(histogram(y, lo, hi, config.bins), histogram(x, lo, hi, config.bins), config.alpha);
  });
}

double median_bandwidth(const Matrix& A, const Matrix& B, std::size_t max_points) {
  const std::size_t total = A.rows() + B.rows();
  const std::size_t stride = std::max<std::size_t>(1, (total + max_points - 1) / max_points);
  std::vector<std::span<const double>> pts;
  for (std::size_t i = 0; i < total; i += stride) pts.push_back(i < A.rows() ? A.row(i) : B.row(i - A.rows()));
  std::vector<double> dist;
  dist.reserve(pts.size() * (pts.size() - 1) / 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < pts[i].size(); ++a) s += (pts[i][a] - pts[j][a]) * (pts[i][a] - pts[j][a]);
      dist.push_back(std::sqrt(s));
    }
  }
  if (dist.empty()) return 1.0;
  const double h = empirical_quantile(std::move(dist), 0.5);
  return h > 0.0 ? h : 1.0;
}

double mmd2_unbiased(const Matrix& A, const Matrix& B, double bandwidth) {
  if (A.rows() < 2 || B.rows() < 2) throw Error(ErrorKind::insufficient_data, "MMD needs at least 2 samples per set");
  if (A.cols() != B.cols()) throw Error(ErrorKind::dimension_mismatch, "MMD sets differ in dimension");
  const double inv_h2 = 1.0 / (bandwidth * bandwidth);
  auto k = [&](std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t a = 0; a < x.size(); ++a) s += (x[a] - y[a]) * (x[a] - y[a]);
    return std::exp(-s * inv_h2);
  };
  const double m = static_cast<double>(A.rows()), n = static_cast<double>(B.rows());
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = i + 1; j < A.rows(); ++j) kxx += 2.0 * k(A.row(i), A.row(j));
  for (std::size_t i = 0; i < B.rows(); ++i)
    for (std::size_t j = i + 1; j < B.rows(); ++j) kyy += 2.0 * k(B.row(i), B.row(j));
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < B.rows(); ++j) kxy += k(A.row(i), B.row(j));
  return kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n);
}

double mmd_rbf(const Matrix& A, const Matrix& B) {
  if (A.empty() || B.empty()) throw Error(ErrorKind::insufficient_data, "MMD needs non-empty sets");
  return std::sqrt(std::max(mmd2_unbiased(A, B, median_bandwidth(A, B)), 0.0));
}

double mmd_marginal(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b) {
  return mean_over_marginals(a, b, [](const std::vector<double>& x, const std::vector<double>& y) {
    const Matrix A = column_matrix(x), B = column_matrix(y);
    return std::max(mmd2_unbiased(A, B, median_bandwidth(A, B)), 0.0);
  });
}

double wasserstein1(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::shape_mismatch, "W1 samples differ in size");
  if (x.empty()) return 0.0;
  std::vector<double> xs(x.begin(), x.end()), ys(y.begin(), y.end());
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += std::abs(xs[i] - ys[i]);
  return s / static_cast<double>(xs.size());
}

double wasserstein1(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b) {
  return mean_over_marginals(a, b, [](const std::vector<double>& x, const std::vector<double>& y) {
    return wasserstein1(x, y);
  });
}

std::vector<double> moment_features(const LayeredFeatureBundle& original, const LayeredFeatureBundle& perturbed,
                                    const GroupingResult& grouping) {
  require_same_shape(original, perturbed);
  check_grouping_matches(original, grouping);
  double sum = 0.0, sum_abs = 0.0, sum_sq = 0.0, ncp_total = 0.0;
  std::size_t n = 0, layers = 0;
  for (std::size_t k = 0; k < original.layers.size(); ++k) {
    const auto& ids = grouping.partitions[k].sensitive_ids;
    if (ids.empty()) continue;
    const Matrix& t = original.layers[k].vectors;
    const Matrix& v = perturbed.layers[k].vectors;
    for (auto id : ids) {
      for (std::size_t a = 0; a < t.cols(); ++a) {
        const double delta = v(id, a) - t(id, a);
        sum += delta;
        sum_abs += std::abs(delta);
        sum_sq += delta * delta;
        ++n;
      }
    }
    const auto ranges = estimate_ranges(v);
    ncp_total += ncp(std::span<const std::size_t>(ids), v, uniform_weights(v.cols()), ranges);
    ++layers;
  }
  if (n == 0) throw Error(ErrorKind::no_sensitive_features, "no sensitive features for moment features");
  const double dn = static_cast<double>(n);
  const double mean = sum / dn;
  return {sum_abs / dn, std::sqrt(std::max(sum_sq / dn - mean * mean, 0.0)), ncp_total / static_cast<double>(layers)};
}

namespace {

Eigen::RowVectorXd design_row(std::span<const double> features) {
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(features.size() + 1));
  row(0) = 1.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!(features[i] > 0.0)) throw Error(ErrorKind::invalid_argument, "moment features must be positive");
    row(static_cast<Eigen::Index>(i + 1)) = std::log(features[i]);
  }
  return row;
}

}  // namespace

MomentRegModel moment_reg_fit(const std::vector<MomentRun>& runs) {
  if (runs.empty()) throw Error(ErrorKind::insufficient_data, "MomentReg needs training runs");
  std::set<double> distinct;
  for (const auto& r : runs) distinct.insert(r.epsilon);
  if (distinct.size() < 2) throw Error(ErrorKind::insufficient_data, "MomentReg needs at least 2 distinct epsilons");

  const std::size_t p = runs.front().features.size() + 1;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(runs.size()), static_cast<Eigen::Index>(p));
  Eigen::VectorXd y(static_cast<Eigen::Index>(runs.size()));
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].features.size() + 1 != p) throw Error(ErrorKind::shape_mismatch, "runs differ in feature count");
    if (!(runs[i].epsilon > 0.0)) throw Error(ErrorKind::invalid_argument, "epsilon must be positive");
    X.row(static_cast<Eigen::Index>(i)) = design_row(runs[i].features);
    y(static_cast<Eigen::Index>(i)) = std::log(runs[i].epsilon);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(p)) {
    throw Error(ErrorKind::rank_deficient, "MomentReg design is rank deficient (constant or collinear features)");
  }
  const Eigen::VectorXd beta = qr.solve(y);

  MomentRegModel model;
  model.coefficients.assign(beta.data(), beta.data() + beta.size());
  model.n_train = runs.size();
  double s = 0.0;
  for (const auto& r : runs) {
    const double e = moment_reg_predict(model, r.features) - r.epsilon;
    s += e * e;
  }
  model.train_rmse = std::sqrt(s / static_cast<double>(runs.size()));
  return model;
}

double moment_reg_predict(const MomentRegModel& model, std::span<const double> features) {
  if (features.size() + 1 != model.coefficients.size()) {
    throw Error(ErrorKind::shape_mismatch, "feature count does not match the model");
  }
  const Eigen::RowVectorXd row = design_row(features);
  double z = 0.0;
  for (Eigen::Index i = 0; i < row.size(); ++i) z += row(i) * model.coefficients[static_cast<std::size_t>(i)];
  return std::exp(z);
}

double noise_mle(std::span<const double> residuals, NoiseFamily family, double c) {
  if (residuals.size() < 10) throw Error(ErrorKind::insufficient_data, "NoiseMLE needs at least 10 residuals");
  if (!(c > 0.0)) throw Error(ErrorKind::invalid_argument, "calibration constant must be positive");
  double s = 0.0;
  for (double u : residuals) s += family == NoiseFamily::laplace ? std::abs(u) : u * u;
  s /= static_cast<double>(residuals.size());
  const double scale = family == NoiseFamily::laplace ? s : std::sqrt(s);
  if (scale == 0.0) throw Error(ErrorKind::zero_residual, "all residuals are zero; epsilon estimate is unbounded");
  return c / scale;
}

}  // namespace bodhi
