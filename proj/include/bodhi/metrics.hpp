#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bodhi/core.hpp"

namespace bodhi {

struct HistogramConfig {
  enum class RangePolicy { from_original, fixed };
  std::size_t bins = 64;
  RangePolicy policy = RangePolicy::from_original;
  double lo = 0.0;
  double hi = 1.0;
  /// Added below the original minimum and above its maximum (from_original only).
  double extension = 0.0;
  /// Added to every bin count.
  double alpha = 1e-5;
};

/// Equal-width counts over [lo, hi]; values outside land in the edge bins.
std::vector<double> histogram(std::span<const double> values, double lo, double hi, std::size_t bins);

/// sum_b (O_b - E_b)^2 / (E_b + alpha).
double chi_square_counts(std::span<const double> observed, std::span<const double> expected, double alpha);

/// D_KL(p || q) in nats after adding alpha to every count and normalizing.
double kl_from_histograms(std::span<const double> p_counts, std::span<const double> q_counts, double alpha);

double rmse(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b);

/// Per (layer, dimension) marginal: bins from a's range, E from a, O from b; averaged.
double chi_square(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b, const HistogramConfig& config);

/// Per (layer, dimension) marginal: D_KL(b || a) on shared bins; averaged.
double kl_divergence(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b, const HistogramConfig& config);

/// Median pairwise Euclidean distance over the union, using at most `max_points`
/// evenly strided points.
double median_bandwidth(const Matrix& A, const Matrix& B, std::size_t max_points = 2000);

/// Unbiased MMD^2 with k(x, y) = exp(-||x - y||^2 / h^2).
double mmd2_unbiased(const Matrix& A, const Matrix& B, double bandwidth);

/// sqrt(max(MMD^2_u, 0)) with the median bandwidth.
double mmd_rbf(const Matrix& A, const Matrix& B);

/// Mean over (layer, dimension) marginals of max(MMD^2_u, 0), median bandwidth per marginal.
double mmd_marginal(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b);

/// 1-D empirical W1 between equal-size samples: mean |sorted difference|.
double wasserstein1(std::span<const double> x, std::span<const double> y);

/// Per-dimension W1 averaged over dimensions and layers.
double wasserstein1(const LayeredFeatureBundle& a, const LayeredFeatureBundle& b);

/// log eps = beta_0 + sum_i beta_i log f_i.
struct MomentRegModel {
  std::vector<double> coefficients;  // intercept first
  std::size_t n_train = 0;
  double train_rmse = 0.0;
};

/// Moment features of one run: mean |v - t| and std(v - t) over sensitive entries,
/// and the mean NCP of the perturbed sensitive groups.
std::vector<double> moment_features(const LayeredFeatureBundle& original, const LayeredFeatureBundle& perturbed,
                                    const GroupingResult& grouping);

struct MomentRun {
  std::vector<double> features;
  double epsilon = 0.0;
};

MomentRegModel moment_reg_fit(const std::vector<MomentRun>& runs);
double moment_reg_predict(const MomentRegModel& model, std::span<const double> features);

/// Laplace: eps = c / mean|u|. Gaussian: eps = c / sqrt(mean u^2).
double noise_mle(std::span<const double> residuals, NoiseFamily family, double c = 1.0);

}  // namespace bodhi
