#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "bodhi/core.hpp"

namespace bodhi {

struct EMConfig {
  std::size_t K = 4;
  double rel_ll_tolerance = 1e-5;
  int max_iterations = 100;
  double variance_floor = 1e-6;
};

/// Diagonal-Gaussian mixture: weights lambda (K), means mu (K x d), variances sigma2 (K x d).
struct MixtureParams {
  std::size_t K = 0;
  std::vector<double> lambda;
  Matrix mu;
  Matrix sigma2;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
  /// Log-likelihood after every E-step, starting with the initial parameters.
  std::vector<double> ll_trace;

  std::size_t dim() const noexcept { return mu.cols(); }
};

struct EMState {
  Matrix gamma;                 // N x K responsibilities
  std::vector<double> counts;   // N_k
};

/// Initial parameters: uniform weights, farthest-point means starting at row 0,
/// global per-dimension variance.
MixtureParams initial_params(const Matrix& V, const EMConfig& config);

/// Fills responsibilities and effective counts; returns the log-likelihood.
double e_step(const Matrix& V, const MixtureParams& theta, EMState& state);

/// Closed-form updates of lambda, mu, then sigma2 (floored).
void m_step(const Matrix& V, const EMState& state, double variance_floor, MixtureParams& theta);

MixtureParams em_fit(const Matrix& V, const EMConfig& config, EMState* final_state = nullptr);

/// Sorts components by weight descending, ties by first mean coordinate ascending.
MixtureParams canonicalize(MixtureParams theta);

/// [lambda; mu_1..mu_K; sigma2_1..sigma2_K], length K + 2Kd.
std::vector<double> psi(const MixtureParams& theta);

double bas(const MixtureParams& theta, const MixtureParams& theta_ref);
double bias_ref(std::span<const double> lambda, std::span<const double> lambda_ref);
double bias_uniform(std::span<const double> lambda);

/// Sensitive originals t of the selected layers plus reference noise drawn from the
/// same per-layer streams the perturbation uses: v_ref = t + u_ref.
Matrix reference_features(const LayeredFeatureBundle& original, const GroupingResult& grouping,
                          const ReferenceMechanism& mechanism, std::uint64_t seed,
                          const std::set<int>& layer_selection = {});

MixtureParams fit_reference(const LayeredFeatureBundle& original, const GroupingResult& grouping,
                            const ReferenceMechanism& mechanism, const EMConfig& config, std::uint64_t seed,
                            const std::set<int>& layer_selection = {});

enum class PoolingMode { automatic, pooled, per_layer };

struct EmpaScores {
  int layer_index = 0;  // 0 for the pooled fit
  double bas = 0.0;
  double bias_ref = 0.0;
  double bias_uniform = 0.0;
  MixtureParams theta;
  MixtureParams theta_ref;
};

struct EmpaAssessment {
  bool pooled = true;
  double bas = 0.0;
  double bias_ref = 0.0;
  double bias_uniform = 0.0;
  /// One entry when pooled; otherwise one per layer with a non-empty sensitive group.
  std::vector<EmpaScores> fits;
};

/// Fits the observed sensitive features of `perturbed` and a reference fit on the
/// matching originals, then scores their discrepancy. Per-layer results are averaged.
EmpaAssessment empa_assess(const LayeredFeatureBundle& original, const LayeredFeatureBundle& perturbed,
                           const GroupingResult& grouping, const ReferenceMechanism& mechanism,
                           const EMConfig& config, std::uint64_t reference_seed,
                           PoolingMode mode = PoolingMode::automatic);

}  // namespace bodhi
