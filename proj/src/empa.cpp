#include "bodhi/empa.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "bodhi/error.hpp"
#include "bodhi/noise.hpp"

namespace bodhi {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double squared_distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t a = 0; a < x.size(); ++a) s += (x[a] - y[a]) * (x[a] - y[a]);
  return s;
}

double l2(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::shape_mismatch, "parameter vectors differ in length");
  return std::sqrt(squared_distance(x, y));
}

bool all_rows_identical(const Matrix& V) {
  for (std::size_t j = 1; j < V.rows(); ++j) {
    if (!std::equal(V.row(j).begin(), V.row(j).end(), V.row(0).begin())) return false;
  }
  return true;
}

}  // namespace

MixtureParams initial_params(const Matrix& V, const EMConfig& config) {
  const std::size_t n = V.rows(), d = V.cols(), K = config.K;
  MixtureParams theta;
  theta.K = K;
  theta.lambda.assign(K, 1.0 / static_cast<double>(K));
  theta.mu = Matrix(K, d);
  theta.sigma2 = Matrix(K, d);

  std::vector<std::uint8_t> chosen(n, 0);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = 0;
  for (std::size_t k = 0; k < K; ++k) {
    chosen[pick] = 1;
    std::copy(V.row(pick).begin(), V.row(pick).end(), theta.mu.row(k).begin());
    double best = -1.0;
    std::size_t next = 0;
    for (std::size_t j = 0; j < n; ++j) {
      nearest[j] = std::min(nearest[j], squared_distance(V.row(j), V.row(pick)));
      if (!chosen[j] && nearest[j] > best) {
        best = nearest[j];
        next = j;
      }
    }
    pick = next;
  }

  for (std::size_t a = 0; a < d; ++a) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += V(j, a);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (V(j, a) - mean) * (V(j, a) - mean);
    var = std::max(var / static_cast<double>(n), config.variance_floor);
    for (std::size_t k = 0; k < K; ++k) theta.sigma2(k, a) = var;
  }
  return theta;
}

double e_step(const Matrix& V, const MixtureParams& theta, EMState& state) {
  const std::size_t n = V.rows(), d = V.cols(), K = theta.K;
  state.gamma = Matrix(n, K);
  state.counts.assign(K, 0.0);

  std::vector<double> log_norm(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (std::size_t a = 0; a < d; ++a) s += std::log(2.0 * std::numbers::pi * theta.sigma2(k, a));
    log_norm[k] = (theta.lambda[k] > 0.0 ? std::log(theta.lambda[k]) : kNegInf) - 0.5 * s;
  }

  double ll = 0.0;
  std::vector<double> logp(K);
  for (std::size_t j = 0; j < n; ++j) {
    auto x = V.row(j);
    double top = kNegInf;
    for (std::size_t k = 0; k < K; ++k) {
      if (log_norm[k] == kNegInf) {
        logp[k] = kNegInf;
        continue;
      }
      double q = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        const double diff = x[a] - theta.mu(k, a);
        q += diff * diff / theta.sigma2(k, a);
      }
      logp[k] = log_norm[k] - 0.5 * q;
      top = std::max(top, logp[k]);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += logp[k] == kNegInf ? 0.0 : std::exp(logp[k] - top);
    const double lse = top + std::log(total);
    ll += lse;
    for (std::size_t k = 0; k < K; ++k) {
      const double g = logp[k] == kNegInf ? 0.0 : std::exp(logp[k] - lse);
      state.gamma(j, k) = g;
      state.counts[k] += g;
    }
  }
  return ll;
}

void m_step(const Matrix& V, const EMState& state, double variance_floor, MixtureParams& theta) {
  const std::size_t n = V.rows(), d = V.cols(), K = theta.K;
  for (std::size_t k = 0; k < K; ++k) {
    const double nk = state.counts[k];
    theta.lambda[k] = nk / static_cast<double>(n);
    if (nk <= 0.0) continue;
    for (std::size_t a = 0; a < d; ++a) {
      double m = 0.0;
      for (std::size_t j = 0; j < n; ++j) m += state.gamma(j, k) * V(j, a);
      theta.mu(k, a) = m / nk;
    }
    for (std::size_t a = 0; a < d; ++a) {
      double v = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double diff = V(j, a) - theta.mu(k, a);
        v += state.gamma(j, k) * diff * diff;
      }
      theta.sigma2(k, a) = std::max(v / nk, variance_floor);
    }
  }
}

MixtureParams em_fit(const Matrix& V, const EMConfig& config, EMState* final_state) {
  if (config.K == 0) throw Error(ErrorKind::invalid_argument, "mixture needs K >= 1");
  if (!(config.rel_ll_tolerance > 0.0) || config.max_iterations < 1) {
    throw Error(ErrorKind::invalid_argument, "EM tolerance must be positive and max_iterations >= 1");
  }
  if (V.rows() < config.K) {
    throw Error(ErrorKind::insufficient_data, "EM needs at least K=" + std::to_string(config.K) + " vectors, got " +
                                                  std::to_string(V.rows()));
  }
  if (V.cols() == 0) throw Error(ErrorKind::invalid_argument, "EM input has zero dimension");

  MixtureParams theta = initial_params(V, config);
  theta.degenerate = all_rows_identical(V);
  EMState state;
  double ll = e_step(V, theta, state);
  theta.ll_trace.push_back(ll);
  for (int it = 1; it <= config.max_iterations; ++it) {
    m_step(V, state, config.variance_floor, theta);
    const double next = e_step(V, theta, state);
    theta.ll_trace.push_back(next);
    theta.iterations = it;
    const double rel = (next - ll) / std::max(std::abs(ll), std::numeric_limits<double>::min());
    ll = next;
    if (rel < config.rel_ll_tolerance) {
      theta.converged = true;
      break;
    }
  }
  theta.log_likelihood = ll;
  if (final_state) *final_state = std::move(state);
  return theta;
}

MixtureParams canonicalize(MixtureParams theta) {
  std::vector<std::size_t> order(theta.K);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (theta.lambda[a] != theta.lambda[b]) return theta.lambda[a] > theta.lambda[b];
    return theta.mu(a, 0) < theta.mu(b, 0);
  });
  MixtureParams out = theta;
  for (std::size_t k = 0; k < theta.K; ++k) {
    out.lambda[k] = theta.lambda[order[k]];
    std::copy(theta.mu.row(order[k]).begin(), theta.mu.row(order[k]).end(), out.mu.row(k).begin());
    std::copy(theta.sigma2.row(order[k]).begin(), theta.sigma2.row(order[k]).end(), out.sigma2.row(k).begin());
  }
  return out;
}

std::vector<double> psi(const MixtureParams& theta) {
  std::vector<double> out(theta.lambda);
  out.insert(out.end(), theta.mu.data().begin(), theta.mu.data().end());
  out.insert(out.end(), theta.sigma2.data().begin(), theta.sigma2.data().end());
  return out;
}

double bas(const MixtureParams& theta, const MixtureParams& theta_ref) {
  if (theta.K != theta_ref.K || theta.dim() != theta_ref.dim()) {
    throw Error(ErrorKind::shape_mismatch, "mixtures differ in K or dimension");
  }
  return l2(psi(theta), psi(theta_ref));
}

double bias_ref(std::span<const double> lambda, std::span<const double> lambda_ref) { return l2(lambda, lambda_ref); }

double bias_uniform(std::span<const double> lambda) {
  const std::vector<double> uniform(lambda.size(), 1.0 / static_cast<double>(lambda.size()));
  return l2(lambda, uniform);
}

Matrix reference_features(const LayeredFeatureBundle& original, const GroupingResult& grouping,
                          const ReferenceMechanism& mechanism, std::uint64_t seed,
                          const std::set<int>& layer_selection) {
  check_grouping_matches(original, grouping);
  const NoiseConfig noise{mechanism, seed, NoiseTarget::sensitive_only};
  Matrix out;
  for (std::size_t k = 0; k < original.layers.size(); ++k) {
    const Layer& layer = original.layers[k];
    if (!layer_selection.empty() && !layer_selection.contains(layer.index)) continue;
    const auto& ids = grouping.partitions[k].sensitive_ids;
    if (ids.empty()) continue;
    if (!out.empty() && out.cols() != layer.dim()) {
      throw Error(ErrorKind::dimension_mismatch, "selected layers differ in dimension");
    }
    const Matrix u = layer_noise(ids.size(), layer.dim(), noise, layer.index);
    std::vector<double> row(layer.dim());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto t = layer.vectors.row(ids[r]);
      for (std::size_t a = 0; a < row.size(); ++a) row[a] = t[a] + u(r, a);
      out.append_row(row);
    }
  }
  return out;
}

MixtureParams fit_reference(const LayeredFeatureBundle& original, const GroupingResult& grouping,
                            const ReferenceMechanism& mechanism, const EMConfig& config, std::uint64_t seed,
                            const std::set<int>& layer_selection) {
  return canonicalize(em_fit(reference_features(original, grouping, mechanism, seed, layer_selection), config));
}

namespace {

EmpaScores score_fit(const LayeredFeatureBundle& original, const LayeredFeatureBundle& perturbed,
                     const GroupingResult& grouping, const ReferenceMechanism& mechanism, const EMConfig& config,
                     std::uint64_t reference_seed, const std::set<int>& selection, int layer_index) {
  EmpaScores s;
  s.layer_index = layer_index;
  s.theta = canonicalize(em_fit(pool_sensitive_features(perturbed, grouping, selection), config));
  s.theta_ref = fit_reference(original, grouping, mechanism, config, reference_seed, selection);
  s.bas = bas(s.theta, s.theta_ref);
  s.bias_ref = bias_ref(s.theta.lambda, s.theta_ref.lambda);
  s.bias_uniform = bias_uniform(s.theta.lambda);
  return s;
}

}  // namespace

EmpaAssessment empa_assess(const LayeredFeatureBundle& original, const LayeredFeatureBundle& perturbed,
                           const GroupingResult& grouping, const ReferenceMechanism& mechanism,
                           const EMConfig& config, std::uint64_t reference_seed, PoolingMode mode) {
  check_grouping_matches(original, grouping);
  check_grouping_matches(perturbed, grouping);
  for (std::size_t k = 0; k < original.layers.size(); ++k) {
    if (original.layers[k].size() != perturbed.layers[k].size() ||
        original.layers[k].dim() != perturbed.layers[k].dim()) {
      throw Error(ErrorKind::shape_mismatch, "original and perturbed bundles differ on layer " +
                                                 std::to_string(original.layers[k].index));
    }
  }

  std::size_t total = 0;
  bool same_dim = true;
  for (std::size_t k = 0; k < original.layers.size(); ++k) {
    total += grouping.partitions[k].sensitive_ids.size();
    same_dim = same_dim && original.layers[k].dim() == original.layers[0].dim();
  }
  if (total == 0) throw Error(ErrorKind::no_sensitive_features, "no sensitive features to assess");

  EmpaAssessment out;
  out.pooled = mode == PoolingMode::pooled || (mode == PoolingMode::automatic && same_dim);
  if (out.pooled) {
    out.fits.push_back(score_fit(original, perturbed, grouping, mechanism, config, reference_seed, {}, 0));
  } else {
    for (std::size_t k = 0; k < original.layers.size(); ++k) {
      if (grouping.partitions[k].sensitive_ids.empty()) continue;
      const int index = original.layers[k].index;
      out.fits.push_back(score_fit(original, perturbed, grouping, mechanism, config, reference_seed, {index}, index));
    }
  }
  for (const auto& f : out.fits) {
    out.bas += f.bas;
    out.bias_ref += f.bias_ref;
    out.bias_uniform += f.bias_uniform;
  }
  const double m = static_cast<double>(out.fits.size());
  out.bas /= m;
  out.bias_ref /= m;
  out.bias_uniform /= m;
  return out;
}

}  // namespace bodhi
