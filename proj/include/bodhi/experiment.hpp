#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bodhi/core.hpp"
#include "bodhi/empa.hpp"
#include "bodhi/grouping.hpp"
#include "bodhi/metrics.hpp"

namespace bodhi {

struct SyntheticConfig {
  std::size_t n_layers = 4;
  std::size_t samples_per_layer = 200;
  std::size_t dim = 8;
  double sensitive_ratio = 0.30;
  std::uint64_t seed = 0;

  std::size_t sensitive_count() const;
};

/// Standard-normal base values (rounded to float32) with the same planted sensitive
/// samples flagged on every layer.
LayeredFeatureBundle generate_synthetic(const SyntheticConfig& config);

/// Partition that marks exactly the flagged vectors of each layer.
GroupingResult planted_grouping(const LayeredFeatureBundle& bundle);

namespace metric {
inline constexpr const char* rmse = "rmse";
inline constexpr const char* chi_square = "chi_square";
inline constexpr const char* kl = "kl";
inline constexpr const char* mmd = "mmd";
inline constexpr const char* wasserstein1 = "wasserstein1";
inline constexpr const char* bas = "bas";
inline constexpr const char* bias_ref = "bias_ref";
inline constexpr const char* bias_uniform = "bias_uniform";
inline constexpr const char* bas_alt_k = "bas_alt_k";
inline constexpr const char* bias_uniform_alt_k = "bias_uniform_alt_k";
}  // namespace metric

/// Every metric a protocol cell can report, in report order.
const std::vector<std::string>& all_metrics();

struct ProtocolConfig {
  std::vector<double> epsilons{0.1, 0.01};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  NoiseFamily mechanism = NoiseFamily::gaussian;
  NoiseFamily reference = NoiseFamily::laplace;
  double c = 1.0;
  std::vector<Strategy> strategies{Strategy::bua, Strategy::tda, Strategy::random};
  std::vector<std::string> metrics = all_metrics();
  EMConfig em;
  /// Second mixture size whose scores are reported next to the main fit (0 disables).
  std::size_t alt_k = 5;
  ThresholdPolicy threshold = ThresholdPolicy::quantile_at(0.70);
  RefinementConfig refinement;
  MdavConfig mdav;
  HistogramConfig histogram;
  /// Histogram range extension in units of c / epsilon.
  double histogram_extension = 3.0;
  SyntheticConfig synthetic;
  /// 0 = decide from BODHI_THREADS or the hardware.
  std::size_t threads = 0;
};

struct CellResult {
  Strategy strategy = Strategy::bua;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, double> values;
  std::vector<double> moments;
  std::optional<MixtureParams> theta;
  std::optional<MixtureParams> theta_ref;
  std::string error;  // non-empty when the cell is missing

  bool ok() const noexcept { return error.empty(); }
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n = 0;
};

/// Sample mean, sample std (n - 1) and the Student-t 95% interval.
Aggregate aggregate(const std::vector<double>& values);

struct AggregateRow {
  Strategy strategy = Strategy::bua;
  double epsilon = 0.0;
  std::string metric;
  Aggregate stats;
};

struct ExperimentReport {
  ProtocolConfig config;
  std::vector<CellResult> cells;         // sorted by (strategy, epsilon, seed)
  std::vector<AggregateRow> aggregates;  // sorted by (strategy, epsilon, metric)

  const CellResult* find(Strategy strategy, double epsilon, std::uint64_t seed) const;
  const AggregateRow* find(Strategy strategy, double epsilon, const std::string& metric) const;
};

std::size_t resolve_threads(std::size_t requested);

ExperimentReport run_protocol(const ProtocolConfig& config);

std::vector<AggregateRow> aggregate_cells(const std::vector<CellResult>& cells,
                                          const std::vector<std::string>& metrics);

struct LosoPrediction {
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  double estimate = 0.0;
};

struct LosoResult {
  double rmse = 0.0;
  std::vector<LosoPrediction> predictions;
};

/// Leave-one-seed-out MomentReg over the cells of one strategy.
LosoResult moment_reg_loso(const ExperimentReport& report, Strategy strategy = Strategy::bua);

struct AblationResult {
  double full = 0.0;
  double without_empa = 0.0;
};

/// Budget-recovery rMSE proxy: RMS of eps_hat / eps - 1 over seeds and budgets.
/// Full pipeline: eps_hat = eps * sqrt(V_ref / V_obs) from mixture total variances.
/// Without EMPA: eps_hat = c / sd(v) over the sensitive entries.
AblationResult run_ablation(const ProtocolConfig& config);

struct ControlRow {
  double epsilon = 0.0;
  double matched_bas = 0.0;
  double cross_bas = 0.0;
};

/// Mean BAS over seeds with the reference family equal to the observed one and with
/// the other family.
std::vector<ControlRow> matched_reference_control(const ProtocolConfig& config);

/// Mean over dimensions of the mixture's total variance.
double mixture_total_variance(const MixtureParams& theta);

}  // namespace bodhi
