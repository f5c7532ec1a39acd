#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bodhi/matrix.hpp"

namespace bodhi {

inline constexpr double kRangeFloor = 1e-9;

/// Per-dimension robust range R_a used to normalize NCP penalties.
struct RangeEstimate {
  std::vector<double> ranges;
  double q_low = 0.05;
  double q_high = 0.95;
};

struct MicroCluster {
  std::vector<std::size_t> members;  // ascending row ids
  std::vector<double> centroid;
};

/// Empirical quantile with linear interpolation between order statistics
/// (position (n-1)q). `values` need not be sorted.
double empirical_quantile(std::vector<double> values, double q);

/// R_a = quantile(q_high) - quantile(q_low) per column, floored at kRangeFloor.
RangeEstimate estimate_ranges(const Matrix& vectors, double q_low = 0.05, double q_high = 0.95);

/// Uniform weights 1/d.
std::vector<double> uniform_weights(std::size_t dim);

/// Normalized certainty penalty: sum_a w_a (max_a - min_a) / R_a over the members.
double ncp(const MicroCluster& cluster, const Matrix& vectors, std::span<const double> weights,
           const RangeEstimate& ranges);

/// NCP of an arbitrary id set (no centroid needed).
double ncp(std::span<const std::size_t> members, const Matrix& vectors, std::span<const double> weights,
           const RangeEstimate& ranges);

/// Copy of `vectors` with every row scaled to unit l2 norm (zero rows left as is).
Matrix l2_normalized(const Matrix& vectors);

/// MDAV-generic microaggregation with minimum cluster size k. Clusters partition
/// the row ids; every cluster has at least k members and fewer than 2k.
/// Ties in farthest/nearest selection go to the lowest row id.
std::vector<MicroCluster> mdav(const Matrix& vectors, std::size_t k);

}  // namespace bodhi
