#include "bodhi/microagg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bodhi/error.hpp"

namespace bodhi {

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::insufficient_data, "quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorKind::invalid_argument, "quantile level outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

RangeEstimate estimate_ranges(const Matrix& vectors, double q_low, double q_high) {
  if (!(q_low >= 0.0 && q_low < q_high && q_high <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "range quantiles must satisfy 0 <= q_low < q_high <= 1");
  }
  if (vectors.rows() < 2) throw Error(ErrorKind::insufficient_data, "range estimate needs at least 2 vectors");
  RangeEstimate est{std::vector<double>(vectors.cols()), q_low, q_high};
  for (std::size_t a = 0; a < vectors.cols(); ++a) {
    auto col = vectors.column(a);
    const double r = empirical_quantile(col, q_high) - empirical_quantile(col, q_low);
    est.ranges[a] = std::max(r, kRangeFloor);
  }
  return est;
}

std::vector<double> uniform_weights(std::size_t dim) {
  return std::vector<double>(dim, dim == 0 ? 0.0 : 1.0 / static_cast<double>(dim));
}

double ncp(std::span<const std::size_t> members, const Matrix& vectors, std::span<const double> weights,
           const RangeEstimate& ranges) {
  if (members.empty()) return 0.0;
  const std::size_t d = vectors.cols();
  if (weights.size() != d || ranges.ranges.size() != d) {
    throw Error(ErrorKind::dimension_mismatch, "NCP weights/ranges do not match the vector dimension");
  }
  double total = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    double lo = vectors(members[0], a);
    double hi = lo;
    for (auto id : members) {
      lo = std::min(lo, vectors(id, a));
      hi = std::max(hi, vectors(id, a));
    }
    total += weights[a] * (hi - lo) / ranges.ranges[a];
  }
  return total;
}

double ncp(const MicroCluster& cluster, const Matrix& vectors, std::span<const double> weights,
           const RangeEstimate& ranges) {
  return ncp(std::span<const std::size_t>(cluster.members), vectors, weights, ranges);
}

Matrix l2_normalized(const Matrix& vectors) {
  Matrix out = vectors;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    double norm = 0.0;
    for (double x : row) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& x : row) x /= norm;
    }
  }
  return out;
}

namespace {

double squared_distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t a = 0; a < x.size(); ++a) {
    const double diff = x[a] - y[a];
    s += diff * diff;
  }
  return s;
}

std::vector<double> centroid_of(const Matrix& vectors, const std::vector<std::size_t>& ids) {
  std::vector<double> c(vectors.cols(), 0.0);
  for (auto id : ids) {
    auto row = vectors.row(id);
    for (std::size_t a = 0; a < c.size(); ++a) c[a] += row[a];
  }
  for (double& x : c) x /= static_cast<double>(ids.size());
  return c;
}

// Farthest remaining record from `point`; `remaining` is kept ascending so the
// strict comparison leaves ties with the lowest id.
std::size_t farthest_from(const Matrix& vectors, const std::vector<std::size_t>& remaining,
                          std::span<const double> point) {
  std::size_t best = remaining.front();
  double best_d = -1.0;
  for (auto id : remaining) {
    const double d = squared_distance(vectors.row(id), point);
    if (d > best_d) {
      best_d = d;
      best = id;
    }
  }
  return best;
}

// Removes `anchor` and its k-1 nearest remaining records; returns the cluster.
MicroCluster take_cluster(const Matrix& vectors, std::vector<std::size_t>& remaining, std::size_t anchor,
                          std::size_t k) {
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(remaining.size());
  for (auto id : remaining) order.emplace_back(squared_distance(vectors.row(id), vectors.row(anchor)), id);
  // The anchor itself is at distance 0; put it first regardless of ties.
  std::stable_sort(order.begin(), order.end(), [anchor](const auto& x, const auto& y) {
    if ((x.second == anchor) != (y.second == anchor)) return x.second == anchor;
    return x < y;
  });
  MicroCluster cluster;
  for (std::size_t r = 0; r < k; ++r) cluster.members.push_back(order[r].second);
  std::sort(cluster.members.begin(), cluster.members.end());
  std::vector<std::size_t> rest;
  rest.reserve(remaining.size() - k);
  std::set_difference(remaining.begin(), remaining.end(), cluster.members.begin(), cluster.members.end(),
                      std::back_inserter(rest));
  remaining = std::move(rest);
  cluster.centroid = centroid_of(vectors, cluster.members);
  return cluster;
}

}  // namespace

std::vector<MicroCluster> mdav(const Matrix& vectors, std::size_t k) {
  if (k < 2) throw Error(ErrorKind::invalid_argument, "MDAV cluster size must be >= 2");
  if (vectors.rows() < k) {
    throw Error(ErrorKind::insufficient_data, "MDAV needs at least k vectors (have " +
                                                  std::to_string(vectors.rows()) + ", k = " +
                                                  std::to_string(k) + ")");
  }
  std::vector<std::size_t> remaining(vectors.rows());
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});

  std::vector<MicroCluster> clusters;
  while (remaining.size() >= 2 * k) {
    const auto center = centroid_of(vectors, remaining);
    const std::size_t xr = farthest_from(vectors, remaining, center);
    const std::vector<double> xr_point(vectors.row(xr).begin(), vectors.row(xr).end());
    clusters.push_back(take_cluster(vectors, remaining, xr, k));
    const std::size_t xs = farthest_from(vectors, remaining, xr_point);
    clusters.push_back(take_cluster(vectors, remaining, xs, k));
  }

  if (remaining.size() >= k) {
    MicroCluster last;
    last.members = remaining;
    last.centroid = centroid_of(vectors, remaining);
    clusters.push_back(std::move(last));
  } else if (!remaining.empty()) {
    const auto rest_center = centroid_of(vectors, remaining);
    std::size_t target = 0;
    double best = squared_distance(clusters[0].centroid, rest_center);
    for (std::size_t c = 1; c < clusters.size(); ++c) {
      const double d = squared_distance(clusters[c].centroid, rest_center);
      if (d < best) {
        best = d;
        target = c;
      }
    }
    auto& members = clusters[target].members;
    members.insert(members.end(), remaining.begin(), remaining.end());
    std::sort(members.begin(), members.end());
    clusters[target].centroid = centroid_of(vectors, members);
  }
  return clusters;
}

}  // namespace bodhi
