#include "bodhi/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "bodhi/error.hpp"

namespace bodhi {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::insufficient_data: return "insufficient-data";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::missing_prototype: return "missing-prototype";
    case ErrorKind::size_overflow: return "size-overflow";
    case ErrorKind::no_sensitive_features: return "no-sensitive-features";
    case ErrorKind::rank_deficient: return "rank-deficient";
    case ErrorKind::zero_residual: return "zero-residual";
    case ErrorKind::malformed_manifest: return "malformed-manifest";
    case ErrorKind::truncated_payload: return "truncated-payload";
    case ErrorKind::unsupported_version: return "unsupported-version";
    case ErrorKind::io_failure: return "io-failure";
  }
  return "unknown";
}

const char* to_string(BundleKind kind) {
  return kind == BundleKind::original ? "original" : "perturbed";
}

const char* to_string(NoiseFamily family) {
  return family == NoiseFamily::laplace ? "laplace" : "gaussian";
}

const char* to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::bua: return "bua";
    case Strategy::tda: return "tda";
    case Strategy::random: return "random";
  }
  return "unknown";
}

BundleKind parse_bundle_kind(const std::string& text) {
  if (text == "original") return BundleKind::original;
  if (text == "perturbed") return BundleKind::perturbed;
  throw Error(ErrorKind::invalid_argument, "unknown bundle kind '" + text + "'");
}

NoiseFamily parse_noise_family(const std::string& text) {
  if (text == "laplace") return NoiseFamily::laplace;
  if (text == "gaussian") return NoiseFamily::gaussian;
  throw Error(ErrorKind::invalid_argument, "unknown noise family '" + text + "'");
}

Strategy parse_strategy(const std::string& text) {
  if (text == "bua") return Strategy::bua;
  if (text == "tda") return Strategy::tda;
  if (text == "random") return Strategy::random;
  throw Error(ErrorKind::invalid_argument, "unknown strategy '" + text + "'");
}

std::size_t LayeredFeatureBundle::total_entries() const noexcept {
  std::size_t total = 0;
  for (const auto& layer : layers) total += layer.vectors.data().size();
  return total;
}

ValidationResult validate_bundle(const LayeredFeatureBundle& bundle) {
  ValidationResult result;
  if (bundle.layers.empty()) {
    result.violations.push_back({0, "bundle has no layers"});
    return result;
  }
  bool contiguous = true;
  for (std::size_t k = 0; k < bundle.layers.size(); ++k) {
    if (bundle.layers[k].index != static_cast<int>(k) + 1) contiguous = false;
  }
  if (!contiguous) result.violations.push_back({0, "non-contiguous layer indices"});

  for (const auto& layer : bundle.layers) {
    if (layer.dim() == 0) {
      result.violations.push_back({layer.index, "zero dimension, layer " + std::to_string(layer.index)});
    }
    if (layer.vectors.data().size() != layer.size() * layer.dim()) {
      result.violations.push_back({layer.index, "ragged vectors, layer " + std::to_string(layer.index)});
    }
    const auto& values = layer.vectors.data();
    if (std::any_of(values.begin(), values.end(), [](double x) { return !std::isfinite(x); })) {
      result.violations.push_back({layer.index, "non-finite value, layer " + std::to_string(layer.index)});
    }
    if (!layer.scores.empty() && layer.scores.size() != layer.size()) {
      result.violations.push_back({layer.index, "score count mismatch, layer " + std::to_string(layer.index)});
    }
    if (!layer.flags.empty() && layer.flags.size() != layer.size()) {
      result.violations.push_back({layer.index, "flag count mismatch, layer " + std::to_string(layer.index)});
    }
  }
  return result;
}

ConceptSet::ConceptSet(std::string id, std::vector<std::string> concepts)
    : id_(std::move(id)), concepts_(std::move(concepts)) {
  if (concepts_.empty()) throw Error(ErrorKind::invalid_argument, "concept set is empty");
  std::unordered_set<std::string> seen;
  for (const auto& c : concepts_) {
    if (!seen.insert(c).second) {
      throw Error(ErrorKind::invalid_argument, "duplicate concept label '" + c + "'");
    }
  }
}

ReferenceMechanism::ReferenceMechanism(NoiseFamily family, double epsilon, double c)
    : family_(family), epsilon_(epsilon), c_(c) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw Error(ErrorKind::invalid_argument, "epsilon must be positive");
  }
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw Error(ErrorKind::invalid_argument, "calibration constant c must be positive");
  }
}

bool LayerPartition::is_sensitive(std::size_t id) const {
  return std::binary_search(sensitive_ids.begin(), sensitive_ids.end(), id);
}

LayerPartition make_partition(int layer_index, std::vector<double> scores, double tau) {
  LayerPartition p;
  p.layer_index = layer_index;
  p.tau = tau;
  for (auto& s : scores) s = std::clamp(s, 0.0, 1.0);
  for (std::size_t j = 0; j < scores.size(); ++j) {
    (scores[j] >= tau ? p.sensitive_ids : p.nonsensitive_ids).push_back(j);
  }
  p.scores = std::move(scores);
  return p;
}

bool partition_is_consistent(const LayerPartition& p) {
  const std::size_t n = p.scores.size();
  if (p.size() != n) return false;
  std::vector<int> seen(n, 0);
  for (auto id : p.sensitive_ids) {
    if (id >= n || seen[id]++ || p.scores[id] < p.tau) return false;
  }
  for (auto id : p.nonsensitive_ids) {
    if (id >= n || seen[id]++) return false;
  }
  return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
}

double reconstruction_error(const PerturbationTriple& triple) {
  const auto& t = triple.t.data();
  const auto& u = triple.u.data();
  const auto& v = triple.v.data();
  if (t.size() != u.size() || t.size() != v.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) worst = std::max(worst, std::abs(v[k] - (t[k] + u[k])));
  return worst;
}

void check_grouping_matches(const LayeredFeatureBundle& bundle, const GroupingResult& grouping) {
  if (grouping.partitions.size() != bundle.layers.size()) {
    throw Error(ErrorKind::shape_mismatch,
                "grouping has " + std::to_string(grouping.partitions.size()) + " partitions but bundle has " +
                    std::to_string(bundle.layers.size()) + " layers");
  }
  for (std::size_t k = 0; k < bundle.layers.size(); ++k) {
    const auto& layer = bundle.layers[k];
    const auto& part = grouping.partitions[k];
    if (part.layer_index != layer.index || part.size() != layer.size()) {
      throw Error(ErrorKind::shape_mismatch,
                  "partition does not match layer " + std::to_string(layer.index));
    }
  }
}

Matrix pool_sensitive_features(const LayeredFeatureBundle& bundle, const GroupingResult& grouping,
                               const std::set<int>& layer_selection) {
  check_grouping_matches(bundle, grouping);
  std::optional<std::size_t> dim;
  Matrix pooled;
  for (std::size_t k = 0; k < bundle.layers.size(); ++k) {
    const auto& layer = bundle.layers[k];
    if (!layer_selection.empty() && !layer_selection.contains(layer.index)) continue;
    if (dim && *dim != layer.dim()) {
      throw Error(ErrorKind::dimension_mismatch,
                  "selected layers differ in dimension; assess per layer instead");
    }
    dim = layer.dim();
    for (auto id : grouping.partitions[k].sensitive_ids) pooled.append_row(layer.vectors.row(id));
  }
  if (pooled.rows() == 0 && dim) pooled = Matrix(0, *dim);
  return pooled;
}

}  // namespace bodhi
