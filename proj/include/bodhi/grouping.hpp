#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bodhi/core.hpp"

namespace bodhi {

enum class ScorerKind { ground_truth, prototype, external };

/// Produces s(x; S) in [0, 1] for every vector of a layer.
struct SensitivityScorer {
  ScorerKind kind = ScorerKind::external;
  /// Concept -> prototype embedding q_c (prototype kind). Must match the layer dimension.
  std::map<std::string, std::vector<double>> prototypes;
  /// Seed for the rank noise of the ground-truth scorer.
  std::uint64_t seed = 0;
};

/// Reads prototypes from metadata keys "prototype.<concept>" (JSON arrays).
std::map<std::string, std::vector<double>> prototypes_from_metadata(
    const std::map<std::string, std::string>& metadata);

struct ThresholdPolicy {
  enum class Kind { quantile, fixed };
  Kind kind = Kind::quantile;
  double q = 0.90;
  double tau = 0.5;

  static ThresholdPolicy quantile_at(double q) { return {Kind::quantile, q, 0.0}; }
  static ThresholdPolicy fixed_at(double tau) { return {Kind::fixed, 0.0, tau}; }
};

/// Optional MDAV step and NCP diagnostics.
struct MdavConfig {
  bool enabled = true;
  std::size_t k = 8;
  bool l2_normalize = true;
  double range_q_low = 0.05;
  double range_q_high = 0.95;
};

enum class CorrespondenceKind { automatic, identity, nearest_spatial };

/// Pi_{i -> i-1}: for every id of layer i, the id it maps to in layer i-1.
struct CorrespondenceMap {
  CorrespondenceKind kind = CorrespondenceKind::identity;
  std::vector<std::size_t> target;
};

struct RefinementConfig {
  /// A linked, preliminarily non-sensitive element is promoted iff s >= alpha * tau.
  /// alpha = 1 disables promotion.
  double alpha = 0.9;
};

std::vector<double> score_layer(const Layer& layer, const SensitivityScorer& scorer,
                                const ConceptSet& concepts);

/// Scores of a ground-truth scorer: 0.75 + 0.25 r for flagged vectors, 0.25 r otherwise,
/// with r uniform on [0, 1) from the (seed, "scores", layer) stream.
std::vector<double> ground_truth_scores(std::span<const std::uint8_t> flags, std::uint64_t seed, int layer_index);

LayerPartition partition_layer(const std::vector<double>& scores, const ThresholdPolicy& policy,
                               int layer_index = 1);

CorrespondenceMap build_correspondence(const LayeredFeatureBundle& bundle, std::size_t upper_pos,
                                       CorrespondenceKind kind);

GroupingResult bua(const LayeredFeatureBundle& bundle, const SensitivityScorer& scorer,
                   const ConceptSet& concepts, const ThresholdPolicy& policy, const MdavConfig& mdav_config);

GroupingResult tda(const LayeredFeatureBundle& bundle, const SensitivityScorer& scorer,
                   const ConceptSet& concepts, const ThresholdPolicy& policy,
                   CorrespondenceKind correspondence, const RefinementConfig& refinement,
                   const MdavConfig& mdav_config);

/// Uniformly random sensitive sets of the requested per-layer sizes.
GroupingResult random_partition(const LayeredFeatureBundle& bundle, const std::vector<std::size_t>& sizes,
                                std::uint64_t seed);

}  // namespace bodhi
