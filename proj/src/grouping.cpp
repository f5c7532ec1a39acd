#include "bodhi/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <json.hpp>

#include "bodhi/error.hpp"
#include "bodhi/microagg.hpp"
#include "bodhi/random.hpp"

namespace bodhi {

namespace {

constexpr std::string_view kPrototypePrefix = "prototype.";

double cosine(std::span<const double> x, std::span<const double> y) {
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t a = 0; a < x.size(); ++a) {
    xy += x[a] * y[a];
    xx += x[a] * x[a];
    yy += y[a] * y[a];
  }
  if (xx == 0.0 || yy == 0.0) return 0.0;
  return xy / std::sqrt(xx * yy);
}

LayerDiagnostics diagnose(const Layer& layer, const LayerPartition& partition, const MdavConfig& config) {
  LayerDiagnostics diag;
  if (layer.size() < 2) return diag;
  const Matrix space = config.l2_normalize ? l2_normalized(layer.vectors) : layer.vectors;
  const auto ranges = estimate_ranges(space, config.range_q_low, config.range_q_high);
  const auto weights = uniform_weights(space.cols());
  diag.ncp_sensitive = ncp(std::span<const std::size_t>(partition.sensitive_ids), space, weights, ranges);
  diag.ncp_nonsensitive = ncp(std::span<const std::size_t>(partition.nonsensitive_ids), space, weights, ranges);
  if (space.rows() >= config.k) {
    const auto clusters = mdav(space, config.k);
    diag.micro_clusters = clusters.size();
    double total = 0.0;
    for (const auto& c : clusters) total += ncp(c, space, weights, ranges);
    diag.mean_cluster_ncp = total / static_cast<double>(clusters.size());
  }
  return diag;
}

std::string feature_space_name(const MdavConfig& config) {
  if (!config.enabled) return "raw";
  return config.l2_normalize ? "l2-normalized" : "raw";
}

std::optional<std::pair<std::size_t, std::size_t>> grid_of(const LayeredFeatureBundle& bundle, int layer_index) {
  auto it = bundle.metadata.find("layer." + std::to_string(layer_index) + ".grid");
  if (it == bundle.metadata.end()) return std::nullopt;
  std::size_t h = 0, w = 0;
  char sep = 0;
  std::istringstream in(it->second);
  if (!(in >> h >> sep >> w) || sep != ',' || h == 0 || w == 0) {
    throw Error(ErrorKind::malformed_manifest, "bad grid metadata for layer " + std::to_string(layer_index));
  }
  return std::make_pair(h, w);
}

std::size_t images_of(const LayeredFeatureBundle& bundle, int layer_index) {
  auto it = bundle.metadata.find("layer." + std::to_string(layer_index) + ".images");
  return it == bundle.metadata.end() ? 1 : static_cast<std::size_t>(std::stoul(it->second));
}

// Nearest cell centre along one axis; exact ties go to the lower cell.
std::size_t nearest_cell(double coord, std::size_t cells) {
  const double x = coord * static_cast<double>(cells) - 0.5;
  double base = std::floor(x);
  if (x - base > 0.5) base += 1.0;
  return static_cast<std::size_t>(std::clamp(base, 0.0, static_cast<double>(cells - 1)));
}

}  // namespace

std::map<std::string, std::vector<double>> prototypes_from_metadata(
    const std::map<std::string, std::string>& metadata) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [key, value] : metadata) {
    if (!key.starts_with(kPrototypePrefix)) continue;
    try {
      out[key.substr(kPrototypePrefix.size())] = nlohmann::json::parse(value).get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::malformed_manifest, "prototype metadata '" + key + "' is not a numeric array");
    }
  }
  return out;
}

std::vector<double> ground_truth_scores(std::span<const std::uint8_t> flags, std::uint64_t seed, int layer_index) {
  RandomStream stream(seed, "scores", static_cast<std::uint64_t>(layer_index));
  std::vector<double> scores(flags.size());
  for (std::size_t j = 0; j < flags.size(); ++j) {
    const double r = stream.uniform();
    scores[j] = flags[j] ? 0.75 + 0.25 * r : 0.25 * r;
  }
  return scores;
}

std::vector<double> score_layer(const Layer& layer, const SensitivityScorer& scorer, const ConceptSet& concepts) {
  std::vector<double> scores;
  switch (scorer.kind) {
    case ScorerKind::ground_truth:
      if (layer.flags.size() != layer.size()) {
        throw Error(ErrorKind::invalid_argument,
                    "ground-truth scorer needs sensitive flags on layer " + std::to_string(layer.index));
      }
      scores = ground_truth_scores(layer.flags, scorer.seed, layer.index);
      break;
    case ScorerKind::external:
      if (layer.scores.size() != layer.size()) {
        throw Error(ErrorKind::invalid_argument,
                    "external scorer needs scores on layer " + std::to_string(layer.index));
      }
      scores = layer.scores;
      break;
    case ScorerKind::prototype: {
      std::vector<const std::vector<double>*> protos;
      for (const auto& concept_label : concepts.concepts()) {
        auto it = scorer.prototypes.find(concept_label);
        if (it == scorer.prototypes.end()) {
          throw Error(ErrorKind::missing_prototype, "no prototype embedding for concept '" + concept_label + "'");
        }
        if (it->second.size() != layer.dim()) {
          throw Error(ErrorKind::dimension_mismatch, "prototype for '" + concept_label +
                                                         "' does not match layer " + std::to_string(layer.index));
        }
        protos.push_back(&it->second);
      }
      scores.assign(layer.size(), 0.0);
      for (std::size_t j = 0; j < layer.size(); ++j) {
        double best = 0.0;
        for (const auto* q : protos) best = std::max(best, cosine(layer.vectors.row(j), *q));
        scores[j] = best;
      }
      break;
    }
  }
  for (auto& s : scores) s = std::clamp(s, 0.0, 1.0);
  return scores;
}

LayerPartition partition_layer(const std::vector<double>& scores, const ThresholdPolicy& policy, int layer_index) {
  if (scores.empty()) throw Error(ErrorKind::insufficient_data, "cannot partition an empty layer");
  std::vector<double> clamped = scores;
  for (auto& s : clamped) s = std::clamp(s, 0.0, 1.0);
  double tau = policy.tau;
  if (policy.kind == ThresholdPolicy::Kind::quantile) {
    if (!(policy.q > 0.0 && policy.q < 1.0)) {
      throw Error(ErrorKind::invalid_argument, "threshold quantile must lie in (0, 1)");
    }
    tau = empirical_quantile(clamped, policy.q);
  }
  return make_partition(layer_index, std::move(clamped), tau);
}

CorrespondenceMap build_correspondence(const LayeredFeatureBundle& bundle, std::size_t upper_pos,
                                       CorrespondenceKind kind) {
  if (upper_pos == 0 || upper_pos >= bundle.layers.size()) {
    throw Error(ErrorKind::invalid_argument, "correspondence needs a layer with a layer below it");
  }
  const Layer& upper = bundle.layers[upper_pos];
  const Layer& lower = bundle.layers[upper_pos - 1];
  if (kind == CorrespondenceKind::automatic) {
    kind = upper.size() == lower.size() ? CorrespondenceKind::identity : CorrespondenceKind::nearest_spatial;
  }
  CorrespondenceMap map;
  map.kind = kind;
  map.target.resize(upper.size());
  if (kind == CorrespondenceKind::identity) {
    if (upper.size() != lower.size()) {
      throw Error(ErrorKind::shape_mismatch, "identity correspondence needs equal layer cardinalities");
    }
    std::iota(map.target.begin(), map.target.end(), std::size_t{0});
    return map;
  }

  const auto up_grid = grid_of(bundle, upper.index);
  const auto low_grid = grid_of(bundle, lower.index);
  if (!up_grid || !low_grid) {
    throw Error(ErrorKind::invalid_argument, "nearest-spatial correspondence needs grid metadata for layers " +
                                                 std::to_string(lower.index) + " and " +
                                                 std::to_string(upper.index));
  }
  const std::size_t images = images_of(bundle, upper.index);
  if (images != images_of(bundle, lower.index)) {
    throw Error(ErrorKind::shape_mismatch, "layers disagree on the number of images");
  }
  const auto [uh, uw] = *up_grid;
  const auto [lh, lw] = *low_grid;
  if (upper.size() != images * uh * uw || lower.size() != images * lh * lw) {
    throw Error(ErrorKind::shape_mismatch, "grid metadata does not match layer sizes");
  }
  for (std::size_t j = 0; j < upper.size(); ++j) {
    const std::size_t img = j / (uh * uw);
    const std::size_t cell = j % (uh * uw);
    const double y = (static_cast<double>(cell / uw) + 0.5) / static_cast<double>(uh);
    const double x = (static_cast<double>(cell % uw) + 0.5) / static_cast<double>(uw);
    map.target[j] = img * lh * lw + nearest_cell(y, lh) * lw + nearest_cell(x, lw);
  }
  return map;
}

GroupingResult bua(const LayeredFeatureBundle& bundle, const SensitivityScorer& scorer, const ConceptSet& concepts,
                   const ThresholdPolicy& policy, const MdavConfig& mdav_config) {
  GroupingResult result;
  result.strategy = Strategy::bua;
  result.feature_space = feature_space_name(mdav_config);
  for (const auto& layer : bundle.layers) {
    auto partition = partition_layer(score_layer(layer, scorer, concepts), policy, layer.index);
    if (mdav_config.enabled) result.diagnostics.push_back(diagnose(layer, partition, mdav_config));
    result.partitions.push_back(std::move(partition));
  }
  return result;
}

GroupingResult tda(const LayeredFeatureBundle& bundle, const SensitivityScorer& scorer, const ConceptSet& concepts,
                   const ThresholdPolicy& policy, CorrespondenceKind correspondence,
                   const RefinementConfig& refinement, const MdavConfig& mdav_config) {
  const std::size_t n = bundle.layers.size();
  if (n == 0) throw Error(ErrorKind::invalid_argument, "bundle has no layers");

  GroupingResult result;
  result.strategy = Strategy::tda;
  result.feature_space = feature_space_name(mdav_config);
  result.partitions.resize(n);

  result.partitions[n - 1] =
      partition_layer(score_layer(bundle.layers[n - 1], scorer, concepts), policy, bundle.layers[n - 1].index);

  for (std::size_t pos = n - 1; pos >= 1; --pos) {
    const Layer& lower = bundle.layers[pos - 1];
    const LayerPartition& upper_part = result.partitions[pos];
    LayerPartition prelim = partition_layer(score_layer(lower, scorer, concepts), policy, lower.index);

    const auto pi = build_correspondence(bundle, pos, correspondence);
    std::vector<std::uint8_t> linked_s(lower.size(), 0), linked_n(lower.size(), 0);
    for (auto id : upper_part.sensitive_ids) linked_s[pi.target[id]] = 1;
    for (auto id : upper_part.nonsensitive_ids) linked_n[pi.target[id]] = 1;

    // Refinement: linked, non-sensitive elements scoring at least alpha * tau have their
    // score reweighted by 1/alpha, which lifts them over tau.
    LinkSets links;
    links.from_layer = upper_part.layer_index;
    std::vector<double> scores = prelim.scores;
    const double alpha = refinement.alpha;
    for (std::size_t j = 0; j < lower.size(); ++j) {
      if (!linked_s[j] || scores[j] >= prelim.tau) continue;
      if (scores[j] < alpha * prelim.tau) continue;
      const double boosted = alpha > 0.0 ? std::min(1.0, scores[j] / alpha) : 1.0;
      if (boosted >= prelim.tau) {
        scores[j] = boosted;
        links.promoted.push_back(j);
      }
    }
    LayerPartition refined = make_partition(lower.index, std::move(scores), prelim.tau);
    for (std::size_t j = 0; j < lower.size(); ++j) {
      if (linked_s[j] && refined.is_sensitive(j)) links.sensitive.push_back(j);
      if (linked_n[j] && !refined.is_sensitive(j)) links.nonsensitive.push_back(j);
    }
    result.partitions[pos - 1] = std::move(refined);
    result.links.push_back(std::move(links));
  }

  if (mdav_config.enabled) {
    for (std::size_t k = 0; k < n; ++k) {
      result.diagnostics.push_back(diagnose(bundle.layers[k], result.partitions[k], mdav_config));
    }
  }
  return result;
}

GroupingResult random_partition(const LayeredFeatureBundle& bundle, const std::vector<std::size_t>& sizes,
                                std::uint64_t seed) {
  if (sizes.size() != bundle.layers.size()) {
    throw Error(ErrorKind::shape_mismatch, "need one sensitive-set size per layer");
  }
  GroupingResult result;
  result.strategy = Strategy::random;
  for (std::size_t k = 0; k < bundle.layers.size(); ++k) {
    const Layer& layer = bundle.layers[k];
    if (sizes[k] > layer.size()) {
      throw Error(ErrorKind::size_overflow, "requested " + std::to_string(sizes[k]) + " sensitive vectors but layer " +
                                                std::to_string(layer.index) + " has " +
                                                std::to_string(layer.size()));
    }
    std::vector<std::size_t> ids(layer.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    RandomStream stream(seed, "grouping", static_cast<std::uint64_t>(layer.index));
    for (std::size_t r = 0; r < sizes[k]; ++r) {
      const std::size_t pick = r + static_cast<std::size_t>(stream.below(ids.size() - r));
      std::swap(ids[r], ids[pick]);
    }
    std::vector<double> scores(layer.size(), 0.0);
    for (std::size_t r = 0; r < sizes[k]; ++r) scores[ids[r]] = 1.0;
    result.partitions.push_back(make_partition(layer.index, std::move(scores), 1.0));
  }
  return result;
}

}  // namespace bodhi
