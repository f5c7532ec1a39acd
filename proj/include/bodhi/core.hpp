#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bodhi/matrix.hpp"

namespace bodhi {

enum class BundleKind { original, perturbed };
enum class NoiseFamily { laplace, gaussian };
enum class Strategy { bua, tda, random };

const char* to_string(BundleKind kind);
const char* to_string(NoiseFamily family);
const char* to_string(Strategy strategy);
BundleKind parse_bundle_kind(const std::string& text);
NoiseFamily parse_noise_family(const std::string& text);
Strategy parse_strategy(const std::string& text);

/// One layer X_i: N_i feature vectors of dimension d_i, plus optional
/// per-vector sensitivity scores and ground-truth flags carried by the bundle file.
struct Layer {
  int index = 1;
  Matrix vectors;
  std::vector<double> scores;
  std::vector<std::uint8_t> flags;

  std::size_t size() const noexcept { return vectors.rows(); }
  std::size_t dim() const noexcept { return vectors.cols(); }

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Hierarchical feature sets {X_i}, either original features f or perturbed f~.
/// Reserved metadata keys: "model", "dataset", "concept_set".
struct LayeredFeatureBundle {
  std::vector<Layer> layers;
  BundleKind kind = BundleKind::original;
  std::map<std::string, std::string> metadata;

  std::size_t layer_count() const noexcept { return layers.size(); }
  std::size_t total_entries() const noexcept;

  friend bool operator==(const LayeredFeatureBundle&, const LayeredFeatureBundle&) = default;
};

struct Violation {
  int layer_index = 0;  // 0 when the violation concerns the bundle as a whole
  std::string message;
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
};

ValidationResult validate_bundle(const LayeredFeatureBundle& bundle);

class ConceptSet {
 public:
  ConceptSet(std::string id, std::vector<std::string> concepts);

  const std::string& id() const noexcept { return id_; }
  const std::vector<std::string>& concepts() const noexcept { return concepts_; }

 private:
  std::string id_;
  std::vector<std::string> concepts_;
};

/// Evaluator-chosen additive noise family at budget epsilon; scale = c / epsilon.
class ReferenceMechanism {
 public:
  ReferenceMechanism(NoiseFamily family, double epsilon, double c = 1.0);

  NoiseFamily family() const noexcept { return family_; }
  double epsilon() const noexcept { return epsilon_; }
  double c() const noexcept { return c_; }
  double scale() const noexcept { return c_ / epsilon_; }

 private:
  NoiseFamily family_;
  double epsilon_;
  double c_;
};

/// Sensitive / non-sensitive split of one layer. Ids are row positions in the layer.
struct LayerPartition {
  int layer_index = 1;
  std::vector<std::size_t> sensitive_ids;     // ascending
  std::vector<std::size_t> nonsensitive_ids;  // ascending
  std::vector<double> scores;
  double tau = 0.0;

  std::size_t size() const noexcept { return sensitive_ids.size() + nonsensitive_ids.size(); }
  bool is_sensitive(std::size_t id) const;

  friend bool operator==(const LayerPartition&, const LayerPartition&) = default;
};

/// Builds a partition from scores and a threshold: score >= tau is sensitive.
/// Scores are clamped to [0, 1].
LayerPartition make_partition(int layer_index, std::vector<double> scores, double tau);

/// Checks the disjoint/exhaustive and threshold invariants.
bool partition_is_consistent(const LayerPartition& partition);

/// Sensitive values t, injected noise u and observed values v = t + u for one layer.
struct PerturbationTriple {
  int layer_index = 1;
  std::vector<std::size_t> ids;
  Matrix t;
  Matrix u;
  Matrix v;
};

/// Largest |v - (t + u)| over all entries; infinity on shape mismatch.
double reconstruction_error(const PerturbationTriple& triple);

/// MDAV/NCP diagnostics for one layer.
struct LayerDiagnostics {
  double ncp_sensitive = 0.0;
  double ncp_nonsensitive = 0.0;
  std::size_t micro_clusters = 0;
  double mean_cluster_ncp = 0.0;
};

/// Top-down links for the step i -> i-1.
struct LinkSets {
  int from_layer = 0;
  std::vector<std::size_t> sensitive;     // L_s, ids in layer i-1
  std::vector<std::size_t> nonsensitive;  // L_n, ids in layer i-1
  std::vector<std::size_t> promoted;      // ids promoted by refinement
};

struct GroupingResult {
  Strategy strategy = Strategy::bua;
  std::vector<LayerPartition> partitions;
  std::vector<LayerDiagnostics> diagnostics;  // empty unless MDAV/NCP enabled
  std::vector<LinkSets> links;                // TDA only
  std::string feature_space = "raw";
};

/// Concatenates the sensitive vectors of the selected layers in (layer, id) order.
/// An empty selection means all layers.
Matrix pool_sensitive_features(const LayeredFeatureBundle& bundle, const GroupingResult& grouping,
                               const std::set<int>& layer_selection = {});

/// Throws shape_mismatch unless the grouping has one consistent partition per layer.
void check_grouping_matches(const LayeredFeatureBundle& bundle, const GroupingResult& grouping);

}  // namespace bodhi
