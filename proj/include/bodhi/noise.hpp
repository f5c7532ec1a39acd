#pragma once

#include <cstdint>
#include <vector>

#include "bodhi/core.hpp"

namespace bodhi {

enum class NoiseTarget { sensitive_only, all };

struct NoiseConfig {
  ReferenceMechanism mechanism{NoiseFamily::gaussian, 1.0};
  std::uint64_t seed = 0;
  NoiseTarget target = NoiseTarget::sensitive_only;
};

/// count x dim i.i.d. draws from the configured family at scale c/epsilon,
/// taken from the stream (seed, "noise", stream_index).
Matrix sample_noise(std::size_t count, std::size_t dim, const NoiseConfig& config,
                    std::uint64_t stream_index = 0);

/// Noise for one layer: the sub-stream keyed by the layer index.
Matrix layer_noise(std::size_t count, std::size_t dim, const NoiseConfig& config, int layer_index);

struct PerturbationResult {
  LayeredFeatureBundle bundle;
  std::vector<PerturbationTriple> triples;
};

/// Adds calibrated noise to the sensitive vectors of each layer (or to every vector
/// when target == all). Non-sensitive vectors are copied bit for bit.
PerturbationResult perturb_sensitive(const LayeredFeatureBundle& original, const GroupingResult& grouping,
                                     const NoiseConfig& config);

}  // namespace bodhi
