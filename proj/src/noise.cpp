#include "bodhi/noise.hpp"

#include "bodhi/error.hpp"
#include "bodhi/random.hpp"

namespace bodhi {

Matrix sample_noise(std::size_t count, std::size_t dim, const NoiseConfig& config,
                    std::uint64_t stream_index) {
  if (dim == 0) throw Error(ErrorKind::invalid_argument, "noise dimension must be >= 1");
  Matrix out(count, dim);
  RandomStream stream(config.seed, "noise", stream_index);
  const double scale = config.mechanism.scale();
  const bool laplace = config.mechanism.family() == NoiseFamily::laplace;
  for (auto& x : out.data()) x = scale * (laplace ? stream.standard_laplace() : stream.standard_normal());
  return out;
}

Matrix layer_noise(std::size_t count, std::size_t dim, const NoiseConfig& config, int layer_index) {
  return sample_noise(count, dim, config, static_cast<std::uint64_t>(layer_index));
}

PerturbationResult perturb_sensitive(const LayeredFeatureBundle& original, const GroupingResult& grouping,
                                     const NoiseConfig& config) {
  if (original.kind != BundleKind::original) {
    throw Error(ErrorKind::invalid_argument, "perturb_sensitive expects an original bundle");
  }
  check_grouping_matches(original, grouping);

  PerturbationResult result;
  result.bundle = original;
  result.bundle.kind = BundleKind::perturbed;
  result.bundle.metadata["mechanism"] = to_string(config.mechanism.family());

  for (std::size_t k = 0; k < original.layers.size(); ++k) {
    const Layer& layer = original.layers[k];
    Layer& out = result.bundle.layers[k];

    std::vector<std::size_t> ids;
    if (config.target == NoiseTarget::all) {
      ids.resize(layer.size());
      for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = j;
    } else {
      ids = grouping.partitions[k].sensitive_ids;
    }

    PerturbationTriple triple;
    triple.layer_index = layer.index;
    triple.ids = ids;
    triple.u = layer_noise(ids.size(), layer.dim(), config, layer.index);
    triple.t = Matrix(ids.size(), layer.dim());
    triple.v = Matrix(ids.size(), layer.dim());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto src = layer.vectors.row(ids[r]);
      auto noise = triple.u.row(r);
      auto dst = out.vectors.row(ids[r]);
      for (std::size_t a = 0; a < layer.dim(); ++a) {
        triple.t(r, a) = src[a];
        dst[a] = src[a] + noise[a];
        triple.v(r, a) = dst[a];
      }
    }
    result.triples.push_back(std::move(triple));
  }
  return result;
}

}  // namespace bodhi
