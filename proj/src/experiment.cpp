#include "bodhi/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "bodhi/error.hpp"
#include "bodhi/noise.hpp"
#include "bodhi/random.hpp"

namespace bodhi {

std::size_t SyntheticConfig::sensitive_count() const {
  return static_cast<std::size_t>(std::llround(sensitive_ratio * static_cast<double>(samples_per_layer)));
}

LayeredFeatureBundle generate_synthetic(const SyntheticConfig& config) {
  if (config.n_layers == 0 || config.samples_per_layer == 0 || config.dim == 0) {
    throw Error(ErrorKind::invalid_argument, "synthetic layers, samples and dim must be >= 1");
  }
  if (!(config.sensitive_ratio > 0.0 && config.sensitive_ratio < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "sensitive_ratio must lie in (0, 1)");
  }
  const std::size_t n = config.samples_per_layer;
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  RandomStream pick(config.seed, "synthetic-flags");
  const std::size_t m = config.sensitive_count();
  for (std::size_t r = 0; r < m; ++r) std::swap(ids[r], ids[r + pick.below(n - r)]);
  std::vector<std::uint8_t> flags(n, 0);
  for (std::size_t r = 0; r < m; ++r) flags[ids[r]] = 1;

  LayeredFeatureBundle bundle;
  bundle.kind = BundleKind::original;
  bundle.metadata["dataset"] = "synthetic";
  bundle.metadata["seed"] = std::to_string(config.seed);
  for (std::size_t k = 0; k < config.n_layers; ++k) {
    Layer layer;
    layer.index = static_cast<int>(k) + 1;
    layer.vectors = Matrix(n, config.dim);
    RandomStream stream(config.seed, "synthetic", static_cast<std::uint64_t>(layer.index));
    for (auto& x : layer.vectors.data()) x = static_cast<double>(static_cast<float>(stream.standard_normal()));
    layer.flags = flags;
    bundle.layers.push_back(std::move(layer));
  }
  return bundle;
}

GroupingResult planted_grouping(const LayeredFeatureBundle& bundle) {
  GroupingResult g;
  g.strategy = Strategy::bua;
  for (const auto& layer : bundle.layers) {
    if (layer.flags.size() != layer.size()) {
      throw Error(ErrorKind::invalid_argument, "layer " + std::to_string(layer.index) + " has no sensitive flags");
    }
    std::vector<double> scores(layer.flags.begin(), layer.flags.end());
    g.partitions.push_back(make_partition(layer.index, std::move(scores), 1.0));
  }
  return g;
}

const std::vector<std::string>& all_metrics() {
  static const std::vector<std::string> names{
      metric::rmse, metric::chi_square,  metric::kl,           metric::mmd,       metric::wasserstein1,
      metric::bas,  metric::bias_ref,    metric::bias_uniform, metric::bas_alt_k, metric::bias_uniform_alt_k};
  return names;
}

Aggregate aggregate(const std::vector<double>& values) {
  if (values.size() < 2) throw Error(ErrorKind::insufficient_data, "aggregate needs at least 2 values");
  const double n = static_cast<double>(values.size());
  Aggregate a;
  a.n = values.size();
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  const double half = boost::math::quantile(dist, 0.975) * a.std / std::sqrt(n);
  a.ci_lo = a.mean - half;
  a.ci_hi = a.mean + half;
  return a;
}

const CellResult* ExperimentReport::find(Strategy strategy, double epsilon, std::uint64_t seed) const {
  for (const auto& c : cells) {
    if (c.strategy == strategy && c.epsilon == epsilon && c.seed == seed) return &c;
  }
  return nullptr;
}

const AggregateRow* ExperimentReport::find(Strategy strategy, double epsilon, const std::string& metric) const {
  for (const auto& r : aggregates) {
    if (r.strategy == strategy && r.epsilon == epsilon && r.metric == metric) return &r;
  }
  return nullptr;
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("BODHI_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

bool wants(const ProtocolConfig& config, const std::string& name) {
  return std::find(config.metrics.begin(), config.metrics.end(), name) != config.metrics.end();
}

struct SeedGroupings {
  LayeredFeatureBundle original;
  GroupingResult planted;
  std::map<Strategy, GroupingResult> by_strategy;
  std::map<Strategy, std::string> errors;
};

SeedGroupings group_seed(const ProtocolConfig& config, std::uint64_t seed) {
  SyntheticConfig syn = config.synthetic;
  syn.seed = seed;
  SeedGroupings out;
  out.original = generate_synthetic(syn);
  out.planted = planted_grouping(out.original);

  const SensitivityScorer scorer{ScorerKind::ground_truth, {}, seed};
  const ConceptSet concepts("synthetic", {"sensitive"});
  std::optional<GroupingResult> bua_result;
  auto run = [&](Strategy s) -> GroupingResult {
    switch (s) {
      case Strategy::bua:
        return bua(out.original, scorer, concepts, config.threshold, config.mdav);
      case Strategy::tda:
        return tda(out.original, scorer, concepts, config.threshold, CorrespondenceKind::automatic,
                   config.refinement, config.mdav);
      case Strategy::random: {
        if (!bua_result) bua_result = bua(out.original, scorer, concepts, config.threshold, config.mdav);
        std::vector<std::size_t> sizes;
        for (const auto& p : bua_result->partitions) sizes.push_back(p.sensitive_ids.size());
        return random_partition(out.original, sizes, seed);
      }
    }
    throw Error(ErrorKind::invalid_argument, "unknown strategy");
  };
  for (Strategy s : config.strategies) {
    try {
      out.by_strategy.emplace(s, run(s));
      if (s == Strategy::bua) bua_result = out.by_strategy.at(s);
    } catch (const Error& e) {
      out.errors[s] = e.what();
    }
  }
  return out;
}

std::vector<CellResult> run_budget(const ProtocolConfig& config, const SeedGroupings& g, std::uint64_t seed,
                                   double epsilon) {
  std::vector<CellResult> cells;
  for (Strategy s : config.strategies) {
    CellResult c;
    c.strategy = s;
    c.epsilon = epsilon;
    c.seed = seed;
    cells.push_back(std::move(c));
  }
  auto fail_all = [&](const std::string& why) {
    for (auto& c : cells) {
      c.values.clear();
      c.error = why;
    }
  };

  PerturbationResult perturbed;
  std::map<std::string, double> shared;
  try {
    const NoiseConfig noise{ReferenceMechanism(config.mechanism, epsilon, config.c), seed,
                            NoiseTarget::sensitive_only};
    perturbed = perturb_sensitive(g.original, g.planted, noise);
    HistogramConfig hist = config.histogram;
    hist.extension = config.histogram_extension * config.c / epsilon;
    const auto& a = g.original;
    const auto& b = perturbed.bundle;
    if (wants(config, metric::rmse)) shared[metric::rmse] = rmse(a, b);
    if (wants(config, metric::chi_square)) shared[metric::chi_square] = chi_square(a, b, hist);
    if (wants(config, metric::kl)) shared[metric::kl] = kl_divergence(a, b, hist);
    if (wants(config, metric::mmd)) shared[metric::mmd] = mmd_marginal(a, b);
    if (wants(config, metric::wasserstein1)) shared[metric::wasserstein1] = wasserstein1(a, b);
  } catch (const Error& e) {
    fail_all(e.what());
    return cells;
  }

  const ReferenceMechanism reference(config.reference, epsilon, config.c);
  const std::uint64_t reference_seed = derive_stream_key(seed, "reference");
  for (auto& c : cells) {
    if (auto it = g.errors.find(c.strategy); it != g.errors.end()) {
      c.error = it->second;
      continue;
    }
    try {
      const GroupingResult& grouping = g.by_strategy.at(c.strategy);
      c.values = shared;
      const auto main = empa_assess(g.original, perturbed.bundle, grouping, reference, config.em, reference_seed,
                                    PoolingMode::automatic);
      if (wants(config, metric::bas)) c.values[metric::bas] = main.bas;
      if (wants(config, metric::bias_ref)) c.values[metric::bias_ref] = main.bias_ref;
      if (wants(config, metric::bias_uniform)) c.values[metric::bias_uniform] = main.bias_uniform;
      if (main.pooled) {
        c.theta = main.fits.front().theta;
        c.theta_ref = main.fits.front().theta_ref;
      }
      if (config.alt_k > 0 && (wants(config, metric::bas_alt_k) || wants(config, metric::bias_uniform_alt_k))) {
        EMConfig alt = config.em;
        alt.K = config.alt_k;
        const auto other = empa_assess(g.original, perturbed.bundle, grouping, reference, alt, reference_seed,
                                       PoolingMode::automatic);
        if (wants(config, metric::bas_alt_k)) c.values[metric::bas_alt_k] = other.bas;
        if (wants(config, metric::bias_uniform_alt_k)) c.values[metric::bias_uniform_alt_k] = other.bias_uniform;
      }
      c.moments = moment_features(g.original, perturbed.bundle, grouping);
    } catch (const Error& e) {
      c.values.clear();
      c.moments.clear();
      c.theta.reset();
      c.theta_ref.reset();
      c.error = e.what();
    }
  }
  return cells;
}

template <typename F>
void parallel_for(std::size_t count, std::size_t threads, F&& body) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) body(i);
    });
  }
}

bool cell_less(const CellResult& a, const CellResult& b) {
  const std::string sa = to_string(a.strategy), sb = to_string(b.strategy);
  if (sa != sb) return sa < sb;
  if (a.epsilon != b.epsilon) return a.epsilon < b.epsilon;
  return a.seed < b.seed;
}

}  // namespace

std::vector<AggregateRow> aggregate_cells(const std::vector<CellResult>& cells,
                                          const std::vector<std::string>& metrics) {
  std::map<std::tuple<std::string, double, std::string>, std::vector<double>> groups;
  std::map<std::string, Strategy> strategies;
  for (const auto& c : cells) {
    if (!c.ok()) continue;
    strategies[to_string(c.strategy)] = c.strategy;
    for (const auto& m : metrics) {
      if (auto it = c.values.find(m); it != c.values.end()) {
        groups[{to_string(c.strategy), c.epsilon, m}].push_back(it->second);
      }
    }
  }
  std::vector<AggregateRow> rows;
  for (const auto& [key, values] : groups) {
    if (values.size() < 2) continue;
    AggregateRow row;
    row.strategy = strategies.at(std::get<0>(key));
    row.epsilon = std::get<1>(key);
    row.metric = std::get<2>(key);
    row.stats = aggregate(values);
    rows.push_back(std::move(row));
  }
  return rows;
}

ExperimentReport run_protocol(const ProtocolConfig& config) {
  if (config.seeds.empty() || config.epsilons.empty()) {
    throw Error(ErrorKind::invalid_argument, "protocol needs at least one seed and one epsilon");
  }
  if (config.strategies.empty()) throw Error(ErrorKind::invalid_argument, "protocol needs at least one strategy");
  for (const auto& m : config.metrics) {
    if (std::find(all_metrics().begin(), all_metrics().end(), m) == all_metrics().end()) {
      throw Error(ErrorKind::invalid_argument, "unknown metric '" + m + "'");
    }
  }
  for (double eps : config.epsilons) ReferenceMechanism(config.mechanism, eps, config.c);

  const std::size_t n_eps = config.epsilons.size();
  std::vector<std::vector<CellResult>> slots(config.seeds.size() * n_eps);
  parallel_for(slots.size(), resolve_threads(config.threads), [&](std::size_t i) {
    const std::uint64_t seed = config.seeds[i / n_eps];
    const double eps = config.epsilons[i % n_eps];
    try {
      slots[i] = run_budget(config, group_seed(config, seed), seed, eps);
    } catch (const Error& e) {
      for (Strategy s : config.strategies) {
        CellResult c;
        c.strategy = s;
        c.epsilon = eps;
        c.seed = seed;
        c.error = e.what();
        slots[i].push_back(std::move(c));
      }
    }
  });

  ExperimentReport report;
  report.config = config;
  for (auto& slot : slots) {
    for (auto& c : slot) report.cells.push_back(std::move(c));
  }
  std::sort(report.cells.begin(), report.cells.end(), cell_less);
  report.aggregates = aggregate_cells(report.cells, config.metrics);
  return report;
}

LosoResult moment_reg_loso(const ExperimentReport& report, Strategy strategy) {
  std::vector<const CellResult*> cells;
  for (const auto& c : report.cells) {
    if (c.strategy == strategy && c.ok() && !c.moments.empty()) cells.push_back(&c);
  }
  std::vector<std::uint64_t> seeds;
  for (const auto* c : cells) seeds.push_back(c->seed);
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  if (seeds.size() < 2) throw Error(ErrorKind::insufficient_data, "leave-one-seed-out needs at least 2 seeds");

  LosoResult out;
  double ss = 0.0;
  for (std::uint64_t held : seeds) {
    std::vector<MomentRun> train;
    for (const auto* c : cells) {
      if (c->seed != held) train.push_back({c->moments, c->epsilon});
    }
    const MomentRegModel model = moment_reg_fit(train);
    for (const auto* c : cells) {
      if (c->seed != held) continue;
      const double est = moment_reg_predict(model, c->moments);
      out.predictions.push_back({held, c->epsilon, est});
      ss += (est - c->epsilon) * (est - c->epsilon);
    }
  }
  out.rmse = std::sqrt(ss / static_cast<double>(out.predictions.size()));
  return out;
}

double mixture_total_variance(const MixtureParams& theta) {
  double total = 0.0;
  for (std::size_t a = 0; a < theta.dim(); ++a) {
    double second = 0.0, first = 0.0;
    for (std::size_t k = 0; k < theta.K; ++k) {
      second += theta.lambda[k] * (theta.sigma2(k, a) + theta.mu(k, a) * theta.mu(k, a));
      first += theta.lambda[k] * theta.mu(k, a);
    }
    total += second - first * first;
  }
  return total / static_cast<double>(theta.dim());
}

AblationResult run_ablation(const ProtocolConfig& config) {
  double ss_full = 0.0, ss_without = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed : config.seeds) {
    SyntheticConfig syn = config.synthetic;
    syn.seed = seed;
    const auto original = generate_synthetic(syn);
    const auto planted = planted_grouping(original);
    for (double eps : config.epsilons) {
      const ReferenceMechanism mechanism(config.reference, eps, config.c);
      const auto observed = perturb_sensitive(original, planted, {mechanism, seed, NoiseTarget::sensitive_only});
      const Matrix v = pool_sensitive_features(observed.bundle, planted);

      const auto theta = em_fit(v, config.em);
      const auto theta_ref =
          fit_reference(original, planted, mechanism, config.em, derive_stream_key(seed, "reference"));
      const double full = eps * std::sqrt(mixture_total_variance(theta_ref) / mixture_total_variance(theta));

      const auto& values = v.data();
      const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
      double ss = 0.0;
      for (double x : values) ss += (x - mean) * (x - mean);
      const double without = config.c / std::sqrt(ss / static_cast<double>(values.size()));

      ss_full += (full / eps - 1.0) * (full / eps - 1.0);
      ss_without += (without / eps - 1.0) * (without / eps - 1.0);
      ++n;
    }
  }
  return {std::sqrt(ss_full / static_cast<double>(n)), std::sqrt(ss_without / static_cast<double>(n))};
}

std::vector<ControlRow> matched_reference_control(const ProtocolConfig& config) {
  const NoiseFamily matched = config.mechanism;
  const NoiseFamily cross = matched == NoiseFamily::gaussian ? NoiseFamily::laplace : NoiseFamily::gaussian;
  std::vector<ControlRow> rows;
  for (double eps : config.epsilons) {
    ControlRow row;
    row.epsilon = eps;
    for (std::uint64_t seed : config.seeds) {
      SyntheticConfig syn = config.synthetic;
      syn.seed = seed;
      const auto original = generate_synthetic(syn);
      const auto planted = planted_grouping(original);
      const auto observed = perturb_sensitive(
          original, planted, {ReferenceMechanism(matched, eps, config.c), seed, NoiseTarget::sensitive_only});
      const std::uint64_t ref_seed = derive_stream_key(seed, "reference");
      row.matched_bas += empa_assess(original, observed.bundle, planted, ReferenceMechanism(matched, eps, config.c),
                                     config.em, ref_seed)
                             .bas;
      row.cross_bas += empa_assess(original, observed.bundle, planted, ReferenceMechanism(cross, eps, config.c),
                                   config.em, ref_seed)
                           .bas;
    }
    row.matched_bas /= static_cast<double>(config.seeds.size());
    row.cross_bas /= static_cast<double>(config.seeds.size());
    rows.push_back(row);
  }
  return rows;
}

}  // namespace bodhi
