#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "bodhi/empa.hpp"
#include "bodhi/error.hpp"
#include "bodhi/experiment.hpp"
#include "bodhi/grouping.hpp"
#include "bodhi/io.hpp"
#include "bodhi/metrics.hpp"
#include "bodhi/noise.hpp"
#include "bodhi/random.hpp"

namespace {

using namespace bodhi;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct Options {
  std::string config = "synthetic_default";
  std::uint64_t seed = 0;
  double epsilon = 0.1;
  std::optional<std::string> strategy;
  std::optional<std::string> mechanism;
  std::string metric = "all";
  std::string out;
  std::string format = "csv";
  std::string in;
  std::string original;
  std::string perturbed;
  std::string grouping;
  std::string scorer = "auto";
  std::vector<std::string> concepts;
  std::string projection;
  bool epsilon_set = false;
  bool seed_set = false;
};

std::vector<std::string> metric_list(const std::string& text) {
  if (text == "all") return all_metrics();
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    if (std::find(all_metrics().begin(), all_metrics().end(), item) == all_metrics().end()) {
      throw CLI::ValidationError("--metric", "unknown metric '" + item + "'");
    }
    out.push_back(item);
  }
  return out;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_failure, "cannot write " + path);
  out << text;
}

SensitivityScorer make_scorer(const LayeredFeatureBundle& bundle, const std::string& kind, std::uint64_t seed,
                              std::vector<std::string>& concepts) {
  SensitivityScorer scorer;
  scorer.seed = seed;
  std::string chosen = kind;
  const auto& first = bundle.layers.front();
  if (chosen == "auto") {
    if (!first.scores.empty()) {
      chosen = "external";
    } else if (!first.flags.empty()) {
      chosen = "ground_truth";
    } else {
      chosen = "prototype";
    }
  }
  if (chosen == "external") {
    scorer.kind = ScorerKind::external;
  } else if (chosen == "ground_truth") {
    scorer.kind = ScorerKind::ground_truth;
  } else {
    scorer.kind = ScorerKind::prototype;
    scorer.prototypes = prototypes_from_metadata(bundle.metadata);
    if (concepts.empty()) {
      for (const auto& [label, q] : scorer.prototypes) concepts.push_back(label);
    }
  }
  if (concepts.empty()) concepts.push_back("sensitive");
  return scorer;
}

GroupingResult run_grouping(const LayeredFeatureBundle& bundle, const ProtocolConfig& cfg, Strategy strategy,
                            const Options& opt) {
  if (bundle.layers.empty()) throw Error(ErrorKind::invalid_argument, "bundle has no layers");
  std::vector<std::string> labels = opt.concepts;
  const SensitivityScorer scorer = make_scorer(bundle, opt.scorer, opt.seed, labels);
  const ConceptSet concepts(bundle.metadata.contains("concept_set") ? bundle.metadata.at("concept_set") : "cli",
                            labels);
  switch (strategy) {
    case Strategy::bua:
      return bua(bundle, scorer, concepts, cfg.threshold, cfg.mdav);
    case Strategy::tda:
      return tda(bundle, scorer, concepts, cfg.threshold, CorrespondenceKind::automatic, cfg.refinement, cfg.mdav);
    case Strategy::random: {
      const auto reference = bua(bundle, scorer, concepts, cfg.threshold, cfg.mdav);
      std::vector<std::size_t> sizes;
      for (const auto& p : reference.partitions) sizes.push_back(p.sensitive_ids.size());
      return random_partition(bundle, sizes, opt.seed);
    }
  }
  throw Error(ErrorKind::invalid_argument, "unknown strategy");
}

LayeredFeatureBundle checked_bundle(const std::string& path) {
  auto bundle = read_bundle(path);
  const auto v = validate_bundle(bundle);
  if (!v.ok()) throw Error(ErrorKind::shape_mismatch, path + ": " + v.violations.front().message);
  return bundle;
}

int cmd_synth(const Options& opt) {
  SyntheticConfig syn = load_protocol_config(opt.config).synthetic;
  syn.seed = opt.seed;
  write_bundle(generate_synthetic(syn), opt.out);
  return kExitOk;
}

int cmd_perturb(const Options& opt) {
  const ProtocolConfig cfg = load_protocol_config(opt.config);
  const auto bundle = checked_bundle(opt.in);
  const GroupingResult grouping = opt.grouping.empty() ? planted_grouping(bundle) : read_partitions(opt.grouping);
  const NoiseFamily family = opt.mechanism ? parse_noise_family(*opt.mechanism) : cfg.mechanism;
  const NoiseConfig noise{ReferenceMechanism(family, opt.epsilon, cfg.c), opt.seed, NoiseTarget::sensitive_only};
  write_bundle(perturb_sensitive(bundle, grouping, noise).bundle, opt.out);
  return kExitOk;
}

int cmd_group(const Options& opt) {
  const ProtocolConfig cfg = load_protocol_config(opt.config);
  const auto bundle = checked_bundle(opt.in);
  const Strategy strategy = parse_strategy(opt.strategy.value_or("bua"));
  emit(partitions_to_json(run_grouping(bundle, cfg, strategy, opt)), opt.out);
  return kExitOk;
}

int cmd_assess(const Options& opt) {
  const ProtocolConfig cfg = load_protocol_config(opt.config);
  const auto original = checked_bundle(opt.original);
  auto perturbed = checked_bundle(opt.perturbed);
  const GroupingResult grouping = opt.grouping.empty()
                                      ? run_grouping(original, cfg, parse_strategy(opt.strategy.value_or("bua")), opt)
                                      : read_partitions(opt.grouping);
  const NoiseFamily family = opt.mechanism ? parse_noise_family(*opt.mechanism) : cfg.reference;
  const ReferenceMechanism reference(family, opt.epsilon, cfg.c);
  const std::uint64_t reference_seed = derive_stream_key(opt.seed, "reference");
  const auto metrics = metric_list(opt.metric);
  auto wants = [&](const char* m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };

  const auto main = empa_assess(original, perturbed, grouping, reference, cfg.em, reference_seed);
  std::map<std::string, double> values;
  if (wants(metric::bas)) values[metric::bas] = main.bas;
  if (wants(metric::bias_ref)) values[metric::bias_ref] = main.bias_ref;
  if (wants(metric::bias_uniform)) values[metric::bias_uniform] = main.bias_uniform;
  if (cfg.alt_k > 0 && (wants(metric::bas_alt_k) || wants(metric::bias_uniform_alt_k))) {
    EMConfig alt = cfg.em;
    alt.K = cfg.alt_k;
    const auto other = empa_assess(original, perturbed, grouping, reference, alt, reference_seed);
    if (wants(metric::bas_alt_k)) values[metric::bas_alt_k] = other.bas;
    if (wants(metric::bias_uniform_alt_k)) values[metric::bias_uniform_alt_k] = other.bias_uniform;
  }
  HistogramConfig hist = cfg.histogram;
  hist.extension = cfg.histogram_extension * cfg.c / opt.epsilon;
  if (wants(metric::rmse)) values[metric::rmse] = rmse(original, perturbed);
  if (wants(metric::chi_square)) values[metric::chi_square] = chi_square(original, perturbed, hist);
  if (wants(metric::kl)) values[metric::kl] = kl_divergence(original, perturbed, hist);
  if (wants(metric::mmd)) values[metric::mmd] = mmd_marginal(original, perturbed);
  if (wants(metric::wasserstein1)) values[metric::wasserstein1] = wasserstein1(original, perturbed);

  if (opt.format == "json") {
    emit(assessment_to_json(main, values), opt.out);
  } else {
    std::ostringstream ss;
    write_metrics_csv(values, ss);
    emit(ss.str(), opt.out);
  }
  return kExitOk;
}

int cmd_experiment(const Options& opt) {
  ProtocolConfig cfg = load_protocol_config(opt.config);
  if (opt.metric != "all") cfg.metrics = metric_list(opt.metric);
  if (opt.epsilon_set) cfg.epsilons = {opt.epsilon};
  if (opt.seed_set) cfg.seeds = {opt.seed};
  const ExperimentReport report = run_protocol(cfg);

  Supplementary supp;
  try {
    supp.loso = moment_reg_loso(report, cfg.strategies.front());
  } catch (const Error& e) {
    std::cerr << "moment_reg_loso skipped: " << e.what() << '\n';
  }
  supp.ablation = run_ablation(cfg);
  supp.control = matched_reference_control(cfg);
  write_report_dir(report, supp, opt.out);

  for (const auto& c : report.cells) {
    if (!c.ok()) {
      std::cerr << "missing cell " << to_string(c.strategy) << " eps=" << format_number(c.epsilon)
                << " seed=" << c.seed << ": " << c.error << '\n';
    }
  }
  if (opt.format == "json") {
    std::cout << report_to_json(report, supp);
  } else {
    write_aggregate_csv(report, std::cout);
  }
  return kExitOk;
}

int cmd_report(const Options& opt) {
  std::ostringstream ss;
  if (opt.projection == "pca") {
    const auto bundle = checked_bundle(opt.in);
    std::optional<GroupingResult> grouping;
    if (!opt.grouping.empty()) grouping = read_partitions(opt.grouping);
    write_projection_csv(pca_projection(bundle, grouping ? &*grouping : nullptr), ss);
  } else {
    std::ifstream in(opt.in);
    if (!in) throw Error(ErrorKind::io_failure, "cannot open " + opt.in);
    ExperimentReport report;
    report.cells = read_cells_csv(in);
    const auto metrics = metric_list(opt.metric);
    report.aggregates = aggregate_cells(report.cells, metrics);
    if (opt.format == "json") {
      ss << report_to_json(report, {});
    } else {
      write_aggregate_csv(report, ss);
    }
  }
  emit(ss.str(), opt.out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layered feature privacy-alignment auditing"};
  app.require_subcommand(1);
  Options opt;

  const std::vector<std::string> strategies{"bua", "tda", "random"};
  const std::vector<std::string> families{"laplace", "gaussian"};
  const std::vector<std::string> formats{"csv", "json"};

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", opt.config, "Run config: 'synthetic_default' or a JSON file")->capture_default_str();
  };
  auto add_seed = [&](CLI::App* c, const char* what) {
    c->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& v) { opt.seed = v, opt.seed_set = true; }, what);
  };
  auto add_epsilon = [&](CLI::App* c, const char* what) {
    c->add_option_function<double>(
         "--epsilon", [&](const double& v) { opt.epsilon = v, opt.epsilon_set = true; }, what)
        ->check(CLI::PositiveNumber);
  };
  auto add_mechanism = [&](CLI::App* c, const char* what) {
    c->add_option("--mechanism", opt.mechanism, what)->check(CLI::IsMember(families));
  };
  auto add_strategy = [&](CLI::App* c) {
    c->add_option("--strategy", opt.strategy, "Grouping strategy (default bua)")->check(CLI::IsMember(strategies));
  };
  auto add_format = [&](CLI::App* c) {
    c->add_option("--format", opt.format, "Output format")->check(CLI::IsMember(formats))->capture_default_str();
  };
  auto add_metric = [&](CLI::App* c) {
    c->add_option("--metric", opt.metric, "Comma-separated metric names or 'all'")->capture_default_str();
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic layered bundle");
  add_config(synth);
  add_seed(synth, "Generation seed");
  synth->add_option("--out", opt.out, "Output bundle path")->required();

  auto* perturb = app.add_subcommand("perturb", "Add calibrated noise to sensitive vectors");
  add_config(perturb);
  add_seed(perturb, "Noise seed");
  add_epsilon(perturb, "Privacy budget (scale c/epsilon)");
  add_mechanism(perturb, "Noise family (default from config)");
  perturb->add_option("--in", opt.in, "Original bundle")->required()->check(CLI::ExistingFile);
  perturb->add_option("--grouping", opt.grouping, "Partition file (default: bundle flags)")
      ->check(CLI::ExistingFile);
  perturb->add_option("--out", opt.out, "Output bundle path")->required();

  auto* group = app.add_subcommand("group", "Partition every layer into sensitive and non-sensitive groups");
  add_config(group);
  add_seed(group, "Scorer and random-partition seed");
  add_strategy(group);
  group->add_option("--in", opt.in, "Bundle")->required()->check(CLI::ExistingFile);
  group->add_option("--scorer", opt.scorer, "auto, ground_truth, external or prototype")
      ->check(CLI::IsMember({"auto", "ground_truth", "external", "prototype"}))
      ->capture_default_str();
  group->add_option("--concepts", opt.concepts, "Concept labels for the prototype scorer")->delimiter(',');
  group->add_option("--out", opt.out, "Partition file (default stdout)");

  auto* assess = app.add_subcommand("assess", "Score a perturbed bundle against a reference mechanism");
  add_config(assess);
  add_seed(assess, "Reference noise seed");
  add_epsilon(assess, "Declared budget of the reference mechanism");
  add_mechanism(assess, "Reference noise family (default from config)");
  add_strategy(assess);
  add_metric(assess);
  add_format(assess);
  assess->add_option("--original", opt.original, "Original bundle")->required()->check(CLI::ExistingFile);
  assess->add_option("--perturbed", opt.perturbed, "Perturbed bundle")->required()->check(CLI::ExistingFile);
  assess->add_option("--grouping", opt.grouping, "Partition file (default: group the original)")
      ->check(CLI::ExistingFile);
  assess->add_option("--scorer", opt.scorer, "Scorer used when grouping on the fly")
      ->check(CLI::IsMember({"auto", "ground_truth", "external", "prototype"}));
  assess->add_option("--out", opt.out, "Output file (default stdout)");

  auto* experiment = app.add_subcommand("experiment", "Run the multi-seed synthetic protocol");
  add_config(experiment);
  add_seed(experiment, "Run a single seed instead of the configured list");
  add_epsilon(experiment, "Run a single budget instead of the configured list");
  add_metric(experiment);
  add_format(experiment);
  experiment->add_option("--out", opt.out, "Report directory")->required();

  auto* report = app.add_subcommand("report", "Aggregate a cells CSV or emit a projection");
  add_metric(report);
  add_format(report);
  report->add_option("--in", opt.in, "cells.csv, or a bundle with --projection")->required()->check(CLI::ExistingFile);
  report->add_option("--projection", opt.projection, "2-D projection of a bundle")->check(CLI::IsMember({"pca"}));
  report->add_option("--grouping", opt.grouping, "Partition file used to label the projection")
      ->check(CLI::ExistingFile);
  report->add_option("--out", opt.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(opt);
    if (*perturb) return cmd_perturb(opt);
    if (*group) return cmd_group(opt);
    if (*assess) return cmd_assess(opt);
    if (*experiment) return cmd_experiment(opt);
    if (*report) return cmd_report(opt);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
