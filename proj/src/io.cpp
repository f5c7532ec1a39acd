#include "bodhi/io.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <charconv>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "bodhi/error.hpp"

namespace bodhi {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_failure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_failure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::io_failure, "write failed for " + path.string());
}

void put_f32(std::vector<unsigned char>& bytes, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  for (int s = 0; s < 32; s += 8) bytes.push_back(static_cast<unsigned char>(bits >> s));
}

double get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 3; b >= 0; --b) bits = (bits << 8) | p[b];
  return static_cast<double>(std::bit_cast<float>(bits));
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::malformed_manifest, what + " is not valid JSON: " + e.what());
  }
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorKind::malformed_manifest, where + ": missing '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::malformed_manifest, where + ": bad type for '" + key + "'");
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::invalid_argument, where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) throw Error(ErrorKind::invalid_argument, "unknown config key '" + where + key + "'");
  }
}

}  // namespace

std::string encode_base64(const std::vector<unsigned char>& bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<std::vector<unsigned char>::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

std::vector<unsigned char> decode_base64(const std::string& text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  std::string body = text;
  std::size_t pad = 0;
  while (!body.empty() && body.back() == '=') {
    body.pop_back();
    ++pad;
  }
  if (pad > 2 || (body.size() + pad) % 4 != 0) {
    throw Error(ErrorKind::malformed_manifest, "inline payload is not valid base64");
  }
  body.append(pad, 'A');
  try {
    std::vector<unsigned char> out(It(body.begin()), It(body.end()));
    out.resize(out.size() - pad);
    return out;
  } catch (const std::exception&) {
    throw Error(ErrorKind::malformed_manifest, "inline payload is not valid base64");
  }
}

void write_bundle(const LayeredFeatureBundle& bundle, const fs::path& path, std::size_t inline_limit) {
  std::vector<unsigned char> payload;
  payload.reserve(bundle.total_entries() * 4);
  ordered_json manifest;
  manifest["format_version"] = "1";
  manifest["kind"] = to_string(bundle.kind);
  manifest["n_layers"] = bundle.layers.size();
  ordered_json layers = ordered_json::array();
  for (const auto& layer : bundle.layers) {
    ordered_json entry;
    entry["index"] = layer.index;
    entry["n_vectors"] = layer.size();
    entry["dim"] = layer.dim();
    entry["byte_offset"] = payload.size();
    if (!layer.scores.empty()) entry["scores"] = layer.scores;
    if (!layer.flags.empty()) entry["flags"] = layer.flags;
    for (double x : layer.vectors.data()) put_f32(payload, x);
    layers.push_back(std::move(entry));
  }
  manifest["layers"] = std::move(layers);
  manifest["metadata"] = bundle.metadata;
  if (payload.size() < inline_limit) {
    manifest["payload"] = {{"encoding", "base64"}, {"bytes", payload.size()}, {"data", encode_base64(payload)}};
  } else {
    const fs::path bin = path.string() + ".bin";
    manifest["payload"] = {{"encoding", "file"}, {"bytes", payload.size()}, {"path", bin.filename().string()}};
    write_text(bin, std::string(payload.begin(), payload.end()));
  }
  write_text(path, manifest.dump(1) + "\n");
}

LayeredFeatureBundle read_bundle(const fs::path& path) {
  const json manifest = parse_json(read_text(path), "manifest " + path.string());
  if (!manifest.is_object()) throw Error(ErrorKind::malformed_manifest, "manifest must be a JSON object");
  const auto version = field<std::string>(manifest, "format_version", "manifest");
  if (version != "1") throw Error(ErrorKind::unsupported_version, "unsupported LFB format_version \"" + version + "\"");

  LayeredFeatureBundle bundle;
  try {
    bundle.kind = parse_bundle_kind(field<std::string>(manifest, "kind", "manifest"));
  } catch (const Error& e) {
    throw Error(ErrorKind::malformed_manifest, e.what());
  }
  const auto n_layers = field<std::size_t>(manifest, "n_layers", "manifest");
  const auto layers = field<json>(manifest, "layers", "manifest");
  if (!layers.is_array() || layers.size() != n_layers) {
    throw Error(ErrorKind::malformed_manifest, "manifest n_layers does not match the layers array");
  }
  if (manifest.contains("metadata")) {
    bundle.metadata = field<std::map<std::string, std::string>>(manifest, "metadata", "manifest");
  }

  const auto payload_info = field<json>(manifest, "payload", "manifest");
  const auto encoding = field<std::string>(payload_info, "encoding", "payload");
  std::vector<unsigned char> payload;
  if (encoding == "base64") {
    payload = decode_base64(field<std::string>(payload_info, "data", "payload"));
  } else if (encoding == "file") {
    const fs::path bin = path.parent_path() / field<std::string>(payload_info, "path", "payload");
    const std::string raw = read_text(bin);
    payload.assign(raw.begin(), raw.end());
  } else {
    throw Error(ErrorKind::malformed_manifest, "unknown payload encoding '" + encoding + "'");
  }

  std::size_t expected_offset = 0;
  for (const auto& entry : layers) {
    Layer layer;
    layer.index = field<int>(entry, "index", "layer");
    const std::string where = "layer " + std::to_string(layer.index);
    const auto n = field<std::size_t>(entry, "n_vectors", where);
    const auto d = field<std::size_t>(entry, "dim", where);
    const auto offset = field<std::size_t>(entry, "byte_offset", where);
    if (offset != expected_offset) {
      throw Error(ErrorKind::shape_mismatch, where + ": byte_offset " + std::to_string(offset) + ", expected " +
                                                 std::to_string(expected_offset));
    }
    const std::size_t bytes = n * d * 4;
    if (payload.size() < offset + bytes) {
      throw Error(ErrorKind::truncated_payload, where + ": needs bytes [" + std::to_string(offset) + ", " +
                                                    std::to_string(offset + bytes) + ") but payload has " +
                                                    std::to_string(payload.size()));
    }
    layer.vectors = Matrix(n, d);
    auto& values = layer.vectors.data();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_f32(payload.data() + offset + 4 * i);
    if (entry.contains("scores")) {
      layer.scores = field<std::vector<double>>(entry, "scores", where);
      if (layer.scores.size() != n) throw Error(ErrorKind::shape_mismatch, where + ": score count != n_vectors");
    }
    if (entry.contains("flags")) {
      layer.flags = field<std::vector<std::uint8_t>>(entry, "flags", where);
      if (layer.flags.size() != n) throw Error(ErrorKind::shape_mismatch, where + ": flag count != n_vectors");
    }
    expected_offset += bytes;
    bundle.layers.push_back(std::move(layer));
  }
  if (payload.size() != expected_offset) {
    throw Error(ErrorKind::shape_mismatch, "payload has " + std::to_string(payload.size()) +
                                               " bytes but the layers declare " + std::to_string(expected_offset));
  }
  return bundle;
}

std::string partitions_to_json(const GroupingResult& grouping) {
  ordered_json doc;
  ordered_json layers = ordered_json::array();
  for (const auto& p : grouping.partitions) {
    ordered_json entry;
    entry["layer"] = p.layer_index;
    entry["tau"] = p.tau;
    entry["sensitive"] = p.sensitive_ids;
    entry["nonsensitive"] = p.nonsensitive_ids;
    entry["scores"] = p.scores;
    layers.push_back(std::move(entry));
  }
  doc["partitions"] = std::move(layers);
  return doc.dump(1) + "\n";
}

GroupingResult partitions_from_json(const std::string& text) {
  const json doc = parse_json(text, "partition file");
  GroupingResult g;
  for (const auto& entry : field<json>(doc, "partitions", "partition file")) {
    LayerPartition p;
    p.layer_index = field<int>(entry, "layer", "partition");
    const std::string where = "partition for layer " + std::to_string(p.layer_index);
    p.tau = field<double>(entry, "tau", where);
    p.sensitive_ids = field<std::vector<std::size_t>>(entry, "sensitive", where);
    p.nonsensitive_ids = field<std::vector<std::size_t>>(entry, "nonsensitive", where);
    p.scores = field<std::vector<double>>(entry, "scores", where);
    if (!partition_is_consistent(p) || !std::is_sorted(p.sensitive_ids.begin(), p.sensitive_ids.end()) ||
        !std::is_sorted(p.nonsensitive_ids.begin(), p.nonsensitive_ids.end())) {
      throw Error(ErrorKind::malformed_manifest, where + " is inconsistent");
    }
    g.partitions.push_back(std::move(p));
  }
  return g;
}

void write_partitions(const GroupingResult& grouping, const fs::path& path) {
  write_text(path, partitions_to_json(grouping));
}

GroupingResult read_partitions(const fs::path& path) { return partitions_from_json(read_text(path)); }

ProtocolConfig protocol_config_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_argument, std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(doc,
                 {"epsilons", "seeds", "mechanism", "reference", "c", "strategies", "metrics", "em", "alt_k",
                  "threshold", "refinement", "mdav", "histogram", "synthetic", "threads"},
                 "");
  ProtocolConfig cfg;
  auto get = [](const json& obj, const char* key, auto& target) {
    if (!obj.contains(key)) return;
    try {
      target = obj.at(key).get<std::decay_t<decltype(target)>>();
    } catch (const json::exception&) {
      throw Error(ErrorKind::invalid_argument, std::string("bad value for config key '") + key + "'");
    }
  };
  get(doc, "epsilons", cfg.epsilons);
  get(doc, "seeds", cfg.seeds);
  get(doc, "c", cfg.c);
  get(doc, "alt_k", cfg.alt_k);
  get(doc, "threads", cfg.threads);
  if (doc.contains("mechanism")) cfg.mechanism = parse_noise_family(doc["mechanism"].get<std::string>());
  if (doc.contains("reference")) cfg.reference = parse_noise_family(doc["reference"].get<std::string>());
  if (doc.contains("strategies")) {
    cfg.strategies.clear();
    for (const auto& s : doc["strategies"]) cfg.strategies.push_back(parse_strategy(s.get<std::string>()));
  }
  if (doc.contains("metrics")) {
    if (doc["metrics"].is_string() && doc["metrics"] == "all") {
      cfg.metrics = all_metrics();
    } else {
      get(doc, "metrics", cfg.metrics);
    }
  }
  if (doc.contains("em")) {
    const auto& em = doc["em"];
    reject_unknown(em, {"K", "rel_ll_tolerance", "max_iterations", "variance_floor"}, "em.");
    get(em, "K", cfg.em.K);
    get(em, "rel_ll_tolerance", cfg.em.rel_ll_tolerance);
    get(em, "max_iterations", cfg.em.max_iterations);
    get(em, "variance_floor", cfg.em.variance_floor);
  }
  if (doc.contains("threshold")) {
    const auto& t = doc["threshold"];
    reject_unknown(t, {"kind", "q", "tau"}, "threshold.");
    std::string kind = "quantile";
    get(t, "kind", kind);
    if (kind == "quantile") {
      cfg.threshold.kind = ThresholdPolicy::Kind::quantile;
    } else if (kind == "fixed") {
      cfg.threshold.kind = ThresholdPolicy::Kind::fixed;
    } else {
      throw Error(ErrorKind::invalid_argument, "threshold.kind must be quantile or fixed");
    }
    get(t, "q", cfg.threshold.q);
    get(t, "tau", cfg.threshold.tau);
  }
  if (doc.contains("refinement")) {
    reject_unknown(doc["refinement"], {"alpha"}, "refinement.");
    get(doc["refinement"], "alpha", cfg.refinement.alpha);
  }
  if (doc.contains("mdav")) {
    const auto& m = doc["mdav"];
    reject_unknown(m, {"enabled", "k", "l2_normalize", "range_q_low", "range_q_high"}, "mdav.");
    get(m, "enabled", cfg.mdav.enabled);
    get(m, "k", cfg.mdav.k);
    get(m, "l2_normalize", cfg.mdav.l2_normalize);
    get(m, "range_q_low", cfg.mdav.range_q_low);
    get(m, "range_q_high", cfg.mdav.range_q_high);
  }
  if (doc.contains("histogram")) {
    const auto& h = doc["histogram"];
    reject_unknown(h, {"bins", "alpha", "extension"}, "histogram.");
    get(h, "bins", cfg.histogram.bins);
    get(h, "alpha", cfg.histogram.alpha);
    get(h, "extension", cfg.histogram_extension);
  }
  if (doc.contains("synthetic")) {
    const auto& s = doc["synthetic"];
    reject_unknown(s, {"n_layers", "samples_per_layer", "dim", "sensitive_ratio"}, "synthetic.");
    get(s, "n_layers", cfg.synthetic.n_layers);
    get(s, "samples_per_layer", cfg.synthetic.samples_per_layer);
    get(s, "dim", cfg.synthetic.dim);
    get(s, "sensitive_ratio", cfg.synthetic.sensitive_ratio);
  }
  return cfg;
}

std::string protocol_config_to_json(const ProtocolConfig& cfg) {
  ordered_json doc;
  doc["epsilons"] = cfg.epsilons;
  doc["seeds"] = cfg.seeds;
  doc["mechanism"] = to_string(cfg.mechanism);
  doc["reference"] = to_string(cfg.reference);
  doc["c"] = cfg.c;
  ordered_json strategies = ordered_json::array();
  for (auto s : cfg.strategies) strategies.push_back(to_string(s));
  doc["strategies"] = strategies;
  doc["metrics"] = cfg.metrics;
  doc["em"] = {{"K", cfg.em.K},
               {"rel_ll_tolerance", cfg.em.rel_ll_tolerance},
               {"max_iterations", cfg.em.max_iterations},
               {"variance_floor", cfg.em.variance_floor}};
  doc["alt_k"] = cfg.alt_k;
  if (cfg.threshold.kind == ThresholdPolicy::Kind::quantile) {
    doc["threshold"] = {{"kind", "quantile"}, {"q", cfg.threshold.q}};
  } else {
    doc["threshold"] = {{"kind", "fixed"}, {"tau", cfg.threshold.tau}};
  }
  doc["refinement"] = {{"alpha", cfg.refinement.alpha}};
  doc["mdav"] = {{"enabled", cfg.mdav.enabled},
                 {"k", cfg.mdav.k},
                 {"l2_normalize", cfg.mdav.l2_normalize},
                 {"range_q_low", cfg.mdav.range_q_low},
                 {"range_q_high", cfg.mdav.range_q_high}};
  doc["histogram"] = {
      {"bins", cfg.histogram.bins}, {"alpha", cfg.histogram.alpha}, {"extension", cfg.histogram_extension}};
  doc["synthetic"] = {{"n_layers", cfg.synthetic.n_layers},
                      {"samples_per_layer", cfg.synthetic.samples_per_layer},
                      {"dim", cfg.synthetic.dim},
                      {"sensitive_ratio", cfg.synthetic.sensitive_ratio}};
  doc["threads"] = cfg.threads;
  return doc.dump(2) + "\n";
}

ProtocolConfig load_protocol_config(const std::string& name_or_path) {
  if (name_or_path == "synthetic_default") return ProtocolConfig{};
  return protocol_config_from_json(read_text(name_or_path));
}

std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 9);
  return std::string(buf, end);
}

namespace {

struct CellRow {
  std::string strategy;
  double epsilon;
  std::uint64_t seed;
  std::string metric;
  double value;
};

std::vector<CellRow> cell_rows(const ExperimentReport& report) {
  std::vector<CellRow> rows;
  for (const auto& c : report.cells) {
    for (const auto& [m, v] : c.values) rows.push_back({to_string(c.strategy), c.epsilon, c.seed, m, v});
  }
  std::sort(rows.begin(), rows.end(), [](const CellRow& a, const CellRow& b) {
    return std::tie(a.strategy, a.epsilon, a.seed, a.metric) < std::tie(b.strategy, b.epsilon, b.seed, b.metric);
  });
  return rows;
}

ordered_json theta_json(const MixtureParams& t) {
  ordered_json j;
  j["K"] = t.K;
  j["lambda"] = t.lambda;
  ordered_json mu = ordered_json::array(), s2 = ordered_json::array();
  for (std::size_t k = 0; k < t.K; ++k) {
    mu.push_back(std::vector<double>(t.mu.row(k).begin(), t.mu.row(k).end()));
    s2.push_back(std::vector<double>(t.sigma2.row(k).begin(), t.sigma2.row(k).end()));
  }
  j["mu"] = mu;
  j["sigma2"] = s2;
  j["log_likelihood"] = t.log_likelihood;
  j["iterations"] = t.iterations;
  j["converged"] = t.converged;
  return j;
}

}  // namespace

void write_cells_csv(const ExperimentReport& report, std::ostream& out) {
  out << "strategy,epsilon,seed,metric,value\n";
  for (const auto& r : cell_rows(report)) {
    out << r.strategy << ',' << format_number(r.epsilon) << ',' << r.seed << ',' << r.metric << ','
        << format_number(r.value) << '\n';
  }
}

void write_aggregate_csv(const ExperimentReport& report, std::ostream& out) {
  auto rows = report.aggregates;
  std::sort(rows.begin(), rows.end(), [](const AggregateRow& a, const AggregateRow& b) {
    const std::string sa = to_string(a.strategy), sb = to_string(b.strategy);
    return std::tie(sa, a.epsilon, a.metric) < std::tie(sb, b.epsilon, b.metric);
  });
  out << "strategy,epsilon,metric,mean,std,ci_lo,ci_hi\n";
  for (const auto& r : rows) {
    out << to_string(r.strategy) << ',' << format_number(r.epsilon) << ',' << r.metric << ','
        << format_number(r.stats.mean) << ',' << format_number(r.stats.std) << ',' << format_number(r.stats.ci_lo)
        << ',' << format_number(r.stats.ci_hi) << '\n';
  }
}

void write_bias_figure_csv(const ExperimentReport& report, std::ostream& out) {
  out << "strategy,epsilon,bias_uniform_mean,bias_uniform_std\n";
  for (const auto& r : report.aggregates) {
    if (r.metric != metric::bias_uniform) continue;
    out << to_string(r.strategy) << ',' << format_number(r.epsilon) << ',' << format_number(r.stats.mean) << ','
        << format_number(r.stats.std) << '\n';
  }
}

void write_metric_figure_csv(const ExperimentReport& report, Strategy strategy, std::ostream& out) {
  out << "metric,epsilon,mean,std\n";
  std::vector<const AggregateRow*> rows;
  for (const auto& r : report.aggregates) {
    if (r.strategy == strategy) rows.push_back(&r);
  }
  std::sort(rows.begin(), rows.end(), [](const AggregateRow* a, const AggregateRow* b) {
    return std::tie(a->metric, a->epsilon) < std::tie(b->metric, b->epsilon);
  });
  for (const auto* r : rows) {
    out << r->metric << ',' << format_number(r->epsilon) << ',' << format_number(r->stats.mean) << ','
        << format_number(r->stats.std) << '\n';
  }
}

void write_supplementary_csv(const Supplementary& s, std::ostream& out) {
  out << "analysis,epsilon,quantity,value\n";
  for (const auto& row : s.control) {
    out << "matched_reference," << format_number(row.epsilon) << ",matched_bas," << format_number(row.matched_bas)
        << '\n';
    out << "matched_reference," << format_number(row.epsilon) << ",cross_bas," << format_number(row.cross_bas)
        << '\n';
  }
  if (s.ablation) {
    out << "ablation,all,full," << format_number(s.ablation->full) << '\n';
    out << "ablation,all,without_empa," << format_number(s.ablation->without_empa) << '\n';
  }
  if (s.loso) out << "moment_reg_loso,all,rmse," << format_number(s.loso->rmse) << '\n';
}

std::string report_to_json(const ExperimentReport& report, const Supplementary& s) {
  ordered_json doc;
  doc["config"] = ordered_json::parse(protocol_config_to_json(report.config));
  doc["conventions"] = {
      {"chi_square", "per (layer, dimension) marginal, bins over the original range +/- extension*c/epsilon, "
                     "sum (O-E)^2/(E+alpha), averaged"},
      {"kl", "per marginal D_KL(perturbed || original) on shared smoothed bins, averaged"},
      {"mmd", "per marginal unbiased MMD^2 clamped at 0, kernel exp(-d^2/h^2), median bandwidth, averaged"},
      {"wasserstein1", "per marginal 1-D W1, averaged over dimensions and layers"},
      {"bias_uniform", "||lambda - 1/K|| of the observed fit"},
      {"alt_k", report.config.alt_k}};
  ordered_json cells = ordered_json::array();
  for (const auto& c : report.cells) {
    ordered_json j;
    j["strategy"] = to_string(c.strategy);
    j["epsilon"] = c.epsilon;
    j["seed"] = c.seed;
    if (!c.ok()) {
      j["missing"] = c.error;
    } else {
      ordered_json values;
      for (const auto& [m, v] : c.values) values[m] = v;
      j["values"] = values;
      j["moments"] = c.moments;
      if (c.theta) j["theta"] = theta_json(*c.theta);
      if (c.theta_ref) j["theta_ref"] = theta_json(*c.theta_ref);
    }
    cells.push_back(std::move(j));
  }
  doc["cells"] = std::move(cells);
  ordered_json aggs = ordered_json::array();
  for (const auto& r : report.aggregates) {
    aggs.push_back({{"strategy", to_string(r.strategy)},
                    {"epsilon", r.epsilon},
                    {"metric", r.metric},
                    {"n", r.stats.n},
                    {"mean", r.stats.mean},
                    {"std", r.stats.std},
                    {"ci_lo", r.stats.ci_lo},
                    {"ci_hi", r.stats.ci_hi}});
  }
  doc["aggregates"] = std::move(aggs);
  ordered_json supp;
  if (s.loso) {
    ordered_json preds = ordered_json::array();
    for (const auto& p : s.loso->predictions) {
      preds.push_back({{"seed", p.seed}, {"epsilon", p.epsilon}, {"estimate", p.estimate}});
    }
    supp["moment_reg_loso"] = {{"rmse", s.loso->rmse}, {"predictions", preds}};
  }
  if (s.ablation) supp["ablation"] = {{"full", s.ablation->full}, {"without_empa", s.ablation->without_empa}};
  ordered_json control = ordered_json::array();
  for (const auto& row : s.control) {
    control.push_back({{"epsilon", row.epsilon}, {"matched_bas", row.matched_bas}, {"cross_bas", row.cross_bas}});
  }
  supp["matched_reference"] = control;
  doc["supplementary"] = supp;
  return doc.dump(1) + "\n";
}

void write_report_dir(const ExperimentReport& report, const Supplementary& s, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io_failure, "cannot create " + dir.string() + ": " + ec.message());
  auto emit = [&](const char* name, auto&& writer) {
    std::ostringstream ss;
    writer(ss);
    write_text(dir / name, ss.str());
  };
  emit("cells.csv", [&](std::ostream& o) { write_cells_csv(report, o); });
  emit("aggregate.csv", [&](std::ostream& o) { write_aggregate_csv(report, o); });
  emit("fig_bias_vs_epsilon.csv", [&](std::ostream& o) { write_bias_figure_csv(report, o); });
  emit("fig_metrics_vs_epsilon.csv", [&](std::ostream& o) { write_metric_figure_csv(report, Strategy::bua, o); });
  emit("supplementary.csv", [&](std::ostream& o) { write_supplementary_csv(s, o); });
  write_text(dir / "report.json", report_to_json(report, s));
}

void write_metrics_csv(const std::map<std::string, double>& values, std::ostream& out) {
  out << "metric,value\n";
  for (const auto& [m, v] : values) out << m << ',' << format_number(v) << '\n';
}

std::string assessment_to_json(const EmpaAssessment& assessment, const std::map<std::string, double>& values) {
  ordered_json doc;
  doc["pooled"] = assessment.pooled;
  ordered_json metrics;
  for (const auto& [m, v] : values) metrics[m] = v;
  doc["metrics"] = metrics;
  ordered_json fits = ordered_json::array();
  for (const auto& f : assessment.fits) {
    fits.push_back({{"layer", f.layer_index},
                    {"bas", f.bas},
                    {"bias_ref", f.bias_ref},
                    {"bias_uniform", f.bias_uniform},
                    {"theta", theta_json(f.theta)},
                    {"theta_ref", theta_json(f.theta_ref)}});
  }
  doc["fits"] = std::move(fits);
  return doc.dump(1) + "\n";
}

std::vector<CellResult> read_cells_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "strategy,epsilon,seed,metric,value") {
    throw Error(ErrorKind::malformed_manifest, "cells CSV has an unexpected header");
  }
  auto number = [](const std::string& text, auto& target, std::size_t line_no) {
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), target);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw Error(ErrorKind::malformed_manifest, "bad number '" + text + "' on line " + std::to_string(line_no));
    }
  };
  std::map<std::tuple<std::string, double, std::uint64_t>, CellResult> cells;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> parts;
    std::stringstream ss(line);
    for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
    if (parts.size() != 5) {
      throw Error(ErrorKind::malformed_manifest, "expected 5 fields on line " + std::to_string(line_no));
    }
    double eps = 0.0, value = 0.0;
    std::uint64_t seed = 0;
    number(parts[1], eps, line_no);
    number(parts[2], seed, line_no);
    number(parts[4], value, line_no);
    auto& cell = cells[{parts[0], eps, seed}];
    cell.strategy = parse_strategy(parts[0]);
    cell.epsilon = eps;
    cell.seed = seed;
    cell.values[parts[3]] = value;
  }
  std::vector<CellResult> out;
  for (auto& [key, cell] : cells) out.push_back(std::move(cell));
  return out;
}

std::vector<ProjectionRow> pca_projection(const LayeredFeatureBundle& bundle, const GroupingResult* grouping) {
  if (grouping) check_grouping_matches(bundle, *grouping);
  std::vector<ProjectionRow> rows;
  for (std::size_t k = 0; k < bundle.layers.size(); ++k) {
    const Layer& layer = bundle.layers[k];
    const auto n = static_cast<Eigen::Index>(layer.size());
    const auto d = static_cast<Eigen::Index>(layer.dim());
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index a = 0; a < d; ++a) X(i, a) = layer.vectors(i, a);
    const Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(d, 2);
    if (n >= 2) {
      const Eigen::MatrixXd cov = X.transpose() * X / static_cast<double>(n - 1);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
      for (Eigen::Index c = 0; c < std::min<Eigen::Index>(2, d); ++c) {
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        basis.col(c) = v;
      }
    }
    const Eigen::MatrixXd proj = X * basis;
    for (Eigen::Index i = 0; i < n; ++i) {
      ProjectionRow row;
      row.layer_index = layer.index;
      row.id = static_cast<std::size_t>(i);
      if (grouping) {
        row.group = grouping->partitions[k].is_sensitive(row.id) ? "sensitive" : "nonsensitive";
      } else if (!layer.flags.empty()) {
        row.group = layer.flags[row.id] ? "sensitive" : "nonsensitive";
      } else {
        row.group = "unlabeled";
      }
      row.x = proj(i, 0);
      row.y = proj(i, 1);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_projection_csv(const std::vector<ProjectionRow>& rows, std::ostream& out) {
  out << "layer,id,group,pc1,pc2\n";
  for (const auto& r : rows) {
    out << r.layer_index << ',' << r.id << ',' << r.group << ',' << format_number(r.x) << ',' << format_number(r.y)
        << '\n';
  }
}

}  // namespace bodhi
