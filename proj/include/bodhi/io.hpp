#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bodhi/core.hpp"
#include "bodhi/experiment.hpp"

namespace bodhi {

inline constexpr std::size_t kInlinePayloadLimit = 8u << 20;

/// LFB manifest is JSON; the float32 little-endian payload is inlined as base64 when it
/// is smaller than `inline_limit` bytes, otherwise written to "<path>.bin".
void write_bundle(const LayeredFeatureBundle& bundle, const std::filesystem::path& path,
                  std::size_t inline_limit = kInlinePayloadLimit);
LayeredFeatureBundle read_bundle(const std::filesystem::path& path);

std::string encode_base64(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> decode_base64(const std::string& text);

/// Partition document: per layer the threshold, sensitive and non-sensitive ids and scores.
std::string partitions_to_json(const GroupingResult& grouping);
GroupingResult partitions_from_json(const std::string& text);
void write_partitions(const GroupingResult& grouping, const std::filesystem::path& path);
GroupingResult read_partitions(const std::filesystem::path& path);

/// Unknown keys are rejected; absent keys keep their defaults.
ProtocolConfig protocol_config_from_json(const std::string& text);
std::string protocol_config_to_json(const ProtocolConfig& config);
/// "synthetic_default" names the built-in configuration; anything else is a file path.
ProtocolConfig load_protocol_config(const std::string& name_or_path);

/// 9 significant digits, '.' separator, locale independent.
std::string format_number(double value);

struct Supplementary {
  std::optional<LosoResult> loso;
  std::optional<AblationResult> ablation;
  std::vector<ControlRow> control;
};

void write_cells_csv(const ExperimentReport& report, std::ostream& out);
void write_aggregate_csv(const ExperimentReport& report, std::ostream& out);
/// Mean of bias_uniform per strategy and epsilon.
void write_bias_figure_csv(const ExperimentReport& report, std::ostream& out);
/// Mean of every metric per epsilon for one strategy.
void write_metric_figure_csv(const ExperimentReport& report, Strategy strategy, std::ostream& out);
void write_supplementary_csv(const Supplementary& supplementary, std::ostream& out);
std::string report_to_json(const ExperimentReport& report, const Supplementary& supplementary);

/// Writes cells.csv, aggregate.csv, fig_bias_vs_epsilon.csv, fig_metrics_vs_epsilon.csv,
/// supplementary.csv and report.json into `dir`.
void write_report_dir(const ExperimentReport& report, const Supplementary& supplementary,
                      const std::filesystem::path& dir);

/// metric,value rows in name order.
void write_metrics_csv(const std::map<std::string, double>& values, std::ostream& out);
std::string assessment_to_json(const EmpaAssessment& assessment, const std::map<std::string, double>& values);

/// Reads the cells CSV back (values only).
std::vector<CellResult> read_cells_csv(std::istream& in);

struct ProjectionRow {
  int layer_index = 1;
  std::size_t id = 0;
  std::string group;
  double x = 0.0;
  double y = 0.0;
};

/// Per-layer 2-D PCA projection labeled by the grouping (or flags when no grouping).
std::vector<ProjectionRow> pca_projection(const LayeredFeatureBundle& bundle, const GroupingResult* grouping);
void write_projection_csv(const std::vector<ProjectionRow>& rows, std::ostream& out);

}  // namespace bodhi
