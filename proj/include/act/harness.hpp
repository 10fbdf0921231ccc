#pragma once

#include "act/act.hpp"
#include "act/datagen.hpp"
#include "act/experiment.hpp"
#include "act/metrics.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace act {

/// Invalid configuration, detected before any training starts.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable, corrupt or incompatible report file.
class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kReportSchemaVersion = 1;

struct RunConfig {
  ExperimentMode mode = ExperimentMode::act;
  DatagenConfig data;                           // used when `manifest` is empty
  std::optional<std::filesystem::path> manifest;
  ActConfig act;
  int runs = 5;
  std::uint64_t master_seed = 1;  // run i uses seed master_seed + i
  std::filesystem::path output_dir = "out";
  int jobs = 1;  // runs trained concurrently; 0 = hardware concurrency
};

/// Defaults of the shipped configs/default.jsonc.
RunConfig default_run_config();

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys and bad values throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies `key.path=value` to a JSON document. The value is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads a JSON config (comments allowed) and applies overrides in order.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});
RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides = {});

void validate(const RunConfig& config);

/// Canonical JSON of the training-relevant fields (output_dir and jobs excluded).
std::string config_echo(const RunConfig& config);

std::uint64_t run_seed(const RunConfig& config, int run_index);

DatasetSplits load_data(const RunConfig& config);

// --- reports ------------------------------------------------------------------

void save_report(const std::filesystem::path& path, const RunReport& report);
RunReport load_report(const std::filesystem::path& path);
std::string serialize_report(const RunReport& report);
RunReport parse_report(const std::string& text, const std::string& name = "<report>");

std::string report_file_name(std::uint64_t seed);

std::string summary_csv(const Summary& summary);
/// "74.6±0.3" with DSC scaled to percent, HD in pixels.
std::string format_mean_std(const SummaryRow& row);

// --- experiments --------------------------------------------------------------

struct ExperimentResult {
  std::vector<RunReport> reports;
  Summary summary;
};

/// Trains config.runs seeded runs of config.mode on one dataset and writes
///   config.json, report_<seed>.jsonl, params_<seed>_{theta,phi}.bin, summary.csv
/// into config.output_dir.
ExperimentResult run_experiment(const RunConfig& config);

enum class SweepAxis { n_lt, pair_fraction };

std::string_view to_string(SweepAxis axis);
SweepAxis parse_axis(std::string_view name);  // throws ConfigError

struct SweepRow {
  std::string value;
  Summary summary;
};

/// Runs one experiment per value in output_dir/<axis>_<value>/ and writes
/// output_dir/sweep_<axis>.csv (axis, value, mode, dsc_mean, dsc_std, hd_mean, hd_std
/// for the whole foreground).
std::vector<SweepRow> sweep(const RunConfig& base, SweepAxis axis,
                            const std::vector<std::string>& values);

/// Applies one sweep value to a config; throws ConfigError naming an invalid value.
RunConfig sweep_point(const RunConfig& base, SweepAxis axis, const std::string& value);

// --- plots --------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

std::string render_svg(const LineChart& chart);

/// Writes SVG charts for an experiment directory (lambda.svg, consensus.svg)
/// and/or a sweep directory (dsc_vs_n_lt.svg, dsc_vs_pair_fraction.svg).
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& dir);

}  // namespace act
