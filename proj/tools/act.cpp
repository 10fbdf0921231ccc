#include "act/harness.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

struct Common {
  std::string config_path;
  std::string mode;
  std::string out;
  std::uint64_t seed = 0;
  int jobs = -1;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config_path, "JSON config file (comments allowed)");
  if (config_required) opt->required();
  cmd->add_option("--mode", c.mode, "source_only, target_only_ssl, uda_branch, act, act_no_emd or joint");
  cmd->add_option("--seed", c.seed, "master seed; run i uses seed + i");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--jobs", c.jobs, "concurrent runs (0 = all cores)");
  cmd->add_option("--set", c.overrides, "override a config key, e.g. act.eta=0.1")->take_all();
}

act::RunConfig resolve(const Common& c, const CLI::App* cmd) {
  std::vector<std::string> overrides = c.overrides;
  if (!c.mode.empty()) overrides.push_back("mode=\"" + c.mode + "\"");
  if (cmd->count("--seed")) overrides.push_back("master_seed=" + std::to_string(c.seed));
  if (c.jobs >= 0) overrides.push_back("jobs=" + std::to_string(c.jobs));
  act::RunConfig config = c.config_path.empty()
                              ? act::parse_run_config(act::to_json(act::default_run_config()).dump(), overrides)
                              : act::load_run_config(c.config_path, overrides);
  if (!c.out.empty()) config.output_dir = c.out;
  return config;
}

void print_summary(const act::Summary& s) {
  for (const auto& row : s.rows)
    std::cout << s.mode << "  " << row.metric << "  " << row.class_label << "  " << act::format_mean_std(row)
              << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asymmetric co-training experiments on synthetic cross-domain segmentation"};
  app.require_subcommand(1);

  Common run_opts;
  auto* run = app.add_subcommand("run", "train seeded runs of one mode and write reports");
  add_common(run, run_opts, true);

  Common sweep_opts;
  std::string axis;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "run one experiment per axis value");
  add_common(sweep, sweep_opts, false);
  sweep->add_option("--axis", axis, "n_lt or pair_fraction")->required();
  sweep->add_option("--values", values, "comma-separated values")->required()->delimiter(',');

  std::string plot_dir;
  auto* plot = app.add_subcommand("plot", "write SVG charts for a run or sweep directory");
  plot->add_option("--in", plot_dir, "run or sweep output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) {
      const auto config = resolve(run_opts, run);
      const auto result = act::run_experiment(config);
      print_summary(result.summary);
      std::cout << "wrote " << config.runs << " report(s) to " << config.output_dir.string() << "\n";
    } else if (*sweep) {
      const auto config = resolve(sweep_opts, sweep);
      const auto rows = act::sweep(config, act::parse_axis(axis), values);
      for (const auto& row : rows)
        std::cout << axis << "=" << row.value << "  dsc " << act::format_mean_std(row.summary.find("dsc", "whole"))
                  << "  hd " << act::format_mean_std(row.summary.find("hd", "whole")) << "\n";
    } else if (*plot) {
      for (const auto& path : act::emit_plots(plot_dir)) std::cout << "wrote " << path.string() << "\n";
    }
  } catch (const act::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
