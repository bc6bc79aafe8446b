// SPDX-License-Identifier: Apache-2.0
//
// gmbm: generate | train | eval | metrics | report | run.
// Exit status: 0 success, 1 usage or configuration error, 2 runtime error.
#include <CLI11.hpp>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gmbm/commands.hpp"
#include "gmbm/errors.hpp"

namespace {

using namespace gmbm;
using namespace gmbm::cli;

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct CommonOptions {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
};

ExperimentConfig resolve_config(const CommonOptions& opts) {
  ExperimentConfig config = opts.config_path.empty() ? ExperimentConfig{} : load_config(opts.config_path);
  if (opts.seed) config.seed = *opts.seed;
  if (opts.method) config.method = parse_method(*opts.method);
  if (!opts.out.empty()) config.out_dir = opts.out;
  config.validate();
  return config;
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool with_method) {
  cmd->add_option("--config", opts.config_path, "Experiment config (key=value)");
  cmd->add_option("--out", opts.out, "Output directory");
  cmd->add_option("--seed", opts.seed, "Seed overriding the config");
  if (with_method) cmd->add_option("--method", opts.method, "erm or gmbm, overriding the config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage multi-bias mitigation experiments on a procedural benchmark"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("--quiet,-q", quiet, "Suppress progress output");

  CommonOptions gen_opts;
  auto* gen = app.add_subcommand("generate", "Write train/test datasets and ground-truth counts");
  add_common(gen, gen_opts, false);

  CommonOptions train_opts;
  std::string train_data;
  auto* train = app.add_subcommand("train", "Train a model on a generated dataset");
  add_common(train, train_opts, true);
  train->add_option("--data", train_data, "Directory written by 'generate'")->required();

  std::string eval_ckpt;
  std::string eval_data;
  std::string eval_out = kPredictions;
  auto* eval = app.add_subcommand("eval", "Write a predictions CSV for a dataset");
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--data", eval_data, "Dataset file")->required();
  eval->add_option("--out", eval_out, "Predictions CSV path");

  std::string metrics_preds;
  std::string metrics_counts;
  std::string metrics_config;
  std::string metrics_out = ".";
  std::optional<double> tau_fraction;
  std::optional<double> epsilon;
  std::optional<std::string> sba_variance;
  auto* metrics_cmd = app.add_subcommand("metrics", "Compute accuracy, MABA and SBA from predictions");
  metrics_cmd->add_option("--preds", metrics_preds, "Predictions CSV")->required();
  metrics_cmd->add_option("--train-counts", metrics_counts, "Ground-truth training counts file")->required();
  metrics_cmd->add_option("--config", metrics_config, "Config supplying metrics.* parameters");
  metrics_cmd->add_option("--out", metrics_out, "Output directory for metrics.json and metrics.txt");
  metrics_cmd->add_option("--tau-fraction", tau_fraction, "Min-support threshold as a fraction of training size");
  metrics_cmd->add_option("--epsilon", epsilon, "SBA weight offset");
  metrics_cmd->add_option("--sba-variance", sba_variance, "weighted or unweighted");

  std::vector<std::string> report_runs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Compare runs in a method x q table");
  report->add_option("runs", report_runs, "Run directories")->required();
  report->add_option("--out", report_out, "Text table path; a .json sidecar is written beside it");

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "generate, train, eval and metrics into one directory");
  add_common(run, run_opts, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  std::ofstream null_stream;
  std::ostream& log = quiet ? static_cast<std::ostream&>(null_stream) : std::cout;

  try {
    if (*gen) {
      const auto config = resolve_config(gen_opts);
      cmd_generate(config, config.out_dir, log);
    } else if (*train) {
      const auto config = resolve_config(train_opts);
      cmd_train(config, train_data, config.out_dir, log);
    } else if (*eval) {
      cmd_eval(eval_ckpt, eval_data, eval_out, log);
    } else if (*metrics_cmd) {
      auto params = metrics_config.empty() ? metrics::MetricParams{} : load_config(metrics_config).metrics;
      if (tau_fraction) params.tau_fraction = *tau_fraction;
      if (epsilon) params.epsilon = *epsilon;
      if (sba_variance) {
        if (*sba_variance == "weighted") {
          params.sba_variance = metrics::SbaVariance::WeightedGaps;
        } else if (*sba_variance == "unweighted") {
          params.sba_variance = metrics::SbaVariance::UnweightedGaps;
        } else {
          throw ConfigError("--sba-variance must be weighted or unweighted");
        }
      }
      if (!(params.epsilon > 0.0) || !(params.tau_fraction >= 0.0)) {
        throw ConfigError("--epsilon must be > 0 and --tau-fraction >= 0");
      }
      cmd_metrics(metrics_preds, metrics_counts, params, metrics_out, log);
    } else if (*report) {
      std::vector<fs::path> dirs(report_runs.begin(), report_runs.end());
      cmd_report(dirs, report_out, log);
    } else if (*run) {
      const auto config = resolve_config(run_opts);
      cmd_run(config, config.out_dir, log);
    }
  } catch (const ConfigError& e) {
    std::cerr << "gmbm: configuration error: " << e.what() << '\n';
    return kUsageError;
  } catch (const CapacityError& e) {
    std::cerr << "gmbm: configuration error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "gmbm: error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
