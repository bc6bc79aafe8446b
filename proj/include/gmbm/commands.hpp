// SPDX-License-Identifier: Apache-2.0
//
// The experiment commands behind the gmbm executable. Each command reads and
// writes files only under the paths it is given and reports progress on `log`.
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gmbm/config.hpp"
#include "gmbm/metrics.hpp"

namespace gmbm::cli {

namespace fs = std::filesystem;

// File names inside data and run directories.
inline constexpr const char* kTrainData = "train.gmbmds";
inline constexpr const char* kTestData = "test.gmbmds";
inline constexpr const char* kTrainCounts = "train_counts.tsv";
inline constexpr const char* kTestCounts = "test_counts.tsv";
inline constexpr const char* kConfigFile = "config.txt";
inline constexpr const char* kCheckpoint = "model.ckpt";
inline constexpr const char* kHistory = "history.tsv";
inline constexpr const char* kManifest = "manifest.txt";
inline constexpr const char* kPredictions = "predictions.csv";
inline constexpr const char* kMetricsJson = "metrics.json";
inline constexpr const char* kMetricsText = "metrics.txt";

struct GenerateSummary {
  std::vector<double> alignment;             // per attribute, train split
  std::vector<double> conditional_entropy;   // H(Y|B_j) in bits; NaN when undefined
  std::vector<double> mutual_information;    // I(Y;B_j) in bits; NaN when undefined
};

/// Writes both splits, their ground-truth counts files and the config.
GenerateSummary cmd_generate(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log);

/// Trains per config.method on data_dir/train split; writes the inference
/// checkpoint, history, manifest and config into out_dir.
void cmd_train(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& out_dir, std::ostream& log);

/// Writes "sample_id,true_label,pred_label,bias_0,..." for every sample.
void cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out_csv, std::ostream& log);

struct Predictions {
  std::vector<std::size_t> truth;
  std::vector<std::size_t> preds;
  std::vector<std::size_t> bias_matrix;  // row-major [n x k]
  std::size_t num_biases = 0;
};

std::string format_predictions(const Predictions& p);
Predictions parse_predictions(const std::string& csv);

/// Computes every metric; writes metrics.json and metrics.txt into out_dir.
metrics::MetricsReport cmd_metrics(const fs::path& preds_csv, const fs::path& train_counts,
                                   const metrics::MetricParams& params, const fs::path& out_dir, std::ostream& log);

/// Method x q comparison over run directories. Returns the text table and
/// writes report.json beside it when out_file is non-empty.
std::string cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_file, std::ostream& log);

/// generate -> train -> eval -> metrics inside out_dir (data in out_dir/data).
metrics::MetricsReport cmd_run(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log);

}  // namespace gmbm::cli
