// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration as flat "key=value" text with gen., train. and
// metrics. prefixes. Doubles are written with 17 significant digits so that
// parse(serialize(c)) == c.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "gmbm/group_counts.hpp"
#include "gmbm/metrics.hpp"
#include "gmbm/synth.hpp"
#include "gmbm/train.hpp"

namespace gmbm::cli {

enum class Method { Erm, Gmbm };

std::string to_string(Method method);
Method parse_method(const std::string& text);

struct ExperimentConfig {
  Method method = Method::Gmbm;
  /// The only source of randomness; copied into generation and training.
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  synth::GenConfig gen;
  train::TrainConfig train;
  metrics::MetricParams metrics;
  synth::EnumerationMode counts_mode = synth::EnumerationMode::AllSubsets;

  synth::GenConfig resolved_gen() const;
  train::TrainConfig resolved_train() const;
  /// Throws ConfigError.
  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

std::string serialize_config(const ExperimentConfig& config);
/// Keys absent from `text` keep their defaults. Unknown or repeated keys and
/// malformed values throw ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

}  // namespace gmbm::cli
