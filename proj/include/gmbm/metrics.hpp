// SPDX-License-Identifier: Apache-2.0
//
// Bias-amplification and group-accuracy metrics. Amplification metrics are
// pure functions of co-occurrence tables (GroupCounts); accuracy metrics take
// per-sample predictions.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmbm/group_counts.hpp"

namespace gmbm::metrics {

using synth::GroupCounts;

/// Signed per-cell shifts with an inclusion mask; excluded cells hold 0.
struct DeltaTable {
  std::size_t num_classes = 0;
  std::size_t num_assignments = 0;
  std::vector<double> delta;  // row-major [label x assignment]
  std::vector<bool> included;

  double at(std::size_t g, std::size_t m) const { return delta[g * num_assignments + m]; }
  bool is_included(std::size_t g, std::size_t m) const { return included[g * num_assignments + m]; }
};

struct Amplification {
  double mean = 0.0;
  /// Population variance of the included cells; 0 when none are included.
  double variance = 0.0;
  std::size_t included_cells = 0;
  bool empty() const { return included_cells == 0; }
};

/// Delta gated by bias_train(m, g) > 1/|G|.
DeltaTable base_delta_table(const GroupCounts& train, const GroupCounts& test_pred);
/// Delta gated by co_occur_train(g, m) > tau.
DeltaTable min_support_delta_table(const GroupCounts& train, const GroupCounts& test_pred, double tau);
/// (1/|M|) * sum |delta| over all cells, plus variance over included cells.
Amplification summarize(const DeltaTable& table);

Amplification maba_base(const GroupCounts& train, const GroupCounts& test_pred);
Amplification maba_min_support(const GroupCounts& train, const GroupCounts& test_pred, double tau);
/// Frequency-weighted MABA mean. No variance is defined for this variant.
double maba_weighted(const GroupCounts& train, const GroupCounts& test_pred);

enum class SbaVariance { WeightedGaps, UnweightedGaps };

struct SbaOptions {
  double epsilon = 1e-6;
  SbaVariance variance = SbaVariance::WeightedGaps;
};

struct SbaResult {
  double mean = 0.0;
  double variance = 0.0;
  std::size_t included_assignments = 0;
  /// Assignments with no ground-truth test samples; left out of |M|.
  std::vector<std::string> excluded_assignments;
};

SbaResult sba(const GroupCounts& test_pred, const GroupCounts& test_actual, const SbaOptions& options = {});

// --- accuracy ---------------------------------------------------------------

/// Flat index of the full cell (y, b_1..b_k).
std::size_t cell_index(std::size_t y, std::span<const std::size_t> b, std::span<const std::size_t> cardinalities);

/// Mean of per-cell accuracies over cells with at least one sample.
double unbiased_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                         std::span<const std::size_t> groups);

/// Accuracy over samples with b_j != aligned(y); attribute = nullopt
/// restricts to samples conflicting on every attribute.
double bias_conflicting_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                                 std::span<const std::size_t> bias_matrix,
                                 std::span<const std::size_t> cardinalities,
                                 std::optional<std::size_t> attribute);

// --- report -----------------------------------------------------------------

struct MetricParams {
  /// Min-support threshold as a fraction of the training-set size.
  double tau_fraction = 0.01;
  double epsilon = 1e-6;
  SbaVariance sba_variance = SbaVariance::WeightedGaps;

  friend bool operator==(const MetricParams&, const MetricParams&) = default;
};

struct GroupAccuracy {
  std::size_t label = 0;
  std::vector<std::size_t> biases;
  std::size_t samples = 0;
  double accuracy = 0.0;
};

struct MetricsReport {
  std::size_t samples = 0;
  double accuracy = 0.0;
  double unbiased_accuracy = 0.0;
  double worst_group_accuracy = 0.0;
  std::vector<std::optional<double>> bias_conflicting;  // per attribute
  std::optional<double> all_conflicting;
  Amplification maba_base;
  Amplification maba_min_support;
  double tau = 0.0;
  double maba_weighted = 0.0;
  SbaResult sba;
  double epsilon = 0.0;
  std::string sba_variance;
  std::vector<GroupAccuracy> groups;
};

/// All metrics for one set of test predictions. `train_counts` holds the
/// ground-truth training co-occurrences; its enumeration is reused for the
/// test tables.
MetricsReport evaluate(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                       std::span<const std::size_t> bias_matrix, const GroupCounts& train_counts,
                       const MetricParams& params = {});

std::string report_to_json(const MetricsReport& report);
/// Returns an empty list when the JSON matches the report schema.
std::vector<std::string> validate_report_json(const std::string& json_text);
std::string report_to_text(const MetricsReport& report);

}  // namespace gmbm::metrics
