// SPDX-License-Identifier: Apache-2.0
#include "gmbm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <map>
#include <sstream>

#include "gmbm/errors.hpp"

namespace gmbm::metrics {

namespace {

void require_same_enumeration(const GroupCounts& a, const GroupCounts& b, const char* what) {
  if (!a.same_enumeration(b)) {
    throw SchemaError(std::string(what) + ": tables enumerate different labels or attribute assignments");
  }
}

double population_variance(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(values.size());
}

double proportion(std::uint64_t count, std::uint64_t total) {
  return static_cast<double>(count) / static_cast<double>(total);
}

// Shared Delta construction; `gate(g, m, bias_train)` decides inclusion.
template <typename Gate>
DeltaTable gated_delta_table(const GroupCounts& train, const GroupCounts& test_pred, Gate&& gate) {
  require_same_enumeration(train, test_pred, "MABA");
  DeltaTable table;
  table.num_classes = train.num_classes();
  table.num_assignments = train.num_assignments();
  table.delta.assign(table.num_classes * table.num_assignments, 0.0);
  table.included.assign(table.delta.size(), false);
  for (std::size_t m = 0; m < table.num_assignments; ++m) {
    const auto train_mass = train.assignment_total(m);
    if (train_mass == 0) continue;
    const auto test_mass = test_pred.assignment_total(m);
    for (std::size_t g = 0; g < table.num_classes; ++g) {
      const double bias_train = proportion(train.count(g, m), train_mass);
      if (!gate(g, m, bias_train)) continue;
      if (test_mass == 0) {
        throw InsufficientSupportError("assignment " + train.assignment(m).to_string() +
                                       " has no test predictions");
      }
      const std::size_t cell = g * table.num_assignments + m;
      table.delta[cell] = proportion(test_pred.count(g, m), test_mass) - bias_train;
      table.included[cell] = true;
    }
  }
  return table;
}

}  // namespace

DeltaTable base_delta_table(const GroupCounts& train, const GroupCounts& test_pred) {
  const double prior = 1.0 / static_cast<double>(train.num_classes());
  return gated_delta_table(train, test_pred,
                           [prior](std::size_t, std::size_t, double bias_train) { return bias_train > prior; });
}

DeltaTable min_support_delta_table(const GroupCounts& train, const GroupCounts& test_pred, double tau) {
  if (!(tau >= 0.0)) throw ContractError("min-support threshold must be non-negative");
  return gated_delta_table(train, test_pred, [&train, tau](std::size_t g, std::size_t m, double) {
    return static_cast<double>(train.count(g, m)) > tau;
  });
}

Amplification summarize(const DeltaTable& table) {
  Amplification out;
  double total = 0.0;
  std::vector<double> kept;
  for (std::size_t cell = 0; cell < table.delta.size(); ++cell) {
    total += std::abs(table.delta[cell]);
    if (table.included[cell]) kept.push_back(table.delta[cell]);
  }
  out.mean = total / static_cast<double>(table.num_assignments);
  out.variance = population_variance(kept);
  out.included_cells = kept.size();
  return out;
}

Amplification maba_base(const GroupCounts& train, const GroupCounts& test_pred) {
  return summarize(base_delta_table(train, test_pred));
}

Amplification maba_min_support(const GroupCounts& train, const GroupCounts& test_pred, double tau) {
  return summarize(min_support_delta_table(train, test_pred, tau));
}

double maba_weighted(const GroupCounts& train, const GroupCounts& test_pred) {
  require_same_enumeration(train, test_pred, "weighted MABA");
  const auto all_cells = train.total_cells();
  if (all_cells == 0) throw ContractError("weighted MABA needs a non-empty training table");
  double total = 0.0;
  for (std::size_t m = 0; m < train.num_assignments(); ++m) {
    const auto train_mass = train.assignment_total(m);
    if (train_mass == 0) continue;
    const auto test_mass = test_pred.assignment_total(m);
    for (std::size_t g = 0; g < train.num_classes(); ++g) {
      const auto c = train.count(g, m);
      if (c == 0) continue;
      if (test_mass == 0) {
        throw InsufficientSupportError("assignment " + train.assignment(m).to_string() +
                                       " has no test predictions");
      }
      const double weight = proportion(c, all_cells);
      total += std::abs(weight * (proportion(test_pred.count(g, m), test_mass) - proportion(c, train_mass)));
    }
  }
  return total / static_cast<double>(train.num_assignments());
}

SbaResult sba(const GroupCounts& test_pred, const GroupCounts& test_actual, const SbaOptions& options) {
  require_same_enumeration(test_pred, test_actual, "SBA");
  if (!(options.epsilon > 0.0)) throw ContractError("SBA epsilon must be positive");
  SbaResult out;
  std::vector<double> gaps;
  double total = 0.0;
  for (std::size_t m = 0; m < test_actual.num_assignments(); ++m) {
    const auto actual_mass = test_actual.assignment_total(m);
    if (actual_mass == 0) {
      out.excluded_assignments.push_back(test_actual.assignment(m).to_string());
      continue;
    }
    const auto pred_mass = test_pred.assignment_total(m);
    if (pred_mass == 0) {
      throw InsufficientSupportError("assignment " + test_actual.assignment(m).to_string() +
                                     " has ground truth but no predictions");
    }
    const double omega = 1.0 / (std::sqrt(static_cast<double>(actual_mass)) + options.epsilon);
    for (std::size_t g = 0; g < test_actual.num_classes(); ++g) {
      const double gap = std::abs(proportion(test_pred.count(g, m), pred_mass) -
                                  proportion(test_actual.count(g, m), actual_mass));
      total += omega * gap;
      gaps.push_back(options.variance == SbaVariance::WeightedGaps ? omega * gap : gap);
    }
    ++out.included_assignments;
  }
  if (out.included_assignments == 0) throw InsufficientSupportError("SBA: no assignment has test samples");
  out.mean = total / static_cast<double>(test_actual.num_classes() * out.included_assignments);
  out.variance = population_variance(gaps);
  return out;
}

// --- accuracy ---------------------------------------------------------------

std::size_t cell_index(std::size_t y, std::span<const std::size_t> b, std::span<const std::size_t> cardinalities) {
  std::size_t index = y;
  for (std::size_t j = 0; j < b.size(); ++j) index = index * cardinalities[j] + b[j];
  return index;
}

double unbiased_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                         std::span<const std::size_t> groups) {
  if (preds.empty()) throw ContractError("unbiased accuracy of an empty prediction set");
  if (preds.size() != truth.size() || preds.size() != groups.size()) {
    throw DimensionError("predictions, labels and groups differ in length");
  }
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> cells;  // group -> (correct, total)
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& [correct, total] = cells[groups[i]];
    correct += preds[i] == truth[i] ? 1 : 0;
    ++total;
  }
  double sum = 0.0;
  for (const auto& [group, tally] : cells) sum += proportion(tally.first, tally.second);
  return sum / static_cast<double>(cells.size());
}

double bias_conflicting_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                                 std::span<const std::size_t> bias_matrix,
                                 std::span<const std::size_t> cardinalities,
                                 std::optional<std::size_t> attribute) {
  const std::size_t k = cardinalities.size();
  if (preds.size() != truth.size() || bias_matrix.size() != truth.size() * k) {
    throw DimensionError("predictions, labels and bias values differ in length");
  }
  if (attribute && *attribute >= k) throw IndexError("attribute index out of range");
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto b = bias_matrix.subspan(i * k, k);
    auto conflicting = [&](std::size_t j) { return b[j] != synth::aligned_value(truth[i], cardinalities[j]); };
    bool keep = true;
    if (attribute) {
      keep = conflicting(*attribute);
    } else {
      for (std::size_t j = 0; j < k && keep; ++j) keep = conflicting(j);
    }
    if (!keep) continue;
    ++total;
    if (preds[i] == truth[i]) ++correct;
  }
  if (total == 0) throw InsufficientSupportError("no bias-conflicting samples");
  return proportion(correct, total);
}

// --- report -----------------------------------------------------------------

MetricsReport evaluate(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                       std::span<const std::size_t> bias_matrix, const GroupCounts& train_counts,
                       const MetricParams& params) {
  const auto& cards = train_counts.cardinalities();
  const std::size_t k = cards.size();
  if (preds.size() != truth.size() || bias_matrix.size() != truth.size() * k) {
    throw DimensionError("predictions, labels and bias values differ in length");
  }
  if (truth.empty()) throw ContractError("evaluate: no samples");

  MetricsReport report;
  report.samples = truth.size();
  std::vector<std::size_t> groups(truth.size());
  std::map<std::size_t, GroupAccuracy> per_group;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto b = bias_matrix.subspan(i * k, k);
    groups[i] = cell_index(truth[i], b, cards);
    auto& entry = per_group[groups[i]];
    if (entry.samples == 0) {
      entry.label = truth[i];
      entry.biases.assign(b.begin(), b.end());
    }
    ++entry.samples;
    if (preds[i] == truth[i]) {
      entry.accuracy += 1.0;
      ++correct;
    }
  }
  report.accuracy = proportion(correct, truth.size());
  report.unbiased_accuracy = unbiased_accuracy(preds, truth, groups);
  report.worst_group_accuracy = 1.0;
  for (auto& [id, entry] : per_group) {
    entry.accuracy /= static_cast<double>(entry.samples);
    report.worst_group_accuracy = std::min(report.worst_group_accuracy, entry.accuracy);
    report.groups.push_back(entry);
  }

  auto conflicting_or_none = [&](std::optional<std::size_t> attribute) -> std::optional<double> {
    try {
      return bias_conflicting_accuracy(preds, truth, bias_matrix, cards, attribute);
    } catch (const InsufficientSupportError&) {
      return std::nullopt;
    }
  };
  for (std::size_t j = 0; j < k; ++j) report.bias_conflicting.push_back(conflicting_or_none(j));
  report.all_conflicting = conflicting_or_none(std::nullopt);

  const auto test_pred = synth::group_table(train_counts.num_classes(), cards, preds, bias_matrix,
                                            synth::LabelSource::Predicted, train_counts.mode());
  const auto test_actual = synth::group_table(train_counts.num_classes(), cards, truth, bias_matrix,
                                              synth::LabelSource::GroundTruth, train_counts.mode());
  report.tau = params.tau_fraction * static_cast<double>(train_counts.total_samples());
  report.maba_base = maba_base(train_counts, test_pred);
  report.maba_min_support = maba_min_support(train_counts, test_pred, report.tau);
  report.maba_weighted = maba_weighted(train_counts, test_pred);
  report.epsilon = params.epsilon;
  report.sba = sba(test_pred, test_actual, {params.epsilon, params.sba_variance});
  report.sba_variance = params.sba_variance == SbaVariance::WeightedGaps ? "weighted" : "unweighted";
  return report;
}

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(); }

ordered_json amplification_json(const Amplification& a) {
  return {{"mean", a.mean}, {"variance", a.variance}, {"included_cells", a.included_cells},
          {"empty", a.empty()}};
}

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  ordered_json j;
  j["schema"] = "gmbm-metrics/1";
  j["samples"] = r.samples;
  j["accuracy"] = r.accuracy;
  j["unbiased_accuracy"] = r.unbiased_accuracy;
  j["worst_group_accuracy"] = r.worst_group_accuracy;
  ordered_json conflicting = ordered_json::array();
  for (const auto& v : r.bias_conflicting) conflicting.push_back(optional_number(v));
  j["bias_conflicting_accuracy"] = conflicting;
  j["all_conflicting_accuracy"] = optional_number(r.all_conflicting);
  j["maba_base"] = amplification_json(r.maba_base);
  auto min_support = amplification_json(r.maba_min_support);
  min_support["tau"] = r.tau;
  j["maba_min_support"] = min_support;
  j["maba_weighted"] = {{"mean", r.maba_weighted}};
  ordered_json excluded = ordered_json::array();
  for (const auto& e : r.sba.excluded_assignments) excluded.push_back(e);
  j["sba"] = {{"mean", r.sba.mean},
              {"variance", r.sba.variance},
              {"variance_over", r.sba_variance},
              {"epsilon", r.epsilon},
              {"included_assignments", r.sba.included_assignments},
              {"excluded_assignments", excluded}};
  ordered_json groups = ordered_json::array();
  for (const auto& g : r.groups) {
    groups.push_back({{"label", g.label}, {"biases", g.biases}, {"samples", g.samples}, {"accuracy", g.accuracy}});
  }
  j["groups"] = groups;
  return j.dump(2) + "\n";
}

std::vector<std::string> validate_report_json(const std::string& json_text) {
  std::vector<std::string> problems;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    return {std::string("not valid JSON: ") + e.what()};
  }
  auto need = [&](const nlohmann::json& obj, const std::string& key, const std::string& where) -> bool {
    if (!obj.is_object() || !obj.contains(key)) {
      problems.push_back(where + key + " is missing");
      return false;
    }
    return true;
  };
  auto unit_interval = [&](const nlohmann::json& v, const std::string& name) {
    if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0) {
      problems.push_back(name + " must be a number in [0, 1]");
    }
  };
  auto non_negative = [&](const nlohmann::json& v, const std::string& name) {
    if (!v.is_number() || v.get<double>() < 0.0) problems.push_back(name + " must be a non-negative number");
  };

  if (need(j, "schema", "") && j["schema"] != "gmbm-metrics/1") problems.push_back("unknown schema tag");
  if (need(j, "samples", "") && !j["samples"].is_number_unsigned()) problems.push_back("samples must be unsigned");
  for (const char* key : {"accuracy", "unbiased_accuracy", "worst_group_accuracy"}) {
    if (need(j, key, "")) unit_interval(j[key], key);
  }
  if (need(j, "bias_conflicting_accuracy", "")) {
    if (!j["bias_conflicting_accuracy"].is_array()) {
      problems.push_back("bias_conflicting_accuracy must be an array");
    } else {
      for (const auto& v : j["bias_conflicting_accuracy"]) {
        if (!v.is_null()) unit_interval(v, "bias_conflicting_accuracy entry");
      }
    }
  }
  if (need(j, "all_conflicting_accuracy", "") && !j["all_conflicting_accuracy"].is_null()) {
    unit_interval(j["all_conflicting_accuracy"], "all_conflicting_accuracy");
  }
  for (const char* key : {"maba_base", "maba_min_support"}) {
    if (!need(j, key, "")) continue;
    const auto& a = j[key];
    for (const char* field : {"mean", "variance"}) {
      if (need(a, field, std::string(key) + ".")) non_negative(a[field], std::string(key) + "." + field);
    }
    if (need(a, "empty", std::string(key) + ".") && !a["empty"].is_boolean()) {
      problems.push_back(std::string(key) + ".empty must be boolean");
    }
  }
  if (need(j, "maba_min_support", "") && need(j["maba_min_support"], "tau", "maba_min_support.")) {
    non_negative(j["maba_min_support"]["tau"], "maba_min_support.tau");
  }
  if (need(j, "maba_weighted", "")) {
    if (need(j["maba_weighted"], "mean", "maba_weighted.")) non_negative(j["maba_weighted"]["mean"], "maba_weighted.mean");
    if (j["maba_weighted"].contains("variance")) problems.push_back("maba_weighted must not carry a variance");
  }
  if (need(j, "sba", "")) {
    const auto& s = j["sba"];
    for (const char* field : {"mean", "variance", "epsilon"}) {
      if (need(s, field, "sba.")) non_negative(s[field], std::string("sba.") + field);
    }
    if (need(s, "variance_over", "sba.") && s["variance_over"] != "weighted" && s["variance_over"] != "unweighted") {
      problems.push_back("sba.variance_over must be weighted or unweighted");
    }
    if (need(s, "excluded_assignments", "sba.") && !s["excluded_assignments"].is_array()) {
      problems.push_back("sba.excluded_assignments must be an array");
    }
  }
  if (need(j, "groups", "")) {
    if (!j["groups"].is_array()) {
      problems.push_back("groups must be an array");
    } else {
      for (const auto& g : j["groups"]) {
        if (!g.is_object() || !g.contains("label") || !g.contains("biases") || !g.contains("samples") ||
            !g.contains("accuracy")) {
          problems.push_back("group entry lacks label/biases/samples/accuracy");
          break;
        }
        unit_interval(g["accuracy"], "group accuracy");
      }
    }
  }
  return problems;
}

std::string report_to_text(const MetricsReport& r) {
  std::ostringstream out;
  char line[160];
  auto row = [&](const std::string& name, const std::string& value) {
    std::snprintf(line, sizeof(line), "%-34s %s\n", name.c_str(), value.c_str());
    out << line;
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string("n/a"); };

  row("samples", std::to_string(r.samples));
  row("accuracy", num(r.accuracy));
  row("unbiased accuracy", num(r.unbiased_accuracy));
  row("worst-group accuracy", num(r.worst_group_accuracy));
  for (std::size_t j = 0; j < r.bias_conflicting.size(); ++j) {
    row("bias-conflicting accuracy (b" + std::to_string(j) + ")", opt(r.bias_conflicting[j]));
  }
  row("bias-conflicting accuracy (all)", opt(r.all_conflicting));
  row("MABA base mean", num(r.maba_base.mean));
  row("MABA base variance", num(r.maba_base.variance));
  row("MABA min-support mean", num(r.maba_min_support.mean));
  row("MABA min-support variance", num(r.maba_min_support.variance));
  row("MABA min-support tau", num(r.tau));
  row("MABA weighted mean", num(r.maba_weighted));
  row("SBA mean", num(r.sba.mean));
  row("SBA variance (" + r.sba_variance + ")", num(r.sba.variance));
  row("SBA epsilon", num(r.epsilon));
  if (!r.sba.excluded_assignments.empty()) {
    row("SBA excluded assignments", std::to_string(r.sba.excluded_assignments.size()));
  }
  return out.str();
}

}  // namespace gmbm::metrics
