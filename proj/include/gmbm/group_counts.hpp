// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gmbm/synth.hpp"

namespace gmbm::synth {

/// Which attribute assignments a co-occurrence table enumerates.
enum class EnumerationMode {
  AllSubsets,  // every non-empty attribute subset, every joint value
  Singletons,  // one attribute at a time
  FullJoint,   // all k attributes jointly
};

std::string to_string(EnumerationMode mode);
EnumerationMode parse_enumeration_mode(const std::string& text);

enum class LabelSource { GroundTruth, Predicted };

std::string to_string(LabelSource source);
LabelSource parse_label_source(const std::string& text);

/// A partial assignment of values to attributes, ascending in attribute index.
struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> items;  // (attribute, value)

  /// "j=v,j=v,..." with ascending j.
  std::string to_string() const;
  static Assignment parse(const std::string& text);
  bool matches(std::span<const std::size_t> bias_values) const;
  bool is_full(std::size_t num_biases) const { return items.size() == num_biases; }

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Subsets in increasing size, then lexicographic; values in odometer order.
std::vector<Assignment> enumerate_assignments(std::span<const std::size_t> cardinalities, EnumerationMode mode);

/// count(g, m) over target labels g and the enumerated assignments m.
class GroupCounts {
 public:
  GroupCounts(std::size_t num_classes, std::vector<std::size_t> cardinalities, EnumerationMode mode,
              LabelSource source = LabelSource::GroundTruth);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t num_assignments() const noexcept { return assignments_.size(); }
  const std::vector<std::size_t>& cardinalities() const noexcept { return cardinalities_; }
  EnumerationMode mode() const noexcept { return mode_; }
  LabelSource source() const noexcept { return source_; }
  const std::vector<Assignment>& assignments() const noexcept { return assignments_; }
  const Assignment& assignment(std::size_t m) const { return assignments_.at(m); }
  std::optional<std::size_t> find(const Assignment& a) const;

  std::uint64_t count(std::size_t g, std::size_t m) const { return counts_.at(g * assignments_.size() + m); }
  void set_count(std::size_t g, std::size_t m, std::uint64_t value) {
    counts_.at(g * assignments_.size() + m) = value;
  }
  /// Sum over labels of count(g, m).
  std::uint64_t assignment_total(std::size_t m) const;
  /// Sum over labels and full joint assignments; equals the number of samples.
  std::uint64_t total_samples() const;
  std::uint64_t total_cells() const;

  void add_sample(std::size_t label, std::span<const std::size_t> bias_values);

  /// True if both tables enumerate the same labels and assignments.
  bool same_enumeration(const GroupCounts& other) const;

  friend bool operator==(const GroupCounts&, const GroupCounts&) = default;

 private:
  std::size_t num_classes_;
  std::vector<std::size_t> cardinalities_;
  EnumerationMode mode_;
  LabelSource source_;
  std::vector<Assignment> assignments_;
  std::vector<std::uint64_t> counts_;  // row-major [label x assignment]
};

/// Co-occurrence table with g taken from `labels` (true labels or predictions).
GroupCounts group_table(const Dataset& ds, std::span<const std::size_t> labels, LabelSource source,
                        EnumerationMode mode = EnumerationMode::AllSubsets);

/// Same, from raw label arrays; `bias_matrix` is row-major [n x k].
GroupCounts group_table(std::size_t num_classes, std::span<const std::size_t> cardinalities,
                        std::span<const std::size_t> labels, std::span<const std::size_t> bias_matrix,
                        LabelSource source, EnumerationMode mode = EnumerationMode::AllSubsets);

/// Text format: a "#" metadata line, then "g<TAB>assignment<TAB>count" per cell.
std::string format_counts(const GroupCounts& counts);
GroupCounts parse_counts(const std::string& text);
void write_counts(const std::filesystem::path& path, const GroupCounts& counts);
GroupCounts read_counts(const std::filesystem::path& path);

}  // namespace gmbm::synth
