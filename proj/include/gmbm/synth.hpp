// SPDX-License-Identifier: Apache-2.0
//
// Procedural dual-bias image benchmark: the class picks a shape mask, bias
// attribute 1 colors the foreground, attribute 2 colors the background and
// further attributes tint corner patches.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gmbm/tensor.hpp"

namespace gmbm::synth {

/// Corner patches available for attributes beyond the first two.
inline constexpr std::size_t kCornerPatches = 4;
inline constexpr std::size_t kMaxBiases = 2 + kCornerPatches;

struct GenConfig {
  std::size_t num_classes = 10;
  std::size_t num_biases = 2;
  /// Values per attribute; empty means every attribute has num_classes values.
  std::vector<std::size_t> bias_cardinalities;
  /// Probability that attribute j takes its label-aligned value in the train split.
  std::vector<double> bias_ratios = {0.9, 0.9};
  std::size_t grid_size = 12;
  std::size_t channels = 3;
  double noise_std = 0.05;
  std::size_t train_size = 10000;
  std::size_t test_size = 4000;
  std::uint64_t seed = 0;

  std::vector<std::size_t> cardinalities() const;
  /// Throws ConfigError (or CapacityError for too many attributes).
  void validate() const;

  friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

/// The bias value that co-occurs with class y under skew: y mod cardinality.
inline std::size_t aligned_value(std::size_t y, std::size_t cardinality) { return y % cardinality; }

struct Sample {
  Tensor x;  // [channels x grid x grid]
  std::size_t y = 0;
  std::vector<std::size_t> b;
};

struct DatasetLayout {
  std::size_t num_classes = 0;
  std::vector<std::size_t> cardinalities;
  std::size_t grid_size = 0;
  std::size_t channels = 3;

  std::size_t num_biases() const { return cardinalities.size(); }
  std::size_t input_dim() const { return channels * grid_size * grid_size; }

  friend bool operator==(const DatasetLayout&, const DatasetLayout&) = default;
};

/// Sample store holding labels, bias labels and f32 pixels in parallel
/// contiguous arrays.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(DatasetLayout layout);

  const DatasetLayout& layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t num_classes() const noexcept { return layout_.num_classes; }
  std::size_t num_biases() const noexcept { return layout_.cardinalities.size(); }
  std::size_t cardinality(std::size_t j) const { return layout_.cardinalities.at(j); }
  std::size_t input_dim() const noexcept { return layout_.input_dim(); }

  std::size_t label(std::size_t i) const { return labels_[i]; }
  std::size_t bias(std::size_t i, std::size_t j) const { return biases_[i * num_biases() + j]; }
  std::span<const std::size_t> biases(std::size_t i) const {
    return {biases_.data() + i * num_biases(), num_biases()};
  }
  std::span<const float> pixels(std::size_t i) const { return {pixels_.data() + i * input_dim(), input_dim()}; }

  std::span<const std::size_t> labels() const noexcept { return labels_; }
  /// Row-major [size x num_biases] bias labels.
  std::span<const std::size_t> bias_matrix() const noexcept { return biases_; }

  Sample sample(std::size_t i) const;

  /// Appends a sample; validates label ranges and pixel count.
  void add(std::size_t y, std::span<const std::size_t> b, std::span<const float> pixels);

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  DatasetLayout layout_;
  std::vector<std::size_t> labels_;
  std::vector<std::size_t> biases_;
  std::vector<float> pixels_;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

/// Deterministic in config; the test split draws every attribute uniformly
/// and independently of the label.
DatasetPair generate(const GenConfig& config);

/// Noiseless rendering of one (class, bias values) combination.
std::vector<float> render_clean(const GenConfig& config, std::size_t y, std::span<const std::size_t> b);

// --- diagnostics -------------------------------------------------------------

/// Plug-in H(Y | B_j) in bits. Throws InsufficientSupportError if some
/// value of attribute j never occurs.
double estimate_conditional_entropy(const Dataset& ds, std::size_t j);
/// Plug-in I(Y; B_j) = H(Y) - H(Y | B_j) in bits.
double estimate_mutual_information(const Dataset& ds, std::size_t j);
/// Fraction of samples whose attribute j equals aligned_value(y).
double alignment_rate(const Dataset& ds, std::size_t j);

// --- binary container ---------------------------------------------------------

std::vector<std::uint8_t> serialize(const Dataset& ds);
Dataset deserialize(std::span<const std::uint8_t> bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace gmbm::synth
