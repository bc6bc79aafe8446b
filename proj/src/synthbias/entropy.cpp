// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "gmbm/errors.hpp"
#include "gmbm/synth.hpp"

namespace gmbm::synth {

namespace {

// Joint counts [bias value x label] for attribute j.
std::vector<std::vector<double>> joint_counts(const Dataset& ds, std::size_t j) {
  if (ds.empty()) throw InsufficientSupportError("entropy of an empty dataset");
  if (j >= ds.num_biases()) throw IndexError("attribute " + std::to_string(j) + " out of range");
  std::vector<std::vector<double>> joint(ds.cardinality(j), std::vector<double>(ds.num_classes(), 0.0));
  for (std::size_t i = 0; i < ds.size(); ++i) joint[ds.bias(i, j)][ds.label(i)] += 1.0;
  return joint;
}

double entropy_bits(const std::vector<double>& counts, double total) {
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      const double p = c / total;
      h -= p * std::log2(p);
    }
  }
  return h;
}

}  // namespace

double estimate_conditional_entropy(const Dataset& ds, std::size_t j) {
  const auto joint = joint_counts(ds, j);
  const double n = static_cast<double>(ds.size());
  double h = 0.0;
  for (std::size_t v = 0; v < joint.size(); ++v) {
    double mass = 0.0;
    for (double c : joint[v]) mass += c;
    if (mass == 0.0) {
      throw InsufficientSupportError("attribute " + std::to_string(j) + " value " + std::to_string(v) +
                                     " never occurs");
    }
    h += (mass / n) * entropy_bits(joint[v], mass);
  }
  return h;
}

double estimate_mutual_information(const Dataset& ds, std::size_t j) {
  const double h_cond = estimate_conditional_entropy(ds, j);
  std::vector<double> marginal(ds.num_classes(), 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) marginal[ds.label(i)] += 1.0;
  return entropy_bits(marginal, static_cast<double>(ds.size())) - h_cond;
}

double alignment_rate(const Dataset& ds, std::size_t j) {
  if (ds.empty()) throw InsufficientSupportError("alignment rate of an empty dataset");
  if (j >= ds.num_biases()) throw IndexError("attribute " + std::to_string(j) + " out of range");
  std::size_t aligned = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.bias(i, j) == aligned_value(ds.label(i), ds.cardinality(j))) ++aligned;
  }
  return static_cast<double>(aligned) / static_cast<double>(ds.size());
}

}  // namespace gmbm::synth
