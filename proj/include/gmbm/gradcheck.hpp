// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "gmbm/autodiff.hpp"

namespace gmbm::ad {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates probed per parameter; 0 probes every coordinate.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares autodiff gradients of a scalar loss against central differences.
///
/// `loss_builder` must rebuild the loss graph from the current parameter
/// values on every call. Relative error per coordinate is
/// |autodiff - fd| / max(|fd|, 1e-8). Parameter gradients are zeroed before
/// and after the check; parameter values are restored exactly.
GradCheckResult grad_check(const std::function<Node()>& loss_builder, std::span<const Node> params,
                           const GradCheckOptions& options = {});

}  // namespace gmbm::ad
