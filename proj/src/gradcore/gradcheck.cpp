// SPDX-License-Identifier: Apache-2.0
#include "gmbm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace gmbm::ad {

GradCheckResult grad_check(const std::function<Node()>& loss_builder, std::span<const Node> params,
                           const GradCheckOptions& options) {
  zero_grad(params);
  backward(loss_builder());
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());
  zero_grad(params);

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Node param = params[pi];
    const auto n = param.value().size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param != 0 && options.max_coords_per_param < n) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
    }
    for (auto i : coords) {
      auto& value = param.mutable_value();
      const double original = value[i];
      value[i] = original + options.step;
      const double plus = loss_builder().value().item();
      value[i] = original - options.step;
      const double minus = loss_builder().value().item();
      value[i] = original;
      const double fd = (plus - minus) / (2.0 * options.step);
      const double err = std::abs(analytic[pi][i] - fd) / std::max(std::abs(fd), 1e-8);
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.coords_checked;
    }
  }
  return result;
}

}  // namespace gmbm::ad
