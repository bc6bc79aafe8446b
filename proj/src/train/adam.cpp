// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "gmbm/errors.hpp"
#include "gmbm/train.hpp"

namespace gmbm::train {

void adam_update(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
                 const AdamHyper& hyper) {
  if (param.size() != grad.size()) {
    throw DimensionError("adam: parameter has " + std::to_string(param.size()) + " entries, gradient " +
                         std::to_string(grad.size()));
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw DimensionError("adam: moment size does not match parameter");
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grad[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
  }
}

Adam::Adam(std::vector<Node> params, AdamHyper hyper)
    : params_(std::move(params)), states_(params_.size()), hyper_(hyper) {}

void Adam::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_update(params_[i].mutable_value().data(), params_[i].grad().data(), states_[i], lr, hyper_);
  }
}

void Adam::zero_grad() { ad::zero_grad(params_); }

void Adam::reset() {
  for (auto& s : states_) s = AdamState{};
}

}  // namespace gmbm::train
