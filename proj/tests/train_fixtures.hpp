// SPDX-License-Identifier: Apache-2.0
//
// Test-only tiny training instances and loss-gradient checks against
// quad-precision central differences.
#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "fd_oracle.hpp"
#include "loss_oracle.hpp"
#include "gmbm/model.hpp"
#include "gmbm/synth.hpp"
#include "gmbm/train.hpp"

namespace gmbm::testing {

struct TinyInstance {
  model::ModelState state;
  train::Batch batch;
  train::TrainConfig config;
};

/// Random batch and freshly initialised model with every dimension small.
inline TinyInstance tiny_instance(std::uint64_t seed, std::size_t batch = 4, std::size_t width = 8,
                                  std::size_t num_classes = 3, std::size_t num_biases = 2) {
  std::mt19937_64 rng(seed);
  model::ModelDims dims;
  dims.input_dim = width;
  dims.hidden_dim = width;
  dims.embed_dim = width;
  dims.num_classes = num_classes;
  dims.cardinalities.assign(num_biases, 3);
  TinyInstance inst{model::init_model(dims, seed), {}, {}};
  inst.config.hidden_dim = width;
  inst.config.embed_dim = width;
  inst.config.seed = seed;
  inst.batch.x = random_tensor(rng, {batch, width});
  inst.batch.y.resize(batch);
  for (auto& y : inst.batch.y) y = std::uniform_int_distribution<std::size_t>(0, num_classes - 1)(rng);
  inst.batch.b.assign(num_biases, std::vector<std::size_t>(batch));
  for (auto& column : inst.batch.b) {
    for (auto& v : column) v = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
  }
  return inst;
}

inline std::vector<ad::Node> concat(std::vector<ad::Node> a, const std::vector<ad::Node>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Stage-1 total loss gradient over every stage-1 parameter against quad
/// central differences. Requires the fused main loss to reach the bias encoders.
inline GradientCheck stage1_gradient_check(const TinyInstance& inst) {
  const auto params = concat(inst.state.main_parameters(), inst.state.bias_parameters());
  auto q = to_quad(inst.state);
  return quad_gradient_check(
      params, q, params.size(), [&] { return train::build_stage1_losses(inst.state, inst.batch, inst.config).total; },
      [&](const QState& s) { return q_stage1_loss(s, inst.batch, inst.config.beta); });
}

/// Stage-2 total loss gradient over backbone and classifier; freezes first.
inline GradientCheck stage2_gradient_check(TinyInstance& inst) {
  if (!inst.state.bias_frozen) train::freeze_bias_encoders(inst.state);
  const auto params = inst.state.main_parameters();
  auto q = to_quad(inst.state);
  return quad_gradient_check(
      params, q, params.size(), [&] { return train::build_stage2_losses(inst.state, inst.batch, inst.config).total; },
      [&](const QState& s) { return q_stage2_loss(s, inst.batch, inst.config.lambda, inst.config.penalty); });
}

/// Small procedural dataset pair for end-to-end training tests.
inline synth::GenConfig small_gen_config(std::uint64_t seed, double ratio, std::size_t train_size = 600,
                                         std::size_t test_size = 300) {
  synth::GenConfig gen;
  gen.num_classes = 4;
  gen.num_biases = 2;
  gen.bias_ratios = {ratio, ratio};
  gen.grid_size = 8;
  gen.train_size = train_size;
  gen.test_size = test_size;
  gen.seed = seed;
  return gen;
}

inline train::TrainConfig small_train_config(std::uint64_t seed) {
  train::TrainConfig config;
  config.hidden_dim = 32;
  config.embed_dim = 16;
  config.batch_size = 64;
  config.stage1_epochs = 2;
  config.stage2_epochs = 1;
  config.seed = seed;
  return config;
}

}  // namespace gmbm::testing
