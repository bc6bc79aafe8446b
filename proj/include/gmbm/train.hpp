// SPDX-License-Identifier: Apache-2.0
//
// Two-stage debiasing pipeline, the plain cross-entropy baseline, and Adam.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gmbm/model.hpp"
#include "gmbm/synth.hpp"

namespace gmbm::train {

using ad::Node;
using model::ModelState;

// --- Adam ---------------------------------------------------------------------

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam step in place. Sizes of param, grad and (once
/// initialised) the moments must agree.
void adam_update(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
                 const AdamHyper& hyper = {});

/// Adam over a fixed parameter list; reads Node gradients.
class Adam {
 public:
  explicit Adam(std::vector<Node> params, AdamHyper hyper = {});

  void step(double lr);
  void zero_grad();
  /// Drops all moments and the step counter.
  void reset();

  const std::vector<Node>& params() const noexcept { return params_; }
  const std::vector<AdamState>& states() const noexcept { return states_; }

 private:
  std::vector<Node> params_;
  std::vector<AdamState> states_;
  AdamHyper hyper_;
};

// --- configuration --------------------------------------------------------------

enum class PenaltyMode {
  PerSample,  // sum_j mean_i <G_i, L_i^j>^2
  BatchMean,  // sum_j (mean_i <G_i, L_i^j>)^2
};

std::string to_string(PenaltyMode mode);
PenaltyMode parse_penalty_mode(const std::string& text);

struct TrainConfig {
  std::size_t stage1_epochs = 6;
  std::size_t stage2_epochs = 3;
  double beta = 0.2;
  double lambda = 0.01;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 1e-4;
  std::size_t batch_size = 128;
  std::size_t hidden_dim = 256;
  std::size_t embed_dim = 128;
  std::uint64_t seed = 0;
  PenaltyMode penalty = PenaltyMode::PerSample;
  /// When false, the fused main loss does not reach bias-encoder parameters.
  bool main_loss_to_bias_encoders = true;

  /// Throws ConfigError.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

model::ModelDims dims_for(const synth::DatasetLayout& layout, const TrainConfig& config);

// --- batches and steps ----------------------------------------------------------

struct Batch {
  Tensor x;                                  // [B x input_dim]
  std::vector<std::size_t> y;                // [B]
  std::vector<std::vector<std::size_t>> b;   // k x [B]
};

Batch make_batch(const synth::Dataset& ds, std::span<const std::size_t> indices);

struct Stage1Losses {
  Node total;
  Node main;
  Node bias;
  Node logits;  // classifier output on the fused feature
};

struct Stage2Losses {
  Node total;
  Node ce;
  /// Penalty value; detached from the graph when lambda == 0.
  Node grad;
  Node logits;
};

Stage1Losses build_stage1_losses(const ModelState& state, const Batch& batch, const TrainConfig& config);
/// Requires frozen bias encoders.
Stage2Losses build_stage2_losses(const ModelState& state, const Batch& batch, const TrainConfig& config);
/// The penalty alone from features, bias residual inputs and the head.
Node gradient_penalty(const model::HeadParams& head, const Node& h, std::span<const Node> bias_features,
                      std::span<const std::size_t> labels, PenaltyMode mode);

struct StepResult {
  double loss_a = 0.0;  // L_main (stage 1) or L_ce (stage 2 / ERM)
  double loss_b = 0.0;  // L_bias (stage 1) or L_grad (stage 2)
  std::size_t correct = 0;
};

/// Adam step on all stage-1 parameters against L_main + beta * L_bias.
/// Throws ContractError if the bias encoders are frozen or bias labels are missing.
StepResult stage1_step(ModelState& state, Adam& optimizer, const Batch& batch, const TrainConfig& config);
/// Adam step on backbone and classifier against L_ce + lambda * L_grad.
/// Throws ContractError unless the bias encoders are frozen.
StepResult stage2_step(ModelState& state, Adam& optimizer, const Batch& batch, const TrainConfig& config);
/// Plain cross-entropy Adam step on backbone and classifier.
StepResult ce_step(ModelState& state, Adam& optimizer, const Batch& batch, double lr);

/// Freezes the bias encoders and discards the bias heads.
void freeze_bias_encoders(ModelState& state);
/// SHA-256 of the serialized bias-encoder parameters.
std::string bias_encoder_digest(const ModelState& state);

// --- full runs ------------------------------------------------------------------

struct EpochRecord {
  std::string stage;  // "abil", "gsft" or "erm"
  std::size_t epoch = 0;
  double main_loss = 0.0;
  double bias_loss = 0.0;
  double ce_loss = 0.0;
  double grad_loss = 0.0;
  double train_accuracy = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

std::string history_to_tsv(const TrainHistory& history);

/// Seeded permutation for one epoch of one stage.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stage, std::size_t epoch);

struct RunResult {
  model::InferenceModel model;
  TrainHistory history;
  /// Bias-encoder digests around stage 2; empty for the baseline.
  std::string bias_digest_before;
  std::string bias_digest_after;
  /// Final full state (frozen bias encoders, no bias heads); baseline has none.
  ModelState state;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

RunResult run_gmbm(const TrainConfig& config, const synth::Dataset& train, const EpochCallback& on_epoch = {});
/// Backbone and classifier under plain cross-entropy for T1 + T2 epochs at lr_stage1.
RunResult run_erm(const TrainConfig& config, const synth::Dataset& train, const EpochCallback& on_epoch = {});

}  // namespace gmbm::train
