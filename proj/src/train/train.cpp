// SPDX-License-Identifier: Apache-2.0
#include "gmbm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "gmbm/digest.hpp"
#include "gmbm/errors.hpp"

namespace gmbm::train {

namespace {

// Shuffle stream ids.
constexpr std::uint64_t kStage1 = 1;
constexpr std::uint64_t kStage2 = 2;
constexpr std::uint64_t kBaseline = 3;

std::size_t count_correct(const Tensor& logits, std::span<const std::size_t> labels) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (model::argmax_row(logits, r) == labels[r]) ++correct;
  }
  return correct;
}

model::HeadParams constant_head(const model::HeadParams& head) {
  return {{Node::constant(head.linear.weight.value()), Node::constant(head.linear.bias.value())}};
}

// Runs one epoch of `step` over seeded batches and averages the step losses.
template <typename Step>
std::pair<StepResult, double> run_epoch(const synth::Dataset& ds, const TrainConfig& config, std::uint64_t stage,
                                        std::size_t epoch, Step&& step) {
  const auto order = epoch_order(ds.size(), config.seed, stage, epoch);
  StepResult total;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const auto end = std::min(order.size(), start + config.batch_size);
    const Batch batch = make_batch(ds, std::span(order).subspan(start, end - start));
    const StepResult r = step(batch);
    const double weight = static_cast<double>(end - start);
    total.loss_a += r.loss_a * weight;
    total.loss_b += r.loss_b * weight;
    total.correct += r.correct;
  }
  const double n = static_cast<double>(ds.size());
  total.loss_a /= n;
  total.loss_b /= n;
  return {total, static_cast<double>(total.correct) / n};
}

}  // namespace

std::string to_string(PenaltyMode mode) { return mode == PenaltyMode::PerSample ? "per-sample" : "batch-mean"; }

PenaltyMode parse_penalty_mode(const std::string& text) {
  if (text == "per-sample") return PenaltyMode::PerSample;
  if (text == "batch-mean") return PenaltyMode::BatchMean;
  throw ConfigError("unknown penalty mode '" + text + "' (expected per-sample or batch-mean)");
}

void TrainConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("train.beta must be a finite value >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train.lambda must be a finite value >= 0");
  if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0) || !std::isfinite(lr_stage1) || !std::isfinite(lr_stage2)) {
    throw ConfigError("learning rates must be finite and > 0");
  }
  if (batch_size == 0) throw ConfigError("train.batch_size must be > 0");
  if (hidden_dim == 0 || embed_dim == 0) throw ConfigError("train.hidden_dim and train.embed_dim must be > 0");
}

model::ModelDims dims_for(const synth::DatasetLayout& layout, const TrainConfig& config) {
  return {layout.input_dim(), config.hidden_dim, config.embed_dim, layout.num_classes, layout.cardinalities};
}

Batch make_batch(const synth::Dataset& ds, std::span<const std::size_t> indices) {
  Batch batch;
  batch.x = model::batch_inputs(ds, indices);
  batch.y.reserve(indices.size());
  batch.b.assign(ds.num_biases(), {});
  for (std::size_t i : indices) {
    batch.y.push_back(ds.label(i));
    for (std::size_t j = 0; j < ds.num_biases(); ++j) batch.b[j].push_back(ds.bias(i, j));
  }
  return batch;
}

Stage1Losses build_stage1_losses(const ModelState& state, const Batch& batch, const TrainConfig& config) {
  const std::size_t k = state.bias_encoders.size();
  if (k == 0 || state.bias_heads.size() != k) throw ContractError("stage 1 needs a bias encoder and head per attribute");
  if (batch.b.size() != k) {
    throw ContractError("stage 1 needs " + std::to_string(k) + " bias label columns, batch has " +
                        std::to_string(batch.b.size()));
  }
  for (const auto& column : batch.b) {
    if (column.size() != batch.y.size()) throw ContractError("bias labels missing for part of the batch");
  }
  const Node x = Node::constant(batch.x);
  const Node h = model::encode(state.backbone, x);
  std::vector<Node> bs;
  std::vector<Node> fused_inputs;
  for (const auto& enc : state.bias_encoders) {
    bs.push_back(model::encode(enc, x));
    fused_inputs.push_back(config.main_loss_to_bias_encoders ? bs.back() : ad::detach(bs.back()));
  }
  const Node alpha = model::attention_weights(h, fused_inputs);
  const Node fused = model::fuse(h, fused_inputs, alpha);

  Stage1Losses out;
  out.logits = model::classify(state.classifier, fused);
  out.main = ad::softmax_cross_entropy_mean(out.logits, batch.y);
  for (std::size_t j = 0; j < k; ++j) {
    const Node term = ad::softmax_cross_entropy_mean(model::classify(state.bias_heads[j], bs[j]), batch.b[j]);
    out.bias = out.bias.valid() ? ad::add(out.bias, term) : term;
  }
  out.total = ad::add(out.main, ad::scale(out.bias, config.beta));
  return out;
}

Node gradient_penalty(const model::HeadParams& head, const Node& h, std::span<const Node> bias_features,
                      std::span<const std::size_t> labels, PenaltyMode mode) {
  if (bias_features.empty()) throw ContractError("gradient penalty needs at least one bias feature");
  const Node g = model::feature_gradient(head, h, labels);
  Node total;
  for (const auto& b : bias_features) {
    const Node along = ad::row_dot(g, model::orthogonal_residual(h, b));
    const Node term = mode == PenaltyMode::PerSample ? ad::mean(ad::square(along)) : ad::square(ad::mean(along));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

Stage2Losses build_stage2_losses(const ModelState& state, const Batch& batch, const TrainConfig& config) {
  if (!state.bias_frozen) throw ContractError("stage 2 requires frozen bias encoders");
  if (state.bias_encoders.empty()) throw ContractError("stage 2 needs the trained bias encoders");
  const Node x = Node::constant(batch.x);
  const Node h = model::encode(state.backbone, x);
  std::vector<Node> bs;
  for (const auto& enc : state.bias_encoders) bs.push_back(ad::detach(model::encode(enc, x)));

  Stage2Losses out;
  out.logits = model::classify(state.classifier, h);
  out.ce = ad::softmax_cross_entropy_mean(out.logits, batch.y);
  if (config.lambda == 0.0) {
    // The penalty graph is not built, so the update is exactly a CE step.
    out.grad = gradient_penalty(constant_head(state.classifier), ad::detach(h), bs, batch.y, config.penalty);
    out.total = out.ce;
  } else {
    out.grad = gradient_penalty(state.classifier, h, bs, batch.y, config.penalty);
    out.total = ad::add(out.ce, ad::scale(out.grad, config.lambda));
  }
  return out;
}

StepResult stage1_step(ModelState& state, Adam& optimizer, const Batch& batch, const TrainConfig& config) {
  if (state.bias_frozen) throw ContractError("stage 1 cannot run on frozen bias encoders");
  const auto losses = build_stage1_losses(state, batch, config);
  optimizer.zero_grad();
  ad::backward(losses.total);
  optimizer.step(config.lr_stage1);
  return {losses.main.value().item(), losses.bias.value().item(), count_correct(losses.logits.value(), batch.y)};
}

StepResult stage2_step(ModelState& state, Adam& optimizer, const Batch& batch, const TrainConfig& config) {
  const auto losses = build_stage2_losses(state, batch, config);
  optimizer.zero_grad();
  ad::backward(losses.total);
  optimizer.step(config.lr_stage2);
  return {losses.ce.value().item(), losses.grad.value().item(), count_correct(losses.logits.value(), batch.y)};
}

StepResult ce_step(ModelState& state, Adam& optimizer, const Batch& batch, double lr) {
  const Node logits = model::classify(state.classifier, model::encode(state.backbone, Node::constant(batch.x)));
  const Node loss = ad::softmax_cross_entropy_mean(logits, batch.y);
  optimizer.zero_grad();
  ad::backward(loss);
  optimizer.step(lr);
  return {loss.value().item(), 0.0, count_correct(logits.value(), batch.y)};
}

void freeze_bias_encoders(ModelState& state) {
  state.bias_frozen = true;
  state.bias_heads.clear();
}

std::string bias_encoder_digest(const ModelState& state) { return sha256_hex(model::serialize_bias_encoders(state)); }

std::string history_to_tsv(const TrainHistory& history) {
  std::string out = "stage\tepoch\tmain_loss\tbias_loss\tce_loss\tgrad_loss\ttrain_accuracy\n";
  char line[256];
  for (const auto& r : history) {
    std::snprintf(line, sizeof(line), "%s\t%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.6f\n", r.stage.c_str(), r.epoch,
                  r.main_loss, r.bias_loss, r.ce_loss, r.grad_loss, r.train_accuracy);
    out += line;
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stage, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(epoch),
                    static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

RunResult run_gmbm(const TrainConfig& config, const synth::Dataset& train, const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw ContractError("training set is empty");
  RunResult result;
  ModelState& state = result.state;
  state = model::init_model(dims_for(train.layout(), config), config.seed);

  auto emit = [&](EpochRecord record) {
    result.history.push_back(record);
    if (on_epoch) on_epoch(result.history.back());
  };

  auto stage1_params = state.main_parameters();
  for (const auto& p : state.bias_parameters()) stage1_params.push_back(p);
  Adam stage1(stage1_params);
  for (std::size_t e = 0; e < config.stage1_epochs; ++e) {
    const auto [avg, acc] = run_epoch(train, config, kStage1, e,
                                      [&](const Batch& b) { return stage1_step(state, stage1, b, config); });
    emit({"abil", e, avg.loss_a, avg.loss_b, 0.0, 0.0, acc});
  }

  freeze_bias_encoders(state);
  result.bias_digest_before = bias_encoder_digest(state);
  // Stage 2 starts from fresh moments over the backbone and classifier.
  Adam stage2(state.main_parameters());
  for (std::size_t e = 0; e < config.stage2_epochs; ++e) {
    const auto [avg, acc] = run_epoch(train, config, kStage2, e,
                                      [&](const Batch& b) { return stage2_step(state, stage2, b, config); });
    emit({"gsft", e, 0.0, 0.0, avg.loss_a, avg.loss_b, acc});
  }
  result.bias_digest_after = bias_encoder_digest(state);
  result.model = model::export_inference(state);
  return result;
}

RunResult run_erm(const TrainConfig& config, const synth::Dataset& train, const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw ContractError("training set is empty");
  RunResult result;
  ModelState& state = result.state;
  state = model::init_model(dims_for(train.layout(), config), config.seed, false);
  Adam optimizer(state.main_parameters());
  const std::size_t epochs = config.stage1_epochs + config.stage2_epochs;
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto [avg, acc] = run_epoch(train, config, kBaseline, e,
                                      [&](const Batch& b) { return ce_step(state, optimizer, b, config.lr_stage1); });
    result.history.push_back({"erm", e, 0.0, 0.0, avg.loss_a, 0.0, acc});
    if (on_epoch) on_epoch(result.history.back());
  }
  result.model = model::export_inference(state);
  return result;
}

}  // namespace gmbm::train
