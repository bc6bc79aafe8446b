// SPDX-License-Identifier: Apache-2.0
//
// Network components: MLP encoders (backbone and one per bias attribute),
// a linear classifier, linear bias heads, and the fusion and residual math
// that joins them.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gmbm/autodiff.hpp"
#include "gmbm/synth.hpp"

namespace gmbm::model {

using ad::Node;

/// y = x W + c with W stored [in x out].
struct Linear {
  Node weight;
  Node bias;

  std::size_t in_dim() const { return weight.value().rows(); }
  std::size_t out_dim() const { return weight.value().cols(); }
};

/// input -> hidden -> embed, ReLU between the layers only.
struct EncoderParams {
  Linear layer1;
  Linear layer2;

  std::size_t input_dim() const { return layer1.in_dim(); }
  std::size_t output_dim() const { return layer2.out_dim(); }
  std::vector<Node> parameters() const;
};

/// A single linear layer; the closed-form feature gradient relies on this.
struct HeadParams {
  Linear linear;

  std::vector<Node> parameters() const;
};

struct ModelDims {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 256;
  std::size_t embed_dim = 128;
  std::size_t num_classes = 0;
  std::vector<std::size_t> cardinalities;

  std::size_t num_biases() const { return cardinalities.size(); }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct ModelState {
  ModelDims dims;
  EncoderParams backbone;
  std::vector<EncoderParams> bias_encoders;
  HeadParams classifier;
  std::vector<HeadParams> bias_heads;  // empty once discarded
  bool bias_frozen = false;

  /// Backbone then classifier, in declaration order.
  std::vector<Node> main_parameters() const;
  /// Bias encoders then bias heads.
  std::vector<Node> bias_parameters() const;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases alike.
Linear init_linear(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed, std::uint64_t stream);
/// Deterministic in (dims, seed). The backbone and classifier draw from the
/// same streams whether or not bias components are requested.
ModelState init_model(const ModelDims& dims, std::uint64_t seed, bool with_bias_components = true);

/// Constant [B x input_dim] batch built from dataset rows.
Tensor batch_inputs(const synth::Dataset& ds, std::span<const std::size_t> indices);

Node linear(const Linear& layer, const Node& x);
/// Throws DimensionError if x's width differs from the encoder input.
Node encode(const EncoderParams& params, const Node& x);
/// Row-wise softmax over cos(h_i, b_i^j); [B x k].
Node attention_weights(const Node& h, std::span<const Node> bs);
/// h + sum_j alpha[:, j] * b_j.
Node fuse(const Node& h, std::span<const Node> bs, const Node& alpha);
/// b - (<h, b> / |h|^2) h per row. Throws DegenerateInputError for a zero row of h.
Node orthogonal_residual(const Node& h, const Node& b);
Node classify(const HeadParams& head, const Node& h);
/// Per-row gradient of the cross-entropy w.r.t. h for a linear head:
/// (softmax(h W + c) - onehot(y)) W^T. Differentiable in h, W and c.
Node feature_gradient(const HeadParams& head, const Node& h, std::span<const std::size_t> labels);

std::size_t argmax_row(const Tensor& logits, std::size_t row);

/// Backbone plus classifier only; what the trained pipeline exports.
struct InferenceModel {
  ModelDims dims;
  EncoderParams backbone;
  HeadParams classifier;

  std::vector<Node> parameters() const;
  Tensor logits(const Tensor& inputs) const;
  std::vector<std::size_t> predict(const synth::Dataset& ds, std::size_t batch_size = 512) const;
};

/// Deep copy of the backbone and classifier.
InferenceModel export_inference(const ModelState& state);

// --- checkpoints --------------------------------------------------------------

enum class CheckpointVariant : std::uint8_t { Inference = 0, Full = 1 };

struct CheckpointBlock {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  CheckpointVariant variant = CheckpointVariant::Inference;
  ModelDims dims;
  bool bias_frozen = false;
  std::vector<CheckpointBlock> blocks;  // declaration order
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> data);

Checkpoint to_checkpoint(const ModelState& state);
Checkpoint to_checkpoint(const InferenceModel& model);
ModelState state_from_checkpoint(const Checkpoint& ckpt);
/// Accepts either variant; bias blocks of a full checkpoint are ignored.
InferenceModel inference_from_checkpoint(const Checkpoint& ckpt);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Bytes of the bias-encoder parameter blocks alone, for freeze digests.
std::vector<std::uint8_t> serialize_bias_encoders(const ModelState& state);

}  // namespace gmbm::model
