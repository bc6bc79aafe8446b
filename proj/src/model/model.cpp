// SPDX-License-Identifier: Apache-2.0
#include "gmbm/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gmbm/errors.hpp"

namespace gmbm::model {

namespace {

constexpr double kMinRowNorm = 1e-12;

// Top 53 bits of one draw mapped to [-limit, limit).
double symmetric_uniform(std::mt19937_64& rng, double limit) {
  const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return (2.0 * unit - 1.0) * limit;
}

EncoderParams init_encoder(const ModelDims& dims, std::uint64_t seed, std::uint64_t stream) {
  return {init_linear(dims.input_dim, dims.hidden_dim, seed, stream),
          init_linear(dims.hidden_dim, dims.embed_dim, seed, stream + 1)};
}

// Stream ids per component; bias attribute j owns 100 + 10 j onwards.
constexpr std::uint64_t kBackboneStream = 1;
constexpr std::uint64_t kClassifierStream = 3;
std::uint64_t bias_stream(std::size_t j) { return 100 + 10 * j; }

Linear copy_linear(const Linear& l) {
  return {Node::parameter(l.weight.value()), Node::parameter(l.bias.value())};
}

EncoderParams copy_encoder(const EncoderParams& e) { return {copy_linear(e.layer1), copy_linear(e.layer2)}; }

}  // namespace

std::vector<Node> EncoderParams::parameters() const {
  return {layer1.weight, layer1.bias, layer2.weight, layer2.bias};
}

std::vector<Node> HeadParams::parameters() const { return {linear.weight, linear.bias}; }

std::vector<Node> ModelState::main_parameters() const {
  auto out = backbone.parameters();
  for (const auto& p : classifier.parameters()) out.push_back(p);
  return out;
}

std::vector<Node> ModelState::bias_parameters() const {
  std::vector<Node> out;
  for (const auto& e : bias_encoders) {
    for (const auto& p : e.parameters()) out.push_back(p);
  }
  for (const auto& h : bias_heads) {
    for (const auto& p : h.parameters()) out.push_back(p);
  }
  return out;
}

Linear init_linear(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed, std::uint64_t stream) {
  if (in_dim == 0 || out_dim == 0) throw DimensionError("linear layer with a zero dimension");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 rng(seq);
  const double limit = 1.0 / std::sqrt(static_cast<double>(in_dim));
  Tensor w({in_dim, out_dim});
  for (auto& v : w.data()) v = symmetric_uniform(rng, limit);
  Tensor c({out_dim});
  for (auto& v : c.data()) v = symmetric_uniform(rng, limit);
  return {Node::parameter(std::move(w)), Node::parameter(std::move(c))};
}

ModelState init_model(const ModelDims& dims, std::uint64_t seed, bool with_bias_components) {
  if (dims.input_dim == 0 || dims.hidden_dim == 0 || dims.embed_dim == 0 || dims.num_classes < 2) {
    throw ConfigError("model dimensions must be positive and num_classes >= 2");
  }
  ModelState state;
  state.dims = dims;
  state.backbone = init_encoder(dims, seed, kBackboneStream);
  state.classifier.linear = init_linear(dims.embed_dim, dims.num_classes, seed, kClassifierStream);
  if (with_bias_components) {
    for (std::size_t j = 0; j < dims.num_biases(); ++j) {
      state.bias_encoders.push_back(init_encoder(dims, seed, bias_stream(j)));
      state.bias_heads.push_back({init_linear(dims.embed_dim, dims.cardinalities[j], seed, bias_stream(j) + 2)});
    }
  }
  return state;
}

Tensor batch_inputs(const synth::Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t width = ds.input_dim();
  Tensor x({indices.size(), width});
  auto out = x.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= ds.size()) throw IndexError("sample index " + std::to_string(indices[r]) + " out of range");
    const auto px = ds.pixels(indices[r]);
    std::copy(px.begin(), px.end(), out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return x;
}

Node linear(const Linear& layer, const Node& x) {
  return ad::add_row_vector(ad::matmul(x, layer.weight), layer.bias);
}

Node encode(const EncoderParams& params, const Node& x) {
  if (x.value().rank() != 2 || x.value().cols() != params.input_dim()) {
    throw DimensionError("encoder expects [B x " + std::to_string(params.input_dim()) + "] input, got " +
                         shape_to_string(x.shape()));
  }
  return linear(params.layer2, ad::relu(linear(params.layer1, x)));
}

Node attention_weights(const Node& h, std::span<const Node> bs) {
  if (bs.empty()) throw ContractError("attention needs at least one bias feature");
  std::vector<Node> scores;
  scores.reserve(bs.size());
  for (const auto& b : bs) scores.push_back(ad::row_cosine(h, b));
  return ad::softmax_rows(ad::stack_columns(scores));
}

Node fuse(const Node& h, std::span<const Node> bs, const Node& alpha) {
  if (alpha.value().rank() != 2 || alpha.value().cols() != bs.size()) {
    throw DimensionError("attention weights " + shape_to_string(alpha.shape()) + " do not match " +
                         std::to_string(bs.size()) + " bias features");
  }
  Node out = h;
  for (std::size_t j = 0; j < bs.size(); ++j) out = ad::add(out, ad::row_scale(bs[j], ad::column(alpha, j)));
  return out;
}

Node orthogonal_residual(const Node& h, const Node& b) {
  const Node hh = ad::row_dot(h, h);
  for (double sq : hh.value().data()) {
    if (!(std::sqrt(sq) >= kMinRowNorm)) throw DegenerateInputError("orthogonal residual of a zero-norm feature");
  }
  return ad::sub(b, ad::row_scale(h, ad::div(ad::row_dot(h, b), hh)));
}

Node classify(const HeadParams& head, const Node& h) {
  if (h.value().rank() != 2 || h.value().cols() != head.linear.in_dim()) {
    throw DimensionError("classifier expects width " + std::to_string(head.linear.in_dim()) + ", got " +
                         shape_to_string(h.shape()));
  }
  return linear(head.linear, h);
}

Node feature_gradient(const HeadParams& head, const Node& h, std::span<const std::size_t> labels) {
  const Node probs = ad::softmax_rows(classify(head, h));
  const Node residual = ad::sub(probs, Node::constant(ad::one_hot(labels, head.linear.out_dim())));
  return ad::matmul(residual, ad::transpose(head.linear.weight));
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t n = logits.cols();
  std::size_t best = 0;
  for (std::size_t c = 1; c < n; ++c) {
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  }
  return best;
}

std::vector<Node> InferenceModel::parameters() const {
  auto out = backbone.parameters();
  for (const auto& p : classifier.parameters()) out.push_back(p);
  return out;
}

Tensor InferenceModel::logits(const Tensor& inputs) const {
  return classify(classifier, encode(backbone, Node::constant(inputs))).value();
}

std::vector<std::size_t> InferenceModel::predict(const synth::Dataset& ds, std::size_t batch_size) const {
  if (ds.input_dim() != dims.input_dim || ds.num_classes() != dims.num_classes) {
    throw DimensionError("model expects input_dim " + std::to_string(dims.input_dim) + " and " +
                         std::to_string(dims.num_classes) + " classes; dataset has " +
                         std::to_string(ds.input_dim()) + " and " + std::to_string(ds.num_classes()));
  }
  std::vector<std::size_t> preds;
  preds.reserve(ds.size());
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    indices.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) indices.push_back(i);
    const Tensor out = logits(batch_inputs(ds, indices));
    for (std::size_t r = 0; r < indices.size(); ++r) preds.push_back(argmax_row(out, r));
  }
  return preds;
}

InferenceModel export_inference(const ModelState& state) {
  return {state.dims, copy_encoder(state.backbone), {copy_linear(state.classifier.linear)}};
}

}  // namespace gmbm::model
