// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <cstring>
#include <map>

#include "gmbm/bytes.hpp"
#include "gmbm/errors.hpp"
#include "gmbm/model.hpp"

namespace gmbm::model {

namespace {

constexpr std::array<char, 8> kMagic = {'G', 'M', 'B', 'M', 'C', 'K', '0', '1'};

void push_linear(std::vector<CheckpointBlock>& out, const std::string& prefix, const Linear& l) {
  out.push_back({prefix + ".weight", l.weight.value()});
  out.push_back({prefix + ".bias", l.bias.value()});
}

void push_encoder(std::vector<CheckpointBlock>& out, const std::string& prefix, const EncoderParams& e) {
  push_linear(out, prefix + ".layer1", e.layer1);
  push_linear(out, prefix + ".layer2", e.layer2);
}

std::string bias_encoder_prefix(std::size_t j) { return "bias_encoder." + std::to_string(j); }
std::string bias_head_prefix(std::size_t j) { return "bias_head." + std::to_string(j); }

class BlockIndex {
 public:
  explicit BlockIndex(const Checkpoint& ckpt) {
    for (const auto& b : ckpt.blocks) {
      if (!by_name_.emplace(b.name, &b.value).second) throw SchemaError("duplicate checkpoint block " + b.name);
    }
  }

  bool has(const std::string& name) const { return by_name_.count(name) != 0; }

  Tensor get(const std::string& name, const Shape& shape) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) throw SchemaError("checkpoint lacks block " + name);
    if (it->second->shape() != shape) {
      throw DimensionError("checkpoint block " + name + " has shape " + shape_to_string(it->second->shape()) +
                           ", expected " + shape_to_string(shape));
    }
    return *it->second;
  }

  Linear linear(const std::string& prefix, std::size_t in, std::size_t out) const {
    return {Node::parameter(get(prefix + ".weight", {in, out})), Node::parameter(get(prefix + ".bias", {out}))};
  }

  EncoderParams encoder(const std::string& prefix, const ModelDims& d) const {
    return {linear(prefix + ".layer1", d.input_dim, d.hidden_dim),
            linear(prefix + ".layer2", d.hidden_dim, d.embed_dim)};
  }

 private:
  std::map<std::string, const Tensor*> by_name_;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  bytes::Writer w(out);
  w.put_raw(kMagic);
  w.put(static_cast<std::uint8_t>(ckpt.variant));
  w.put(static_cast<std::uint8_t>(ckpt.bias_frozen ? 1 : 0));
  const auto& d = ckpt.dims;
  for (std::size_t v : {d.input_dim, d.hidden_dim, d.embed_dim, d.num_classes, d.num_biases()}) {
    w.put(static_cast<std::uint32_t>(v));
  }
  for (std::size_t c : d.cardinalities) w.put(static_cast<std::uint32_t>(c));
  w.put(static_cast<std::uint32_t>(ckpt.blocks.size()));
  for (const auto& block : ckpt.blocks) {
    w.put(static_cast<std::uint16_t>(block.name.size()));
    w.put_raw(block.name);
    w.put(static_cast<std::uint32_t>(block.value.rank()));
    for (std::size_t s : block.value.shape()) w.put(static_cast<std::uint64_t>(s));
    for (double v : block.value.data()) w.put(v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> data) {
  bytes::Reader r(data, "checkpoint");
  const auto magic = r.take(kMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw SchemaError("not a GMBMCK01 checkpoint");
  Checkpoint ckpt;
  const auto variant = r.get<std::uint8_t>();
  if (variant > 1) throw SchemaError("unknown checkpoint variant " + std::to_string(variant));
  ckpt.variant = static_cast<CheckpointVariant>(variant);
  ckpt.bias_frozen = r.get<std::uint8_t>() != 0;
  auto& d = ckpt.dims;
  d.input_dim = r.get<std::uint32_t>();
  d.hidden_dim = r.get<std::uint32_t>();
  d.embed_dim = r.get<std::uint32_t>();
  d.num_classes = r.get<std::uint32_t>();
  const std::size_t k = r.get<std::uint32_t>();
  if (k > synth::kMaxBiases) throw SchemaError("checkpoint declares " + std::to_string(k) + " bias attributes");
  for (std::size_t j = 0; j < k; ++j) d.cardinalities.push_back(r.get<std::uint32_t>());
  const std::size_t count = r.get<std::uint32_t>();
  for (std::size_t b = 0; b < count; ++b) {
    CheckpointBlock block;
    const std::size_t name_len = r.get<std::uint16_t>();
    const auto name = r.take(name_len);
    block.name.assign(name.begin(), name.end());
    const std::size_t rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 2) throw SchemaError("checkpoint block " + block.name + " has rank " + std::to_string(rank));
    Shape shape;
    std::size_t numel = 1;
    for (std::size_t i = 0; i < rank; ++i) {
      shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      numel *= shape.back();
    }
    if (numel > r.remaining() / sizeof(double)) throw SchemaError("checkpoint truncated in block " + block.name);
    std::vector<double> values(numel);
    for (auto& v : values) v = r.get<double>();
    block.value = Tensor(std::move(shape), std::move(values));
    ckpt.blocks.push_back(std::move(block));
  }
  if (!r.done()) throw SchemaError("trailing bytes after checkpoint blocks");
  return ckpt;
}

Checkpoint to_checkpoint(const ModelState& state) {
  Checkpoint ckpt;
  ckpt.variant = CheckpointVariant::Full;
  ckpt.dims = state.dims;
  ckpt.bias_frozen = state.bias_frozen;
  push_encoder(ckpt.blocks, "backbone", state.backbone);
  push_linear(ckpt.blocks, "classifier", state.classifier.linear);
  for (std::size_t j = 0; j < state.bias_encoders.size(); ++j) {
    push_encoder(ckpt.blocks, bias_encoder_prefix(j), state.bias_encoders[j]);
  }
  for (std::size_t j = 0; j < state.bias_heads.size(); ++j) {
    push_linear(ckpt.blocks, bias_head_prefix(j), state.bias_heads[j].linear);
  }
  return ckpt;
}

Checkpoint to_checkpoint(const InferenceModel& model) {
  Checkpoint ckpt;
  ckpt.variant = CheckpointVariant::Inference;
  ckpt.dims = model.dims;
  push_encoder(ckpt.blocks, "backbone", model.backbone);
  push_linear(ckpt.blocks, "classifier", model.classifier.linear);
  return ckpt;
}

ModelState state_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.variant != CheckpointVariant::Full) throw SchemaError("inference checkpoint has no bias components");
  const BlockIndex index(ckpt);
  const auto& d = ckpt.dims;
  ModelState state;
  state.dims = d;
  state.bias_frozen = ckpt.bias_frozen;
  state.backbone = index.encoder("backbone", d);
  state.classifier.linear = index.linear("classifier", d.embed_dim, d.num_classes);
  for (std::size_t j = 0; j < d.num_biases() && index.has(bias_encoder_prefix(j) + ".layer1.weight"); ++j) {
    state.bias_encoders.push_back(index.encoder(bias_encoder_prefix(j), d));
  }
  for (std::size_t j = 0; j < d.num_biases() && index.has(bias_head_prefix(j) + ".weight"); ++j) {
    state.bias_heads.push_back({index.linear(bias_head_prefix(j), d.embed_dim, d.cardinalities[j])});
  }
  return state;
}

InferenceModel inference_from_checkpoint(const Checkpoint& ckpt) {
  const BlockIndex index(ckpt);
  const auto& d = ckpt.dims;
  return {d, index.encoder("backbone", d), {index.linear("classifier", d.embed_dim, d.num_classes)}};
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  bytes::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(bytes::read_file(path));
}

std::vector<std::uint8_t> serialize_bias_encoders(const ModelState& state) {
  Checkpoint ckpt;
  ckpt.variant = CheckpointVariant::Full;
  ckpt.dims = state.dims;
  for (std::size_t j = 0; j < state.bias_encoders.size(); ++j) {
    push_encoder(ckpt.blocks, bias_encoder_prefix(j), state.bias_encoders[j]);
  }
  return serialize_checkpoint(ckpt);
}

}  // namespace gmbm::model
