// SPDX-License-Identifier: Apache-2.0
//
// Dataset container:
//   "GMBMDS01"
//   u32 num_classes, u32 k, u32 cardinality[k], u32 grid, u64 sample_count
//   per sample: u16 y, u16 b[k], f32 pixels[3 * grid * grid]  (channel-major)
// All integers and floats little-endian.
#include <cstring>
#include <iterator>

#include "gmbm/bytes.hpp"
#include "gmbm/errors.hpp"
#include "gmbm/synth.hpp"

namespace gmbm::synth {

namespace {

constexpr char kMagic[8] = {'G', 'M', 'B', 'M', 'D', 'S', '0', '1'};

}  // namespace

Dataset::Dataset(DatasetLayout layout) : layout_(std::move(layout)) {}

Sample Dataset::sample(std::size_t i) const {
  if (i >= size()) throw IndexError("sample index " + std::to_string(i) + " out of range");
  Tensor x({layout_.channels, layout_.grid_size, layout_.grid_size});
  const auto px = pixels(i);
  for (std::size_t p = 0; p < px.size(); ++p) x[p] = px[p];
  const auto b = biases(i);
  return {std::move(x), label(i), {b.begin(), b.end()}};
}

void Dataset::add(std::size_t y, std::span<const std::size_t> b, std::span<const float> px) {
  if (y >= layout_.num_classes) throw IndexError("label " + std::to_string(y) + " out of range");
  if (b.size() != num_biases()) throw ContractError("sample carries the wrong number of bias labels");
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (b[j] >= layout_.cardinalities[j]) {
      throw IndexError("bias value " + std::to_string(b[j]) + " out of range for attribute " + std::to_string(j));
    }
  }
  if (px.size() != input_dim()) throw DimensionError("sample has the wrong number of pixels");
  labels_.push_back(y);
  biases_.insert(biases_.end(), b.begin(), b.end());
  pixels_.insert(pixels_.end(), px.begin(), px.end());
}

std::vector<std::uint8_t> serialize(const Dataset& ds) {
  const auto& layout = ds.layout();
  if (layout.channels != 3) throw SchemaError("dataset container stores 3-channel images only");
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.reserve(out.size() + ds.size() * (2 * (1 + ds.num_biases()) + 4 * ds.input_dim()) + 64);
  bytes::Writer w(out);
  w.put(static_cast<std::uint32_t>(layout.num_classes));
  w.put(static_cast<std::uint32_t>(layout.num_biases()));
  for (auto c : layout.cardinalities) w.put(static_cast<std::uint32_t>(c));
  w.put(static_cast<std::uint32_t>(layout.grid_size));
  w.put(static_cast<std::uint64_t>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.put(static_cast<std::uint16_t>(ds.label(i)));
    for (auto b : ds.biases(i)) w.put(static_cast<std::uint16_t>(b));
    for (float v : ds.pixels(i)) w.put(v);
  }
  return out;
}

Dataset deserialize(std::span<const std::uint8_t> data) {
  bytes::Reader r(data, "dataset file");
  const auto magic = r.take(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw SchemaError("not a GMBMDS01 dataset");
  DatasetLayout layout;
  layout.num_classes = r.get<std::uint32_t>();
  const auto k = r.get<std::uint32_t>();
  if (k > 64) throw SchemaError("implausible attribute count in dataset header");
  for (std::uint32_t j = 0; j < k; ++j) layout.cardinalities.push_back(r.get<std::uint32_t>());
  layout.grid_size = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  const std::size_t record = 2 * (1 + std::size_t{k}) + 4 * layout.input_dim();
  if (record == 0 || count > data.size() / record) throw SchemaError("dataset header disagrees with file size");
  Dataset ds(layout);
  std::vector<std::size_t> b(k);
  std::vector<float> px(layout.input_dim());
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t y = r.get<std::uint16_t>();
    for (auto& v : b) v = r.get<std::uint16_t>();
    for (auto& v : px) v = r.get<float>();
    ds.add(y, b, px);
  }
  if (!r.done()) throw SchemaError("trailing bytes after dataset records");
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  bytes::write_file(path, serialize(ds));
}

Dataset read_dataset(const std::filesystem::path& path) {
  return deserialize(bytes::read_file(path));
}

}  // namespace gmbm::synth
