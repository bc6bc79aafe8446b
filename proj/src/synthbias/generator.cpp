// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <set>
#include <string>

#include "gmbm/errors.hpp"
#include "gmbm/synth.hpp"

namespace gmbm::synth {

namespace {

using Rgb = std::array<double, 3>;

// Shape masks are part of the benchmark definition, not of a run, so they
// come from a fixed stream independent of the config seed.
constexpr std::uint64_t kMaskStream = 0x9e3779b97f4a7c15ULL;
constexpr double kMaskDensity = 0.5;

Rgb hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Foreground colors are fully saturated at full value; background colors sit
// at value 0.6, so no foreground color ever equals a background color.
Rgb foreground_color(std::size_t value, std::size_t cardinality) {
  return hsv_to_rgb(static_cast<double>(value) / static_cast<double>(cardinality), 1.0, 1.0);
}

Rgb background_color(std::size_t value, std::size_t cardinality) {
  return hsv_to_rgb((static_cast<double>(value) + 0.5) / static_cast<double>(cardinality), 0.6, 0.6);
}

Rgb patch_color(std::size_t value, std::size_t cardinality) {
  return hsv_to_rgb((static_cast<double>(value) + 0.25) / static_cast<double>(cardinality), 0.8, 0.85);
}

constexpr Rgb kNeutralBackground{0.5, 0.5, 0.5};

std::size_t patch_size(std::size_t grid) { return std::max<std::size_t>(1, grid / 6); }

class ShapeBank {
 public:
  ShapeBank(std::size_t num_classes, std::size_t grid) : grid_(grid) {
    const std::size_t margin = patch_size(grid);
    const std::size_t inner = grid - 2 * margin;
    std::mt19937_64 rng(kMaskStream);
    std::bernoulli_distribution on(kMaskDensity);
    std::set<std::vector<bool>> seen;
    while (masks_.size() < num_classes) {
      std::vector<bool> mask(grid * grid, false);
      std::size_t count = 0;
      for (std::size_t r = 0; r < inner; ++r) {
        for (std::size_t c = 0; c < inner; ++c) {
          if (on(rng)) {
            mask[(r + margin) * grid + c + margin] = true;
            ++count;
          }
        }
      }
      if (count == 0 || count == inner * inner) continue;
      if (seen.insert(mask).second) masks_.push_back(std::move(mask));
    }
  }

  bool foreground(std::size_t cls, std::size_t pixel) const { return masks_[cls][pixel]; }
  std::size_t grid() const { return grid_; }

 private:
  std::size_t grid_;
  std::vector<std::vector<bool>> masks_;
};

std::vector<double> render(const ShapeBank& shapes, std::span<const std::size_t> cards, std::size_t y,
                           std::span<const std::size_t> b) {
  const std::size_t grid = shapes.grid();
  const std::size_t plane = grid * grid;
  std::vector<double> img(3 * plane);
  const Rgb fg = foreground_color(b[0], cards[0]);
  const Rgb bg = b.size() > 1 ? background_color(b[1], cards[1]) : kNeutralBackground;
  for (std::size_t px = 0; px < plane; ++px) {
    const Rgb& color = shapes.foreground(y, px) ? fg : bg;
    for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + px] = color[ch];
  }
  const std::size_t ps = patch_size(grid);
  for (std::size_t j = 2; j < b.size(); ++j) {
    const std::size_t corner = j - 2;
    const std::size_t row0 = (corner / 2) == 0 ? 0 : grid - ps;
    const std::size_t col0 = (corner % 2) == 0 ? 0 : grid - ps;
    const Rgb tint = patch_color(b[j], cards[j]);
    for (std::size_t r = row0; r < row0 + ps; ++r) {
      for (std::size_t c = col0; c < col0 + ps; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + r * grid + c] = tint[ch];
      }
    }
  }
  return img;
}

std::mt19937_64 sample_stream(std::uint64_t seed, std::uint32_t split, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), split,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(std::uint64_t{index} >> 32)};
  return std::mt19937_64(seq);
}

Dataset generate_split(const GenConfig& config, const ShapeBank& shapes, std::size_t count, bool skewed,
                       std::uint32_t split) {
  const auto cards = config.cardinalities();
  DatasetLayout layout{config.num_classes, cards, config.grid_size, config.channels};
  Dataset ds(layout);
  std::vector<std::size_t> b(cards.size());
  std::vector<float> pixels(layout.input_dim());
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = sample_stream(config.seed, split, i);
    const std::size_t y = std::uniform_int_distribution<std::size_t>(0, config.num_classes - 1)(rng);
    for (std::size_t j = 0; j < cards.size(); ++j) {
      if (!skewed) {
        b[j] = std::uniform_int_distribution<std::size_t>(0, cards[j] - 1)(rng);
        continue;
      }
      const std::size_t aligned = aligned_value(y, cards[j]);
      if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.bias_ratios[j]) {
        b[j] = aligned;
      } else {
        const std::size_t r = std::uniform_int_distribution<std::size_t>(0, cards[j] - 2)(rng);
        b[j] = r < aligned ? r : r + 1;
      }
    }
    const auto clean = render(shapes, cards, y, b);
    std::normal_distribution<double> noise(0.0, config.noise_std);
    for (std::size_t p = 0; p < clean.size(); ++p) {
      const double v = config.noise_std > 0.0 ? clean[p] + noise(rng) : clean[p];
      pixels[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    ds.add(y, b, pixels);
  }
  return ds;
}

}  // namespace

std::vector<std::size_t> GenConfig::cardinalities() const {
  if (bias_cardinalities.empty()) return std::vector<std::size_t>(num_biases, num_classes);
  return bias_cardinalities;
}

void GenConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (num_biases < 1) throw ConfigError("num_biases must be at least 1");
  if (num_biases > kMaxBiases) {
    throw CapacityError("cannot render " + std::to_string(num_biases) + " bias attributes; at most " +
                        std::to_string(kMaxBiases) + " (2 colors + " + std::to_string(kCornerPatches) +
                        " corner patches)");
  }
  if (channels != 3) throw ConfigError("channels must be 3");
  if (!bias_cardinalities.empty() && bias_cardinalities.size() != num_biases) {
    throw ConfigError("bias_cardinalities needs one entry per attribute");
  }
  if (bias_ratios.size() != num_biases) throw ConfigError("bias_ratios needs one entry per attribute");
  const auto cards = cardinalities();
  for (std::size_t j = 0; j < num_biases; ++j) {
    if (cards[j] < 2) throw ConfigError("attribute " + std::to_string(j) + " needs at least 2 values");
    if (cards[j] > 65535) throw ConfigError("attribute cardinality exceeds 16-bit storage");
    const double floor = 1.0 / static_cast<double>(cards[j]);
    if (!(bias_ratios[j] > floor && bias_ratios[j] <= 1.0)) {
      throw ConfigError("bias ratio for attribute " + std::to_string(j) + " must lie in (1/" +
                        std::to_string(cards[j]) + ", 1]");
    }
  }
  if (num_classes > 65535) throw ConfigError("num_classes exceeds 16-bit storage");
  if (grid_size < 4) throw ConfigError("grid_size must be at least 4");
  const std::size_t inner = grid_size - 2 * patch_size(grid_size);
  // Distinct non-empty, non-full masks available on the inner square.
  if (inner * inner < 63 && (std::size_t{1} << (inner * inner)) - 2 < num_classes) {
    throw CapacityError("grid too small for " + std::to_string(num_classes) + " distinct shapes");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("noise_std must be >= 0");
  if (train_size == 0 || test_size == 0) throw ConfigError("train_size and test_size must be positive");
}

DatasetPair generate(const GenConfig& config) {
  config.validate();
  const ShapeBank shapes(config.num_classes, config.grid_size);
  return {generate_split(config, shapes, config.train_size, true, 0),
          generate_split(config, shapes, config.test_size, false, 1)};
}

std::vector<float> render_clean(const GenConfig& config, std::size_t y, std::span<const std::size_t> b) {
  config.validate();
  const auto cards = config.cardinalities();
  if (y >= config.num_classes || b.size() != cards.size()) throw IndexError("render_clean: bad labels");
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (b[j] >= cards[j]) throw IndexError("render_clean: bias value out of range");
  }
  const ShapeBank shapes(config.num_classes, config.grid_size);
  const auto img = render(shapes, cards, y, b);
  return {img.begin(), img.end()};
}

}  // namespace gmbm::synth
