// SPDX-License-Identifier: Apache-2.0
#include "gmbm/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "gmbm/bytes.hpp"
#include "gmbm/errors.hpp"

namespace gmbm::cli {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  if (text.empty()) return parts;
  std::string part;
  std::istringstream in(text);
  while (std::getline(in, part, ',')) parts.push_back(trim(part));
  return parts;
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

template <typename T>
std::string join(const std::vector<T>& values, std::string (*fmt)(T)) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += fmt(values[i]);
  }
  return out;
}

std::string format_size(std::size_t v) { return std::to_string(v); }

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"method", [](auto& c, auto&, auto& v) { c.method = parse_method(v); }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = parse_unsigned<std::uint64_t>(k, v); }},
      {"out", [](auto& c, auto&, auto& v) { c.out_dir = v; }},
      {"gen.num_classes", [](auto& c, auto& k, auto& v) { c.gen.num_classes = parse_unsigned<std::size_t>(k, v); }},
      {"gen.num_biases", [](auto& c, auto& k, auto& v) { c.gen.num_biases = parse_unsigned<std::size_t>(k, v); }},
      {"gen.bias_cardinalities",
       [](auto& c, auto& k, auto& v) {
         c.gen.bias_cardinalities.clear();
         for (const auto& p : split_list(v)) c.gen.bias_cardinalities.push_back(parse_unsigned<std::size_t>(k, p));
       }},
      {"gen.bias_ratios",
       [](auto& c, auto& k, auto& v) {
         c.gen.bias_ratios.clear();
         for (const auto& p : split_list(v)) c.gen.bias_ratios.push_back(parse_double(k, p));
       }},
      {"gen.grid_size", [](auto& c, auto& k, auto& v) { c.gen.grid_size = parse_unsigned<std::size_t>(k, v); }},
      {"gen.channels", [](auto& c, auto& k, auto& v) { c.gen.channels = parse_unsigned<std::size_t>(k, v); }},
      {"gen.noise_std", [](auto& c, auto& k, auto& v) { c.gen.noise_std = parse_double(k, v); }},
      {"gen.train_size", [](auto& c, auto& k, auto& v) { c.gen.train_size = parse_unsigned<std::size_t>(k, v); }},
      {"gen.test_size", [](auto& c, auto& k, auto& v) { c.gen.test_size = parse_unsigned<std::size_t>(k, v); }},
      {"train.stage1_epochs",
       [](auto& c, auto& k, auto& v) { c.train.stage1_epochs = parse_unsigned<std::size_t>(k, v); }},
      {"train.stage2_epochs",
       [](auto& c, auto& k, auto& v) { c.train.stage2_epochs = parse_unsigned<std::size_t>(k, v); }},
      {"train.beta", [](auto& c, auto& k, auto& v) { c.train.beta = parse_double(k, v); }},
      {"train.lambda", [](auto& c, auto& k, auto& v) { c.train.lambda = parse_double(k, v); }},
      {"train.lr_stage1", [](auto& c, auto& k, auto& v) { c.train.lr_stage1 = parse_double(k, v); }},
      {"train.lr_stage2", [](auto& c, auto& k, auto& v) { c.train.lr_stage2 = parse_double(k, v); }},
      {"train.batch_size", [](auto& c, auto& k, auto& v) { c.train.batch_size = parse_unsigned<std::size_t>(k, v); }},
      {"train.hidden_dim", [](auto& c, auto& k, auto& v) { c.train.hidden_dim = parse_unsigned<std::size_t>(k, v); }},
      {"train.embed_dim", [](auto& c, auto& k, auto& v) { c.train.embed_dim = parse_unsigned<std::size_t>(k, v); }},
      {"train.penalty", [](auto& c, auto&, auto& v) { c.train.penalty = train::parse_penalty_mode(v); }},
      {"train.main_loss_to_bias_encoders",
       [](auto& c, auto& k, auto& v) { c.train.main_loss_to_bias_encoders = parse_bool(k, v); }},
      {"metrics.tau_fraction", [](auto& c, auto& k, auto& v) { c.metrics.tau_fraction = parse_double(k, v); }},
      {"metrics.epsilon", [](auto& c, auto& k, auto& v) { c.metrics.epsilon = parse_double(k, v); }},
      {"metrics.sba_variance",
       [](auto& c, auto& k, auto& v) {
         if (v == "weighted") {
           c.metrics.sba_variance = metrics::SbaVariance::WeightedGaps;
         } else if (v == "unweighted") {
           c.metrics.sba_variance = metrics::SbaVariance::UnweightedGaps;
         } else {
           throw ConfigError(k + ": expected weighted or unweighted, got '" + v + "'");
         }
       }},
      {"metrics.counts_mode", [](auto& c, auto&, auto& v) { c.counts_mode = synth::parse_enumeration_mode(v); }},
  };
  return table;
}

}  // namespace

std::string to_string(Method method) { return method == Method::Erm ? "erm" : "gmbm"; }

Method parse_method(const std::string& text) {
  if (text == "erm") return Method::Erm;
  if (text == "gmbm") return Method::Gmbm;
  throw ConfigError("unknown method '" + text + "' (expected erm or gmbm)");
}

synth::GenConfig ExperimentConfig::resolved_gen() const {
  auto g = gen;
  g.seed = seed;
  return g;
}

train::TrainConfig ExperimentConfig::resolved_train() const {
  auto t = train;
  t.seed = seed;
  return t;
}

void ExperimentConfig::validate() const {
  resolved_gen().validate();
  train.validate();
  if (!(metrics.tau_fraction >= 0.0)) throw ConfigError("metrics.tau_fraction must be >= 0");
  if (!(metrics.epsilon > 0.0)) throw ConfigError("metrics.epsilon must be > 0");
  if (out_dir.empty()) throw ConfigError("out must not be empty");
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "method=" << to_string(c.method) << '\n';
  out << "seed=" << c.seed << '\n';
  out << "out=" << c.out_dir << '\n';
  out << "gen.num_classes=" << c.gen.num_classes << '\n';
  out << "gen.num_biases=" << c.gen.num_biases << '\n';
  out << "gen.bias_cardinalities=" << join(c.gen.bias_cardinalities, format_size) << '\n';
  out << "gen.bias_ratios=" << join(c.gen.bias_ratios, format_double) << '\n';
  out << "gen.grid_size=" << c.gen.grid_size << '\n';
  out << "gen.channels=" << c.gen.channels << '\n';
  out << "gen.noise_std=" << format_double(c.gen.noise_std) << '\n';
  out << "gen.train_size=" << c.gen.train_size << '\n';
  out << "gen.test_size=" << c.gen.test_size << '\n';
  out << "train.stage1_epochs=" << c.train.stage1_epochs << '\n';
  out << "train.stage2_epochs=" << c.train.stage2_epochs << '\n';
  out << "train.beta=" << format_double(c.train.beta) << '\n';
  out << "train.lambda=" << format_double(c.train.lambda) << '\n';
  out << "train.lr_stage1=" << format_double(c.train.lr_stage1) << '\n';
  out << "train.lr_stage2=" << format_double(c.train.lr_stage2) << '\n';
  out << "train.batch_size=" << c.train.batch_size << '\n';
  out << "train.hidden_dim=" << c.train.hidden_dim << '\n';
  out << "train.embed_dim=" << c.train.embed_dim << '\n';
  out << "train.penalty=" << train::to_string(c.train.penalty) << '\n';
  out << "train.main_loss_to_bias_encoders=" << (c.train.main_loss_to_bias_encoders ? "true" : "false") << '\n';
  out << "metrics.tau_fraction=" << format_double(c.metrics.tau_fraction) << '\n';
  out << "metrics.epsilon=" << format_double(c.metrics.epsilon) << '\n';
  out << "metrics.sba_variance="
      << (c.metrics.sba_variance == metrics::SbaVariance::WeightedGaps ? "weighted" : "unweighted") << '\n';
  out << "metrics.counts_mode=" << synth::to_string(c.counts_mode) << '\n';
  return out.str();
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto content = trim(line);
    if (content.empty() || content.front() == '#') continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + content + "'");
    }
    const auto key = trim(content.substr(0, eq));
    const auto value = trim(content.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": repeated key '" + key + "'");
    it->second(config, key, value);
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = bytes::read_text_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  bytes::write_text_file(path, serialize_config(config));
}

}  // namespace gmbm::cli
