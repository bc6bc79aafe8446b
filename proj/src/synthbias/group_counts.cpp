// SPDX-License-Identifier: Apache-2.0
#include "gmbm/group_counts.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "gmbm/bytes.hpp"
#include "gmbm/errors.hpp"

namespace gmbm::synth {

namespace {

std::size_t parse_index(std::string_view text, const char* what) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw SchemaError(std::string("malformed ") + what + ": '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string current;
  std::istringstream in(text);
  while (std::getline(in, current, sep)) parts.push_back(current);
  if (!text.empty() && text.back() == sep) parts.emplace_back();
  return parts;
}

void append_subset_assignments(std::span<const std::size_t> cards, const std::vector<std::size_t>& subset,
                               std::vector<Assignment>& out) {
  std::vector<std::size_t> values(subset.size(), 0);
  while (true) {
    Assignment a;
    for (std::size_t i = 0; i < subset.size(); ++i) a.items.emplace_back(subset[i], values[i]);
    out.push_back(std::move(a));
    std::size_t pos = subset.size();
    while (pos > 0) {
      --pos;
      if (++values[pos] < cards[subset[pos]]) break;
      values[pos] = 0;
      if (pos == 0) return;
    }
  }
}

}  // namespace

std::string to_string(EnumerationMode mode) {
  switch (mode) {
    case EnumerationMode::AllSubsets: return "all";
    case EnumerationMode::Singletons: return "singletons";
    case EnumerationMode::FullJoint: return "joint";
  }
  return "all";
}

EnumerationMode parse_enumeration_mode(const std::string& text) {
  if (text == "all") return EnumerationMode::AllSubsets;
  if (text == "singletons") return EnumerationMode::Singletons;
  if (text == "joint") return EnumerationMode::FullJoint;
  throw ConfigError("unknown enumeration mode '" + text + "' (expected all, singletons or joint)");
}

std::string to_string(LabelSource source) {
  return source == LabelSource::GroundTruth ? "ground-truth" : "predicted";
}

LabelSource parse_label_source(const std::string& text) {
  if (text == "ground-truth") return LabelSource::GroundTruth;
  if (text == "predicted") return LabelSource::Predicted;
  throw SchemaError("unknown label source '" + text + "'");
}

std::string Assignment::to_string() const {
  std::string out;
  for (const auto& [j, v] : items) {
    if (!out.empty()) out += ',';
    out += std::to_string(j) + '=' + std::to_string(v);
  }
  return out;
}

Assignment Assignment::parse(const std::string& text) {
  Assignment a;
  for (const auto& part : split(text, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw SchemaError("malformed assignment '" + text + "'");
    a.items.emplace_back(parse_index(std::string_view(part).substr(0, eq), "attribute index"),
                         parse_index(std::string_view(part).substr(eq + 1), "attribute value"));
  }
  if (a.items.empty()) throw SchemaError("empty assignment");
  for (std::size_t i = 1; i < a.items.size(); ++i) {
    if (a.items[i].first <= a.items[i - 1].first) {
      throw SchemaError("assignment attributes must be strictly ascending: '" + text + "'");
    }
  }
  return a;
}

bool Assignment::matches(std::span<const std::size_t> bias_values) const {
  return std::all_of(items.begin(), items.end(),
                     [&](const auto& item) { return bias_values[item.first] == item.second; });
}

std::vector<Assignment> enumerate_assignments(std::span<const std::size_t> cardinalities, EnumerationMode mode) {
  const std::size_t k = cardinalities.size();
  if (k == 0) throw ContractError("enumeration needs at least one attribute");
  std::vector<Assignment> out;
  const std::size_t min_size = mode == EnumerationMode::FullJoint ? k : 1;
  const std::size_t max_size = mode == EnumerationMode::Singletons ? 1 : k;
  for (std::size_t size = min_size; size <= max_size; ++size) {
    // Lexicographic combinations of `size` attributes out of k.
    std::vector<std::size_t> subset(size);
    for (std::size_t i = 0; i < size; ++i) subset[i] = i;
    while (true) {
      append_subset_assignments(cardinalities, subset, out);
      std::size_t i = size;
      while (i > 0 && subset[i - 1] == k - size + i - 1) --i;
      if (i == 0) break;
      ++subset[i - 1];
      for (std::size_t t = i; t < size; ++t) subset[t] = subset[t - 1] + 1;
    }
  }
  return out;
}

GroupCounts::GroupCounts(std::size_t num_classes, std::vector<std::size_t> cardinalities, EnumerationMode mode,
                         LabelSource source)
    : num_classes_(num_classes),
      cardinalities_(std::move(cardinalities)),
      mode_(mode),
      source_(source),
      assignments_(enumerate_assignments(cardinalities_, mode)),
      counts_(num_classes_ * assignments_.size(), 0) {
  if (num_classes_ == 0) throw ContractError("group table needs at least one label");
}

std::optional<std::size_t> GroupCounts::find(const Assignment& a) const {
  const auto it = std::find(assignments_.begin(), assignments_.end(), a);
  if (it == assignments_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - assignments_.begin());
}

std::uint64_t GroupCounts::assignment_total(std::size_t m) const {
  std::uint64_t total = 0;
  for (std::size_t g = 0; g < num_classes_; ++g) total += count(g, m);
  return total;
}

std::uint64_t GroupCounts::total_samples() const {
  std::uint64_t total = 0;
  for (std::size_t m = 0; m < assignments_.size(); ++m) {
    if (assignments_[m].is_full(cardinalities_.size())) total += assignment_total(m);
  }
  return total;
}

std::uint64_t GroupCounts::total_cells() const {
  std::uint64_t total = 0;
  for (auto c : counts_) total += c;
  return total;
}

void GroupCounts::add_sample(std::size_t label, std::span<const std::size_t> bias_values) {
  if (label >= num_classes_) throw IndexError("label " + std::to_string(label) + " out of range");
  if (bias_values.size() != cardinalities_.size()) throw ContractError("wrong number of bias values");
  for (std::size_t j = 0; j < bias_values.size(); ++j) {
    if (bias_values[j] >= cardinalities_[j]) throw IndexError("bias value out of range");
  }
  for (std::size_t m = 0; m < assignments_.size(); ++m) {
    if (assignments_[m].matches(bias_values)) ++counts_[label * assignments_.size() + m];
  }
}

bool GroupCounts::same_enumeration(const GroupCounts& other) const {
  return num_classes_ == other.num_classes_ && cardinalities_ == other.cardinalities_ &&
         assignments_ == other.assignments_;
}

GroupCounts group_table(std::size_t num_classes, std::span<const std::size_t> cardinalities,
                        std::span<const std::size_t> labels, std::span<const std::size_t> bias_matrix,
                        LabelSource source, EnumerationMode mode) {
  const std::size_t k = cardinalities.size();
  if (bias_matrix.size() != labels.size() * k) {
    throw DimensionError("bias matrix has " + std::to_string(bias_matrix.size()) + " entries for " +
                         std::to_string(labels.size()) + " samples");
  }
  GroupCounts counts(num_classes, {cardinalities.begin(), cardinalities.end()}, mode, source);
  for (std::size_t i = 0; i < labels.size(); ++i) counts.add_sample(labels[i], bias_matrix.subspan(i * k, k));
  return counts;
}

GroupCounts group_table(const Dataset& ds, std::span<const std::size_t> labels, LabelSource source,
                        EnumerationMode mode) {
  if (labels.size() != ds.size()) {
    throw DimensionError("group_table: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(ds.size()) + " samples");
  }
  return group_table(ds.num_classes(), ds.layout().cardinalities, labels, ds.bias_matrix(), source, mode);
}

std::string format_counts(const GroupCounts& counts) {
  std::ostringstream out;
  out << "# gmbm-counts classes=" << counts.num_classes() << " cardinalities=";
  for (std::size_t j = 0; j < counts.cardinalities().size(); ++j) {
    if (j > 0) out << ',';
    out << counts.cardinalities()[j];
  }
  out << " mode=" << to_string(counts.mode()) << " source=" << to_string(counts.source()) << '\n';
  for (std::size_t g = 0; g < counts.num_classes(); ++g) {
    for (std::size_t m = 0; m < counts.num_assignments(); ++m) {
      out << g << '\t' << counts.assignment(m).to_string() << '\t' << counts.count(g, m) << '\n';
    }
  }
  return out.str();
}

GroupCounts parse_counts(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# gmbm-counts ", 0) != 0) {
    throw SchemaError("counts file lacks the '# gmbm-counts' header");
  }
  std::optional<std::size_t> classes;
  std::vector<std::size_t> cards;
  auto mode = EnumerationMode::AllSubsets;
  auto source = LabelSource::GroundTruth;
  std::istringstream header(line.substr(14));
  std::string field;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw SchemaError("malformed counts header field '" + field + "'");
    const auto key = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    if (key == "classes") {
      classes = parse_index(value, "class count");
    } else if (key == "cardinalities") {
      for (const auto& part : split(value, ',')) cards.push_back(parse_index(part, "cardinality"));
    } else if (key == "mode") {
      try {
        mode = parse_enumeration_mode(value);
      } catch (const ConfigError& e) {
        throw SchemaError(e.what());
      }
    } else if (key == "source") {
      source = parse_label_source(value);
    }
  }
  if (!classes || cards.empty()) throw SchemaError("counts header needs classes= and cardinalities=");

  GroupCounts counts(*classes, cards, mode, source);
  std::vector<bool> seen(counts.num_classes() * counts.num_assignments(), false);
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3) throw SchemaError("counts record needs 3 tab-separated fields: '" + line + "'");
    const auto g = parse_index(fields[0], "label");
    if (g >= counts.num_classes()) throw SchemaError("label out of range in counts record '" + line + "'");
    const auto m = counts.find(Assignment::parse(fields[1]));
    if (!m) throw SchemaError("assignment '" + fields[1] + "' is not in the enumeration");
    const std::size_t cell = g * counts.num_assignments() + *m;
    if (seen[cell]) throw SchemaError("duplicate counts record '" + line + "'");
    seen[cell] = true;
    counts.set_count(g, *m, parse_index(fields[2], "count"));
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw SchemaError("counts file is missing records for some cells");
  }
  return counts;
}

void write_counts(const std::filesystem::path& path, const GroupCounts& counts) {
  bytes::write_text_file(path, format_counts(counts));
}

GroupCounts read_counts(const std::filesystem::path& path) { return parse_counts(bytes::read_text_file(path)); }

}  // namespace gmbm::synth
