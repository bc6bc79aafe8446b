// SPDX-License-Identifier: Apache-2.0
#include "gmbm/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "gmbm/bytes.hpp"
#include "gmbm/digest.hpp"
#include "gmbm/errors.hpp"
#include "gmbm/group_counts.hpp"
#include "gmbm/model.hpp"
#include "gmbm/synth.hpp"
#include "gmbm/train.hpp"

namespace gmbm::cli {

namespace {

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: " + path.string());
}

std::size_t parse_csv_index(const std::string& field, std::size_t line) {
  std::size_t value = 0;
  std::istringstream in(field);
  if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos || !(in >> value)) {
    throw SchemaError("predictions line " + std::to_string(line) + ": '" + field + "' is not a label index");
  }
  return value;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string predictions_header(std::size_t k) {
  std::string header = "sample_id,true_label,pred_label";
  for (std::size_t j = 0; j < k; ++j) header += ",bias_" + std::to_string(j);
  return header;
}

// Label for a q column: the shared ratio, or all ratios joined by '/'.
std::string ratio_label(const std::vector<double>& ratios) {
  const auto trimmed = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return std::string(buf);
  };
  if (ratios.empty()) return "q=?";
  if (std::all_of(ratios.begin(), ratios.end(), [&](double r) { return r == ratios.front(); })) {
    return "q=" + trimmed(ratios.front());
  }
  std::string out = "q=";
  for (std::size_t i = 0; i < ratios.size(); ++i) out += (i > 0 ? "/" : "") + trimmed(ratios[i]);
  return out;
}

struct ReportMetric {
  const char* name;
  const char* title;
  bool percent;
  double (*read)(const nlohmann::json&);
};

double json_number_or_nan(const nlohmann::json& v) {
  return v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

const std::vector<ReportMetric>& report_metrics() {
  static const std::vector<ReportMetric> table = {
      {"unbiased_accuracy", "Unbiased accuracy (%)", true,
       [](const nlohmann::json& j) { return json_number_or_nan(j["unbiased_accuracy"]); }},
      {"all_conflicting_accuracy", "Bias-conflicting accuracy, all attributes (%)", true,
       [](const nlohmann::json& j) { return json_number_or_nan(j["all_conflicting_accuracy"]); }},
      {"worst_group_accuracy", "Worst-group accuracy (%)", true,
       [](const nlohmann::json& j) { return json_number_or_nan(j["worst_group_accuracy"]); }},
      {"maba_base", "MABA (base) mean", false,
       [](const nlohmann::json& j) { return json_number_or_nan(j["maba_base"]["mean"]); }},
      {"maba_base_variance", "MABA (base) variance", false,
       [](const nlohmann::json& j) { return json_number_or_nan(j["maba_base"]["variance"]); }},
      {"maba_min_support", "MABA (min-support) mean", false,
       [](const nlohmann::json& j) { return json_number_or_nan(j["maba_min_support"]["mean"]); }},
      {"maba_weighted", "MABA (weighted) mean", false,
       [](const nlohmann::json& j) { return json_number_or_nan(j["maba_weighted"]["mean"]); }},
      {"sba", "SBA mean", false, [](const nlohmann::json& j) { return json_number_or_nan(j["sba"]["mean"]); }},
      {"sba_variance", "SBA variance", false,
       [](const nlohmann::json& j) { return json_number_or_nan(j["sba"]["variance"]); }},
  };
  return table;
}

}  // namespace

GenerateSummary cmd_generate(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log) {
  config.validate();
  ensure_dir(out_dir);
  const auto gen = config.resolved_gen();
  const auto data = synth::generate(gen);
  synth::write_dataset(out_dir / kTrainData, data.train);
  synth::write_dataset(out_dir / kTestData, data.test);
  synth::write_counts(out_dir / kTrainCounts, synth::group_table(data.train, data.train.labels(),
                                                                 synth::LabelSource::GroundTruth, config.counts_mode));
  synth::write_counts(out_dir / kTestCounts, synth::group_table(data.test, data.test.labels(),
                                                                synth::LabelSource::GroundTruth, config.counts_mode));
  save_config(out_dir / kConfigFile, config);

  GenerateSummary summary;
  log << "generated " << data.train.size() << " train / " << data.test.size() << " test samples in "
      << out_dir.string() << '\n';
  for (std::size_t j = 0; j < data.train.num_biases(); ++j) {
    summary.alignment.push_back(synth::alignment_rate(data.train, j));
    double h = std::numeric_limits<double>::quiet_NaN();
    double mi = h;
    try {
      h = synth::estimate_conditional_entropy(data.train, j);
      mi = synth::estimate_mutual_information(data.train, j);
    } catch (const InsufficientSupportError&) {
    }
    summary.conditional_entropy.push_back(h);
    summary.mutual_information.push_back(mi);
    log << "attribute " << j << ": alignment " << fixed(summary.alignment.back(), 4) << ", H(Y|B_" << j
        << ") = " << (std::isnan(h) ? std::string("n/a") : fixed(h, 4)) << " bits, I(Y;B_" << j
        << ") = " << (std::isnan(mi) ? std::string("n/a") : fixed(mi, 4)) << " bits\n";
  }
  return summary;
}

void cmd_train(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& out_dir, std::ostream& log) {
  config.validate();
  require_file(data_dir / kTrainData, "training split");
  ensure_dir(out_dir);
  const auto train_ds = synth::read_dataset(data_dir / kTrainData);
  const auto tc = config.resolved_train();

  const auto start = std::chrono::steady_clock::now();
  auto on_epoch = [&log](const train::EpochRecord& r) {
    log << r.stage << " epoch " << r.epoch << ": ";
    if (r.stage == "abil") {
      log << "L_main " << fixed(r.main_loss, 5) << ", L_bias " << fixed(r.bias_loss, 5);
    } else if (r.stage == "gsft") {
      log << "L_ce " << fixed(r.ce_loss, 5) << ", L_grad " << fixed(r.grad_loss, 6);
    } else {
      log << "L_ce " << fixed(r.ce_loss, 5);
    }
    log << ", train accuracy " << fixed(r.train_accuracy, 4) << '\n';
  };
  const auto result =
      config.method == Method::Gmbm ? train::run_gmbm(tc, train_ds, on_epoch) : train::run_erm(tc, train_ds, on_epoch);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  model::write_checkpoint(out_dir / kCheckpoint, model::to_checkpoint(result.model));
  bytes::write_text_file(out_dir / kHistory, train::history_to_tsv(result.history));
  save_config(out_dir / kConfigFile, config);

  std::ostringstream manifest;
  manifest << "# gmbm run manifest\n";
  manifest << "method=" << to_string(config.method) << '\n';
  manifest << "seed=" << config.seed << '\n';
  manifest << "config_sha256=" << sha256_hex_file(out_dir / kConfigFile) << '\n';
  manifest << "train_data_sha256=" << sha256_hex_file(data_dir / kTrainData) << '\n';
  if (fs::is_regular_file(data_dir / kTestData)) {
    manifest << "test_data_sha256=" << sha256_hex_file(data_dir / kTestData) << '\n';
  }
  manifest << "checkpoint_sha256=" << sha256_hex_file(out_dir / kCheckpoint) << '\n';
  if (config.method == Method::Gmbm) {
    manifest << "bias_encoders_sha256_before_stage2=" << result.bias_digest_before << '\n';
    manifest << "bias_encoders_sha256_after_stage2=" << result.bias_digest_after << '\n';
  }
  manifest << "epochs=" << result.history.size() << '\n';
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    manifest << "final_stage=" << last.stage << '\n';
    manifest << "final_train_accuracy=" << fixed(last.train_accuracy, 6) << '\n';
    manifest << "final_ce_loss=" << fixed(last.stage == "abil" ? last.main_loss : last.ce_loss, 6) << '\n';
  }
  manifest << "wall_time_seconds=" << fixed(seconds, 3) << '\n';
  manifest << "[config]\n" << serialize_config(config);
  bytes::write_text_file(out_dir / kManifest, manifest.str());
  log << "wrote " << (out_dir / kCheckpoint).string() << " (" << fixed(seconds, 1) << " s)\n";
}

std::string format_predictions(const Predictions& p) {
  std::string out = predictions_header(p.num_biases) + "\n";
  for (std::size_t i = 0; i < p.truth.size(); ++i) {
    out += std::to_string(i) + ',' + std::to_string(p.truth[i]) + ',' + std::to_string(p.preds[i]);
    for (std::size_t j = 0; j < p.num_biases; ++j) out += ',' + std::to_string(p.bias_matrix[i * p.num_biases + j]);
    out += '\n';
  }
  return out;
}

Predictions parse_predictions(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("predictions file is empty");
  const auto header = split_csv(line);
  if (header.size() < 3) throw SchemaError("predictions header is too short: '" + line + "'");
  Predictions p;
  p.num_biases = header.size() - 3;
  if (line != predictions_header(p.num_biases)) {
    throw SchemaError("unexpected predictions header '" + line + "', expected '" + predictions_header(p.num_biases) +
                      "'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw SchemaError("predictions line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                        " fields, expected " + std::to_string(header.size()));
    }
    if (parse_csv_index(fields[0], line_no) != p.truth.size()) {
      throw SchemaError("predictions line " + std::to_string(line_no) + ": sample ids must be 0, 1, 2, ...");
    }
    p.truth.push_back(parse_csv_index(fields[1], line_no));
    p.preds.push_back(parse_csv_index(fields[2], line_no));
    for (std::size_t j = 0; j < p.num_biases; ++j) p.bias_matrix.push_back(parse_csv_index(fields[3 + j], line_no));
  }
  return p;
}

void cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out_csv, std::ostream& log) {
  require_file(checkpoint, "checkpoint");
  require_file(dataset, "dataset");
  const auto model = model::inference_from_checkpoint(model::read_checkpoint(checkpoint));
  const auto ds = synth::read_dataset(dataset);
  Predictions p;
  p.num_biases = ds.num_biases();
  p.preds = model.predict(ds);
  p.truth.assign(ds.labels().begin(), ds.labels().end());
  p.bias_matrix.assign(ds.bias_matrix().begin(), ds.bias_matrix().end());
  if (out_csv.has_parent_path()) ensure_dir(out_csv.parent_path());
  bytes::write_text_file(out_csv, format_predictions(p));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.truth.size(); ++i) correct += p.truth[i] == p.preds[i] ? 1 : 0;
  log << "wrote " << p.truth.size() << " predictions to " << out_csv.string() << " (accuracy "
      << fixed(p.truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(p.truth.size()), 4)
      << ")\n";
}

metrics::MetricsReport cmd_metrics(const fs::path& preds_csv, const fs::path& train_counts,
                                   const metrics::MetricParams& params, const fs::path& out_dir, std::ostream& log) {
  require_file(preds_csv, "predictions");
  require_file(train_counts, "training counts");
  const auto counts = synth::read_counts(train_counts);
  if (counts.source() != synth::LabelSource::GroundTruth) {
    throw SchemaError("training counts must come from ground-truth labels");
  }
  const auto p = parse_predictions(bytes::read_text_file(preds_csv));
  if (p.num_biases != counts.cardinalities().size()) {
    throw SchemaError("predictions carry " + std::to_string(p.num_biases) + " bias columns but the counts file has " +
                      std::to_string(counts.cardinalities().size()) + " attributes");
  }
  for (std::size_t i = 0; i < p.truth.size(); ++i) {
    if (p.truth[i] >= counts.num_classes() || p.preds[i] >= counts.num_classes()) {
      throw SchemaError("label out of range for " + std::to_string(counts.num_classes()) + " classes at sample " +
                        std::to_string(i));
    }
    for (std::size_t j = 0; j < p.num_biases; ++j) {
      if (p.bias_matrix[i * p.num_biases + j] >= counts.cardinalities()[j]) {
        throw SchemaError("bias value out of range at sample " + std::to_string(i));
      }
    }
  }
  const auto report = metrics::evaluate(p.preds, p.truth, p.bias_matrix, counts, params);
  ensure_dir(out_dir);
  bytes::write_text_file(out_dir / kMetricsJson, metrics::report_to_json(report));
  const auto text = metrics::report_to_text(report);
  bytes::write_text_file(out_dir / kMetricsText, text);
  for (const auto& excluded : report.sba.excluded_assignments) {
    log << "warning: SBA excludes assignment " << excluded << " (no test samples)\n";
  }
  log << text;
  return report;
}

std::string cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_file, std::ostream& log) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  struct Cell {
    std::vector<double> values;
  };
  // metric -> method -> q label -> values
  std::map<std::string, std::map<std::string, std::map<std::string, Cell>>> grid;
  std::map<std::string, double> column_order;  // q label -> sort key
  std::vector<std::string> absent;
  std::vector<std::string> methods = {"erm", "gmbm"};

  for (const auto& dir : run_dirs) {
    ExperimentConfig config;
    nlohmann::json metrics_json;
    try {
      config = load_config(dir / kConfigFile);
      metrics_json = nlohmann::json::parse(bytes::read_text_file(dir / kMetricsJson));
    } catch (const std::exception&) {
      absent.push_back(dir.string());
      continue;
    }
    const auto q = ratio_label(config.gen.bias_ratios);
    column_order.emplace(q, config.gen.bias_ratios.empty() ? 0.0 : config.gen.bias_ratios.front());
    for (const auto& m : report_metrics()) {
      grid[m.name][to_string(config.method)][q].values.push_back(m.read(metrics_json));
    }
  }

  std::vector<std::string> columns;
  for (const auto& [label, key] : column_order) columns.push_back(label);
  std::stable_sort(columns.begin(), columns.end(),
                   [&](const auto& a, const auto& b) { return column_order[a] < column_order[b]; });

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };

  std::ostringstream text;
  nlohmann::ordered_json json;
  json["columns"] = columns;
  json["metrics"] = nlohmann::ordered_json::object();
  const std::size_t label_width = 8;
  const std::size_t cell_width = 16;
  auto pad = [](const std::string& s, std::size_t w) { return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' '); };

  for (const auto& m : report_metrics()) {
    text << m.title << '\n' << pad("method", label_width);
    for (const auto& c : columns) text << pad(c, cell_width);
    text << '\n';
    auto& jm = json["metrics"][m.name];
    jm = nlohmann::ordered_json::object();
    for (const auto& method : methods) {
      const auto mit = grid[m.name].find(method);
      if (mit == grid[m.name].end()) continue;
      text << pad(method, label_width);
      jm[method] = nlohmann::ordered_json::object();
      for (const auto& c : columns) {
        const auto cit = mit->second.find(c);
        if (cit == mit->second.end()) {
          text << pad("-", cell_width);
          continue;
        }
        const double mean = mean_of(cit->second.values);
        const std::size_t n = cit->second.values.size();
        std::string cell = std::isnan(mean) ? "n/a" : fixed(m.percent ? 100.0 * mean : mean, m.percent ? 2 : 4);
        if (n > 1) cell += " (n=" + std::to_string(n) + ")";
        text << pad(cell, cell_width);
        jm[method][c] = {{"mean", std::isnan(mean) ? nlohmann::ordered_json() : nlohmann::ordered_json(mean)},
                         {"runs", n}};
      }
      text << '\n';
    }
    text << '\n';
  }
  if (!absent.empty()) {
    text << "absent (no config.txt or metrics.json):\n";
    for (const auto& a : absent) text << "  " << a << '\n';
  }
  json["absent"] = absent;

  if (!out_file.empty()) {
    if (out_file.has_parent_path()) ensure_dir(out_file.parent_path());
    bytes::write_text_file(out_file, text.str());
    auto sidecar = out_file;
    sidecar.replace_extension(".json");
    bytes::write_text_file(sidecar, json.dump(2) + "\n");
  }
  log << text.str();
  return text.str();
}

metrics::MetricsReport cmd_run(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log) {
  const auto data_dir = out_dir / "data";
  cmd_generate(config, data_dir, log);
  cmd_train(config, data_dir, out_dir, log);
  cmd_eval(out_dir / kCheckpoint, data_dir / kTestData, out_dir / kPredictions, log);
  return cmd_metrics(out_dir / kPredictions, data_dir / kTrainCounts, config.metrics, out_dir, log);
}

}  // namespace gmbm::cli
