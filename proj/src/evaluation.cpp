#include "retgate/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>
#include <tuple>
#include <unordered_map>

#include <fmt/format.h>

#include "retgate/error.hpp"
#include "retgate/rng.hpp"

namespace retgate {

using nlohmann::json;

namespace {

json fraction_json(const Fraction& f) { return {{"num", f.num}, {"den", f.den}, {"value", f.value()}}; }

Fraction fraction_from_json(const json& j) { return {j.at("num").get<std::size_t>(), j.at("den").get<std::size_t>()}; }

json labels_json(const std::array<std::size_t, kNumLabels>& counts) {
  json j = json::object();
  for (auto label : kAllLabels) j[std::string(to_string(label))] = counts[static_cast<std::size_t>(ordinal(label))];
  return j;
}

std::array<std::size_t, kNumLabels> labels_from_json(const json& j) {
  std::array<std::size_t, kNumLabels> out{};
  for (auto label : kAllLabels) out[static_cast<std::size_t>(ordinal(label))] = j.at(std::string(to_string(label))).get<std::size_t>();
  return out;
}

auto cell_key(const SweepCell& c) {
  return std::make_tuple(c.layer, static_cast<int>(c.config.modality), static_cast<int>(c.config.pooling),
                         c.config.normalize);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// White (0) to dark blue (1).
std::string heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255 - v * (255 - 8)));
  const int g = static_cast<int>(std::lround(255 - v * (255 - 69)));
  const int b = static_cast<int>(std::lround(255 - v * (255 - 148)));
  return fmt::format("#{:02x}{:02x}{:02x}", r, g, b);
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(field);
  return out;
}

std::vector<std::string> csv_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

ClassifierMetrics classifier_metrics(std::span<const OutcomeLabel> truth, std::span<const OutcomeLabel> predicted) {
  if (truth.size() != predicted.size()) throw ValidationError("truth/prediction length mismatch");
  ClassifierMetrics m;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(ordinal(truth[i]));
    const auto p = static_cast<std::size_t>(ordinal(predicted[i]));
    m.confusion[t][p]++;
    if (t == p) ++hits;
  }
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    std::size_t row = 0;
    std::size_t col = 0;
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      row += m.confusion[c][k];
      col += m.confusion[k][c];
    }
    m.precision[c] = col == 0 ? 0.0 : static_cast<double>(m.confusion[c][c]) / static_cast<double>(col);
    m.recall[c] = row == 0 ? 0.0 : static_cast<double>(m.confusion[c][c]) / static_cast<double>(row);
  }
  m.accuracy = {hits, truth.size()};
  return m;
}

const PolicyResult* EvalReport::find(GatePolicy policy) const {
  for (const auto& p : policies) {
    if (p.policy == policy) return &p;
  }
  return nullptr;
}

json EvalReport::to_json() const {
  json policy_json = json::array();
  for (const auto& p : policies) {
    json per_class = json::object();
    for (auto label : kAllLabels) {
      const auto c = static_cast<std::size_t>(ordinal(label));
      per_class[std::string(to_string(label))] = {{"total", p.class_total[c]}, {"correct", p.class_correct[c]}};
    }
    policy_json.push_back({{"policy", std::string(to_string(p.policy))},
                           {"n", p.n},
                           {"correct", p.correct},
                           {"accuracy", fraction_json(p.accuracy())},
                           {"n_use_retrieval", p.n_use},
                           {"n_skip_retrieval", p.n_skip},
                           {"per_class", per_class}});
  }
  json j = {{"n_samples", n_samples}, {"label_histogram", labels_json(label_histogram)}, {"policies", policy_json}};
  if (classifier) {
    json rows = json::array();
    for (const auto& row : classifier->confusion) rows.push_back(row);
    j["classifier"] = {{"confusion", rows},
                       {"precision", classifier->precision},
                       {"recall", classifier->recall},
                       {"accuracy", fraction_json(classifier->accuracy)}};
  } else {
    j["classifier"] = nullptr;
  }
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.n_samples = j.at("n_samples").get<std::size_t>();
  r.label_histogram = labels_from_json(j.at("label_histogram"));
  for (const auto& pj : j.at("policies")) {
    PolicyResult p;
    p.policy = parse_policy(pj.at("policy").get<std::string>());
    p.n = pj.at("n").get<std::size_t>();
    p.correct = pj.at("correct").get<std::size_t>();
    p.n_use = pj.at("n_use_retrieval").get<std::size_t>();
    p.n_skip = pj.at("n_skip_retrieval").get<std::size_t>();
    for (auto label : kAllLabels) {
      const auto c = static_cast<std::size_t>(ordinal(label));
      const auto& cj = pj.at("per_class").at(std::string(to_string(label)));
      p.class_total[c] = cj.at("total").get<std::size_t>();
      p.class_correct[c] = cj.at("correct").get<std::size_t>();
    }
    r.policies.push_back(p);
  }
  if (j.contains("classifier") && !j.at("classifier").is_null()) {
    const auto& cj = j.at("classifier");
    ClassifierMetrics m;
    const auto& rows = cj.at("confusion");
    for (std::size_t t = 0; t < kNumLabels; ++t) m.confusion[t] = rows.at(t).get<std::array<std::size_t, kNumLabels>>();
    m.precision = cj.at("precision").get<std::array<double, kNumLabels>>();
    m.recall = cj.at("recall").get<std::array<double, kNumLabels>>();
    m.accuracy = fraction_from_json(cj.at("accuracy"));
    r.classifier = m;
  }
  return r;
}

EvalReport evaluate(std::span<const FeatureRecord> records, std::span<const GateDecision> decisions) {
  EvalReport report;
  report.n_samples = records.size();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    index.emplace(records[i].id, i);
    report.label_histogram[static_cast<std::size_t>(ordinal(records[i].label()))]++;
  }

  // Group decisions by policy, keeping first-seen policy order.
  std::vector<GatePolicy> order;
  std::map<GatePolicy, std::vector<const GateDecision*>> by_policy;
  for (const auto& d : decisions) {
    if (!by_policy.contains(d.policy)) order.push_back(d.policy);
    by_policy[d.policy].push_back(&d);
  }

  for (auto policy : order) {
    const auto& group = by_policy[policy];
    std::vector<const GateDecision*> slot(records.size(), nullptr);
    for (const auto* d : group) {
      auto it = index.find(d->id);
      if (it == index.end()) throw ValidationError("decision for unknown record id '" + d->id + "'");
      if (slot[it->second] != nullptr) {
        throw ValidationError("duplicate " + std::string(to_string(policy)) + " decision for id '" + d->id + "'");
      }
      slot[it->second] = d;
    }
    PolicyResult result;
    result.policy = policy;
    result.n = records.size();
    std::vector<OutcomeLabel> truth;
    std::vector<OutcomeLabel> predicted;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (slot[i] == nullptr) {
        throw ValidationError("missing " + std::string(to_string(policy)) + " decision for id '" + r.id + "'");
      }
      const bool use = slot[i]->r;
      const bool correct = use ? r.correct_with : r.correct_without;
      const auto c = static_cast<std::size_t>(ordinal(r.label()));
      (use ? result.n_use : result.n_skip)++;
      result.class_total[c]++;
      if (correct) {
        result.correct++;
        result.class_correct[c]++;
      }
      truth.push_back(r.label());
      predicted.push_back(slot[i]->predicted);
    }
    report.policies.push_back(result);
    if (!report.classifier) {
      report.classifier = classifier_metrics(truth, predicted);
    }
  }
  return report;
}

EvalReport compare_policies(std::span<const FeatureRecord> records, std::span<const OutcomeLabel> predicted) {
  std::vector<GateDecision> all;
  for (auto policy : kAllPolicies) {
    auto d = decide(records, predicted, policy);
    all.insert(all.end(), d.begin(), d.end());
  }
  return evaluate(records, all);
}

EvalReport compare_policies(std::span<const FeatureRecord> records, const ClassifierModel& model) {
  std::vector<OutcomeLabel> predicted;
  predicted.reserve(records.size());
  for (const auto& r : records) predicted.push_back(predict(model, r).label);
  return compare_policies(records, predicted);
}

std::vector<int> SweepGrid::layers() const {
  std::vector<int> out;
  for (const auto& c : cells) {
    if (std::find(out.begin(), out.end(), c.layer) == out.end()) out.push_back(c.layer);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<FeatureConfig> SweepGrid::configs() const {
  std::vector<FeatureConfig> out;
  for (const auto& c : cells) {
    if (std::find(out.begin(), out.end(), c.config) == out.end()) out.push_back(c.config);
  }
  return out;
}

const SweepCell* SweepGrid::find(int layer, const FeatureConfig& config) const {
  for (const auto& c : cells) {
    if (c.layer == layer && c.config == config) return &c;
  }
  return nullptr;
}

json SweepGrid::to_json() const {
  json cj = json::array();
  for (const auto& c : cells) {
    cj.push_back({{"layer", c.layer},
                  {"feature_config", c.config.to_json()},
                  {"seed", c.seed},
                  {"n_train", c.n_train},
                  {"n_val", c.n_val},
                  {"train_acc", c.train_acc},
                  {"val_acc", c.val_acc},
                  {"status", c.status},
                  {"val_pessimistic_acc", c.val_pessimistic_acc ? json(*c.val_pessimistic_acc) : json(nullptr)},
                  {"val_optimistic_acc", c.val_optimistic_acc ? json(*c.val_optimistic_acc) : json(nullptr)}});
  }
  return {{"master_seed", master_seed}, {"cells", cj}};
}

std::uint64_t cell_seed(std::uint64_t master_seed, int layer, const FeatureConfig& config) {
  std::uint64_t s = combine_seed(master_seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(layer)));
  s = combine_seed(s, static_cast<std::uint64_t>(config.modality));
  return combine_seed(s, static_cast<std::uint64_t>(config.pooling));
}

SweepGrid sweep(const std::map<int, std::vector<FeatureRecord>>& records_by_layer,
                std::span<const FeatureConfig> configs, const TrainConfig& train_config, std::uint64_t master_seed,
                std::size_t jobs) {
  SweepGrid grid;
  grid.master_seed = master_seed;
  for (const auto& [layer, records] : records_by_layer) {
    for (const auto& config : configs) {
      SweepCell cell;
      cell.layer = layer;
      cell.config = config;
      cell.seed = cell_seed(master_seed, layer, config);
      grid.cells.push_back(cell);
    }
  }
  std::sort(grid.cells.begin(), grid.cells.end(),
            [](const SweepCell& a, const SweepCell& b) { return cell_key(a) < cell_key(b); });

  auto run_cell = [&](SweepCell& cell) {
    try {
      const auto& records = records_by_layer.at(cell.layer);
      const auto report = validate(records);
      if (!report.ok()) throw ValidationError(report.violations.front());
      TrainConfig tc = train_config;
      tc.seed = cell.seed;
      const TrainResult result = fit(records, cell.config, tc);
      const auto& meta = result.model.train_meta;
      cell.n_train = meta.n_train;
      cell.n_val = meta.n_val;
      cell.train_acc = meta.train_accuracy;
      cell.val_acc = meta.val_accuracy;
      std::vector<FeatureRecord> val;
      for (auto i : result.split.val) val.push_back(records[i]);
      const EvalReport eval = compare_policies(val, result.model);
      cell.val_pessimistic_acc = eval.find(GatePolicy::pessimistic)->accuracy().value();
      cell.val_optimistic_acc = eval.find(GatePolicy::optimistic)->accuracy().value();
    } catch (const std::exception& e) {
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      cell.status = "error: " + msg;
    }
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, grid.cells.size()));
  if (jobs == 1) {
    for (auto& cell : grid.cells) run_cell(cell);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < grid.cells.size(); i = next++) run_cell(grid.cells[i]);
      });
    }
    for (auto& t : workers) t.join();
  }
  return grid;
}

ReportFormat parse_report_format(std::string_view text) {
  if (text == "json") return ReportFormat::json;
  if (text == "csv") return ReportFormat::csv;
  if (text == "svg") return ReportFormat::svg;
  throw ParseError("unknown report format '" + std::string(text) + "'");
}

ReportFormat report_format_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  if (!ext.empty()) ext.erase(0, 1);
  return parse_report_format(ext);
}

std::string report_csv(const EvalReport& report) {
  std::string out = std::string(kPolicyCsvHeader) + "\n";
  for (const auto& p : report.policies) {
    out += fmt::format("{},{},{:.4f},{},{}\n", to_string(p.policy), p.n, p.accuracy().value(), p.n_use, p.n_skip);
  }
  return out;
}

std::string grid_csv(const SweepGrid& grid) {
  std::string out = std::string(kSweepCsvHeader) + "\n";
  for (const auto& c : grid.cells) {
    out += fmt::format("{},{},{},{},{},{},{},{:.4f},{:.4f},{}\n", c.layer, to_string(c.config.modality),
                       to_string(c.config.pooling), c.config.normalize ? "true" : "false", c.seed, c.n_train,
                       c.n_val, c.train_acc, c.val_acc, c.status);
  }
  return out;
}

std::string grid_svg(const SweepGrid& grid) {
  const auto layers = grid.layers();
  const auto configs = grid.configs();
  constexpr int kCellW = 64;
  constexpr int kCellH = 36;
  constexpr int kLeft = 190;
  constexpr int kTop = 50;
  const int width = kLeft + kCellW * static_cast<int>(layers.size()) + 20;
  const int height = kTop + kCellH * static_cast<int>(configs.size()) + 50;
  std::string s = fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n"
      "<text x=\"{}\" y=\"24\" font-size=\"14\">Classifier validation accuracy by layer</text>\n",
      width, height, kLeft);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                     kLeft + kCellW * static_cast<int>(li) + kCellW / 2, kTop + kCellH * static_cast<int>(configs.size()) + 18,
                     layers[li]);
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">layer</text>\n",
                   kLeft + kCellW * static_cast<int>(layers.size()) / 2, height - 10);
  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    const int y = kTop + kCellH * static_cast<int>(ci);
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", kLeft - 8, y + kCellH / 2 + 4,
                     xml_escape(configs[ci].tag() + (configs[ci].normalize ? "" : " (raw)")));
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto* cell = grid.find(layers[li], configs[ci]);
      if (cell == nullptr) continue;
      const int x = kLeft + kCellW * static_cast<int>(li);
      const bool ok = cell->ok();
      s += fmt::format(
          "<rect class=\"cell\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#ffffff\"/>\n", x, y,
          kCellW, kCellH, ok ? heat_color(cell->val_acc) : std::string("#cccccc"));
      s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{}\">{}</text>\n", x + kCellW / 2,
                       y + kCellH / 2 + 4, ok && cell->val_acc > 0.6 ? "#ffffff" : "#000000",
                       ok ? fmt::format("{:.4f}", cell->val_acc) : std::string("err"));
    }
  }
  s += "</svg>\n";
  return s;
}

std::string report_svg(const EvalReport& report) {
  constexpr int kBarW = 70;
  constexpr int kGap = 20;
  constexpr int kPlotH = 240;
  constexpr int kLeft = 50;
  constexpr int kTop = 40;
  const int n = static_cast<int>(report.policies.size());
  const int width = kLeft + n * (kBarW + kGap) + kGap;
  const int height = kTop + kPlotH + 50;
  std::string s = fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n"
      "<text x=\"{}\" y=\"24\" font-size=\"14\">End-task accuracy by gating policy (n={})</text>\n"
      "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>\n",
      width, height, kLeft, report.n_samples, kLeft, kTop + kPlotH, width - kGap / 2, kTop + kPlotH);
  for (int i = 0; i < n; ++i) {
    const auto& p = report.policies[static_cast<std::size_t>(i)];
    const double acc = p.accuracy().value();
    const int h = static_cast<int>(std::lround(acc * kPlotH));
    const int x = kLeft + kGap + i * (kBarW + kGap);
    const bool gated = p.policy == GatePolicy::pessimistic || p.policy == GatePolicy::optimistic;
    s += fmt::format("<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n", x,
                     kTop + kPlotH - h, kBarW, h, gated ? "#08457e" : "#9ab8d6");
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.4f}</text>\n", x + kBarW / 2,
                     kTop + kPlotH - h - 4, acc);
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", x + kBarW / 2,
                     kTop + kPlotH + 18, to_string(p.policy));
  }
  s += "</svg>\n";
  return s;
}

void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path) {
  switch (format) {
    case ReportFormat::json: write_text(path, report.to_json().dump(2) + "\n"); break;
    case ReportFormat::csv: write_text(path, report_csv(report)); break;
    case ReportFormat::svg: write_text(path, report_svg(report)); break;
  }
}

void emit_grid(const SweepGrid& grid, ReportFormat format, const std::filesystem::path& path) {
  switch (format) {
    case ReportFormat::json: write_text(path, grid.to_json().dump(2) + "\n"); break;
    case ReportFormat::csv: write_text(path, grid_csv(grid)); break;
    case ReportFormat::svg: write_text(path, grid_svg(grid)); break;
  }
}

SweepGrid parse_grid_csv(std::string_view text) {
  const auto lines = csv_lines(text);
  if (lines.empty() || lines.front() != kSweepCsvHeader) throw ParseError("not a sweep CSV (header mismatch)", 1);
  SweepGrid grid;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 10) throw ParseError("expected 10 columns", i + 1);
    try {
      SweepCell c;
      c.layer = std::stoi(f[0]);
      c.config.modality = parse_modality(f[1]);
      c.config.pooling = parse_pooling(f[2]);
      c.config.normalize = f[3] == "true";
      c.seed = std::stoull(f[4]);
      c.n_train = std::stoull(f[5]);
      c.n_val = std::stoull(f[6]);
      c.train_acc = std::stod(f[7]);
      c.val_acc = std::stod(f[8]);
      c.status = f[9];
      grid.cells.push_back(c);
    } catch (const std::logic_error& e) {
      throw ParseError(e.what(), i + 1);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), i + 1);
    }
  }
  return grid;
}

EvalReport parse_policy_csv(std::string_view text) {
  const auto lines = csv_lines(text);
  if (lines.empty() || lines.front() != kPolicyCsvHeader) throw ParseError("not a policy CSV (header mismatch)", 1);
  EvalReport report;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 5) throw ParseError("expected 5 columns", i + 1);
    try {
      PolicyResult p;
      p.policy = parse_policy(f[0]);
      p.n = std::stoull(f[1]);
      p.correct = static_cast<std::size_t>(std::llround(std::stod(f[2]) * static_cast<double>(p.n)));
      p.n_use = std::stoull(f[3]);
      p.n_skip = std::stoull(f[4]);
      report.n_samples = p.n;
      report.policies.push_back(p);
    } catch (const std::logic_error& e) {
      throw ParseError(e.what(), i + 1);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), i + 1);
    }
  }
  return report;
}

}  // namespace retgate
