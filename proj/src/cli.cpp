#include "retgate/cli.hpp"

#include <glob.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "retgate/assembly.hpp"
#include "retgate/classifier.hpp"
#include "retgate/error.hpp"
#include "retgate/evaluation.hpp"
#include "retgate/gating.hpp"
#include "retgate/records.hpp"
#include "retgate/synth.hpp"

namespace retgate {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for bad flag values discovered after parsing.
struct UsageError : Error {
  using Error::Error;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// "<dir>/<stem>.config.json" beside the primary output.
void emit_effective_config(const fs::path& output, const json& config) {
  fs::path p = output;
  p.replace_extension(".config.json");
  write_json_file(p, config);
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& text, Parse&& parse) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

std::vector<std::size_t> parse_dims(const std::string& text) {
  return parse_list<std::size_t>(text, [](const std::string& s) {
    try {
      return static_cast<std::size_t>(std::stoull(s));
    } catch (const std::logic_error&) {
      throw UsageError("bad integer '" + s + "'");
    }
  });
}

/// Flags that tweak training and feature assembly; each overrides the config
/// file only when given.
struct TrainFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  std::size_t patience = 0;
  double lr = 0.0;
  double dropout = 0.0;
  double val_fraction = 0.0;
  std::string hidden;
  std::string class_weights;
  std::string modality;
  std::string pooling;
  std::string dataset;
  bool normalize = true;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* patience_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* dropout_opt = nullptr;
  CLI::Option* val_opt = nullptr;
  CLI::Option* hidden_opt = nullptr;
  CLI::Option* weights_opt = nullptr;
  CLI::Option* modality_opt = nullptr;
  CLI::Option* pooling_opt = nullptr;
  CLI::Option* normalize_opt = nullptr;

  void attach(CLI::App* app, bool with_feature_flags) {
    app->add_option("--config", config_path, "JSON run config ({\"feature_config\":{...},\"train\":{...}})");
    seed_opt = app->add_option("--seed", seed, "Random seed");
    epochs_opt = app->add_option("--epochs", epochs, "Maximum training epochs");
    batch_opt = app->add_option("--batch-size", batch_size, "Mini-batch size");
    patience_opt = app->add_option("--patience", patience, "Early-stopping patience (epochs)");
    lr_opt = app->add_option("--lr", lr, "Learning rate");
    dropout_opt = app->add_option("--dropout", dropout, "Dropout rate on hidden activations");
    val_opt = app->add_option("--val-fraction", val_fraction, "Held-out validation fraction");
    hidden_opt = app->add_option("--hidden", hidden, "Hidden layer widths, comma separated");
    weights_opt = app->add_option("--class-weights", class_weights, "uniform | inverse_frequency | explicit");
    if (with_feature_flags) {
      modality_opt = app->add_option("--modality", modality, "multimodal | text_only | vision_only");
      pooling_opt = app->add_option("--pooling", pooling, "mean | max");
    }
    normalize_opt = app->add_option("--normalize", normalize, "z-score features (true/false)");
    app->add_option("--dataset", dataset, "Train on this dataset only (required when records mix datasets)");
  }

  std::pair<FeatureConfig, TrainConfig> resolve() const {
    json file = config_path.empty() ? json::object() : read_json_file(config_path);
    FeatureConfig fc = file.contains("feature_config") ? FeatureConfig::from_json(file.at("feature_config"))
                                                        : FeatureConfig{};
    TrainConfig tc = file.contains("train") ? TrainConfig::from_json(file.at("train")) : TrainConfig{};
    try {
      if (*seed_opt) tc.seed = seed;
      if (*epochs_opt) tc.max_epochs = epochs;
      if (*batch_opt) tc.batch_size = batch_size;
      if (*patience_opt) tc.early_stop_patience = patience;
      if (*lr_opt) tc.learning_rate = lr;
      if (*dropout_opt) tc.dropout_rate = dropout;
      if (*val_opt) tc.val_fraction = val_fraction;
      if (*hidden_opt) tc.hidden_dims = parse_dims(hidden);
      if (*weights_opt) tc.class_weight_mode = parse_class_weight_mode(class_weights);
      if (modality_opt != nullptr && *modality_opt) fc.modality = parse_modality(modality);
      if (pooling_opt != nullptr && *pooling_opt) fc.pooling = parse_pooling(pooling);
      if (*normalize_opt) fc.normalize = normalize;
    } catch (const ParseError& e) {
      throw UsageError(e.what());
    }
    try {
      tc.check();
    } catch (const ValidationError& e) {
      throw UsageError(e.what());
    }
    return {fc, tc};
  }
};

GatePolicy policy_flag(const std::string& text) {
  try {
    return parse_policy(text);
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::string> out;
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_validate(const std::string& records_path) {
  std::vector<FeatureRecord> records;
  try {
    records = load_records(records_path, /*strict=*/false);
  } catch (const Error& e) {
    std::cerr << "violation: " << e.what() << '\n';
    return kExitFailure;
  }
  const auto report = validate(records);
  std::cout << report.to_json().dump(2) << '\n';
  for (const auto& v : report.violations) std::cerr << "violation: " << v << '\n';
  return report.ok() ? kExitOk : kExitFailure;
}

int cmd_synth(const std::string& spec_path, const std::string& out, std::size_t blob_threshold) {
  const SynthSpec spec = SynthSpec::from_json(read_json_file(spec_path));
  const fs::path out_path(out);
  json written = json::array();
  if (spec.layer_profile.empty()) {
    save_records(generate(spec), out_path, blob_threshold);
    written.push_back(out_path.string());
  } else {
    for (const auto& [layer, records] : generate_layers(spec)) {
      fs::path p = out_path.parent_path() /
                   fmt::format("{}_layer{}{}", out_path.stem().string(), layer, out_path.extension().string());
      save_records(records, p, blob_threshold);
      written.push_back(p.string());
    }
  }
  emit_effective_config(out_path, {{"command", "synth"},
                                   {"spec", spec.to_json()},
                                   {"blob_threshold", blob_threshold},
                                   {"outputs", written}});
  std::cerr << "synth: wrote " << written.size() << " file(s), " << spec.n_samples << " records each\n";
  return kExitOk;
}

// One classifier per dataset: filter to --dataset, or insist the records hold a single one.
std::vector<FeatureRecord> select_dataset(std::vector<FeatureRecord> records, const std::string& dataset) {
  if (!dataset.empty()) {
    std::erase_if(records, [&](const FeatureRecord& r) { return r.dataset != dataset; });
    if (records.empty()) throw UsageError("no records for dataset '" + dataset + "'");
    return records;
  }
  std::set<std::string> names;
  for (const auto& r : records) names.insert(r.dataset);
  if (names.size() > 1) {
    throw UsageError(fmt::format("records span datasets {}; choose one with --dataset", fmt::join(names, ", ")));
  }
  return records;
}

int cmd_train(const std::string& records_path, const TrainFlags& flags, const std::string& out) {
  const auto [fc, tc] = flags.resolve();
  const auto records = select_dataset(load_records(records_path), flags.dataset);
  const ClassifierModel model = train(records, fc, tc);
  save_model(model, out);
  emit_effective_config(out, {{"command", "train"},
                              {"records", records_path},
                              {"dataset", records.front().dataset},
                              {"feature_config", fc.to_json()},
                              {"train", tc.to_json()}});
  const auto& m = model.train_meta;
  std::cerr << fmt::format("train: {} epochs (best {}), n_train={} n_val={} train_acc={:.4f} val_acc={:.4f}\n",
                           m.epochs_run, m.best_epoch, m.n_train, m.n_val, m.train_accuracy, m.val_accuracy);
  return kExitOk;
}

int cmd_predict(const std::string& records_path, const std::string& model_path, const std::string& out) {
  const auto records = load_records(records_path);
  const auto model = load_model(model_path);
  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + out);
  for (const auto& r : records) {
    const auto p = predict(model, r);
    os << json{{"id", r.id}, {"probs", p.probs}, {"label", std::string(to_string(p.label))}}.dump() << '\n';
  }
  emit_effective_config(out, {{"command", "predict"}, {"records", records_path}, {"model", model_path}});
  return kExitOk;
}

std::vector<OutcomeLabel> predicted_labels(const ClassifierModel& model, std::span<const FeatureRecord> records) {
  std::vector<OutcomeLabel> out;
  for (const auto& p : predict_all(model, records)) out.push_back(p.label);
  return out;
}

int cmd_gate(const std::string& records_path, const std::string& model_path, const std::string& policy_text,
             const std::string& out) {
  const GatePolicy policy = policy_flag(policy_text);
  const auto records = load_records(records_path);
  const auto model = load_model(model_path);
  const auto decisions = decide(records, predicted_labels(model, records), policy);
  save_decisions(decisions, out);
  emit_effective_config(out, {{"command", "gate"}, {"records", records_path}, {"model", model_path},
                              {"policy", policy_text}});
  return kExitOk;
}

int cmd_evaluate(const std::string& records_path, const std::string& model_path, const std::string& policy_text,
                 bool all_policies, const std::string& decisions_path, const std::string& report_path,
                 const std::string& csv_path, const std::string& svg_path) {
  const auto records = load_records(records_path);
  EvalReport report;
  if (!decisions_path.empty()) {
    report = evaluate(records, load_decisions(decisions_path));
  } else {
    if (model_path.empty()) throw UsageError("evaluate needs --model or --decisions");
    const auto model = load_model(model_path);
    const auto predicted = predicted_labels(model, records);
    if (all_policies || policy_text.empty()) {
      report = compare_policies(records, predicted);
    } else {
      report = evaluate(records, decide(records, predicted, policy_flag(policy_text)));
    }
  }
  emit_report(report, ReportFormat::json, report_path);
  if (!csv_path.empty()) emit_report(report, ReportFormat::csv, csv_path);
  if (!svg_path.empty()) emit_report(report, ReportFormat::svg, svg_path);
  emit_effective_config(report_path, {{"command", "evaluate"},
                                      {"records", records_path},
                                      {"model", model_path},
                                      {"decisions", decisions_path},
                                      {"policy", all_policies || policy_text.empty() ? "all" : policy_text}});
  for (const auto& p : report.policies) {
    std::cerr << fmt::format("{:>12}: accuracy {:.4f} ({}/{}), retrieval used {}\n", to_string(p.policy),
                             p.accuracy().value(), p.correct, p.n, p.n_use);
  }
  return kExitOk;
}

int cmd_sweep(const std::string& pattern, const std::string& layers_text, const std::string& modalities_text,
              const std::string& poolings_text, const TrainFlags& flags, std::size_t jobs, const std::string& out,
              const std::string& svg_path, const std::string& json_path) {
  const auto [base_fc, tc] = flags.resolve();
  const auto files = expand_glob(pattern);
  if (files.empty()) throw UsageError("no files match '" + pattern + "'");
  std::vector<int> wanted;
  if (!layers_text.empty()) {
    for (auto v : parse_dims(layers_text)) wanted.push_back(static_cast<int>(v));
  }
  std::map<int, std::vector<FeatureRecord>> by_layer;
  for (const auto& f : files) {
    for (auto& r : load_records(f)) {
      if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), r.layer) == wanted.end()) continue;
      by_layer[r.layer].push_back(std::move(r));
    }
  }
  for (int layer : wanted) {
    if (!by_layer.contains(layer)) throw UsageError("no records for layer " + std::to_string(layer));
  }
  for (auto& [layer, records] : by_layer) records = select_dataset(std::move(records), flags.dataset);
  std::vector<Modality> modalities;
  std::vector<Pooling> poolings;
  try {
    modalities = modalities_text.empty() ? std::vector<Modality>{Modality::multimodal, Modality::text_only, Modality::vision_only}
                                         : parse_list<Modality>(modalities_text, [](const std::string& s) { return parse_modality(s); });
    poolings = poolings_text.empty() ? std::vector<Pooling>{Pooling::mean}
                                     : parse_list<Pooling>(poolings_text, [](const std::string& s) { return parse_pooling(s); });
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  std::vector<FeatureConfig> configs;
  for (auto m : modalities) {
    for (auto p : poolings) configs.push_back({m, p, base_fc.normalize});
  }
  const SweepGrid grid = sweep(by_layer, configs, tc, tc.seed, jobs);
  emit_grid(grid, ReportFormat::csv, out);
  if (!svg_path.empty()) emit_grid(grid, ReportFormat::svg, svg_path);
  if (!json_path.empty()) emit_grid(grid, ReportFormat::json, json_path);
  json cfg_list = json::array();
  for (const auto& c : configs) cfg_list.push_back(c.to_json());
  emit_effective_config(out, {{"command", "sweep"},
                              {"records_glob", pattern},
                              {"files", files},
                              {"layers", grid.layers()},
                              {"feature_configs", cfg_list},
                              {"train", tc.to_json()},
                              {"dataset", by_layer.begin()->second.front().dataset},
                              {"master_seed", tc.seed},
                              {"jobs", jobs}});
  std::size_t failed = 0;
  for (const auto& c : grid.cells) {
    if (!c.ok()) {
      ++failed;
      std::cerr << "sweep: layer " << c.layer << " " << c.config.tag() << ": " << c.status << '\n';
    }
  }
  std::cerr << "sweep: " << grid.cells.size() << " cells, " << failed << " failed\n";
  return kExitOk;
}

int cmd_chart(const std::string& in_path, const std::string& out) {
  std::ifstream in(in_path);
  if (!in) throw IoError("cannot open " + in_path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = text.substr(0, text.find('\n'));
  if (header.rfind(kSweepCsvHeader, 0) == 0) {
    emit_grid(parse_grid_csv(text), ReportFormat::svg, out);
  } else if (header.rfind(kPolicyCsvHeader, 0) == 0) {
    emit_report(parse_policy_csv(text), ReportFormat::svg, out);
  } else {
    throw ParseError(in_path + ": unrecognized CSV header");
  }
  return kExitOk;
}

}  // namespace

int run_cli(std::span<const std::string> args) {
  CLI::App app{"Retrieval-utility classification and gating toolkit", "retgate"};
  app.require_subcommand(1);

  std::string records, model, out, policy, spec, decisions, report, csv, svg, json_out, pattern, layers,
      modalities, poolings, chart_in;
  bool all_policies = false;
  std::size_t blob_threshold = 4096;
  std::size_t jobs = 1;
  TrainFlags train_flags;
  TrainFlags sweep_flags;

  auto* validate_cmd = app.add_subcommand("validate", "Check a feature file and print a summary");
  validate_cmd->add_option("--records", records, "Feature JSONL")->required();

  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic feature records");
  synth_cmd->add_option("--spec", spec, "Synth spec JSON")->required();
  synth_cmd->add_option("--out", out, "Output JSONL (per-layer files get a _layer<L> suffix)")->required();
  synth_cmd->add_option("--blob-threshold", blob_threshold, "Externalize tensors larger than this");

  auto* train_cmd = app.add_subcommand("train", "Train the retrieval-utility classifier");
  train_cmd->add_option("--records", records, "Feature JSONL")->required();
  train_cmd->add_option("--out", out, "Output model JSON")->required();
  train_flags.attach(train_cmd, true);

  auto* predict_cmd = app.add_subcommand("predict", "Predict outcome classes");
  predict_cmd->add_option("--records", records, "Feature JSONL")->required();
  predict_cmd->add_option("--model", model, "Model JSON")->required();
  predict_cmd->add_option("--out", out, "Predictions JSONL")->required();

  auto* gate_cmd = app.add_subcommand("gate", "Emit retrieval decisions");
  gate_cmd->add_option("--records", records, "Feature JSONL")->required();
  gate_cmd->add_option("--model", model, "Model JSON")->required();
  gate_cmd->add_option("--policy", policy, "pessimistic | optimistic | always_rir | never_rir | oracle")->required();
  gate_cmd->add_option("--out", out, "Decisions JSONL")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "End-task accuracy under gating policies");
  eval_cmd->add_option("--records", records, "Feature JSONL")->required();
  eval_cmd->add_option("--model", model, "Model JSON");
  auto* policy_opt = eval_cmd->add_option("--policy", policy, "Single policy");
  eval_cmd->add_flag("--all-policies", all_policies, "Evaluate all five policies")->excludes(policy_opt);
  eval_cmd->add_option("--decisions", decisions, "Evaluate a decisions JSONL instead of a model");
  eval_cmd->add_option("--report", report, "Report JSON")->required();
  eval_cmd->add_option("--csv", csv, "Policy CSV");
  eval_cmd->add_option("--svg", svg, "Bar chart SVG");

  auto* sweep_cmd = app.add_subcommand("sweep", "Layer x feature-config classifier sweep");
  sweep_cmd->add_option("--records-glob", pattern, "Glob over feature JSONL files")->required();
  sweep_cmd->add_option("--layers", layers, "Layers to include, comma separated (default: all)");
  sweep_cmd->add_option("--modalities", modalities, "Comma separated (default: all three)");
  sweep_cmd->add_option("--poolings", poolings, "Comma separated (default: mean)");
  sweep_cmd->add_option("--jobs", jobs, "Cells trained concurrently");
  sweep_cmd->add_option("--out", out, "Grid CSV")->required();
  sweep_cmd->add_option("--svg", svg, "Heatmap SVG");
  sweep_cmd->add_option("--json", json_out, "Grid JSON");
  sweep_flags.attach(sweep_cmd, false);

  auto* chart_cmd = app.add_subcommand("chart", "Render a sweep or policy CSV as SVG");
  chart_cmd->add_option("--in", chart_in, "Sweep or policy CSV")->required();
  chart_cmd->add_option("--out", out, "SVG output")->required();

  std::vector<std::string> argv;
  argv.reserve(args.size());
  for (auto it = args.rbegin(); it != args.rend(); ++it) argv.push_back(*it);
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, std::cout, std::cerr);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, std::cout, std::cerr);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitUsage;
  }

  try {
    if (*validate_cmd) return cmd_validate(records);
    if (*synth_cmd) return cmd_synth(spec, out, blob_threshold);
    if (*train_cmd) return cmd_train(records, train_flags, out);
    if (*predict_cmd) return cmd_predict(records, model, out);
    if (*gate_cmd) return cmd_gate(records, model, policy, out);
    if (*eval_cmd) return cmd_evaluate(records, model, policy, all_policies, decisions, report, csv, svg);
    if (*sweep_cmd) return cmd_sweep(pattern, layers, modalities, poolings, sweep_flags, jobs, out, svg, json_out);
    if (*chart_cmd) return cmd_chart(chart_in, out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace retgate
