#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "retgate/assembly.hpp"
#include "retgate/classifier.hpp"
#include "retgate/gating.hpp"
#include "retgate/records.hpp"

namespace retgate {

/// Exact count ratio; `den == 0` reads as 0.
struct Fraction {
  std::size_t num = 0;
  std::size_t den = 0;

  double value() const { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Fraction&) const = default;
};

struct PolicyResult {
  GatePolicy policy = GatePolicy::pessimistic;
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t n_use = 0;
  std::size_t n_skip = 0;
  std::array<std::size_t, kNumLabels> class_total{};    // by true label
  std::array<std::size_t, kNumLabels> class_correct{};  // end-task correct, by true label

  Fraction accuracy() const { return {correct, n}; }
  bool operator==(const PolicyResult&) const = default;
};

struct ClassifierMetrics {
  /// rows = true label, cols = predicted label
  std::array<std::array<std::size_t, kNumLabels>, kNumLabels> confusion{};
  std::array<double, kNumLabels> precision{};
  std::array<double, kNumLabels> recall{};
  Fraction accuracy;

  bool operator==(const ClassifierMetrics&) const = default;
};

ClassifierMetrics classifier_metrics(std::span<const OutcomeLabel> truth, std::span<const OutcomeLabel> predicted);

struct EvalReport {
  std::size_t n_samples = 0;
  std::array<std::size_t, kNumLabels> label_histogram{};
  std::vector<PolicyResult> policies;
  std::optional<ClassifierMetrics> classifier;

  const PolicyResult* find(GatePolicy policy) const;
  bool operator==(const EvalReport&) const = default;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// End-task accuracy of each policy present in `decisions`. Every policy's
/// decisions must cover the record ids exactly once. Per sample, the answer
/// counted is correct_with when r is set, else correct_without.
EvalReport evaluate(std::span<const FeatureRecord> records, std::span<const GateDecision> decisions);

/// Gates fixed predictions under all five policies and evaluates them.
EvalReport compare_policies(std::span<const FeatureRecord> records, std::span<const OutcomeLabel> predicted);
EvalReport compare_policies(std::span<const FeatureRecord> records, const ClassifierModel& model);

struct SweepCell {
  int layer = 0;
  FeatureConfig config;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  std::string status = "ok";
  /// End-task accuracy on the validation split under each gating strategy.
  std::optional<double> val_pessimistic_acc;
  std::optional<double> val_optimistic_acc;

  bool ok() const { return status == "ok"; }
};

struct SweepGrid {
  std::uint64_t master_seed = 0;
  std::vector<SweepCell> cells;  // sorted by (layer, modality, pooling, normalize)

  std::vector<int> layers() const;
  std::vector<FeatureConfig> configs() const;
  const SweepCell* find(int layer, const FeatureConfig& config) const;
  nlohmann::json to_json() const;
};

/// Stable per-cell seed from (master seed, layer, modality, pooling).
std::uint64_t cell_seed(std::uint64_t master_seed, int layer, const FeatureConfig& config);

/// Trains one classifier per (layer, config) cell, up to `jobs` at a time.
/// Cell failures are recorded in the cell status.
SweepGrid sweep(const std::map<int, std::vector<FeatureRecord>>& records_by_layer,
                std::span<const FeatureConfig> configs, const TrainConfig& train_config,
                std::uint64_t master_seed, std::size_t jobs = 1);

enum class ReportFormat { json, csv, svg };
ReportFormat parse_report_format(std::string_view text);
/// From a file extension (".json", ".csv", ".svg").
ReportFormat report_format_for(const std::filesystem::path& path);

inline constexpr std::string_view kSweepCsvHeader =
    "layer,modality,pooling,normalize,seed,n_train,n_val,train_acc,val_acc,status";
inline constexpr std::string_view kPolicyCsvHeader = "policy,n,accuracy,n_use_retrieval,n_skip_retrieval";

std::string report_csv(const EvalReport& report);
std::string report_svg(const EvalReport& report);
std::string grid_csv(const SweepGrid& grid);
std::string grid_svg(const SweepGrid& grid);

void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path);
void emit_grid(const SweepGrid& grid, ReportFormat format, const std::filesystem::path& path);

/// Parses a sweep CSV back into a grid (used by the chart command).
SweepGrid parse_grid_csv(std::string_view text);
/// Parses a policy CSV into a report carrying only per-policy totals.
EvalReport parse_policy_csv(std::string_view text);

}  // namespace retgate
