#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "retgate/assembly.hpp"
#include "retgate/records.hpp"

namespace retgate {

enum class ClassWeightMode { uniform, inverse_frequency, explicit_weights };

std::string_view to_string(ClassWeightMode mode);
ClassWeightMode parse_class_weight_mode(std::string_view text);

using ClassWeights = std::array<double, kNumLabels>;

struct TrainConfig {
  std::vector<std::size_t> hidden_dims{512, 256};
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t early_stop_patience = 10;
  double dropout_rate = 0.1;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  ClassWeightMode class_weight_mode = ClassWeightMode::inverse_frequency;
  ClassWeights explicit_class_weights{1.0, 1.0, 1.0, 1.0};

  /// Throws ValidationError on out-of-range settings.
  void check() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// uniform -> all ones; inverse_frequency -> N / (4 n_c); explicit -> passed
/// through (must be positive).
ClassWeights compute_class_weights(std::span<const OutcomeLabel> labels, ClassWeightMode mode,
                                   const ClassWeights& explicit_weights = {1.0, 1.0, 1.0, 1.0});

struct DenseLayer {
  Tensor w;  // (out, in)
  Tensor b;  // (out)
};

struct TrainMeta {
  std::uint64_t seed = 0;
  std::string rng = "";
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  double final_train_loss = 0.0;
  double best_val_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  std::vector<double> train_loss_history;
  std::vector<double> val_loss_history;

  nlohmann::json to_json() const;
  static TrainMeta from_json(const nlohmann::json& j);
};

/// Trained retrieval-utility classifier. Weights are binary32; the
/// label order is fixed to S1..S4.
struct ClassifierModel {
  static constexpr int kVersion = 1;

  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  double dropout_rate = 0.0;
  std::vector<DenseLayer> layers;
  ClassWeights class_weights{1.0, 1.0, 1.0, 1.0};
  std::optional<NormStats> norm_stats;
  FeatureConfig feature_config;
  TrainMeta train_meta;

  /// Dimension chain, positive class weights and norm-stat length.
  void check() const;
  nlohmann::json to_json() const;
  static ClassifierModel from_json(const nlohmann::json& j);

  /// A model with every weight and bias zero.
  static ClassifierModel zeros(std::size_t input_dim, std::vector<std::size_t> hidden_dims,
                               FeatureConfig config);
};

struct Prediction {
  std::array<double, kNumLabels> probs{};
  OutcomeLabel label = OutcomeLabel::S1;
};

/// argmax with ties going to the lowest ordinal.
OutcomeLabel argmax_label(const std::array<double, kNumLabels>& values);

std::array<double, kNumLabels> model_logits(const ClassifierModel& model, std::span<const double> features);
/// Predicts from an already-assembled (and normalized, if applicable) feature.
Prediction predict_features(const ClassifierModel& model, std::span<const double> features);
/// Assembles and normalizes the record with the model's own config and stats.
Prediction predict(const ClassifierModel& model, const FeatureRecord& record);
std::vector<Prediction> predict_all(const ClassifierModel& model, std::span<const FeatureRecord> records);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per class, shuffles indices and holds out round(n_c * val_fraction) of them
/// (never the last member of a class). Both index lists come back sorted.
Split stratified_split(std::span<const OutcomeLabel> labels, double val_fraction, std::uint64_t seed);

struct TrainResult {
  ClassifierModel model;
  Split split;
};

/// Trains with mini-batch Adam on class-weighted cross-entropy and early
/// stopping on validation loss; returns the best-validation snapshot.
TrainResult fit(std::span<const FeatureRecord> records, const FeatureConfig& feature_config,
                const TrainConfig& train_config);

inline ClassifierModel train(std::span<const FeatureRecord> records, const FeatureConfig& feature_config,
                             const TrainConfig& train_config) {
  return fit(records, feature_config, train_config).model;
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_model(const std::filesystem::path& path);

struct GradientCheckReport {
  std::size_t trials = 0;
  std::size_t parameters_checked = 0;
  std::size_t resampled = 0;  // draws rejected for sitting near a ReLU kink
  double max_relative_error = 0.0;
  bool passed = false;
};

struct MlpShape {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
};

/// Compares analytic gradients of the weighted cross-entropy against
/// central differences (L(θ+h) - L(θ-h)) / 2h for every parameter of
/// `n_trials` random networks. Relative error is
/// |a - n| / max(|a|, |n|, 1e-6).
GradientCheckReport gradient_check(const MlpShape& shape, std::size_t n_trials, double step, double tolerance,
                                   std::uint64_t seed = 0);

}  // namespace retgate
