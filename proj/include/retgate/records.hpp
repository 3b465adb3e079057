#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace retgate {

/// Dense row-major float32 array.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<float> data_)
      : shape(std::move(shape_)), data(std::move(data_)) {}

  static Tensor vector(std::vector<float> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 0 : shape[1]; }
  /// Product of the shape entries (1 for a scalar shape).
  std::size_t expected_size() const;

  float at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(data).subspan(r * shape[1], shape[1]);
  }

  /// Bitwise equality of shape and payload (distinguishes -0.0 from 0.0).
  bool bit_equal(const Tensor& other) const;
};

enum class OutcomeLabel : int { S1 = 0, S2 = 1, S3 = 2, S4 = 3 };

inline constexpr std::size_t kNumLabels = 4;
inline constexpr std::array<OutcomeLabel, kNumLabels> kAllLabels = {
    OutcomeLabel::S1, OutcomeLabel::S2, OutcomeLabel::S3, OutcomeLabel::S4};

/// Maps the (with retrieval, without retrieval) correctness pair to its
/// retrieval-utility class:
///   S1 both wrong, S2 only retrieval right, S3 only no-retrieval right,
///   S4 both right.
constexpr OutcomeLabel derive_label(bool correct_with, bool correct_without) {
  if (correct_with) return correct_without ? OutcomeLabel::S4 : OutcomeLabel::S2;
  return correct_without ? OutcomeLabel::S3 : OutcomeLabel::S1;
}

constexpr int ordinal(OutcomeLabel label) { return static_cast<int>(label); }
OutcomeLabel label_from_ordinal(int value);
std::string_view to_string(OutcomeLabel label);
OutcomeLabel parse_label(std::string_view text);

/// Inverse of derive_label.
constexpr std::pair<bool, bool> correctness_of(OutcomeLabel label) {
  switch (label) {
    case OutcomeLabel::S1: return {false, false};
    case OutcomeLabel::S2: return {true, false};
    case OutcomeLabel::S3: return {false, true};
    case OutcomeLabel::S4: return {true, true};
  }
  return {false, false};
}

struct VisionFeature {
  enum class Kind { pooled, patches };

  Kind kind = Kind::pooled;
  Tensor tensor;

  /// Embedding width d_v (last axis).
  std::size_t width() const { return tensor.shape.empty() ? 0 : tensor.shape.back(); }
};

std::string_view to_string(VisionFeature::Kind kind);

/// Hidden states captured for one VQA sample at one transformer layer.
struct FeatureRecord {
  std::string id;
  std::string dataset;
  std::string backbone;
  int layer = 0;
  Tensor t1;  // text, no-retrieval pass
  Tensor t2;  // text, with-retrieval pass
  VisionFeature v1;
  VisionFeature v2;
  bool correct_with = false;
  bool correct_without = false;
  std::optional<std::string> question;
  std::optional<std::pair<std::string, std::string>> answers;  // (with, without)
  /// Unrecognized top-level JSON fields, written back verbatim on save.
  nlohmann::json extra = nlohmann::json::object();

  OutcomeLabel label() const { return derive_label(correct_with, correct_without); }
};

/// Invariant violations of a single record, each prefixed with the field
/// name. Empty when the record is valid.
std::vector<std::string> check_record(const FeatureRecord& record);

struct ValidationReport {
  std::size_t n_records = 0;
  std::map<std::string, std::size_t> per_dataset;
  std::array<std::size_t, kNumLabels> per_label{};
  std::vector<int> layers;          // distinct, ascending
  std::vector<std::size_t> text_dims;    // distinct d_t values, ascending
  std::vector<std::size_t> vision_dims;  // distinct d_v values, ascending
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
  nlohmann::json to_json() const;
};

ValidationReport validate(std::span<const FeatureRecord> records);

/// Reads a feature JSONL file. Blob references resolve relative to the
/// file's directory. Throws ParseError (with line number) or
/// ValidationError (naming the record id and field). With `strict` off,
/// invariant and duplicate-id checks are skipped so that validate() can
/// report every violation at once.
std::vector<FeatureRecord> load_records(const std::filesystem::path& path, bool strict = true);

/// Writes records as JSONL. Tensors with more than `blob_threshold`
/// elements go to a sibling "<stem>.f32" file.
void save_records(std::span<const FeatureRecord> records, const std::filesystem::path& path,
                  std::size_t blob_threshold = 4096);

// Single-record JSON conversion with inline tensors. Blob references are
// rejected by record_from_json; use load_records for those.
nlohmann::json record_to_json(const FeatureRecord& record);
FeatureRecord record_from_json(const nlohmann::json& j);

nlohmann::json tensor_to_json(const Tensor& tensor);
Tensor tensor_from_json(const nlohmann::json& j);

bool bit_equal(const FeatureRecord& a, const FeatureRecord& b);

}  // namespace retgate
