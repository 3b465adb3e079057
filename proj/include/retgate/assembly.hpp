#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "retgate/records.hpp"

namespace retgate {

enum class Modality { multimodal, text_only, vision_only };
enum class Pooling { mean, max };

std::string_view to_string(Modality modality);
std::string_view to_string(Pooling pooling);
Modality parse_modality(std::string_view text);
Pooling parse_pooling(std::string_view text);

/// Which segments enter the joint feature and how patches are reduced.
/// `pooling` is carried along (and serialized) even for text_only.
struct FeatureConfig {
  Modality modality = Modality::multimodal;
  Pooling pooling = Pooling::mean;
  bool normalize = true;

  bool operator==(const FeatureConfig&) const = default;
  nlohmann::json to_json() const;
  static FeatureConfig from_json(const nlohmann::json& j);
  /// Short tag such as "multimodal/mean".
  std::string tag() const;
};

enum class SegmentName { T1, V1, T2, V2 };
std::string_view to_string(SegmentName name);

struct Segment {
  SegmentName name;
  std::size_t offset;
  std::size_t length;

  bool operator==(const Segment&) const = default;
};

struct JointFeature {
  std::vector<double> values;
  std::vector<Segment> layout;

  std::span<const double> segment(SegmentName name) const;
};

/// Per-dimension z-score statistics over assembled training features.
struct NormStats {
  static constexpr double kStdFloor = 1e-6;

  std::vector<double> mean;
  std::vector<double> std;

  std::size_t size() const { return mean.size(); }
  nlohmann::json to_json() const;
  static NormStats from_json(const nlohmann::json& j);
};

std::vector<double> mean_pool(const Tensor& patches);
std::vector<double> max_pool(const Tensor& patches);

/// Segment layout for the given config and dimensions: always the
/// subsequence of T1, V1, T2, V2 the modality selects.
std::vector<Segment> joint_layout(const FeatureConfig& config, std::size_t text_dim, std::size_t vision_dim);

/// Builds the joint feature. When `config.normalize` is set, `stats` must be
/// non-null and match the assembled length.
JointFeature assemble(const FeatureRecord& record, const FeatureConfig& config,
                      const NormStats* stats = nullptr);

/// Applies (x - mean) / std in place.
void normalize_in_place(std::span<double> values, const NormStats& stats);

/// Population mean/std over un-normalized assembled features; requires at
/// least two records.
NormStats fit_norm_stats(std::span<const FeatureRecord> records, const FeatureConfig& config);

}  // namespace retgate
