#include "retgate/assembly.hpp"

#include <algorithm>
#include <cmath>

#include "retgate/error.hpp"

namespace retgate {

using nlohmann::json;

namespace {

void check_patches(const Tensor& patches) {
  if (patches.rank() != 2) throw ValidationError("pooling expects a rank-2 patch matrix");
  if (patches.rows() == 0 || patches.cols() == 0) throw ValidationError("pooling over an empty patch matrix");
}

std::vector<double> vision_vector(const VisionFeature& v, Pooling pooling) {
  if (v.kind == VisionFeature::Kind::pooled) return {v.tensor.data.begin(), v.tensor.data.end()};
  return pooling == Pooling::mean ? mean_pool(v.tensor) : max_pool(v.tensor);
}

}  // namespace

std::string_view to_string(Modality modality) {
  switch (modality) {
    case Modality::multimodal: return "multimodal";
    case Modality::text_only: return "text_only";
    case Modality::vision_only: return "vision_only";
  }
  return "?";
}

std::string_view to_string(Pooling pooling) { return pooling == Pooling::mean ? "mean" : "max"; }

Modality parse_modality(std::string_view text) {
  for (auto m : {Modality::multimodal, Modality::text_only, Modality::vision_only}) {
    if (to_string(m) == text) return m;
  }
  throw ParseError("unknown modality '" + std::string(text) + "'");
}

Pooling parse_pooling(std::string_view text) {
  if (text == "mean") return Pooling::mean;
  if (text == "max") return Pooling::max;
  throw ParseError("unknown pooling '" + std::string(text) + "'");
}

std::string_view to_string(SegmentName name) {
  switch (name) {
    case SegmentName::T1: return "T1";
    case SegmentName::V1: return "V1";
    case SegmentName::T2: return "T2";
    case SegmentName::V2: return "V2";
  }
  return "?";
}

json FeatureConfig::to_json() const {
  return {{"modality", std::string(to_string(modality))},
          {"pooling", std::string(to_string(pooling))},
          {"normalize", normalize}};
}

FeatureConfig FeatureConfig::from_json(const json& j) {
  FeatureConfig c;
  if (j.contains("modality")) c.modality = parse_modality(j.at("modality").get<std::string>());
  if (j.contains("pooling")) c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  if (j.contains("normalize")) c.normalize = j.at("normalize").get<bool>();
  return c;
}

std::string FeatureConfig::tag() const {
  return std::string(to_string(modality)) + "/" + std::string(to_string(pooling));
}

std::span<const double> JointFeature::segment(SegmentName name) const {
  for (const auto& s : layout) {
    if (s.name == name) return std::span<const double>(values).subspan(s.offset, s.length);
  }
  return {};
}

json NormStats::to_json() const { return {{"mean", mean}, {"std", std}}; }

NormStats NormStats::from_json(const json& j) {
  NormStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != s.std.size()) throw ValidationError("norm_stats mean/std length mismatch");
  return s;
}

std::vector<double> mean_pool(const Tensor& patches) {
  check_patches(patches);
  const std::size_t n = patches.rows();
  const std::size_t d = patches.cols();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = patches.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] += row[j];
  }
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

std::vector<double> max_pool(const Tensor& patches) {
  check_patches(patches);
  const auto first = patches.row(0);
  std::vector<double> out(first.begin(), first.end());
  for (std::size_t i = 1; i < patches.rows(); ++i) {
    const auto row = patches.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::max(out[j], static_cast<double>(row[j]));
  }
  return out;
}

std::vector<Segment> joint_layout(const FeatureConfig& config, std::size_t text_dim, std::size_t vision_dim) {
  const bool text = config.modality != Modality::vision_only;
  const bool vision = config.modality != Modality::text_only;
  std::vector<Segment> layout;
  std::size_t offset = 0;
  auto add = [&](SegmentName name, std::size_t len) {
    layout.push_back({name, offset, len});
    offset += len;
  };
  if (text) add(SegmentName::T1, text_dim);
  if (vision) add(SegmentName::V1, vision_dim);
  if (text) add(SegmentName::T2, text_dim);
  if (vision) add(SegmentName::V2, vision_dim);
  return layout;
}

JointFeature assemble(const FeatureRecord& record, const FeatureConfig& config, const NormStats* stats) {
  JointFeature f;
  f.layout = joint_layout(config, record.t1.data.size(), record.v1.width());
  for (const auto& seg : f.layout) {
    switch (seg.name) {
      case SegmentName::T1: f.values.insert(f.values.end(), record.t1.data.begin(), record.t1.data.end()); break;
      case SegmentName::T2: f.values.insert(f.values.end(), record.t2.data.begin(), record.t2.data.end()); break;
      case SegmentName::V1: {
        const auto v = vision_vector(record.v1, config.pooling);
        f.values.insert(f.values.end(), v.begin(), v.end());
        break;
      }
      case SegmentName::V2: {
        const auto v = vision_vector(record.v2, config.pooling);
        f.values.insert(f.values.end(), v.begin(), v.end());
        break;
      }
    }
  }
  if (config.normalize) {
    if (stats == nullptr) throw ValidationError("normalization requested without norm stats");
    normalize_in_place(f.values, *stats);
  }
  return f;
}

void normalize_in_place(std::span<double> values, const NormStats& stats) {
  if (stats.size() != values.size() || stats.std.size() != values.size()) {
    throw ValidationError("norm stats length " + std::to_string(stats.size()) + " does not match feature length " +
                          std::to_string(values.size()));
  }
  for (std::size_t j = 0; j < values.size(); ++j) values[j] = (values[j] - stats.mean[j]) / stats.std[j];
}

NormStats fit_norm_stats(std::span<const FeatureRecord> records, const FeatureConfig& config) {
  if (records.size() < 2) throw ValidationError("norm stats need at least 2 records");
  FeatureConfig raw = config;
  raw.normalize = false;
  std::vector<std::vector<double>> features;
  features.reserve(records.size());
  for (const auto& r : records) features.push_back(assemble(r, raw).values);
  const std::size_t d = features.front().size();
  const auto n = static_cast<double>(features.size());
  NormStats s;
  s.mean.assign(d, 0.0);
  s.std.assign(d, 0.0);
  for (const auto& f : features) {
    if (f.size() != d) throw ValidationError("records assemble to different feature lengths");
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += f[j];
  }
  for (auto& m : s.mean) m /= n;
  for (const auto& f : features) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = f[j] - s.mean[j];
      s.std[j] += c * c;
    }
  }
  for (auto& v : s.std) v = std::max(std::sqrt(v / n), NormStats::kStdFloor);
  return s;
}

}  // namespace retgate
