#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "retgate/evaluation.hpp"
#include "retgate/records.hpp"

namespace retgate {

/// Class-center separation per channel, in units of the within-class noise std.
struct ChannelSeparation {
  double text = 0.0;
  double vision = 0.0;
};

/// Parameters for Gaussian class-conditional synthetic records.
struct SynthSpec {
  std::size_t n_samples = 1000;
  std::array<double, kNumLabels> class_mix{0.25, 0.25, 0.25, 0.25};
  std::size_t d_t = 16;
  std::size_t d_v = 8;
  std::size_t n_patches = 4;
  double separation = 6.0;
  /// When non-empty, one record set per layer with per-channel separation;
  /// `separation` and `layer` are then ignored.
  std::map<int, ChannelSeparation> layer_profile;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  int layer = 0;
  /// Allocate class counts by largest remainder instead of sampling them.
  bool exact_counts = false;
  bool pooled_vision = false;
  std::string dataset = "synthetic";

  void check() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

/// Single-layer record set (uses `separation` on every channel).
std::vector<FeatureRecord> generate(const SynthSpec& spec);

/// One record set per layer of `layer_profile` (or just `spec.layer`). Every
/// layer shares ids and labels; only the features differ.
std::map<int, std::vector<FeatureRecord>> generate_layers(const SynthSpec& spec);

/// Class centers for one layer, indexed [segment T1,V1,T2,V2][class].
struct SynthCenters {
  std::array<std::array<std::vector<double>, kNumLabels>, 4> centers;
};
SynthCenters synth_centers(const SynthSpec& spec, int layer, ChannelSeparation separation);

/// Closed-form policy accuracies straight from the correctness pairs:
/// always = (|S2|+|S4|)/N, never = (|S3|+|S4|)/N, oracle = (|S2|+|S3|+|S4|)/N.
struct StaticPolicyAccuracies {
  Fraction always;
  Fraction never;
  Fraction oracle;
};
StaticPolicyAccuracies oracle_policy_accuracies(std::span<const FeatureRecord> records);

}  // namespace retgate
