#include "retgate/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "retgate/error.hpp"
#include "retgate/rng.hpp"

namespace retgate {

using nlohmann::json;

namespace {

constexpr std::uint64_t kLabelStream = 0xA11;
constexpr std::uint64_t kCenterStream = 0xCE;
constexpr std::uint64_t kFeatureStream = 0xFE;

std::vector<OutcomeLabel> draw_labels(const SynthSpec& spec) {
  Rng rng(combine_seed(spec.seed, kLabelStream));
  std::vector<OutcomeLabel> labels;
  labels.reserve(spec.n_samples);
  if (spec.exact_counts) {
    // Largest-remainder apportionment, ties to the lower ordinal.
    std::array<std::size_t, kNumLabels> counts{};
    std::array<double, kNumLabels> remainder{};
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < kNumLabels; ++c) {
      const double exact = spec.class_mix[c] * static_cast<double>(spec.n_samples);
      counts[c] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      remainder[c] = exact - static_cast<double>(counts[c]);
      assigned += counts[c];
    }
    std::array<std::size_t, kNumLabels> order{0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < spec.n_samples; ++k, ++assigned) counts[order[k % kNumLabels]]++;
    for (std::size_t c = 0; c < kNumLabels; ++c) labels.insert(labels.end(), counts[c], label_from_ordinal(static_cast<int>(c)));
    rng.shuffle(std::span<OutcomeLabel>(labels));
    return labels;
  }
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t c = 0;
    for (; c + 1 < kNumLabels; ++c) {
      cum += spec.class_mix[c];
      if (u < cum) break;
    }
    // Skip zero-probability tail classes that rounding could land on.
    while (spec.class_mix[c] == 0.0 && c > 0) --c;
    labels.push_back(label_from_ordinal(static_cast<int>(c)));
  }
  return labels;
}

std::vector<float> noisy(const std::vector<double>& center, double noise_std, Rng& rng) {
  std::vector<float> out(center.size());
  for (std::size_t j = 0; j < center.size(); ++j) out[j] = static_cast<float>(center[j] + noise_std * rng.normal());
  return out;
}

VisionFeature vision(const SynthSpec& spec, const std::vector<double>& center, Rng& rng) {
  VisionFeature v;
  if (spec.pooled_vision) {
    v.kind = VisionFeature::Kind::pooled;
    v.tensor = Tensor::vector(noisy(center, spec.noise_std, rng));
    return v;
  }
  v.kind = VisionFeature::Kind::patches;
  std::vector<float> data;
  data.reserve(spec.n_patches * spec.d_v);
  for (std::size_t p = 0; p < spec.n_patches; ++p) {
    const auto row = noisy(center, spec.noise_std, rng);
    data.insert(data.end(), row.begin(), row.end());
  }
  v.tensor = Tensor::matrix(spec.n_patches, spec.d_v, std::move(data));
  return v;
}

std::vector<FeatureRecord> build_layer(const SynthSpec& spec, const std::vector<OutcomeLabel>& labels, int layer,
                                       ChannelSeparation separation) {
  const SynthCenters centers = synth_centers(spec, layer, separation);
  const std::uint64_t layer_seed =
      combine_seed(combine_seed(spec.seed, kFeatureStream), static_cast<std::uint64_t>(layer));
  std::vector<FeatureRecord> records;
  records.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Rng rng(combine_seed(layer_seed, i));
    const auto c = static_cast<std::size_t>(ordinal(labels[i]));
    FeatureRecord r;
    r.id = fmt::format("syn-{:06d}", i);
    r.dataset = spec.dataset;
    r.backbone = "synthetic";
    r.layer = layer;
    r.t1 = Tensor::vector(noisy(centers.centers[0][c], spec.noise_std, rng));
    r.v1 = vision(spec, centers.centers[1][c], rng);
    r.t2 = Tensor::vector(noisy(centers.centers[2][c], spec.noise_std, rng));
    r.v2 = vision(spec, centers.centers[3][c], rng);
    std::tie(r.correct_with, r.correct_without) = correctness_of(labels[i]);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace

void SynthSpec::check() const {
  double sum = 0.0;
  for (double p : class_mix) {
    if (!(p >= 0.0)) throw ValidationError("class_mix entries must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("class_mix must sum to 1");
  if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
  if (d_t < 1 || d_v < 1 || n_patches < 1) throw ValidationError("d_t, d_v and n_patches must be >= 1");
  if (!(noise_std > 0.0)) throw ValidationError("noise_std must be positive");
  if (!(separation >= 0.0)) throw ValidationError("separation must be non-negative");
  for (const auto& [layer, sep] : layer_profile) {
    if (layer < 0) throw ValidationError("layer_profile keys must be non-negative");
    if (!(sep.text >= 0.0) || !(sep.vision >= 0.0)) throw ValidationError("layer_profile separations must be non-negative");
  }
  if (layer < 0) throw ValidationError("layer must be non-negative");
}

json SynthSpec::to_json() const {
  json profile = json::object();
  for (const auto& [layer, sep] : layer_profile) {
    profile[std::to_string(layer)] = {{"text", sep.text}, {"vision", sep.vision}};
  }
  return {{"n_samples", n_samples}, {"class_mix", class_mix},     {"d_t", d_t},
          {"d_v", d_v},             {"n_patches", n_patches},     {"separation", separation},
          {"layer_profile", profile}, {"noise_std", noise_std},   {"seed", seed},
          {"layer", layer},         {"exact_counts", exact_counts}, {"pooled_vision", pooled_vision},
          {"dataset", dataset}};
}

SynthSpec SynthSpec::from_json(const json& j) {
  SynthSpec s;
  try {
    s.n_samples = j.value("n_samples", s.n_samples);
    if (j.contains("class_mix")) s.class_mix = j.at("class_mix").get<std::array<double, kNumLabels>>();
    s.d_t = j.value("d_t", s.d_t);
    s.d_v = j.value("d_v", s.d_v);
    s.n_patches = j.value("n_patches", s.n_patches);
    s.separation = j.value("separation", s.separation);
    if (j.contains("layer_profile") && !j.at("layer_profile").is_null()) {
      for (const auto& [key, value] : j.at("layer_profile").items()) {
        ChannelSeparation sep;
        if (value.is_number()) {
          sep.text = sep.vision = value.get<double>();
        } else {
          sep.text = value.at("text").get<double>();
          sep.vision = value.at("vision").get<double>();
        }
        s.layer_profile[std::stoi(key)] = sep;
      }
    }
    s.noise_std = j.value("noise_std", s.noise_std);
    s.seed = j.value("seed", s.seed);
    s.layer = j.value("layer", s.layer);
    s.exact_counts = j.value("exact_counts", s.exact_counts);
    s.pooled_vision = j.value("pooled_vision", s.pooled_vision);
    s.dataset = j.value("dataset", s.dataset);
  } catch (const json::exception& e) {
    throw ParseError(std::string("synth spec: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ParseError("synth spec: layer_profile keys must be integers");
  }
  s.check();
  return s;
}

SynthCenters synth_centers(const SynthSpec& spec, int layer, ChannelSeparation separation) {
  SynthCenters out;
  const std::uint64_t base = combine_seed(combine_seed(spec.seed, kCenterStream), static_cast<std::uint64_t>(layer));
  for (std::size_t segment = 0; segment < 4; ++segment) {
    const bool is_text = segment % 2 == 0;
    const std::size_t dim = is_text ? spec.d_t : spec.d_v;
    const double sep = (is_text ? separation.text : separation.vision) * spec.noise_std;
    Rng rng(combine_seed(base, segment));
    if (dim >= kNumLabels) {
      // Scaled one-hot centers on distinct random axes: every pair of
      // classes sits exactly `sep` apart.
      std::vector<std::size_t> axes(dim);
      std::iota(axes.begin(), axes.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(axes));
      for (std::size_t c = 0; c < kNumLabels; ++c) {
        std::vector<double> center(dim, 0.0);
        center[axes[c]] = sep / std::sqrt(2.0);
        out.centers[segment][c] = std::move(center);
      }
    } else {
      // Too few dimensions for orthogonal centers: equally spaced on axis 0.
      for (std::size_t c = 0; c < kNumLabels; ++c) {
        std::vector<double> center(dim, 0.0);
        center[0] = sep * static_cast<double>(c);
        out.centers[segment][c] = std::move(center);
      }
    }
  }
  return out;
}

std::vector<FeatureRecord> generate(const SynthSpec& spec) {
  spec.check();
  return build_layer(spec, draw_labels(spec), spec.layer, {spec.separation, spec.separation});
}

std::map<int, std::vector<FeatureRecord>> generate_layers(const SynthSpec& spec) {
  spec.check();
  std::map<int, std::vector<FeatureRecord>> out;
  const auto labels = draw_labels(spec);
  if (spec.layer_profile.empty()) {
    out.emplace(spec.layer, build_layer(spec, labels, spec.layer, {spec.separation, spec.separation}));
    return out;
  }
  for (const auto& [layer, sep] : spec.layer_profile) out.emplace(layer, build_layer(spec, labels, layer, sep));
  return out;
}

StaticPolicyAccuracies oracle_policy_accuracies(std::span<const FeatureRecord> records) {
  if (records.empty()) throw ValidationError("oracle policy accuracies need at least one record");
  std::array<std::size_t, kNumLabels> n{};
  for (const auto& r : records) n[static_cast<std::size_t>(ordinal(r.label()))]++;
  const std::size_t total = records.size();
  return {{n[1] + n[3], total}, {n[2] + n[3], total}, {n[1] + n[2] + n[3], total}};
}

}  // namespace retgate
