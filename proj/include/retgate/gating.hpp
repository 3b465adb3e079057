#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "retgate/records.hpp"

namespace retgate {

enum class GatePolicy { pessimistic, optimistic, always_rir, never_rir, oracle };

inline constexpr std::array<GatePolicy, 5> kAllPolicies = {GatePolicy::pessimistic, GatePolicy::optimistic,
                                                           GatePolicy::always_rir, GatePolicy::never_rir,
                                                           GatePolicy::oracle};

std::string_view to_string(GatePolicy policy);
GatePolicy parse_policy(std::string_view text);

/// Ground-truth (correct_with, correct_without) pair.
using Correctness = std::pair<bool, bool>;

/// Whether to answer with the retrieved image.
///   pessimistic: retrieve only for predicted S2
///   optimistic:  retrieve unless predicted S3
///   oracle:      retrieve iff the with-retrieval answer is correct
/// `truth` is required for oracle and rejected otherwise.
bool gate(OutcomeLabel predicted, GatePolicy policy, std::optional<Correctness> truth = std::nullopt);

struct GateDecision {
  std::string id;
  bool r = false;
  OutcomeLabel predicted = OutcomeLabel::S1;
  GatePolicy policy = GatePolicy::pessimistic;

  bool operator==(const GateDecision&) const = default;
  nlohmann::json to_json() const;
  static GateDecision from_json(const nlohmann::json& j);
};

/// One decision per record, in record order.
std::vector<GateDecision> decide(std::span<const FeatureRecord> records, std::span<const OutcomeLabel> predicted,
                                 GatePolicy policy);

void save_decisions(std::span<const GateDecision> decisions, const std::filesystem::path& path);
std::vector<GateDecision> load_decisions(const std::filesystem::path& path);

}  // namespace retgate
