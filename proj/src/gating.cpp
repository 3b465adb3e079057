#include "retgate/gating.hpp"

#include <fstream>

#include "retgate/error.hpp"

namespace retgate {

using nlohmann::json;

std::string_view to_string(GatePolicy policy) {
  switch (policy) {
    case GatePolicy::pessimistic: return "pessimistic";
    case GatePolicy::optimistic: return "optimistic";
    case GatePolicy::always_rir: return "always_rir";
    case GatePolicy::never_rir: return "never_rir";
    case GatePolicy::oracle: return "oracle";
  }
  return "?";
}

GatePolicy parse_policy(std::string_view text) {
  for (auto p : kAllPolicies) {
    if (to_string(p) == text) return p;
  }
  throw ParseError("unknown gate policy '" + std::string(text) + "'");
}

bool gate(OutcomeLabel predicted, GatePolicy policy, std::optional<Correctness> truth) {
  if (policy == GatePolicy::oracle) {
    if (!truth) throw ValidationError("oracle policy needs the ground-truth correctness pair");
    // Both-correct and both-wrong resolve to retrieval.
    return truth->first || !truth->second;
  }
  if (truth) throw ValidationError("ground truth is only accepted by the oracle policy");
  switch (policy) {
    case GatePolicy::pessimistic: return predicted == OutcomeLabel::S2;
    case GatePolicy::optimistic: return predicted != OutcomeLabel::S3;
    case GatePolicy::always_rir: return true;
    case GatePolicy::never_rir: return false;
    case GatePolicy::oracle: break;
  }
  return false;
}

json GateDecision::to_json() const {
  return {{"id", id}, {"r", r}, {"predicted", std::string(retgate::to_string(predicted))},
          {"policy", std::string(retgate::to_string(policy))}};
}

GateDecision GateDecision::from_json(const json& j) {
  GateDecision d;
  d.id = j.at("id").get<std::string>();
  d.r = j.at("r").get<bool>();
  d.predicted = parse_label(j.at("predicted").get<std::string>());
  d.policy = parse_policy(j.at("policy").get<std::string>());
  return d;
}

std::vector<GateDecision> decide(std::span<const FeatureRecord> records, std::span<const OutcomeLabel> predicted,
                                 GatePolicy policy) {
  if (records.size() != predicted.size()) throw ValidationError("prediction count does not match record count");
  std::vector<GateDecision> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    std::optional<Correctness> truth;
    if (policy == GatePolicy::oracle) truth = Correctness{r.correct_with, r.correct_without};
    out.push_back({r.id, gate(predicted[i], policy, truth), predicted[i], policy});
  }
  return out;
}

void save_decisions(std::span<const GateDecision> decisions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& d : decisions) out << d.to_json().dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<GateDecision> load_decisions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<GateDecision> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(GateDecision::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

}  // namespace retgate
