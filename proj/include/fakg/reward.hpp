#pragma once

// Accuracy, format and KG-consistency rewards, their weighted combination,
// and critic-free group-relative advantages.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fakg/graph.hpp"
#include "fakg/grounding.hpp"
#include "fakg/labels.hpp"

namespace fakg {

struct RewardWeights {
  double lambda_acc = 0.5;
  double lambda_fmt = 0.1;
  double lambda_kg = 0.4;
  double eta = 0.5;
  double epsilon_den = 1e-8;
  double epsilon_adv = 1e-6;

  // Throws Error(kInvalidArgument) on negative/non-finite weights or
  // non-positive epsilons.
  void validate() const;
};

// Lowercase, trim, collapse internal whitespace, strip trailing punctuation.
std::string normalize_answer(std::string_view text);

class LabelNormalizer {
 public:
  LabelNormalizer();  // canonical spellings only
  // Keys are normalized on insertion.
  void add_synonym(std::string_view surface, FineLabel label);
  std::optional<FineLabel> resolve(std::string_view answer) const;
  const std::map<std::string, FineLabel>& synonyms() const noexcept { return synonyms_; }

 private:
  std::map<std::string, FineLabel> synonyms_;
};

struct RewardConfig {
  RewardWeights weights;
  LabelNormalizer normalizer;
};

// {"lambda_acc", "lambda_fmt", "lambda_kg", "eta", "epsilon_den",
//  "epsilon_adv", "synonyms": {"surface": "Label"}}; every key optional.
RewardConfig parse_reward_config(std::string_view json_text);
RewardConfig load_reward_config(const std::filesystem::path& path);

struct RewardBreakdown {
  double r_acc = 0;
  double r_fmt = 0;
  double r_match = 0;
  double r_conflict = 0;
  double r_kg = 0;
  double total = 0;
};

struct KgReward {
  double r_match = 0;
  double r_conflict = 0;
  double r_kg = 0;
};

double accuracy_reward(std::string_view answer, FineLabel truth, const LabelNormalizer& norm);
double format_reward(const ParsedResponse& parsed);

// Intersections are by relation identity; both index lists must come from
// the same graph.
KgReward kg_reward(std::span<const RelationIndex> grounded, const SupportSets& sets,
                   const RewardWeights& w);
KgReward kg_reward(const GroundingReport& report, const SupportSets& sets, const RewardWeights& w);

double total_reward(const RewardBreakdown& b, const RewardWeights& w);

struct GroupAdvantages {
  double mu = 0;
  double sigma = 0;
  std::vector<double> advantages;
};

// Population standard deviation. Throws Error(kInvalidArgument) on an empty
// group. Groups whose totals are all equal get exactly zero advantages.
GroupAdvantages group_advantages(std::span<const double> totals, double epsilon_adv);

struct GroupScore {
  std::vector<RewardBreakdown> breakdowns;
  std::vector<GroundingReport> reports;
  double mu = 0;
  double sigma = 0;
  std::vector<double> advantages;
};

struct ScoringContext {
  const FaceAttackGraph* graph = nullptr;
  VerifierClient* verifier = nullptr;  // may be null for kPatternOnly
  GroundingMode mode = GroundingMode::kFallbackVerifier;
  TagConfig tags;
  RewardConfig config;
};

// Scores one response against precomputed support sets.
RewardBreakdown score_response(std::string_view raw, FineLabel truth, const SupportSets& sets,
                               const ScoringContext& ctx, GroundingReport* report_out = nullptr);

// parse -> ground -> rewards for every response, then group advantages.
// Propagates TransportError; throws Error(kUnknownLabel) if the graph has
// no attack node for truth.
GroupScore score_group(std::span<const std::string> raws, FineLabel truth,
                       const ScoringContext& ctx);

}  // namespace fakg
