#pragma once

// Toy softmax policy over fixed response templates, trained with group
// sampling, the real reward stack, group-relative advantages and plain
// gradient descent on the surrogate loss.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fakg/graph.hpp"
#include "fakg/grounding.hpp"
#include "fakg/labels.hpp"
#include "fakg/reward.hpp"

namespace fakg {

struct Template {
  int id = 0;
  std::string think;
  std::string answer;
};

// [{"id", "think", "answer"}]; ids must be dense 0..K-1 (any order in the
// file, returned sorted). Throws Error(kParse).
std::vector<Template> parse_templates(std::string_view json_text);
std::vector<Template> load_templates_file(const std::filesystem::path& path);
std::vector<Template> reference_templates();

class ToyPolicy {
 public:
  // Uniform policy over k templates.
  explicit ToyPolicy(std::size_t k, double temperature = 1.0);
  ToyPolicy(std::vector<double> logits, double temperature);

  const std::vector<double>& logits() const noexcept { return logits_; }
  std::vector<double>& logits() noexcept { return logits_; }
  double temperature() const noexcept { return temperature_; }
  std::size_t size() const noexcept { return logits_.size(); }

  // softmax(theta / T), max-shifted.
  std::vector<double> probabilities() const;
  std::vector<double> log_probabilities() const;

 private:
  std::vector<double> logits_;
  double temperature_;
};

// G i.i.d. categorical draws.
std::vector<std::size_t> sample_group(const ToyPolicy& p, std::size_t group_size,
                                      std::mt19937_64& rng);

// -(1/G) sum_g A_g log pi(t_g). Throws Error(kInvalidArgument) on length
// mismatch, empty groups or out-of-range template ids.
double surrogate_loss(const ToyPolicy& p, std::span<const std::size_t> group,
                      std::span<const double> advantages);
// Exact gradient of surrogate_loss with respect to the logits.
std::vector<double> policy_gradient(const ToyPolicy& p, std::span<const std::size_t> group,
                                    std::span<const double> advantages);

struct TrainConfig {
  std::size_t iterations = 200;
  std::size_t group_size = 8;
  double step_size = 0.5;
  std::uint64_t seed = 7;
  double temperature = 1.0;
  FineLabel truth = FineLabel::kReplay;
  RewardConfig reward;
  TagConfig tags;
  GroundingMode mode = GroundingMode::kFallbackVerifier;

  // group_size >= 1, step_size >= 0, temperature > 0, finite.
  void validate() const;
};

struct IterationRecord {
  std::size_t iteration = 0;   // 1-based
  double expected_total = 0;   // under the policy that sampled this group
  double expected_r_kg = 0;
  double grad_norm = 0;
  std::vector<std::size_t> sampled;
  std::vector<double> advantages;
};

struct TrainTrace {
  std::vector<IterationRecord> iterations;
  std::vector<RewardBreakdown> template_rewards;  // one per template
  double initial_expected_total = 0;
  double initial_expected_r_kg = 0;
  double final_expected_total = 0;
  double final_expected_r_kg = 0;
};

struct TrainResult {
  ToyPolicy policy;
  TrainTrace trace;
};

// Scores with the stub verifier. Throws Error(kUnknownLabel) when the truth
// label has no attack node, Error(kInvalidArgument) on empty templates.
TrainResult train(const FaceAttackGraph& g, std::span<const Template> templates,
                  const TrainConfig& cfg);

// Expectation of a per-template quantity under the policy.
double expectation(const ToyPolicy& p, std::span<const double> per_template);

nlohmann::ordered_json iteration_to_json(const IterationRecord& r);
nlohmann::ordered_json summary_to_json(const TrainResult& result, const TrainConfig& cfg);
// One block character per bucket of expected total reward.
std::string sparkline(std::span<const IterationRecord> iterations, std::size_t width = 60);

}  // namespace fakg
