#include "fakg/reward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fakg/error.hpp"

namespace fakg {

void RewardWeights::validate() const {
  for (double w : {lambda_acc, lambda_fmt, lambda_kg, eta}) {
    if (!std::isfinite(w) || w < 0) {
      throw Error(ErrorCode::kInvalidArgument, "reward weights must be finite and non-negative");
    }
  }
  for (double e : {epsilon_den, epsilon_adv}) {
    if (!std::isfinite(e) || e <= 0) {
      throw Error(ErrorCode::kInvalidArgument, "reward epsilons must be finite and positive");
    }
  }
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  while (!out.empty() && (std::ispunct(static_cast<unsigned char>(out.back())) ||
                          std::isspace(static_cast<unsigned char>(out.back())))) {
    out.pop_back();
  }
  return out;
}

LabelNormalizer::LabelNormalizer() {
  for (FineLabel label : kAllFineLabels) add_synonym(to_string(label), label);
}

void LabelNormalizer::add_synonym(std::string_view surface, FineLabel label) {
  synonyms_[normalize_answer(surface)] = label;
}

std::optional<FineLabel> LabelNormalizer::resolve(std::string_view answer) const {
  auto it = synonyms_.find(normalize_answer(answer));
  if (it == synonyms_.end()) return std::nullopt;
  return it->second;
}

RewardConfig parse_reward_config(std::string_view json_text) {
  using json = nlohmann::json;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("reward config: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kParse, "reward config must be a JSON object");
  RewardConfig cfg;
  const std::pair<const char*, double*> numbers[] = {
      {"lambda_acc", &cfg.weights.lambda_acc},   {"lambda_fmt", &cfg.weights.lambda_fmt},
      {"lambda_kg", &cfg.weights.lambda_kg},     {"eta", &cfg.weights.eta},
      {"epsilon_den", &cfg.weights.epsilon_den}, {"epsilon_adv", &cfg.weights.epsilon_adv}};
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const auto match = std::find_if(std::begin(numbers), std::end(numbers),
                                    [&](const auto& n) { return it.key() == n.first; });
    if (match != std::end(numbers)) {
      if (!it->is_number()) {
        throw Error(ErrorCode::kParse, "reward config: '" + it.key() + "' must be a number");
      }
      *match->second = it->get<double>();
    } else if (it.key() == "synonyms") {
      if (!it->is_object()) throw Error(ErrorCode::kParse, "reward config: 'synonyms' must be an object");
      for (auto s = it->begin(); s != it->end(); ++s) {
        if (!s->is_string()) {
          throw Error(ErrorCode::kParse, "reward config: synonym '" + s.key() + "' must map to a string");
        }
        cfg.normalizer.add_synonym(s.key(), require_fine_label(s->get<std::string>()));
      }
    } else {
      throw Error(ErrorCode::kParse, "reward config: unknown key '" + it.key() + "'");
    }
  }
  cfg.weights.validate();
  return cfg;
}

RewardConfig load_reward_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kParse, "cannot read reward config '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_reward_config(buffer.str());
}

double accuracy_reward(std::string_view answer, FineLabel truth, const LabelNormalizer& norm) {
  const auto resolved = norm.resolve(answer);
  return resolved && *resolved == truth ? 1.0 : 0.0;
}

double format_reward(const ParsedResponse& parsed) { return parsed.format_valid ? 1.0 : 0.0; }

namespace {

// Both inputs ascending and unique.
std::size_t intersection_size(std::span<const RelationIndex> a, std::span<const RelationIndex> b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

std::vector<RelationIndex> sorted_unique(std::span<const RelationIndex> in) {
  std::vector<RelationIndex> out(in.begin(), in.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

KgReward kg_reward(std::span<const RelationIndex> grounded, const SupportSets& sets,
                   const RewardWeights& w) {
  const auto c = sorted_unique(grounded);
  const auto plus = sorted_unique(sets.s_plus);
  const auto minus = sorted_unique(sets.s_minus);
  KgReward out;
  out.r_match = static_cast<double>(intersection_size(c, plus)) /
                (static_cast<double>(plus.size()) + w.epsilon_den);
  out.r_conflict = static_cast<double>(intersection_size(c, minus)) /
                   (static_cast<double>(minus.size()) + w.epsilon_den);
  out.r_kg = std::clamp(out.r_match - w.eta * out.r_conflict, 0.0, 1.0);
  return out;
}

KgReward kg_reward(const GroundingReport& report, const SupportSets& sets, const RewardWeights& w) {
  const auto relations = report.relations();
  return kg_reward(std::span<const RelationIndex>(relations), sets, w);
}

double total_reward(const RewardBreakdown& b, const RewardWeights& w) {
  return w.lambda_acc * b.r_acc + w.lambda_fmt * b.r_fmt + w.lambda_kg * b.r_kg;
}

GroupAdvantages group_advantages(std::span<const double> totals, double epsilon_adv) {
  if (totals.empty()) throw Error(ErrorCode::kInvalidArgument, "group_advantages: empty group");
  GroupAdvantages out;
  out.advantages.assign(totals.size(), 0.0);
  const bool constant = std::all_of(totals.begin(), totals.end(),
                                    [&](double t) { return t == totals.front(); });
  if (constant) {
    out.mu = totals.front();
    return out;
  }
  const double n = static_cast<double>(totals.size());
  out.mu = std::accumulate(totals.begin(), totals.end(), 0.0) / n;
  double ss = 0;
  for (double t : totals) ss += (t - out.mu) * (t - out.mu);
  out.sigma = std::sqrt(ss / n);
  for (std::size_t i = 0; i < totals.size(); ++i) {
    out.advantages[i] = (totals[i] - out.mu) / (out.sigma + epsilon_adv);
  }
  return out;
}

RewardBreakdown score_response(std::string_view raw, FineLabel truth, const SupportSets& sets,
                               const ScoringContext& ctx, GroundingReport* report_out) {
  const RewardWeights& w = ctx.config.weights;
  const ParsedResponse parsed = parse_response(raw, ctx.tags);
  GroundingReport report = ground(parsed.think, *ctx.graph, ctx.verifier, ctx.mode);
  const KgReward kg = kg_reward(report, sets, w);
  RewardBreakdown b;
  b.r_acc = accuracy_reward(parsed.answer, truth, ctx.config.normalizer);
  b.r_fmt = format_reward(parsed);
  b.r_match = kg.r_match;
  b.r_conflict = kg.r_conflict;
  b.r_kg = kg.r_kg;
  b.total = total_reward(b, w);
  if (report_out != nullptr) *report_out = std::move(report);
  return b;
}

GroupScore score_group(std::span<const std::string> raws, FineLabel truth,
                       const ScoringContext& ctx) {
  if (raws.empty()) throw Error(ErrorCode::kInvalidArgument, "score_group: empty group");
  if (ctx.graph == nullptr) throw Error(ErrorCode::kInvalidArgument, "score_group: no graph");
  const EntityId attack = attack_node_for_label(*ctx.graph, to_string(truth));
  const SupportSets sets = support_sets(*ctx.graph, attack);

  GroupScore score;
  score.breakdowns.reserve(raws.size());
  score.reports.resize(raws.size());
  std::vector<double> totals;
  totals.reserve(raws.size());
  for (std::size_t i = 0; i < raws.size(); ++i) {
    score.breakdowns.push_back(score_response(raws[i], truth, sets, ctx, &score.reports[i]));
    totals.push_back(score.breakdowns.back().total);
  }
  GroupAdvantages adv = group_advantages(totals, ctx.config.weights.epsilon_adv);
  score.mu = adv.mu;
  score.sigma = adv.sigma;
  score.advantages = std::move(adv.advantages);
  return score;
}

}  // namespace fakg
