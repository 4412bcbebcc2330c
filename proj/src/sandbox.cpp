#include "fakg/sandbox.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fakg/bundled_data.hpp"
#include "fakg/error.hpp"

namespace fakg {

std::vector<Template> parse_templates(std::string_view json_text) {
  using json = nlohmann::json;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("templates: ") + e.what());
  }
  if (!doc.is_array() || doc.empty()) {
    throw Error(ErrorCode::kParse, "templates must be a non-empty JSON array");
  }
  std::vector<Template> out;
  for (const auto& item : doc) {
    if (!item.is_object() || !item.contains("id") || !item["id"].is_number_integer() ||
        !item.contains("think") || !item["think"].is_string() || !item.contains("answer") ||
        !item["answer"].is_string()) {
      throw Error(ErrorCode::kParse, "template needs integer 'id' and string 'think'/'answer'");
    }
    out.push_back({item["id"].get<int>(), item["think"].get<std::string>(),
                   item["answer"].get<std::string>()});
  }
  std::sort(out.begin(), out.end(), [](const Template& a, const Template& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].id != static_cast<int>(i)) {
      throw Error(ErrorCode::kParse, "template ids must be dense 0.." + std::to_string(out.size() - 1));
    }
  }
  return out;
}

std::vector<Template> load_templates_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kParse, "cannot read templates '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_templates(buffer.str());
}

std::vector<Template> reference_templates() { return parse_templates(reference_templates_json()); }

ToyPolicy::ToyPolicy(std::size_t k, double temperature)
    : ToyPolicy(std::vector<double>(k, 0.0), temperature) {}

ToyPolicy::ToyPolicy(std::vector<double> logits, double temperature)
    : logits_(std::move(logits)), temperature_(temperature) {
  if (logits_.empty()) throw Error(ErrorCode::kInvalidArgument, "policy needs at least one template");
  if (!(temperature_ > 0) || !std::isfinite(temperature_)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature must be positive and finite");
  }
}

std::vector<double> ToyPolicy::log_probabilities() const {
  std::vector<double> z(logits_.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = logits_[i] / temperature_;
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0;
  for (double v : z) s += std::exp(v - m);
  const double log_s = m + std::log(s);
  for (double& v : z) v -= log_s;
  return z;
}

std::vector<double> ToyPolicy::probabilities() const {
  std::vector<double> p = log_probabilities();
  for (double& v : p) v = std::exp(v);
  return p;
}

std::vector<std::size_t> sample_group(const ToyPolicy& p, std::size_t group_size,
                                      std::mt19937_64& rng) {
  const auto probs = p.probabilities();
  std::discrete_distribution<std::size_t> dist(probs.begin(), probs.end());
  std::vector<std::size_t> out(group_size);
  for (auto& t : out) t = dist(rng);
  return out;
}

namespace {

void check_group(const ToyPolicy& p, std::span<const std::size_t> group,
                 std::span<const double> advantages) {
  if (group.empty()) throw Error(ErrorCode::kInvalidArgument, "empty group");
  if (group.size() != advantages.size()) {
    throw Error(ErrorCode::kInvalidArgument, "group and advantages differ in length");
  }
  for (std::size_t t : group) {
    if (t >= p.size()) throw Error(ErrorCode::kInvalidArgument, "template id out of range");
  }
}

}  // namespace

double surrogate_loss(const ToyPolicy& p, std::span<const std::size_t> group,
                      std::span<const double> advantages) {
  check_group(p, group, advantages);
  const auto logp = p.log_probabilities();
  double sum = 0;
  for (std::size_t g = 0; g < group.size(); ++g) sum += advantages[g] * logp[group[g]];
  return -sum / static_cast<double>(group.size());
}

std::vector<double> policy_gradient(const ToyPolicy& p, std::span<const std::size_t> group,
                                    std::span<const double> advantages) {
  check_group(p, group, advantages);
  const auto probs = p.probabilities();
  const double G = static_cast<double>(group.size());
  const double T = p.temperature();
  // d/dθ_j log π(t) = (1[j = t] − π_j) / T, so the group sum collapses to
  // (count_j − π_j ΣÂ) weighted by advantages.
  double adv_sum = 0;
  std::vector<double> weighted(p.size(), 0.0);
  for (std::size_t g = 0; g < group.size(); ++g) {
    weighted[group[g]] += advantages[g];
    adv_sum += advantages[g];
  }
  std::vector<double> grad(p.size());
  for (std::size_t j = 0; j < grad.size(); ++j) {
    grad[j] = -(weighted[j] - probs[j] * adv_sum) / (G * T);
  }
  return grad;
}

void TrainConfig::validate() const {
  if (group_size == 0) throw Error(ErrorCode::kInvalidArgument, "group size must be at least 1");
  if (!(step_size >= 0) || !std::isfinite(step_size)) {
    throw Error(ErrorCode::kInvalidArgument, "step size must be finite and non-negative");
  }
  if (!(temperature > 0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature must be positive and finite");
  }
  reward.weights.validate();
  tags.validate();
}

double expectation(const ToyPolicy& p, std::span<const double> per_template) {
  const auto probs = p.probabilities();
  double e = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) e += probs[i] * per_template[i];
  return e;
}

TrainResult train(const FaceAttackGraph& g, std::span<const Template> templates,
                  const TrainConfig& cfg) {
  if (templates.empty()) throw Error(ErrorCode::kInvalidArgument, "train: no templates");
  cfg.validate();
  StubVerifier verifier;
  ScoringContext ctx;
  ctx.graph = &g;
  ctx.verifier = &verifier;
  ctx.mode = cfg.mode;
  ctx.tags = cfg.tags;
  ctx.config = cfg.reward;
  const SupportSets sets = support_sets(g, attack_node_for_label(g, to_string(cfg.truth)));

  std::vector<std::string> rendered;
  TrainTrace trace;
  std::vector<double> totals, kgs;
  for (const auto& t : templates) {
    rendered.push_back(cfg.tags.render(t.think, t.answer));
    trace.template_rewards.push_back(score_response(rendered.back(), cfg.truth, sets, ctx));
    totals.push_back(trace.template_rewards.back().total);
    kgs.push_back(trace.template_rewards.back().r_kg);
  }

  ToyPolicy policy(templates.size(), cfg.temperature);
  trace.initial_expected_total = expectation(policy, totals);
  trace.initial_expected_r_kg = expectation(policy, kgs);
  std::mt19937_64 rng(cfg.seed);
  trace.iterations.reserve(cfg.iterations);
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    rec.expected_total = expectation(policy, totals);
    rec.expected_r_kg = expectation(policy, kgs);
    rec.sampled = sample_group(policy, cfg.group_size, rng);
    std::vector<std::string> responses;
    responses.reserve(rec.sampled.size());
    for (std::size_t t : rec.sampled) responses.push_back(rendered[t]);
    GroupScore score = score_group(responses, cfg.truth, ctx);
    rec.advantages = std::move(score.advantages);
    const auto grad = policy_gradient(policy, rec.sampled, rec.advantages);
    double sq = 0;
    for (std::size_t j = 0; j < grad.size(); ++j) {
      policy.logits()[j] -= cfg.step_size * grad[j];
      sq += grad[j] * grad[j];
    }
    rec.grad_norm = std::sqrt(sq);
    trace.iterations.push_back(std::move(rec));
  }
  trace.final_expected_total = expectation(policy, totals);
  trace.final_expected_r_kg = expectation(policy, kgs);
  return {std::move(policy), std::move(trace)};
}

nlohmann::ordered_json iteration_to_json(const IterationRecord& r) {
  nlohmann::ordered_json out;
  out["iteration"] = r.iteration;
  out["expected_total"] = r.expected_total;
  out["expected_r_kg"] = r.expected_r_kg;
  out["grad_norm"] = r.grad_norm;
  out["sampled"] = r.sampled;
  out["advantages"] = r.advantages;
  return out;
}

nlohmann::ordered_json summary_to_json(const TrainResult& result, const TrainConfig& cfg) {
  const TrainTrace& t = result.trace;
  nlohmann::ordered_json out;
  out["iterations"] = cfg.iterations;
  out["group_size"] = cfg.group_size;
  out["step_size"] = cfg.step_size;
  out["temperature"] = cfg.temperature;
  out["seed"] = cfg.seed;
  out["truth"] = std::string(to_string(cfg.truth));
  out["initial_expected_total"] = t.initial_expected_total;
  out["initial_expected_r_kg"] = t.initial_expected_r_kg;
  out["final_expected_total"] = t.final_expected_total;
  out["final_expected_r_kg"] = t.final_expected_r_kg;
  out["final_logits"] = result.policy.logits();
  out["final_probabilities"] = result.policy.probabilities();
  nlohmann::ordered_json rewards = nlohmann::ordered_json::array();
  for (const auto& b : t.template_rewards) {
    rewards.push_back({{"r_acc", b.r_acc}, {"r_fmt", b.r_fmt}, {"r_kg", b.r_kg}, {"total", b.total}});
  }
  out["template_rewards"] = std::move(rewards);
  return out;
}

std::string sparkline(std::span<const IterationRecord> iterations, std::size_t width) {
  static const char* kBlocks[] = {"▁", "▂", "▃", "▄",
                                  "▅", "▆", "▇", "█"};
  if (iterations.empty() || width == 0) return {};
  const std::size_t buckets = std::min(width, iterations.size());
  std::vector<double> means(buckets, 0.0);
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t lo = b * iterations.size() / buckets;
    const std::size_t hi = (b + 1) * iterations.size() / buckets;
    for (std::size_t i = lo; i < hi; ++i) means[b] += iterations[i].expected_total;
    means[b] /= static_cast<double>(hi - lo);
  }
  const auto [mn, mx] = std::minmax_element(means.begin(), means.end());
  std::string out;
  for (double m : means) {
    const double span = *mx - *mn;
    const auto level = span <= 0 ? 0 : static_cast<std::size_t>(std::lround((m - *mn) / span * 7.0));
    out += kBlocks[std::min<std::size_t>(level, 7)];
  }
  return out;
}

}  // namespace fakg
