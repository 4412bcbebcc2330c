#include <doctest.h>

#include <cmath>
#include <random>

#include "fakg/error.hpp"
#include "fakg/sandbox.hpp"
#include "support.hpp"

using namespace fakg;
using namespace fakg::testing;

namespace {

double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

std::vector<double> numeric_gradient(const ToyPolicy& p, std::span<const std::size_t> group,
                                     std::span<const double> adv, double h = 1e-5) {
  std::vector<double> out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    ToyPolicy up = p, down = p;
    up.logits()[j] += h;
    down.logits()[j] -= h;
    out[j] = (surrogate_loss(up, group, adv) - surrogate_loss(down, group, adv)) / (2 * h);
  }
  return out;
}

}  // namespace

TEST_CASE("softmax policy") {
  ToyPolicy u(4);
  for (double p : u.probabilities()) CHECK(p == doctest::Approx(0.25));
  ToyPolicy big(std::vector<double>{1000, 0, -1000}, 1.0);
  const auto p = big.probabilities();
  CHECK(std::isfinite(p[1]));
  CHECK(p[0] == doctest::Approx(1.0));
  const auto lp = big.log_probabilities();
  CHECK(lp[1] == doctest::Approx(-1000));
  ToyPolicy hot(std::vector<double>{1, 0}, 0.5);
  CHECK(hot.probabilities()[0] == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 1)));
  CHECK_THROWS_AS(ToyPolicy(std::vector<double>{1.0}, 0.0), Error);
  CHECK_THROWS_AS(ToyPolicy(0), Error);
}

TEST_CASE("sample_group examples") {
  std::mt19937_64 rng(5);
  ToyPolicy dominant(std::vector<double>{0, 0, 50, 0}, 1.0);
  for (auto t : sample_group(dominant, 64, rng)) CHECK(t == 2);
  ToyPolicy single(1);
  for (auto t : sample_group(single, 16, rng)) CHECK(t == 0);

  const std::size_t K = 5, n = 10000;
  std::vector<std::size_t> counts(K);
  for (auto t : sample_group(ToyPolicy(K), n, rng)) ++counts[t];
  const double sigma = std::sqrt(n * (1.0 / K) * (1 - 1.0 / K));
  for (auto c : counts) CHECK(std::abs(static_cast<double>(c) - n / static_cast<double>(K)) <= 3 * sigma);
}

TEST_CASE("surrogate loss examples") {
  ToyPolicy p(2);
  std::vector<std::size_t> g = {0};
  std::vector<double> a = {1};
  CHECK(surrogate_loss(p, g, a) == doctest::Approx(0.69314718).epsilon(1e-7));
  a = {-1};
  CHECK(surrogate_loss(p, g, a) == doctest::Approx(-0.69314718).epsilon(1e-7));
  g = {0, 1, 1};
  std::vector<double> zero = {0, 0, 0};
  CHECK(surrogate_loss(p, g, zero) == 0.0);
  for (double x : policy_gradient(p, g, zero)) CHECK(x == 0.0);
  std::vector<double> wrong = {1};
  CHECK_THROWS_AS(surrogate_loss(p, g, wrong), Error);
  CHECK_THROWS_AS(policy_gradient(p, g, wrong), Error);
  std::vector<std::size_t> oob = {7};
  CHECK_THROWS_AS(surrogate_loss(p, oob, a), Error);
}

TEST_CASE("gradient closed form on a uniform policy") {
  for (double T : {1.0, 0.5, 2.0}) {
    const std::size_t K = 4, G = 3;
    ToyPolicy p(K, T);
    std::vector<std::size_t> g = {1, 0, 0};
    std::vector<double> a = {1, 0, 0};
    const auto grad = policy_gradient(p, g, a);
    CHECK(grad[1] == doctest::Approx(-(1 - 1.0 / K) / (G * T)).epsilon(1e-12));
    for (std::size_t j : {0u, 2u, 3u}) CHECK(grad[j] == doctest::Approx(1.0 / (K * G * T)).epsilon(1e-12));
  }
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> n(0, 1.5);
  std::uniform_real_distribution<double> temp(0.3, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 1 + rng() % 8, G = 1 + rng() % 12;
    std::vector<double> theta(K);
    for (auto& t : theta) t = n(rng);
    ToyPolicy p(theta, temp(rng));
    std::vector<std::size_t> g(G);
    std::vector<double> a(G);
    for (std::size_t i = 0; i < G; ++i) {
      g[i] = rng() % K;
      a[i] = n(rng);
    }
    const auto analytic = policy_gradient(p, g, a);
    CHECK(max_rel_error(analytic, numeric_gradient(p, g, a)) < 1e-4);
  }
}

TEST_CASE("template parsing") {
  const auto t = parse_templates(R"([{"id": 1, "think": "b", "answer": "Print"}, {"id": 0, "think": "a", "answer": "Replay"}])");
  REQUIRE(t.size() == 2);
  CHECK(t[0].think == "a");
  CHECK_THROWS_AS(parse_templates(R"([{"id": 0, "think": "a", "answer": "x"}, {"id": 2, "think": "a", "answer": "x"}])"), Error);
  CHECK_THROWS_AS(parse_templates(R"([{"id": 0, "think": "a"}])"), Error);
  CHECK_THROWS_AS(parse_templates("[]"), Error);
  CHECK(reference_templates().size() == 6);
}

TEST_CASE("training fixed points") {
  const auto g = load_reference_graph();
  const auto ref = reference_templates();
  TrainConfig cfg;
  cfg.iterations = 20;

  std::vector<Template> same(4, ref[1]);
  for (int i = 0; i < 4; ++i) same[static_cast<std::size_t>(i)].id = i;
  auto r = [&] { return train(g, same, cfg); }();
  for (double x : r.policy.logits()) CHECK(x == 0.0);
  for (const auto& it : r.trace.iterations) CHECK(it.grad_norm == 0.0);

  cfg.step_size = 0;
  const auto frozen = train(g, ref, cfg);
  for (double x : frozen.policy.logits()) CHECK(x == 0.0);
  CHECK(frozen.trace.iterations.size() == 20);

  cfg.iterations = 0;
  const auto none = train(g, ref, cfg);
  CHECK(none.trace.iterations.empty());
  CHECK(none.trace.final_expected_total == none.trace.initial_expected_total);

  cfg = TrainConfig{};
  cfg.truth = FineLabel::kVideoDriven;
  GraphData d = toy_support_data();
  d.labels.clear();
  d.labels["Print"] = EntityId("A1");
  d.labels["Replay"] = EntityId("A2");
  const FaceAttackGraph partial(d);
  CHECK_THROWS_AS(train(partial, ref, cfg), Error);
  cfg.group_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("reference run: reproducible and improving") {
  const auto g = load_reference_graph();
  const auto ref = reference_templates();
  const TrainConfig cfg;
  const auto a = train(g, ref, cfg);
  const auto b = train(g, ref, cfg);
  REQUIRE(a.trace.iterations.size() == 200);
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(iteration_to_json(a.trace.iterations[i]).dump() == iteration_to_json(b.trace.iterations[i]).dump());
  }
  CHECK(summary_to_json(a, cfg).dump() == summary_to_json(b, cfg).dump());

  const auto& its = a.trace.iterations;
  CHECK(its.back().expected_r_kg - its.front().expected_r_kg >= 0.2);
  // Pinned from the reference run; a drop here means the reward stack moved.
  CHECK(its.back().expected_r_kg - its.front().expected_r_kg >= 0.75);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += its[i].expected_total;
    last += its[its.size() - 1 - i].expected_total;
  }
  CHECK(last > first);

  // Re-run the policy updates by hand to check the simplex at every step.
  ToyPolicy p(ref.size(), cfg.temperature);
  for (const auto& it : its) {
    const auto probs = p.probabilities();
    double sum = 0;
    for (double x : probs) sum += x;
    CHECK(std::abs(sum - 1) <= 1e-12);
    const auto grad = policy_gradient(p, it.sampled, it.advantages);
    for (std::size_t j = 0; j < p.size(); ++j) p.logits()[j] -= cfg.step_size * grad[j];
  }
  CHECK(p.logits() == a.policy.logits());

  const std::string line = sparkline(its, 40);
  CHECK_FALSE(line.empty());
}
