#pragma once

// Shared fixtures and independent oracles. Oracles here deliberately avoid
// the library's own indices (adjacency lists, triple index, confusion
// matrices) and recompute from the raw document.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fakg/graph.hpp"
#include "fakg/labels.hpp"
#include "fakg/protocol_eval.hpp"

namespace fakg::testing {

inline Entity attack(const std::string& id, std::vector<std::string> aliases = {}) {
  return {EntityId(id), id, EntityKind::kAttackType, FeatureScope::kNotApplicable, std::move(aliases)};
}

inline Entity feature(const std::string& id, FeatureScope scope, std::vector<std::string> aliases = {}) {
  return {EntityId(id), id, EntityKind::kFeature, scope, std::move(aliases)};
}

inline Relation rel(const std::string& a, const std::string& p, const std::string& f,
                    std::vector<std::string> patterns = {}) {
  return {EntityId(a), p, EntityId(f), std::move(patterns)};
}

// Labels "L:<id>" for every attack, so the document satisfies the label
// coverage invariant.
inline void label_all(GraphData& d) {
  for (const auto& e : d.entities) {
    if (e.kind == EntityKind::kAttackType) d.labels["L:" + e.id.str()] = e.id;
  }
}

// A1-f1, A1-f2, A2-f2, A2-f3.
inline FaceAttackGraph path_graph() {
  GraphData d;
  d.entities = {attack("A1"), attack("A2"), feature("f1", FeatureScope::kSpecific),
                feature("f2", FeatureScope::kCommon), feature("f3", FeatureScope::kSpecific)};
  d.relations = {rel("A1", "shows", "f1"), rel("A1", "shows", "f2"), rel("A2", "shows", "f2"),
                 rel("A2", "shows", "f3")};
  label_all(d);
  return FaceAttackGraph(std::move(d));
}

// A1->f_common, A1->f_spec1, A2->f_common, A2->f_spec2.
inline GraphData toy_support_data() {
  GraphData d;
  d.entities = {attack("A1", {"first attack"}), attack("A2", {"second attack"}),
                feature("f_common", FeatureScope::kCommon, {"skin texture"}),
                feature("f_spec1", FeatureScope::kSpecific, {"moire"}),
                feature("f_spec2", FeatureScope::kSpecific, {"paper edge"})};
  d.relations = {rel("A1", "alters", "f_common"), rel("A1", "induces", "f_spec1"),
                 rel("A2", "alters", "f_common"), rel("A2", "reveals", "f_spec2")};
  label_all(d);
  return d;
}

// Random valid bipartite document: n_attacks + n_features <= max_nodes.
inline GraphData random_graph_data(std::mt19937_64& rng, std::size_t max_nodes = 50,
                                   double density = -1) {
  std::uniform_int_distribution<std::size_t> total(2, max_nodes);
  const std::size_t n = total(rng);
  std::uniform_int_distribution<std::size_t> attacks_d(1, n - 1);
  const std::size_t na = attacks_d(rng);
  const std::size_t nf = n - na;
  if (density < 0) density = std::uniform_real_distribution<double>(0.02, 0.3)(rng);
  std::bernoulli_distribution edge(density), common(0.3), extra_predicate(0.1), has_alias(0.5);
  GraphData d;
  for (std::size_t i = 0; i < na; ++i) d.entities.push_back(attack("a" + std::to_string(i)));
  for (std::size_t j = 0; j < nf; ++j) {
    Entity f = feature("f" + std::to_string(j), common(rng) ? FeatureScope::kCommon : FeatureScope::kSpecific);
    if (has_alias(rng)) f.aliases.push_back("alias " + std::to_string(j));
    d.entities.push_back(std::move(f));
  }
  std::shuffle(d.entities.begin(), d.entities.end(), rng);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nf; ++j) {
      if (!edge(rng)) continue;
      const std::string a = "a" + std::to_string(i), f = "f" + std::to_string(j);
      d.relations.push_back(rel(a, "shows", f));
      if (extra_predicate(rng)) d.relations.push_back(rel(a, "hides", f, {"hidden " + f}));
    }
  }
  std::shuffle(d.relations.begin(), d.relations.end(), rng);
  label_all(d);
  return d;
}

// ---- subgraph oracle: Floyd-Warshall over the raw relation list ----------

struct SubgraphOracle {
  std::set<std::string> nodes;
  std::set<std::size_t> edges;
};

inline SubgraphOracle subgraph_oracle(const GraphData& d, const std::string& center, std::size_t k) {
  const std::size_t n = d.entities.size();
  constexpr std::size_t kInf = 1u << 30;
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < n; ++i) pos[d.entities[i].id.str()] = i;
  std::vector<std::vector<std::size_t>> dist(n, std::vector<std::size_t>(n, kInf));
  for (std::size_t i = 0; i < n; ++i) dist[i][i] = 0;
  for (const auto& r : d.relations) {
    const auto a = pos.at(r.attack.str()), f = pos.at(r.feature.str());
    dist[a][f] = dist[f][a] = 1;
  }
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        dist[i][j] = std::min(dist[i][j], dist[i][m] + dist[m][j]);
  SubgraphOracle out;
  const std::size_t c = pos.at(center);
  for (std::size_t i = 0; i < n; ++i) {
    if (dist[c][i] <= k) out.nodes.insert(d.entities[i].id.str());
  }
  for (std::size_t r = 0; r < d.relations.size(); ++r) {
    if (out.nodes.contains(d.relations[r].attack.str()) && out.nodes.contains(d.relations[r].feature.str())) {
      out.edges.insert(r);
    }
  }
  return out;
}

// ---- kg reward oracle: explicit sets of triples ---------------------------

struct KgOracle {
  double r_match, r_conflict, r_kg;
};

inline KgOracle kg_oracle(const std::set<RelationTriple>& grounded, const std::set<RelationTriple>& plus,
                          const std::set<RelationTriple>& minus, double eta, double eps) {
  std::size_t hit_plus = 0, hit_minus = 0;
  for (const auto& t : grounded) {
    if (plus.contains(t)) ++hit_plus;
    if (minus.contains(t)) ++hit_minus;
  }
  KgOracle o;
  o.r_match = static_cast<double>(hit_plus) / (static_cast<double>(plus.size()) + eps);
  o.r_conflict = static_cast<double>(hit_minus) / (static_cast<double>(minus.size()) + eps);
  const double raw = o.r_match - eta * o.r_conflict;
  o.r_kg = raw < 0 ? 0.0 : (raw > 1 ? 1.0 : raw);
  return o;
}

// ---- metric oracle: per-category counting loops over the records ---------

struct MetricOracle {
  std::vector<std::size_t> support;
  std::vector<double> acc, far, frr, hter;
  double total_acc = 0, total_hter = 0;
};

inline std::size_t oracle_coarse(FineLabel l, Protocol p) {
  const int i = static_cast<int>(l);
  switch (p) {
    case Protocol::kP1: return i == 0 ? 0 : 1;
    case Protocol::kP2: return i == 0 ? 0 : (i <= 2 ? 1 : 2);
    case Protocol::kP3: return static_cast<std::size_t>(i);
  }
  return 0;
}

inline MetricOracle metric_oracle(const std::vector<PredictionRecord>& records, Protocol p) {
  const std::size_t width = p == Protocol::kP1 ? 2 : (p == Protocol::kP2 ? 3 : 7);
  MetricOracle o;
  double acc_weighted = 0, hter_weighted = 0;
  for (std::size_t c = 0; c < width; ++c) {
    std::size_t pos = 0, tp = 0, neg = 0, fp = 0;
    for (const auto& r : records) {
      const bool is_c = oracle_coarse(r.truth, p) == c;
      const bool said_c = oracle_coarse(r.predicted, p) == c;
      if (is_c) {
        ++pos;
        tp += said_c;
      } else {
        ++neg;
        fp += said_c;
      }
    }
    const double acc = pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
    const double far = neg ? static_cast<double>(fp) / static_cast<double>(neg) : 0.0;
    const double frr = 1.0 - acc;
    o.support.push_back(pos);
    o.acc.push_back(acc);
    o.far.push_back(far);
    o.frr.push_back(frr);
    o.hter.push_back((far + frr) / 2.0);
    acc_weighted += static_cast<double>(pos) * acc;
    hter_weighted += static_cast<double>(pos) * o.hter.back();
  }
  o.total_acc = acc_weighted / static_cast<double>(records.size());
  o.total_hter = hter_weighted / static_cast<double>(records.size());
  return o;
}

inline std::vector<PredictionRecord> random_predictions(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> label(0, 6);
  std::bernoulli_distribution correct(0.6);
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = static_cast<FineLabel>(label(rng));
    const auto pr = correct(rng) ? t : static_cast<FineLabel>(label(rng));
    out.push_back({"s" + std::to_string(i), t, pr});
  }
  return out;
}

// ---- files ----------------------------------------------------------------

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("fakg_test_" + std::to_string(rd()) + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string write(const std::string& name, const std::string& content) const {
    const auto p = path_ / name;
    std::ofstream(p, std::ios::binary) << content;
    return p.string();
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace fakg::testing
