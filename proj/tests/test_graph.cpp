#include <doctest.h>

#include <random>

#include "fakg/bundled_data.hpp"
#include "fakg/error.hpp"
#include "fakg/graph.hpp"
#include "support.hpp"

using namespace fakg;
using namespace fakg::testing;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kParse;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

const char* kMinimal = R"({
  "version": 1,
  "entities": [
    {"id": "a", "name": "A", "kind": "attack_type", "aliases": []},
    {"id": "f", "name": "F", "kind": "feature", "feature_scope": "common", "aliases": ["eff"]}
  ],
  "relations": [{"attack": "a", "predicate": "shows", "feature": "f", "patterns": []}],
  "labels": {"Print": "a"}
})";

std::set<std::string> ids(const std::vector<EntityId>& v) {
  std::set<std::string> out;
  for (const auto& id : v) out.insert(id.str());
  return out;
}

}  // namespace

TEST_CASE("minimal document loads with two entities and one relation") {
  const auto g = load_graph(kMinimal);
  CHECK(g.entities().size() == 2);
  CHECK(g.relations().size() == 1);
  CHECK(g.effective_patterns(0) == std::vector<std::string>{fallback_pattern(g.surface_forms(EntityId("f")))});
}

TEST_CASE("integrity failures name the offender") {
  std::string missing = kMinimal;
  missing.replace(missing.find("\"feature\": \"f\""), 14, "\"feature\": \"ghost\"");
  CHECK(code_of([&] { load_graph(missing); }) == ErrorCode::kIntegrity);
  CHECK(message_of([&] { load_graph(missing); }).find("ghost") != std::string::npos);

  GraphData d = toy_support_data();
  d.entities.push_back(d.entities.front());
  CHECK(message_of([&] { FaceAttackGraph{d}; }).find("A1") != std::string::npos);

  d = toy_support_data();
  d.relations.push_back(d.relations.front());
  CHECK(message_of([&] { FaceAttackGraph{d}; }).find("alters") != std::string::npos);

  d = toy_support_data();
  d.relations.push_back(rel("A1", "mimics", "A2"));
  CHECK(code_of([&] { FaceAttackGraph{d}; }) == ErrorCode::kIntegrity);

  d = toy_support_data();
  d.relations.push_back(rel("f_spec1", "feeds", "f_spec2"));
  CHECK(code_of([&] { FaceAttackGraph{d}; }) == ErrorCode::kIntegrity);

  d = toy_support_data();
  d.relations[0].patterns = {"(unclosed"};
  CHECK(code_of([&] { FaceAttackGraph{d}; }) == ErrorCode::kIntegrity);

  d = toy_support_data();
  d.labels.erase("L:A2");
  CHECK(message_of([&] { FaceAttackGraph{d}; }).find("A2") != std::string::npos);
}

TEST_CASE("parse failures and unknown keys") {
  CHECK(code_of([] { load_graph("{not json"); }) == ErrorCode::kParse);
  std::string extra = kMinimal;
  extra.insert(1, "\"colour\": 1,");
  CHECK(code_of([&] { load_graph(extra); }) == ErrorCode::kParse);
  CHECK(code_of([] { load_graph("[]"); }) == ErrorCode::kParse);
}

TEST_CASE("pattern dialect") {
  CHECK_FALSE(check_pattern("lattice pattern"));
  CHECK_FALSE(check_pattern("\\bmoir[eé]\\b"));
  CHECK_FALSE(check_pattern("(?:screen|monitor) glare"));
  CHECK_FALSE(check_pattern("[^a-z]x"));
  CHECK(check_pattern("^start"));
  CHECK(check_pattern("end$"));
  CHECK(check_pattern("(?=look)"));
  CHECK(check_pattern("(?!no)"));
  CHECK(check_pattern("(a)\\1"));
  CHECK(check_pattern("(unclosed"));
  CHECK(check_pattern(""));
}

TEST_CASE("reference graph loads clean and covers the label set") {
  const auto g = load_reference_graph();
  CHECK(validate_graph(g).empty());
  for (FineLabel l : kAllFineLabels) CHECK_NOTHROW(attack_node_for_label(g, to_string(l)));
  CHECK(attack_node_for_label(g, "Print").str() == "print");
  CHECK(attack_node_for_label(g, "Real Face").str() == "bona_fide");
  CHECK(code_of([&] { attack_node_for_label(g, "3D-Mask"); }) == ErrorCode::kUnknownLabel);
  std::size_t common = 0, specific = 0;
  for (const auto& e : g.entities()) {
    common += e.feature_scope == FeatureScope::kCommon;
    specific += e.feature_scope == FeatureScope::kSpecific;
  }
  CHECK(common > 0);
  CHECK(specific > 0);
  CHECK(g.find_entity("skin_texture") != nullptr);
  CHECK(g.find_entity("lattice_pattern") != nullptr);
  CHECK(g.find_entity("geometric_inconsistency") != nullptr);
}

TEST_CASE("validate_graph diagnostics") {
  GraphData d = toy_support_data();
  d.entities.push_back(feature("lonely", FeatureScope::kSpecific));
  auto diags = validate_graph(FaceAttackGraph(d));
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].kind == DiagnosticKind::kOrphanFeature);
  CHECK(diags[0].subjects == std::vector<std::string>{"lonely"});

  d = toy_support_data();
  d.entities[4].aliases.push_back("moire");
  diags = validate_graph(FaceAttackGraph(d));
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].kind == DiagnosticKind::kAliasCollision);
  CHECK(std::set<std::string>(diags[0].subjects.begin(), diags[0].subjects.end()) ==
        std::set<std::string>{"f_spec1", "f_spec2"});

  d = toy_support_data();
  d.entities.push_back(attack("A3"));
  label_all(d);
  diags = validate_graph(FaceAttackGraph(d));
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].kind == DiagnosticKind::kAttackWithoutRelations);

  d = toy_support_data();
  d.relations[0].patterns = {"x*"};
  diags = validate_graph(FaceAttackGraph(d));
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].kind == DiagnosticKind::kEmptyMatchingPattern);
}

TEST_CASE("shortest distance") {
  GraphData d;
  d.entities = {attack("A1"), attack("A2"), feature("f1", FeatureScope::kCommon),
                feature("f2", FeatureScope::kCommon), feature("lone", FeatureScope::kCommon),
                attack("A3")};
  d.relations = {rel("A1", "x", "f1"), rel("A1", "x", "f2"), rel("A2", "x", "f2"), rel("A3", "x", "lone")};
  label_all(d);
  const FaceAttackGraph g(d);
  CHECK(shortest_distance(g, EntityId("A1"), EntityId("A1")) == 0u);
  CHECK(shortest_distance(g, EntityId("A1"), EntityId("A2")) == 2u);
  CHECK(shortest_distance(g, EntityId("f1"), EntityId("A2")) == 3u);
  CHECK_FALSE(shortest_distance(g, EntityId("A1"), EntityId("lone")).has_value());
  CHECK(code_of([&] { shortest_distance(g, EntityId("A1"), EntityId("nope")); }) == ErrorCode::kUnknownEntity);
}

TEST_CASE("ego subgraph on the four-edge path") {
  const auto g = path_graph();
  const auto s0 = ego_subgraph(g, EntityId("A1"), 0);
  CHECK(ids(s0.nodes) == std::set<std::string>{"A1"});
  CHECK(s0.edges.empty());
  const auto s1 = ego_subgraph(g, EntityId("A1"), 1);
  CHECK(ids(s1.nodes) == std::set<std::string>{"A1", "f1", "f2"});
  CHECK(s1.edges == std::vector<RelationIndex>{0, 1});
  const auto s2 = ego_subgraph(g, EntityId("A1"), 2);
  CHECK(ids(s2.nodes) == std::set<std::string>{"A1", "A2", "f1", "f2"});
  CHECK(s2.edges == std::vector<RelationIndex>{0, 1, 2});
  CHECK(code_of([&] { ego_subgraph(g, EntityId("zz"), 1); }) == ErrorCode::kUnknownEntity);
}

TEST_CASE("ego subgraph properties on random graphs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const GraphData d = random_graph_data(rng, 30);
    const FaceAttackGraph g(d);
    const EntityId c = d.entities[rng() % d.entities.size()].id;
    const auto zero = ego_subgraph(g, c, 0);
    CHECK(zero.nodes == std::vector<EntityId>{c});
    CHECK(zero.edges.empty());
    Subgraph prev = zero;
    for (std::size_t k = 1; k <= 6; ++k) {
      const auto cur = ego_subgraph(g, c, k);
      CHECK(std::includes(cur.nodes.begin(), cur.nodes.end(), prev.nodes.begin(), prev.nodes.end()));
      CHECK(std::includes(cur.edges.begin(), cur.edges.end(), prev.edges.begin(), prev.edges.end()));
      for (const auto& n : cur.nodes) CHECK(*shortest_distance(g, c, n) <= k);
      prev = cur;
    }
    // Saturation: at k = |E| the subgraph is the whole component.
    const auto full = ego_subgraph(g, c, d.entities.size());
    const auto oracle = subgraph_oracle(d, c.str(), d.entities.size());
    CHECK(ids(full.nodes) == oracle.nodes);
    CHECK(std::set<std::size_t>(full.edges.begin(), full.edges.end()) == oracle.edges);
  }
}

TEST_CASE("subgraph hash is stable and content-sensitive") {
  const auto g = path_graph();
  const auto h1 = subgraph_hash(g, ego_subgraph(g, EntityId("A1"), 1));
  CHECK(h1.size() == 16);
  CHECK(h1 == subgraph_hash(g, ego_subgraph(g, EntityId("A1"), 1)));
  CHECK(h1 != subgraph_hash(g, ego_subgraph(g, EntityId("A1"), 2)));
}

TEST_CASE("support sets") {
  const FaceAttackGraph toy(toy_support_data());
  auto s = support_sets(toy, EntityId("A1"));
  CHECK(s.s_plus == std::vector<RelationIndex>{0, 1});
  CHECK(s.s_minus == std::vector<RelationIndex>{3});

  GraphData owned;
  owned.entities = {attack("A1"), feature("f", FeatureScope::kSpecific), feature("g", FeatureScope::kCommon)};
  owned.relations = {rel("A1", "x", "f"), rel("A1", "x", "g")};
  label_all(owned);
  s = support_sets(FaceAttackGraph(owned), EntityId("A1"));
  CHECK(s.s_plus.size() == 2);
  CHECK(s.s_minus.empty());

  GraphData explicit_doc = toy_support_data();
  explicit_doc.conflicts[EntityId("A1")] = {{"A2", "alters", "f_common"}};
  const FaceAttackGraph ex(explicit_doc);
  CHECK(support_sets(ex, EntityId("A1")).s_minus == std::vector<RelationIndex>{2});
  CHECK(support_sets(ex, EntityId("A1"), ConflictPolicy::kDerived).s_minus == std::vector<RelationIndex>{3});
  CHECK(code_of([&] { support_sets(toy, EntityId("f_common")); }) == ErrorCode::kUnknownEntity);
  CHECK(code_of([&] { support_sets(toy, EntityId("nobody")); }) == ErrorCode::kUnknownEntity);
}

TEST_CASE("support set invariants on random graphs") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const FaceAttackGraph g(random_graph_data(rng, 40));
    for (const auto& e : g.entities()) {
      if (e.kind != EntityKind::kAttackType) continue;
      const auto s = support_sets(g, e.id);
      std::vector<RelationIndex> out_rel;
      for (RelationIndex r = 0; r < g.relations().size(); ++r) {
        if (g.relations()[r].attack == e.id) out_rel.push_back(r);
      }
      CHECK(s.s_plus == out_rel);
      std::vector<RelationIndex> both;
      std::set_intersection(s.s_plus.begin(), s.s_plus.end(), s.s_minus.begin(), s.s_minus.end(),
                            std::back_inserter(both));
      CHECK(both.empty());
      for (RelationIndex r : s.s_minus) {
        CHECK(g.relations()[r].attack != e.id);
        CHECK(g.entity(g.relations()[r].feature).feature_scope == FeatureScope::kSpecific);
      }
    }
  }
}

TEST_CASE("serialization round trip") {
  const auto ref = load_reference_graph();
  const std::string text = serialize_graph(ref);
  CHECK(load_graph(text).data() == ref.data());
  CHECK(serialize_graph(load_graph(text)) == text);

  GraphData d = toy_support_data();
  d.conflicts[EntityId("A2")] = {{"A1", "induces", "f_spec1"}};
  const FaceAttackGraph with_conflicts(d);
  CHECK(load_graph(serialize_graph(with_conflicts)).data() == d);
  CHECK(serialize_graph(with_conflicts).find("\"conflicts\"") != std::string::npos);
  CHECK(serialize_graph(FaceAttackGraph(toy_support_data())).find("\"conflicts\"") == std::string::npos);
}

TEST_CASE("entity ids reject blank or padded values") {
  CHECK_THROWS_AS(EntityId(""), Error);
  CHECK_THROWS_AS(EntityId(" a"), Error);
  CHECK_NOTHROW(EntityId("a_b"));
}

TEST_CASE("required literals") {
  CHECK(required_literals("(natural|rich) skin texture") == std::vector<std::string>{" skin texture"});
  CHECK(required_literals("\\b(?:Moire|screen glare)\\b") == std::vector<std::string>{"moire", "screen glare"});
  CHECK(required_literals("skin pores? (are |is )?visible") == std::vector<std::string>{"skin pore"});
  CHECK(required_literals("colou?r (shift|cast)s?") == std::vector<std::string>{"colo"});
  CHECK(required_literals("a|b").empty());
  CHECK(required_literals("[a-z]+").empty());
  CHECK(required_literals("x\\.y") == std::vector<std::string>{"x.y"});
}

TEST_CASE("the literal prefilter never hides a regex match") {
  std::mt19937_64 rng(59);
  const std::vector<std::string> pieces = {"ab", "c", "(x|yz)", "(?:q|r)", "d?", "e+", "[fg]", ".", "\\.",
                                           "\\w", "\\b", "(h|)", "(ij)?", "k*", "l{1,2}", " ", "M"};
  const std::string alphabet = "abcdefghijklmqrxyzABCM. ";
  for (int trial = 0; trial < 3000; ++trial) {
    std::string pattern;
    for (std::size_t i = 1 + rng() % 6; i > 0; --i) pattern += pieces[rng() % pieces.size()];
    const auto lits = required_literals(pattern);
    const std::regex re = compile_pattern(pattern);
    for (int t = 0; t < 20; ++t) {
      std::string text;
      for (std::size_t i = rng() % 16; i > 0; --i) text += alphabet[rng() % alphabet.size()];
      if (!std::regex_search(text, re) || lits.empty()) continue;
      const std::string lowered = lowercase_ascii(text);
      const bool found = std::any_of(lits.begin(), lits.end(), [&](const std::string& l) {
        return lowered.find(l) != std::string::npos;
      });
      CHECK_MESSAGE(found, pattern << " on '" << text << "'");
    }
  }
}
