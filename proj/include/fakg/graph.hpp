#pragma once

// Face Attack Knowledge Graph: typed attack/feature entities, attack->feature
// relation triples with grounding patterns, and the structural queries built
// on top of them (hop distance, k-hop ego-subgraphs, support/conflict sets).

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fakg {

class EntityId {
 public:
  EntityId() = default;
  // Throws Error(kInvalidArgument) on empty ids or surrounding whitespace.
  explicit EntityId(std::string value);

  const std::string& str() const noexcept { return value_; }

  friend bool operator==(const EntityId&, const EntityId&) = default;
  friend auto operator<=>(const EntityId&, const EntityId&) = default;

 private:
  std::string value_;
};

enum class EntityKind { kAttackType, kFeature };
enum class FeatureScope { kCommon, kSpecific, kNotApplicable };

struct Entity {
  EntityId id;
  std::string name;
  EntityKind kind = EntityKind::kFeature;
  FeatureScope feature_scope = FeatureScope::kNotApplicable;
  std::vector<std::string> aliases;  // the name is an implicit extra alias

  friend bool operator==(const Entity&, const Entity&) = default;
};

// (attack, predicate, feature) identity of a relation, without patterns.
struct RelationTriple {
  std::string attack;
  std::string predicate;
  std::string feature;

  friend bool operator==(const RelationTriple&, const RelationTriple&) = default;
  friend auto operator<=>(const RelationTriple&, const RelationTriple&) = default;
};

std::string to_string(const RelationTriple& t);

struct Relation {
  EntityId attack;
  std::string predicate;
  EntityId feature;
  std::vector<std::string> patterns;

  RelationTriple triple() const { return {attack.str(), predicate, feature.str()}; }

  friend bool operator==(const Relation&, const Relation&) = default;
};

// Position of a relation in FaceAttackGraph::relations(). Triples are unique,
// so the index is a stable relation identity within one graph.
using RelationIndex = std::size_t;

// Plain document content; FaceAttackGraph wraps it with validated indices.
struct GraphData {
  int version = 1;
  std::vector<Entity> entities;
  std::vector<Relation> relations;
  std::map<std::string, EntityId> labels;
  std::map<EntityId, std::vector<RelationTriple>> conflicts;

  friend bool operator==(const GraphData&, const GraphData&) = default;
};

class FaceAttackGraph {
 public:
  // Checks every integrity invariant; throws Error(kIntegrity) naming the
  // offending id or triple.
  explicit FaceAttackGraph(GraphData data);

  const GraphData& data() const noexcept { return data_; }
  const std::vector<Entity>& entities() const noexcept { return data_.entities; }
  const std::vector<Relation>& relations() const noexcept { return data_.relations; }
  const std::map<std::string, EntityId>& labels() const noexcept { return data_.labels; }

  bool contains(const EntityId& id) const { return entity_index_.contains(id.str()); }
  const Entity* find_entity(std::string_view id) const;
  // Throws Error(kUnknownEntity).
  const Entity& entity(const EntityId& id) const;
  std::size_t entity_position(const EntityId& id) const;

  std::optional<RelationIndex> find_relation(const RelationTriple& t) const;

  // Relations sourced at (or targeting) the entity, ascending.
  const std::vector<RelationIndex>& incident_relations(const EntityId& id) const;
  // Undirected neighbours by entity position, ascending, deduplicated.
  const std::vector<std::size_t>& neighbours(std::size_t position) const {
    return adjacency_[position];
  }

  // Explicit conflict list for an attack, if the document declared one.
  const std::vector<RelationIndex>* explicit_conflicts(const EntityId& attack) const;

  // Patterns used for grounding: the declared ones, or the alias fallback.
  const std::vector<std::string>& effective_patterns(RelationIndex r) const {
    return effective_patterns_[r];
  }
  const std::vector<std::regex>& compiled_patterns(RelationIndex r) const {
    return compiled_[r];
  }

  // Per pattern: literals of which at least one must occur in the
  // lowercased text for the pattern to match (empty = no constraint).
  const std::vector<std::vector<std::string>>& pattern_literals(RelationIndex r) const {
    return literals_[r];
  }

  // Lowercased surface forms when relation r relies on the alias fallback
  // pattern, else empty.
  const std::vector<std::string>& fallback_forms(RelationIndex r) const { return fallback_forms_[r]; }

  // Lowercased name + aliases of an entity.
  std::vector<std::string> surface_forms(const EntityId& id) const;

 private:
  GraphData data_;
  std::unordered_map<std::string, std::size_t> entity_index_;
  std::vector<std::vector<std::size_t>> adjacency_;
  std::vector<std::vector<RelationIndex>> incident_;
  std::map<RelationTriple, RelationIndex> triple_index_;
  std::map<EntityId, std::vector<RelationIndex>> conflicts_;
  std::vector<std::vector<std::string>> effective_patterns_;
  std::vector<std::vector<std::regex>> compiled_;
  std::vector<std::vector<std::vector<std::string>>> literals_;
  std::vector<std::vector<std::string>> fallback_forms_;
};

// ---- file format --------------------------------------------------------

// Throws Error(kParse) for malformed JSON/schema, Error(kIntegrity) otherwise.
FaceAttackGraph load_graph(std::string_view serialized);
FaceAttackGraph load_graph_file(const std::filesystem::path& path);
std::string serialize_graph(const FaceAttackGraph& g);
FaceAttackGraph load_reference_graph();

// ---- pattern dialect ----------------------------------------------------

// Returns a reason when the pattern falls outside the supported dialect
// (anchors, lookaround, backreferences) or fails to compile.
std::optional<std::string> check_pattern(std::string_view pattern);
std::regex compile_pattern(const std::string& pattern);
// Cheap necessary condition for a match: the lowercased text must contain
// one of the returned (lowercased) literals. Empty means no constraint.
std::vector<std::string> required_literals(std::string_view pattern);
std::string lowercase_ascii(std::string_view text);
// Whole-word, case-insensitive alternation over the given surface forms.
std::string fallback_pattern(const std::vector<std::string>& surface_forms);

// ---- validation ---------------------------------------------------------

enum class DiagnosticKind {
  kOrphanFeature,
  kAttackWithoutRelations,
  kAliasCollision,
  kEmptyMatchingPattern,
};

struct Diagnostic {
  DiagnosticKind kind;
  std::vector<std::string> subjects;  // offending ids or triples
  std::string message;
};

std::string_view to_string(DiagnosticKind kind);
std::vector<Diagnostic> validate_graph(const FaceAttackGraph& g);

// ---- structural queries -------------------------------------------------

// Undirected hop count; std::nullopt means unreachable.
std::optional<std::size_t> shortest_distance(const FaceAttackGraph& g,
                                             const EntityId& u,
                                             const EntityId& v);

struct Subgraph {
  EntityId center;
  std::size_t k = 0;
  std::vector<EntityId> nodes;       // sorted by id
  std::vector<RelationIndex> edges;  // ascending

  friend bool operator==(const Subgraph&, const Subgraph&) = default;
};

Subgraph ego_subgraph(const FaceAttackGraph& g, const EntityId& center,
                      std::size_t k);

// FNV-1a 64 over a canonical rendering of nodes and edge triples, as hex.
std::string subgraph_hash(const FaceAttackGraph& g, const Subgraph& s);

enum class ConflictPolicy {
  kDerived,         // foreign relations onto features specific to other attacks
  kPreferExplicit,  // the document's conflict list when present, else derived
};

struct SupportSets {
  EntityId attack;
  std::vector<RelationIndex> s_plus;   // ascending
  std::vector<RelationIndex> s_minus;  // ascending
};

SupportSets support_sets(const FaceAttackGraph& g, const EntityId& attack,
                         ConflictPolicy policy = ConflictPolicy::kPreferExplicit);

// Label lookup accepts exact keys and label_key()-equivalent spellings.
// Throws Error(kUnknownLabel).
EntityId attack_node_for_label(const FaceAttackGraph& g, std::string_view label);

}  // namespace fakg

template <>
struct std::hash<fakg::EntityId> {
  std::size_t operator()(const fakg::EntityId& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};
