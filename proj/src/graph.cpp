#include "fakg/graph.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fakg/bundled_data.hpp"
#include "fakg/error.hpp"
#include "fakg/labels.hpp"

namespace fakg {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

[[noreturn]] void parse_fail(const std::string& what) {
  throw Error(ErrorCode::kParse, "graph parse error: " + what);
}

[[noreturn]] void integrity_fail(const std::string& what) {
  throw Error(ErrorCode::kIntegrity, "graph integrity error: " + what);
}

bool is_blank(unsigned char c) { return std::isspace(c) != 0; }

std::string normalize_surface(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (is_blank(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

const json& require_key(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) parse_fail(where + ": missing key '" + key + "'");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require_key(obj, key, where);
  if (!v.is_string()) parse_fail(where + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<std::string> optional_string_list(const json& obj, const char* key,
                                              const std::string& where) {
  std::vector<std::string> out;
  auto it = obj.find(key);
  if (it == obj.end()) return out;
  if (!it->is_array()) parse_fail(where + ": '" + key + "' must be an array");
  for (const auto& item : *it) {
    if (!item.is_string()) parse_fail(where + ": '" + key + "' entries must be strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      parse_fail(where + ": unknown key '" + it.key() + "'");
    }
  }
}

EntityId make_id(const std::string& raw, const std::string& where) {
  if (raw.empty() || is_blank(raw.front()) || is_blank(raw.back())) {
    integrity_fail(where + ": invalid entity id '" + raw + "'");
  }
  return EntityId(raw);
}

RelationTriple parse_triple(const json& obj, const std::string& where) {
  if (!obj.is_object()) parse_fail(where + ": expected an object");
  reject_unknown_keys(obj, {"attack", "predicate", "feature"}, where);
  return {require_string(obj, "attack", where), require_string(obj, "predicate", where),
          require_string(obj, "feature", where)};
}

std::string regex_escape(std::string_view text) {
  static constexpr std::string_view kSpecial = R"(\^$.|?*+()[]{})";
  std::string out;
  for (char c : text) {
    if (kSpecial.find(c) != std::string_view::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace

EntityId::EntityId(std::string value) : value_(std::move(value)) {
  if (value_.empty() || is_blank(value_.front()) || is_blank(value_.back())) {
    throw Error(ErrorCode::kInvalidArgument, "invalid entity id '" + value_ + "'");
  }
}

std::string to_string(const RelationTriple& t) {
  return "(" + t.attack + ", " + t.predicate + ", " + t.feature + ")";
}

// ---- pattern dialect ----------------------------------------------------

std::optional<std::string> check_pattern(std::string_view pattern) {
  if (pattern.empty()) return "empty pattern";
  bool in_class = false;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const char c = pattern[i];
    if (c == '\\') {
      if (i + 1 >= pattern.size()) return "trailing backslash";
      const char next = pattern[i + 1];
      if (!in_class && ((next >= '1' && next <= '9') || next == 'k')) {
        return "backreferences are not supported";
      }
      ++i;
      continue;
    }
    if (in_class) {
      if (c == ']') in_class = false;
      continue;
    }
    if (c == '[') {
      in_class = true;
      // A leading ']' or '^]' is literal inside a class.
      if (i + 1 < pattern.size() && pattern[i + 1] == '^') ++i;
      if (i + 1 < pattern.size() && pattern[i + 1] == ']') ++i;
      continue;
    }
    if (c == '^' || c == '$') return "anchors are not supported (patterns are unanchored)";
    if (c == '(' && i + 1 < pattern.size() && pattern[i + 1] == '?') {
      if (i + 2 < pattern.size() && pattern[i + 2] == ':') continue;
      return "lookaround and other group extensions are not supported";
    }
  }
  try {
    (void)compile_pattern(std::string(pattern));
  } catch (const std::regex_error& e) {
    return std::string("does not compile: ") + e.what();
  }
  return std::nullopt;
}

std::regex compile_pattern(const std::string& pattern) {
  return std::regex(pattern, std::regex::ECMAScript | std::regex::icase | std::regex::optimize);
}

namespace {

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

// Index one past the ')' closing the group opened at pattern[open], or npos.
std::size_t group_end(std::string_view p, std::size_t open) {
  int depth = 0;
  bool in_class = false;
  for (std::size_t i = open; i < p.size(); ++i) {
    const char c = p[i];
    if (c == '\\') {
      ++i;
    } else if (in_class) {
      if (c == ']') in_class = false;
    } else if (c == '[') {
      in_class = true;
      if (i + 1 < p.size() && p[i + 1] == '^') ++i;
      if (i + 1 < p.size() && p[i + 1] == ']') ++i;
    } else if (c == '(') {
      ++depth;
    } else if (c == ')' && --depth == 0) {
      return i + 1;
    }
  }
  return std::string_view::npos;
}

// One regex atom at the top level of a sequence.
struct Atom {
  enum Kind { kLiteral, kGroup, kOther } kind = kOther;
  char literal = 0;
  std::string_view body;  // group contents
  bool optional = false;  // followed by ?, * or {..}
  bool repeated = false;  // followed by +
};

// Splits a sequence into atoms; nullopt on a top-level '|' or bad syntax.
std::optional<std::vector<Atom>> atoms_of(std::string_view p) {
  std::vector<Atom> out;
  for (std::size_t i = 0; i < p.size();) {
    Atom a;
    const char c = p[i];
    if (c == '|') return std::nullopt;
    if (c == '\\') {
      if (i + 1 >= p.size()) return std::nullopt;
      const char n = p[i + 1];
      if (!std::isalnum(static_cast<unsigned char>(n))) {
        a.kind = Atom::kLiteral;
        a.literal = n;
      }
      i += 2;
    } else if (c == '(') {
      const std::size_t end = group_end(p, i);
      if (end == std::string_view::npos) return std::nullopt;
      a.kind = Atom::kGroup;
      a.body = p.substr(i + 1, end - i - 2);
      i = end;
    } else if (c == '[') {
      std::size_t j = i + 1;
      if (j < p.size() && p[j] == '^') ++j;
      if (j < p.size() && p[j] == ']') ++j;
      while (j < p.size() && p[j] != ']') j += p[j] == '\\' ? 2 : 1;
      if (j >= p.size()) return std::nullopt;
      i = j + 1;
    } else if (c == '.' || c == '^' || c == '$' || c == ')') {
      ++i;
    } else {
      a.kind = Atom::kLiteral;
      a.literal = c;
      ++i;
    }
    if (i < p.size()) {
      const char q = p[i];
      if (q == '?' || q == '*' || q == '{') {
        a.optional = true;
      } else if (q == '+') {
        a.repeated = true;
      }
      if (q == '{') {
        while (i < p.size() && p[i] != '}') ++i;
        ++i;
      } else if (q == '?' || q == '*' || q == '+') {
        ++i;
      }
      if (i < p.size() && p[i] == '?' && (a.optional || a.repeated)) ++i;  // lazy
    }
    out.push_back(a);
  }
  return out;
}

// A group made only of literal alternatives yields those alternatives.
std::optional<std::vector<std::string>> literal_alternatives(std::string_view body) {
  if (body.starts_with("?:")) {
    body.remove_prefix(2);
  } else if (body.starts_with("?")) {
    return std::nullopt;
  }
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= body.size(); ++i) {
    if (i < body.size() && body[i] == '\\') {
      ++i;
      continue;
    }
    if (i < body.size() && body[i] != '|') continue;
    const auto atoms = atoms_of(body.substr(start, i - start));
    if (!atoms) return std::nullopt;
    std::string lit;
    for (const auto& a : *atoms) {
      if (a.kind != Atom::kLiteral || a.optional || a.repeated) return std::nullopt;
      lit.push_back(ascii_lower(a.literal));
    }
    if (lit.empty()) return std::nullopt;
    out.push_back(std::move(lit));
    start = i + 1;
  }
  return out;
}

std::size_t shortest(const std::vector<std::string>& v) {
  std::size_t n = std::string::npos;
  for (const auto& s : v) n = std::min(n, s.size());
  return v.empty() ? 0 : n;
}

}  // namespace

std::vector<std::string> required_literals(std::string_view pattern) {
  const auto atoms = atoms_of(pattern);
  if (!atoms) return {};
  std::vector<std::string> best;
  auto consider = [&](std::vector<std::string> candidate) {
    if (shortest(candidate) > shortest(best)) best = std::move(candidate);
  };
  std::string run;
  for (const auto& a : *atoms) {
    if (a.kind == Atom::kLiteral && !a.optional) {
      run.push_back(ascii_lower(a.literal));
      if (!a.repeated) continue;
    }
    consider({run});
    run.clear();
    if (a.kind == Atom::kGroup && !a.optional) {
      if (auto alts = literal_alternatives(a.body)) consider(std::move(*alts));
    }
  }
  consider({run});
  return best;
}

std::string lowercase_ascii(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = ascii_lower(c);
  return out;
}

std::string fallback_pattern(const std::vector<std::string>& surface_forms) {
  std::string body;
  for (const auto& form : surface_forms) {
    if (form.empty()) continue;
    if (!body.empty()) body += '|';
    body += regex_escape(form);
  }
  return "\\b(?:" + body + ")\\b";
}

// ---- graph --------------------------------------------------------------

FaceAttackGraph::FaceAttackGraph(GraphData data) : data_(std::move(data)) {
  if (data_.version != 1) {
    integrity_fail("unsupported version " + std::to_string(data_.version));
  }
  for (std::size_t i = 0; i < data_.entities.size(); ++i) {
    const Entity& e = data_.entities[i];
    if (!entity_index_.emplace(e.id.str(), i).second) {
      integrity_fail("duplicate entity id '" + e.id.str() + "'");
    }
    const bool attack = e.kind == EntityKind::kAttackType;
    if (attack != (e.feature_scope == FeatureScope::kNotApplicable)) {
      integrity_fail("entity '" + e.id.str() +
                     "': feature_scope must be set for features and only for features");
    }
    for (const auto& alias : e.aliases) {
      if (alias.empty()) integrity_fail("entity '" + e.id.str() + "' has an empty alias");
    }
  }

  adjacency_.resize(data_.entities.size());
  incident_.resize(data_.entities.size());
  for (RelationIndex r = 0; r < data_.relations.size(); ++r) {
    const Relation& rel = data_.relations[r];
    const std::string label = to_string(rel.triple());
    const Entity* a = find_entity(rel.attack.str());
    const Entity* f = find_entity(rel.feature.str());
    if (a == nullptr) integrity_fail("relation " + label + ": unknown entity '" + rel.attack.str() + "'");
    if (f == nullptr) integrity_fail("relation " + label + ": unknown entity '" + rel.feature.str() + "'");
    if (a->kind != EntityKind::kAttackType) {
      integrity_fail("relation " + label + ": source '" + rel.attack.str() + "' is not an attack_type");
    }
    if (f->kind != EntityKind::kFeature) {
      integrity_fail("relation " + label + ": target '" + rel.feature.str() + "' is not a feature");
    }
    if (rel.predicate.empty()) integrity_fail("relation " + label + ": empty predicate");
    if (!triple_index_.emplace(rel.triple(), r).second) {
      integrity_fail("duplicate relation " + label);
    }
    for (const auto& p : rel.patterns) {
      if (auto why = check_pattern(p)) {
        integrity_fail("relation " + label + ": invalid pattern '" + p + "': " + *why);
      }
    }
    const std::size_t ai = entity_index_.at(rel.attack.str());
    const std::size_t fi = entity_index_.at(rel.feature.str());
    adjacency_[ai].push_back(fi);
    adjacency_[fi].push_back(ai);
    incident_[ai].push_back(r);
    incident_[fi].push_back(r);
  }
  for (auto& adj : adjacency_) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
  }

  std::map<std::string, std::string> label_of_attack;
  for (const auto& [label, id] : data_.labels) {
    const Entity* e = find_entity(id.str());
    if (e == nullptr) integrity_fail("label '" + label + "': unknown entity '" + id.str() + "'");
    if (e->kind != EntityKind::kAttackType) {
      integrity_fail("label '" + label + "': '" + id.str() + "' is not an attack_type");
    }
    auto [it, fresh] = label_of_attack.emplace(id.str(), label);
    if (!fresh) {
      integrity_fail("attack '" + id.str() + "' is mapped by labels '" + it->second + "' and '" +
                     label + "'");
    }
  }
  for (const Entity& e : data_.entities) {
    if (e.kind == EntityKind::kAttackType && !label_of_attack.contains(e.id.str())) {
      integrity_fail("attack '" + e.id.str() + "' has no label mapping");
    }
  }

  for (const auto& [attack, triples] : data_.conflicts) {
    const Entity* e = find_entity(attack.str());
    if (e == nullptr) integrity_fail("conflicts: unknown entity '" + attack.str() + "'");
    if (e->kind != EntityKind::kAttackType) {
      integrity_fail("conflicts: '" + attack.str() + "' is not an attack_type");
    }
    std::vector<RelationIndex> refs;
    for (const auto& t : triples) {
      auto r = find_relation(t);
      if (!r) integrity_fail("conflicts of '" + attack.str() + "': unknown relation " + to_string(t));
      if (t.attack == attack.str()) {
        integrity_fail("conflicts of '" + attack.str() + "': relation " + to_string(t) +
                       " is sourced at the attack itself");
      }
      refs.push_back(*r);
    }
    std::sort(refs.begin(), refs.end());
    refs.erase(std::unique(refs.begin(), refs.end()), refs.end());
    conflicts_.emplace(attack, std::move(refs));
  }

  effective_patterns_.reserve(data_.relations.size());
  compiled_.reserve(data_.relations.size());
  for (const Relation& rel : data_.relations) {
    std::vector<std::string> patterns = rel.patterns;
    std::vector<std::string> forms;
    if (patterns.empty()) {
      for (auto& f : surface_forms(rel.feature)) {
        if (!f.empty()) forms.push_back(lowercase_ascii(f));
      }
      patterns.push_back(fallback_pattern(surface_forms(rel.feature)));
    }
    fallback_forms_.push_back(std::move(forms));
    std::vector<std::regex> compiled;
    compiled.reserve(patterns.size());
    std::vector<std::vector<std::string>> literals;
    for (const auto& p : patterns) {
      compiled.push_back(compile_pattern(p));
      literals.push_back(required_literals(p));
    }
    effective_patterns_.push_back(std::move(patterns));
    compiled_.push_back(std::move(compiled));
    literals_.push_back(std::move(literals));
  }
}

const Entity* FaceAttackGraph::find_entity(std::string_view id) const {
  auto it = entity_index_.find(std::string(id));
  return it == entity_index_.end() ? nullptr : &data_.entities[it->second];
}

const Entity& FaceAttackGraph::entity(const EntityId& id) const {
  const Entity* e = find_entity(id.str());
  if (e == nullptr) throw Error(ErrorCode::kUnknownEntity, "unknown entity '" + id.str() + "'");
  return *e;
}

std::size_t FaceAttackGraph::entity_position(const EntityId& id) const {
  auto it = entity_index_.find(id.str());
  if (it == entity_index_.end()) {
    throw Error(ErrorCode::kUnknownEntity, "unknown entity '" + id.str() + "'");
  }
  return it->second;
}

std::optional<RelationIndex> FaceAttackGraph::find_relation(const RelationTriple& t) const {
  auto it = triple_index_.find(t);
  if (it == triple_index_.end()) return std::nullopt;
  return it->second;
}

const std::vector<RelationIndex>& FaceAttackGraph::incident_relations(const EntityId& id) const {
  return incident_[entity_position(id)];
}

const std::vector<RelationIndex>* FaceAttackGraph::explicit_conflicts(const EntityId& attack) const {
  auto it = conflicts_.find(attack);
  return it == conflicts_.end() ? nullptr : &it->second;
}

std::vector<std::string> FaceAttackGraph::surface_forms(const EntityId& id) const {
  const Entity& e = entity(id);
  std::vector<std::string> forms;
  forms.push_back(normalize_surface(e.name));
  for (const auto& alias : e.aliases) {
    std::string form = normalize_surface(alias);
    if (std::find(forms.begin(), forms.end(), form) == forms.end()) forms.push_back(std::move(form));
  }
  return forms;
}

// ---- file format --------------------------------------------------------

FaceAttackGraph load_graph(std::string_view serialized) {
  json doc;
  try {
    doc = json::parse(serialized);
  } catch (const json::parse_error& e) {
    parse_fail(e.what());
  }
  if (!doc.is_object()) parse_fail("top level must be an object");
  reject_unknown_keys(doc, {"version", "entities", "relations", "labels", "conflicts"}, "document");

  GraphData data;
  const json& version = require_key(doc, "version", "document");
  if (!version.is_number_integer()) parse_fail("'version' must be an integer");
  data.version = version.get<int>();

  const json& entities = require_key(doc, "entities", "document");
  if (!entities.is_array()) parse_fail("'entities' must be an array");
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const json& e = entities[i];
    const std::string where = "entities[" + std::to_string(i) + "]";
    if (!e.is_object()) parse_fail(where + ": expected an object");
    reject_unknown_keys(e, {"id", "name", "kind", "feature_scope", "aliases"}, where);
    Entity entity;
    entity.id = make_id(require_string(e, "id", where), where);
    entity.name = require_string(e, "name", where);
    const std::string kind = require_string(e, "kind", where);
    if (kind == "attack_type") {
      entity.kind = EntityKind::kAttackType;
    } else if (kind == "feature") {
      entity.kind = EntityKind::kFeature;
    } else {
      parse_fail(where + ": unknown kind '" + kind + "'");
    }
    if (e.contains("feature_scope")) {
      const std::string scope = require_string(e, "feature_scope", where);
      if (scope == "common") {
        entity.feature_scope = FeatureScope::kCommon;
      } else if (scope == "specific") {
        entity.feature_scope = FeatureScope::kSpecific;
      } else {
        parse_fail(where + ": unknown feature_scope '" + scope + "'");
      }
    } else if (entity.kind == EntityKind::kFeature) {
      integrity_fail("feature '" + entity.id.str() + "' is missing feature_scope");
    }
    entity.aliases = optional_string_list(e, "aliases", where);
    data.entities.push_back(std::move(entity));
  }

  const json& relations = require_key(doc, "relations", "document");
  if (!relations.is_array()) parse_fail("'relations' must be an array");
  for (std::size_t i = 0; i < relations.size(); ++i) {
    const json& r = relations[i];
    const std::string where = "relations[" + std::to_string(i) + "]";
    if (!r.is_object()) parse_fail(where + ": expected an object");
    reject_unknown_keys(r, {"attack", "predicate", "feature", "patterns"}, where);
    Relation rel;
    rel.attack = make_id(require_string(r, "attack", where), where);
    rel.predicate = require_string(r, "predicate", where);
    rel.feature = make_id(require_string(r, "feature", where), where);
    rel.patterns = optional_string_list(r, "patterns", where);
    data.relations.push_back(std::move(rel));
  }

  const json& labels = require_key(doc, "labels", "document");
  if (!labels.is_object()) parse_fail("'labels' must be an object");
  for (auto it = labels.begin(); it != labels.end(); ++it) {
    if (!it->is_string()) parse_fail("labels['" + it.key() + "'] must be a string");
    data.labels.emplace(it.key(), make_id(it->get<std::string>(), "labels"));
  }

  if (auto it = doc.find("conflicts"); it != doc.end()) {
    if (!it->is_object()) parse_fail("'conflicts' must be an object");
    for (auto c = it->begin(); c != it->end(); ++c) {
      const std::string where = "conflicts['" + c.key() + "']";
      if (!c->is_array()) parse_fail(where + ": expected an array");
      std::vector<RelationTriple> triples;
      for (const auto& t : *c) triples.push_back(parse_triple(t, where));
      data.conflicts.emplace(make_id(c.key(), where), std::move(triples));
    }
  }

  return FaceAttackGraph(std::move(data));
}

FaceAttackGraph load_graph_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kParse, "cannot read graph file '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return load_graph(buffer.str());
}

FaceAttackGraph load_reference_graph() { return load_graph(reference_graph_json()); }

std::string serialize_graph(const FaceAttackGraph& g) {
  const GraphData& data = g.data();
  ordered_json doc;
  doc["version"] = data.version;
  ordered_json entities = ordered_json::array();
  for (const Entity& e : data.entities) {
    ordered_json item;
    item["id"] = e.id.str();
    item["name"] = e.name;
    item["kind"] = e.kind == EntityKind::kAttackType ? "attack_type" : "feature";
    if (e.kind == EntityKind::kFeature) {
      item["feature_scope"] = e.feature_scope == FeatureScope::kCommon ? "common" : "specific";
    }
    item["aliases"] = e.aliases;
    entities.push_back(std::move(item));
  }
  doc["entities"] = std::move(entities);
  ordered_json relations = ordered_json::array();
  for (const Relation& r : data.relations) {
    ordered_json item;
    item["attack"] = r.attack.str();
    item["predicate"] = r.predicate;
    item["feature"] = r.feature.str();
    item["patterns"] = r.patterns;
    relations.push_back(std::move(item));
  }
  doc["relations"] = std::move(relations);
  ordered_json labels = ordered_json::object();
  for (const auto& [label, id] : data.labels) labels[label] = id.str();
  doc["labels"] = std::move(labels);
  if (!data.conflicts.empty()) {
    ordered_json conflicts = ordered_json::object();
    for (const auto& [attack, triples] : data.conflicts) {
      ordered_json list = ordered_json::array();
      for (const auto& t : triples) {
        ordered_json item;
        item["attack"] = t.attack;
        item["predicate"] = t.predicate;
        item["feature"] = t.feature;
        list.push_back(std::move(item));
      }
      conflicts[attack.str()] = std::move(list);
    }
    doc["conflicts"] = std::move(conflicts);
  }
  return doc.dump(2) + "\n";
}

// ---- validation ---------------------------------------------------------

std::string_view to_string(DiagnosticKind kind) {
  switch (kind) {
    case DiagnosticKind::kOrphanFeature: return "orphan_feature";
    case DiagnosticKind::kAttackWithoutRelations: return "attack_without_relations";
    case DiagnosticKind::kAliasCollision: return "alias_collision";
    case DiagnosticKind::kEmptyMatchingPattern: return "empty_matching_pattern";
  }
  return "?";
}

std::vector<Diagnostic> validate_graph(const FaceAttackGraph& g) {
  std::vector<Diagnostic> out;
  for (const Entity& e : g.entities()) {
    if (!g.incident_relations(e.id).empty()) continue;
    if (e.kind == EntityKind::kFeature) {
      out.push_back({DiagnosticKind::kOrphanFeature, {e.id.str()},
                     "feature '" + e.id.str() + "' has no incident relation"});
    } else {
      out.push_back({DiagnosticKind::kAttackWithoutRelations, {e.id.str()},
                     "attack '" + e.id.str() + "' has no relations"});
    }
  }

  // Surface form -> owning ids, in first-seen order.
  std::map<std::string, std::vector<std::string>> owners;
  for (const Entity& e : g.entities()) {
    for (const auto& form : g.surface_forms(e.id)) owners[form].push_back(e.id.str());
  }
  for (const auto& [form, ids] : owners) {
    if (ids.size() < 2) continue;
    std::string joined;
    for (const auto& id : ids) joined += (joined.empty() ? "" : ", ") + id;
    out.push_back({DiagnosticKind::kAliasCollision, ids,
                   "alias '" + form + "' is shared by " + joined});
  }

  const std::string empty;
  for (RelationIndex r = 0; r < g.relations().size(); ++r) {
    const auto& compiled = g.compiled_patterns(r);
    for (std::size_t p = 0; p < compiled.size(); ++p) {
      if (std::regex_search(empty, compiled[p])) {
        const std::string triple = to_string(g.relations()[r].triple());
        out.push_back({DiagnosticKind::kEmptyMatchingPattern, {triple},
                       "relation " + triple + ": pattern '" + g.effective_patterns(r)[p] +
                           "' matches the empty string"});
      }
    }
  }
  return out;
}

// ---- structural queries -------------------------------------------------

namespace {

// Hop distances from one source, capped at max_depth (unvisited = npos).
std::vector<std::size_t> bfs_depths(const FaceAttackGraph& g, std::size_t source,
                                    std::size_t max_depth) {
  constexpr std::size_t kUnvisited = static_cast<std::size_t>(-1);
  std::vector<std::size_t> depth(g.entities().size(), kUnvisited);
  std::deque<std::size_t> queue{source};
  depth[source] = 0;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    if (depth[u] == max_depth) continue;
    for (std::size_t v : g.neighbours(u)) {
      if (depth[v] != kUnvisited) continue;
      depth[v] = depth[u] + 1;
      queue.push_back(v);
    }
  }
  return depth;
}

}  // namespace

std::optional<std::size_t> shortest_distance(const FaceAttackGraph& g, const EntityId& u,
                                             const EntityId& v) {
  const std::size_t su = g.entity_position(u);
  const std::size_t sv = g.entity_position(v);
  const auto depth = bfs_depths(g, su, static_cast<std::size_t>(-1));
  if (depth[sv] == static_cast<std::size_t>(-1)) return std::nullopt;
  return depth[sv];
}

Subgraph ego_subgraph(const FaceAttackGraph& g, const EntityId& center, std::size_t k) {
  const auto depth = bfs_depths(g, g.entity_position(center), k);
  std::vector<bool> inside(depth.size(), false);
  Subgraph s{center, k, {}, {}};
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth[i] == static_cast<std::size_t>(-1)) continue;
    inside[i] = true;
    s.nodes.push_back(g.entities()[i].id);
  }
  std::sort(s.nodes.begin(), s.nodes.end());
  for (RelationIndex r = 0; r < g.relations().size(); ++r) {
    const Relation& rel = g.relations()[r];
    if (inside[g.entity_position(rel.attack)] && inside[g.entity_position(rel.feature)]) {
      s.edges.push_back(r);
    }
  }
  return s;
}

std::string subgraph_hash(const FaceAttackGraph& g, const Subgraph& s) {
  std::string canonical = s.center.str() + "|" + std::to_string(s.k) + "|";
  for (const auto& n : s.nodes) canonical += n.str() + ",";
  canonical += "|";
  for (RelationIndex r : s.edges) {
    const Relation& rel = g.relations()[r];
    canonical += rel.attack.str() + "\t" + rel.predicate + "\t" + rel.feature.str() + ";";
  }
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream hex;
  hex << std::hex;
  hex.width(16);
  hex.fill('0');
  hex << h;
  return hex.str();
}

SupportSets support_sets(const FaceAttackGraph& g, const EntityId& attack, ConflictPolicy policy) {
  const Entity& a = g.entity(attack);
  if (a.kind != EntityKind::kAttackType) {
    throw Error(ErrorCode::kUnknownEntity, "'" + attack.str() + "' is not an attack_type entity");
  }
  SupportSets sets{attack, {}, {}};
  std::set<std::string> own_features;
  for (RelationIndex r = 0; r < g.relations().size(); ++r) {
    const Relation& rel = g.relations()[r];
    if (rel.attack == attack) {
      sets.s_plus.push_back(r);
      own_features.insert(rel.feature.str());
    }
  }
  if (policy == ConflictPolicy::kPreferExplicit) {
    if (const auto* explicit_list = g.explicit_conflicts(attack)) {
      sets.s_minus = *explicit_list;
      return sets;
    }
  }
  for (RelationIndex r = 0; r < g.relations().size(); ++r) {
    const Relation& rel = g.relations()[r];
    if (rel.attack == attack) continue;
    if (g.entity(rel.feature).feature_scope != FeatureScope::kSpecific) continue;
    if (own_features.contains(rel.feature.str())) continue;
    sets.s_minus.push_back(r);
  }
  return sets;
}

EntityId attack_node_for_label(const FaceAttackGraph& g, std::string_view label) {
  if (auto it = g.labels().find(std::string(label)); it != g.labels().end()) return it->second;
  const std::string key = label_key(label);
  if (!key.empty()) {
    for (const auto& [name, id] : g.labels()) {
      if (label_key(name) == key) return id;
    }
  }
  throw Error(ErrorCode::kUnknownLabel, "unknown label '" + std::string(label) + "'");
}

}  // namespace fakg
