#include "fakg/synthesis.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "fakg/error.hpp"
#include "fakg/protocol_eval.hpp"

namespace fakg {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string fold(std::string_view text) {
  std::string out;
  bool space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <class F>
auto with_retries(int retries, F&& fn) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kTransport || attempt >= retries) throw;
      spdlog::debug("retrying after transport error ({}/{}): {}", attempt + 1, retries, e.what());
    }
  }
}

std::optional<FineLabel> label_of_attack(const FaceAttackGraph& g, const EntityId& attack) {
  for (const auto& [label, id] : g.labels()) {
    if (id == attack) return parse_fine_label(label);
  }
  return std::nullopt;
}

std::string attack_phrase(const FaceAttackGraph& g, const EntityId& attack) {
  const auto label = label_of_attack(g, attack);
  if (label == FineLabel::kRealFace) return "real face";
  return lower(g.entity(attack).name) + " attack";
}

std::string string_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw Error(ErrorCode::kTransport, std::string("generator reply lacks string field '") + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::kStructural: return "structural";
    case RejectReason::kFactConflict: return "fact_conflict";
    case RejectReason::kLowComplexity: return "low_complexity";
    case RejectReason::kLowInfo: return "low_info";
  }
  return "?";
}

ManifestEntry parse_manifest_entry(std::string_view json_line) {
  json doc;
  try {
    doc = json::parse(json_line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kParse, "manifest entry must be a JSON object");
  ManifestEntry entry;
  for (auto [key, field] : {std::pair{"sample_id", &entry.sample_id},
                            std::pair{"image", &entry.image_ref}, std::pair{"label", &entry.label}}) {
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_string()) {
      throw Error(ErrorCode::kParse, std::string("manifest entry needs a string '") + key + "'");
    }
    *field = it->get<std::string>();
  }
  if (entry.image_ref.empty()) {
    throw Error(ErrorCode::kParse, "manifest entry '" + entry.sample_id + "' has an empty image");
  }
  return entry;
}

ordered_json record_to_json(const QARecord& r) {
  ordered_json out;
  out["sample_id"] = r.sample_id;
  out["image"] = r.image_ref;
  out["label"] = r.label;
  out["question"] = r.question;
  out["answer"] = r.answer;
  out["rationale"] = r.rationale ? ordered_json(*r.rationale) : ordered_json(nullptr);
  ordered_json skeleton;
  skeleton["question"] = r.provenance.skeleton.question;
  skeleton["reasoning_steps"] = r.provenance.skeleton.reasoning_steps;
  skeleton["cited_triples"] = ordered_json::array();
  for (const auto& t : r.provenance.skeleton.cited_triples) {
    skeleton["cited_triples"].push_back(
        ordered_json{{"attack", t.attack}, {"predicate", t.predicate}, {"feature", t.feature}});
  }
  skeleton["answer_hint"] = r.provenance.skeleton.answer_hint;
  ordered_json prov;
  prov["k"] = r.provenance.k;
  prov["center"] = r.provenance.center;
  prov["subgraph_hash"] = r.provenance.subgraph_hash;
  prov["skeleton"] = std::move(skeleton);
  prov["caption"] = r.provenance.caption.text;
  out["provenance"] = std::move(prov);
  if (r.verdict) {
    ordered_json v;
    v["status"] = r.verdict->passed() ? "pass" : "reject";
    if (r.verdict->reason) v["reason"] = std::string(to_string(*r.verdict->reason));
    v["detail"] = r.verdict->detail;
    out["verdict"] = std::move(v);
  } else {
    out["verdict"] = nullptr;
  }
  return out;
}

// ---- stub clients -------------------------------------------------------

Skeleton StubSkeletonGenerator::generate(const FaceAttackGraph& g, const Subgraph& subgraph) {
  const EntityId& center = subgraph.center;
  Skeleton s;
  const auto center_label = label_of_attack(g, center);
  s.answer_hint = center_label ? std::string(to_string(*center_label)) : g.entity(center).name;

  std::set<std::string> center_features;
  std::vector<RelationIndex> own;
  for (RelationIndex r : subgraph.edges) {
    const Relation& rel = g.relations()[r];
    if (rel.attack == center) {
      own.push_back(r);
      center_features.insert(rel.feature.str());
    }
  }

  // Contrast candidate: another reachable attack; same coarse category first,
  // then most shared features, then graph order.
  std::optional<EntityId> contrast;
  std::tuple<int, std::size_t> best{-1, 0};
  for (const EntityId& node : subgraph.nodes) {
    if (node == center || g.entity(node).kind != EntityKind::kAttackType) continue;
    std::size_t shared = 0;
    for (RelationIndex r : subgraph.edges) {
      const Relation& rel = g.relations()[r];
      if (rel.attack == node && center_features.contains(rel.feature.str())) ++shared;
    }
    const auto label = label_of_attack(g, node);
    const int same_group = (center_label && label &&
                            coarsen(*center_label, Protocol::kP2) == coarsen(*label, Protocol::kP2))
                               ? 1
                               : 0;
    const std::tuple<int, std::size_t> key{same_group, shared};
    const bool better = !contrast || key > best ||
                        (key == best && g.entity_position(node) < g.entity_position(*contrast));
    if (better) {
      contrast = node;
      best = key;
    }
  }

  const std::string phrase = attack_phrase(g, center);
  auto cite = [&](RelationIndex r) {
    const Relation& rel = g.relations()[r];
    const std::string attack_name = g.entity(rel.attack).name;
    const std::string feature_name = g.entity(rel.feature).name;
    s.cited_triples.push_back({attack_name, rel.predicate, feature_name});
    s.reasoning_steps.push_back(attack_name + " " + rel.predicate + " " + feature_name + ".");
  };
  for (RelationIndex r : own) cite(r);
  if (contrast) {
    s.question = "Why is this a " + phrase + " and not a " + attack_phrase(g, *contrast) + "?";
    for (RelationIndex r : subgraph.edges) {
      if (g.relations()[r].attack == *contrast) cite(r);
    }
    s.reasoning_steps.push_back("Shared cues alone do not separate " + g.entity(center).name +
                                " from " + g.entity(*contrast).name +
                                "; the attack-specific cues decide.");
  } else {
    s.question = "Why is this a " + phrase + "?";
  }
  return s;
}

Caption StubCaptioner::caption(const std::string& image_ref, FineLabel label) {
  static const std::map<FineLabel, std::vector<std::string>> kTemplates = {
      {FineLabel::kRealFace,
       {"Natural skin texture with visible pores and consistent lighting across the face.",
        "Consistent global illumination and natural depth cues around the nose and cheeks."}},
      {FineLabel::kPrint,
       {"Flat lighting, faded colors and a visible paper edge near the chin.",
        "Halftone dots are visible on the cheeks and the paper texture shows under glare."}},
      {FineLabel::kReplay,
       {"Moire bands and a bluish color cast are visible; the screen bezel frames the face.",
        "Screen glare and a faint pixel grid overlay the facial region."}},
      {FineLabel::kFaceSwap,
       {"A blending seam runs along the jawline and the skin tones are mismatched.",
        "The facial geometry looks warped relative to the head pose."}},
      {FineLabel::kAttributeEdit,
       {"The hair region looks edited and the skin is overly smooth.",
        "A localized manipulation around the eyes leaves a generative artifact."}},
      {FineLabel::kVideoDriven,
       {"The mouth shows an unnatural expression and the teeth look blurry.",
        "Warped geometry around the jaw suggests a reenacted frame."}},
      {FineLabel::kAdversarial,
       {"The face looks natural but high-frequency noise is visible on zoom.",
        "Subtle color noise is spread evenly across the whole image."}},
  };
  const auto& variants = kTemplates.at(label);
  const std::uint64_t h = fnv1a(image_ref, fnv1a(std::to_string(seed_)));
  return {variants[h % variants.size()]};
}

Fusion ConcatFuser::fuse(const std::string&, const Skeleton& skeleton, const Caption& caption) {
  Fusion f;
  f.question = skeleton.question;
  f.answer = skeleton.answer_hint;
  std::string rationale = caption.text;
  for (const auto& step : skeleton.reasoning_steps) rationale += " " + step;
  f.rationale = std::move(rationale);
  return f;
}

StubJudge::StubJudge(const FaceAttackGraph& g) : graph_(g) {
  if (auto it = g.labels().find("Replay"); it != g.labels().end()) {
    rules_.push_back({"pristine high-resolution textures", it->second});
  }
}

StubJudge::StubJudge(const FaceAttackGraph& g, std::vector<ConflictRule> rules)
    : graph_(g), rules_(std::move(rules)) {}

JudgeVerdict StubJudge::judge(const QARecord& record, Rubric rubric) {
  JudgeVerdict v;
  const Skeleton& s = record.provenance.skeleton;
  if (rubric == Rubric::kFactConflict) {
    const std::string caption = fold(record.provenance.caption.text);
    for (const auto& rule : rules_) {
      if (caption.find(fold(rule.caption_phrase)) == std::string::npos) continue;
      for (const auto& t : s.cited_triples) {
        if (resolve_entity_name(graph_, t.attack) == rule.attack) {
          v.conflict = true;
          v.detail = "caption reports '" + rule.caption_phrase + "' but the skeleton cites " +
                     to_string(t);
          return v;
        }
      }
    }
    return v;
  }
  std::set<RelationIndex> relations;
  std::set<std::string> features;
  for (const auto& t : s.cited_triples) {
    if (auto r = resolve_triple(graph_, t)) {
      relations.insert(*r);
      features.insert(graph_.relations()[*r].feature.str());
    }
  }
  std::size_t feature_count = 0;
  for (const auto& e : graph_.entities()) feature_count += e.kind == EntityKind::kFeature ? 1 : 0;
  const auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : std::min(1.0, static_cast<double>(a) / static_cast<double>(b));
  };
  v.complexity = ratio(relations.size(), graph_.relations().size());
  v.info_gain = ratio(features.size(), feature_count);
  return v;
}

GeneratorClients make_stub_clients(const FaceAttackGraph& g, std::uint64_t seed) {
  return {std::make_shared<StubSkeletonGenerator>(), std::make_shared<StubCaptioner>(seed),
          std::make_shared<ConcatFuser>(), std::make_shared<StubJudge>(g)};
}

// ---- remote clients -----------------------------------------------------

json extract_json_object(std::string_view text) {
  const std::size_t start = text.find('{');
  if (start == std::string_view::npos) {
    throw Error(ErrorCode::kTransport, "generator reply contains no JSON object");
  }
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) {
      try {
        return json::parse(text.substr(start, i - start + 1));
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::kTransport, std::string("generator reply JSON: ") + e.what());
      }
    }
  }
  throw Error(ErrorCode::kTransport, "generator reply has an unterminated JSON object");
}

namespace {

json image_part(const std::string& image_ref, bool inline_images) {
  std::string url = image_ref;
  const bool remote = image_ref.rfind("http://", 0) == 0 || image_ref.rfind("https://", 0) == 0 ||
                      image_ref.rfind("data:", 0) == 0;
  if (inline_images && !remote) {
    std::ifstream in(image_ref, std::ios::binary);
    if (!in) throw Error(ErrorCode::kTransport, "cannot read image '" + image_ref + "'");
    std::ostringstream bytes;
    bytes << in.rdbuf();
    std::string ext = lower(std::filesystem::path(image_ref).extension().string());
    const std::string mime = ext == ".png" ? "image/png" : ext == ".webp" ? "image/webp" : "image/jpeg";
    url = "data:" + mime + ";base64," + base64_encode(bytes.str());
  }
  return {{"type", "image_url"}, {"image_url", {{"url", url}}}};
}

json skeleton_json(const Skeleton& s) {
  json triples = json::array();
  for (const auto& t : s.cited_triples) {
    triples.push_back({{"attack", t.attack}, {"predicate", t.predicate}, {"feature", t.feature}});
  }
  return {{"question", s.question},
          {"reasoning_steps", s.reasoning_steps},
          {"cited_triples", triples},
          {"answer", s.answer_hint}};
}

class RemoteSkeletonGenerator final : public SkeletonGenerator {
 public:
  explicit RemoteSkeletonGenerator(EndpointConfig cfg) : chat_(std::move(cfg)) {}
  Skeleton generate(const FaceAttackGraph& g, const Subgraph& subgraph) override {
    std::ostringstream prompt;
    prompt << "Center attack: " << g.entity(subgraph.center).name << "\nRelations:\n";
    for (RelationIndex r : subgraph.edges) {
      const Relation& rel = g.relations()[r];
      prompt << "- (" << g.entity(rel.attack).name << ", " << rel.predicate << ", "
             << g.entity(rel.feature).name << ")\n";
    }
    prompt << "\nWrite one diagnostic question about the center attack and a step-by-step "
              "reasoning skeleton using only the relations above. Reply with a JSON object "
              "{\"question\": str, \"reasoning_steps\": [str], \"cited_triples\": "
              "[{\"attack\", \"predicate\", \"feature\"}], \"answer\": str}.";
    const json reply = extract_json_object(
        chat_.complete({{"system", "You write knowledge-graph grounded QA skeletons for face attack detection."},
                        {"user", prompt.str()}}));
    Skeleton s;
    s.question = string_field(reply, "question");
    if (auto it = reply.find("reasoning_steps"); it != reply.end() && it->is_array()) {
      for (const auto& step : *it) {
        if (step.is_string()) s.reasoning_steps.push_back(step.get<std::string>());
      }
    }
    if (auto it = reply.find("cited_triples"); it != reply.end() && it->is_array()) {
      for (const auto& t : *it) {
        if (!t.is_object()) continue;
        s.cited_triples.push_back(
            {string_field(t, "attack"), string_field(t, "predicate"), string_field(t, "feature")});
      }
    }
    if (auto it = reply.find("answer"); it != reply.end() && it->is_string()) {
      s.answer_hint = it->get<std::string>();
    }
    return s;
  }

 private:
  ChatCompletionClient chat_;
};

class RemoteCaptioner final : public Captioner {
 public:
  RemoteCaptioner(EndpointConfig cfg, bool inline_images)
      : chat_(std::move(cfg)), inline_images_(inline_images) {}
  Caption caption(const std::string& image_ref, FineLabel label) override {
    json content = json::array();
    content.push_back({{"type", "text"},
                       {"text", "This face image is labeled '" + std::string(to_string(label)) +
                                    "'. Describe the observable visual evidence relevant to the "
                                    "label: illumination, texture consistency, boundary "
                                    "artifacts and similar cues. Plain text, no verdict."}});
    content.push_back(image_part(image_ref, inline_images_));
    std::string text = chat_.complete({{"user", content}});
    if (fold(text).empty()) throw Error(ErrorCode::kTransport, "captioner returned empty text");
    return {std::move(text)};
  }

 private:
  ChatCompletionClient chat_;
  bool inline_images_;
};

class RemoteFuser final : public Fuser {
 public:
  RemoteFuser(EndpointConfig cfg, bool inline_images)
      : chat_(std::move(cfg)), inline_images_(inline_images) {}
  Fusion fuse(const std::string& image_ref, const Skeleton& skeleton, const Caption& caption) override {
    json content = json::array();
    content.push_back(
        {{"type", "text"},
         {"text", "Skeleton: " + skeleton_json(skeleton).dump() + "\nCaption: " + caption.text +
                      "\nFuse them into one question and answer about the image. Reply with a "
                      "JSON object {\"question\": str, \"rationale\": str, \"answer\": str}."}});
    content.push_back(image_part(image_ref, inline_images_));
    const json reply = extract_json_object(chat_.complete({{"user", content}}));
    Fusion f;
    f.question = string_field(reply, "question");
    f.answer = string_field(reply, "answer");
    if (auto it = reply.find("rationale"); it != reply.end() && it->is_string()) {
      f.rationale = it->get<std::string>();
    }
    return f;
  }

 private:
  ChatCompletionClient chat_;
  bool inline_images_;
};

class RemoteJudge final : public Judge {
 public:
  explicit RemoteJudge(EndpointConfig cfg) : chat_(std::move(cfg)) {}
  JudgeVerdict judge(const QARecord& record, Rubric rubric) override {
    const json skeleton = skeleton_json(record.provenance.skeleton);
    std::string prompt;
    if (rubric == Rubric::kFactConflict) {
      prompt = "Caption (raw visual facts): " + record.provenance.caption.text +
               "\nQA framework (attack logic): " + skeleton.dump() +
               "\nAct as a critic: does the framework assume evidence that the caption "
               "contradicts? Reply with a JSON object {\"conflict\": bool, \"detail\": str}.";
    } else {
      prompt = "Question: " + record.question + "\nRationale: " + record.rationale.value_or("") +
               "\nAnswer: " + record.answer + "\nFramework: " + skeleton.dump() +
               "\nScore the logical complexity (multi-hop reasoning, density of diagnostic "
               "evidence) and the information gain (diagnostic value) of this dialogue, each in "
               "[0,1]. Reply with a JSON object {\"complexity\": num, \"info_gain\": num}.";
    }
    const json reply = extract_json_object(chat_.complete({{"user", prompt}}));
    JudgeVerdict v;
    if (rubric == Rubric::kFactConflict) {
      auto it = reply.find("conflict");
      if (it == reply.end() || !it->is_boolean()) {
        throw Error(ErrorCode::kTransport, "judge reply lacks boolean 'conflict'");
      }
      v.conflict = it->get<bool>();
      if (auto d = reply.find("detail"); d != reply.end() && d->is_string()) v.detail = d->get<std::string>();
    } else {
      for (auto [key, field] : {std::pair{"complexity", &v.complexity}, std::pair{"info_gain", &v.info_gain}}) {
        auto it = reply.find(key);
        if (it == reply.end() || !it->is_number()) {
          throw Error(ErrorCode::kTransport, std::string("judge reply lacks number '") + key + "'");
        }
        *field = std::clamp(it->get<double>(), 0.0, 1.0);
      }
    }
    return v;
  }

 private:
  ChatCompletionClient chat_;
};

}  // namespace

GeneratorClients make_remote_clients(const RemoteStageConfig& cfg) {
  return {std::make_shared<RemoteSkeletonGenerator>(cfg.skeleton),
          std::make_shared<RemoteCaptioner>(cfg.captioner, cfg.inline_images),
          std::make_shared<RemoteFuser>(cfg.fuser, cfg.inline_images),
          std::make_shared<RemoteJudge>(cfg.judge)};
}

// ---- operations ---------------------------------------------------------

std::optional<EntityId> resolve_entity_name(const FaceAttackGraph& g, std::string_view name) {
  if (const Entity* e = g.find_entity(name)) return e->id;
  const std::string key = fold(name);
  if (key.empty()) return std::nullopt;
  for (const Entity& e : g.entities()) {
    if (fold(e.id.str()) == key) return e.id;
    for (const auto& form : g.surface_forms(e.id)) {
      if (form == key) return e.id;
    }
  }
  return std::nullopt;
}

std::optional<RelationIndex> resolve_triple(const FaceAttackGraph& g, const RelationTriple& t) {
  const auto attack = resolve_entity_name(g, t.attack);
  const auto feature = resolve_entity_name(g, t.feature);
  if (!attack || !feature) return std::nullopt;
  const std::string predicate = fold(t.predicate);
  for (RelationIndex r : g.incident_relations(*attack)) {
    const Relation& rel = g.relations()[r];
    if (rel.attack == *attack && rel.feature == *feature && fold(rel.predicate) == predicate) {
      return r;
    }
  }
  return std::nullopt;
}

QARecord prepare_record(const ManifestEntry& entry, const FaceAttackGraph& g, std::size_t k,
                        const GeneratorClients& clients) {
  const auto label = parse_fine_label(entry.label);
  EntityId center;
  try {
    if (!label) throw Error(ErrorCode::kUnknownLabel, "");
    center = attack_node_for_label(g, to_string(*label));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kUnknownLabel) throw;
    throw Error(ErrorCode::kUnknownLabel,
                "sample '" + entry.sample_id + "': unknown label '" + entry.label + "'");
  }
  QARecord record;
  record.sample_id = entry.sample_id;
  record.image_ref = entry.image_ref;
  record.label = std::string(to_string(*label));
  const Subgraph subgraph = ego_subgraph(g, center, k);
  record.provenance.k = k;
  record.provenance.center = center.str();
  record.provenance.subgraph_hash = subgraph_hash(g, subgraph);
  record.provenance.skeleton = clients.skeleton->generate(g, subgraph);
  record.provenance.caption = clients.captioner->caption(entry.image_ref, *label);
  return record;
}

void fuse_record(QARecord& record, const GeneratorClients& clients) {
  Fusion f = clients.fuser->fuse(record.image_ref, record.provenance.skeleton, record.provenance.caption);
  record.question = std::move(f.question);
  record.answer = std::move(f.answer);
  record.rationale = std::move(f.rationale);
}

QARecord synthesize_one(const ManifestEntry& entry, const FaceAttackGraph& g, std::size_t k,
                        const GeneratorClients& clients) {
  QARecord record = prepare_record(entry, g, k, clients);
  fuse_record(record, clients);
  return record;
}

FilterVerdict structural_filter(const Skeleton& s, const FaceAttackGraph& g) {
  if (s.cited_triples.empty()) return FilterVerdict::reject(RejectReason::kStructural, "no grounded triples");
  for (const auto& t : s.cited_triples) {
    if (!resolve_triple(g, t)) {
      return FilterVerdict::reject(RejectReason::kStructural, "off-graph triple " + to_string(t));
    }
  }
  return FilterVerdict::pass();
}

namespace {

std::optional<JudgeVerdict> call_judge(const QARecord& record, Judge& judge, Rubric rubric,
                                       JudgeFailurePolicy policy, int retries) {
  try {
    return with_retries(retries, [&] { return judge.judge(record, rubric); });
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kTransport || policy == JudgeFailurePolicy::kHardFail) throw;
    spdlog::warn("judge unavailable for '{}', passing unverified: {}", record.sample_id, e.what());
    return std::nullopt;
  }
}

}  // namespace

FilterVerdict logical_flow_filter(const QARecord& record, Judge& judge, JudgeFailurePolicy policy,
                                  int retries) {
  const auto v = call_judge(record, judge, Rubric::kFactConflict, policy, retries);
  if (!v) return FilterVerdict::pass("unverified: fact-conflict judge unavailable");
  if (v->conflict) {
    return FilterVerdict::reject(RejectReason::kFactConflict,
                                 v->detail.empty() ? "caption contradicts the skeleton" : v->detail);
  }
  return FilterVerdict::pass();
}

FilterVerdict pruning_filter(const QARecord& record, Judge& judge, const PruneThresholds& t,
                             JudgeFailurePolicy policy, int retries) {
  const auto v = call_judge(record, judge, Rubric::kPruning, policy, retries);
  if (!v) return FilterVerdict::pass("unverified: pruning judge unavailable");
  if (v->complexity < t.min_complexity) {
    return FilterVerdict::reject(RejectReason::kLowComplexity,
                                 "complexity " + std::to_string(v->complexity) + " < " +
                                     std::to_string(t.min_complexity));
  }
  if (v->info_gain < t.min_info) {
    return FilterVerdict::reject(RejectReason::kLowInfo, "info gain " + std::to_string(v->info_gain) +
                                                             " < " + std::to_string(t.min_info));
  }
  return FilterVerdict::pass();
}

std::size_t PipelineStats::rejected_total() const {
  std::size_t n = 0;
  for (const auto& [reason, count] : rejected) n += count;
  return n;
}

ordered_json stats_to_json(const PipelineStats& stats) {
  ordered_json out;
  out["attempted"] = stats.attempted;
  out["passed"] = stats.passed;
  ordered_json rejected = ordered_json::object();
  for (auto reason : {RejectReason::kStructural, RejectReason::kFactConflict,
                      RejectReason::kLowComplexity, RejectReason::kLowInfo}) {
    auto it = stats.rejected.find(reason);
    rejected[std::string(to_string(reason))] = it == stats.rejected.end() ? 0 : it->second;
  }
  out["rejected"] = std::move(rejected);
  out["skipped"] = stats.skipped;
  out["judge_calls"] = stats.judge_calls;
  out["skip_reasons"] = stats.skip_reasons;
  return out;
}

namespace {

class CountingJudge final : public Judge {
 public:
  explicit CountingJudge(Judge& inner) : inner_(inner) {}
  JudgeVerdict judge(const QARecord& record, Rubric rubric) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.judge(record, rubric);
  }
  std::size_t calls() const { return calls_.load(); }

 private:
  Judge& inner_;
  std::atomic<std::size_t> calls_{0};
};

enum class Outcome { kPassed, kRejected, kSkipped };

struct EntryResult {
  Outcome outcome = Outcome::kSkipped;
  QARecord record;
  std::string skip_reason;
};

EntryResult process_entry(const ManifestEntry& entry, const FaceAttackGraph& g,
                          const PipelineConfig& cfg, const GeneratorClients& clients, Judge& judge) {
  EntryResult result;
  try {
    QARecord& record = result.record;
    record = with_retries(cfg.retries, [&] { return prepare_record(entry, g, cfg.k, clients); });
    std::vector<std::string> flags;
    auto settle = [&](FilterVerdict v) {
      if (!v.detail.empty() && v.passed()) flags.push_back(v.detail);
      if (v.passed()) return false;
      record.verdict = std::move(v);
      result.outcome = Outcome::kRejected;
      return true;
    };
    if (cfg.structural && settle(structural_filter(record.provenance.skeleton, g))) return result;
    if (cfg.fact_conflict &&
        settle(logical_flow_filter(record, judge, cfg.judge_failure, cfg.retries))) {
      return result;
    }
    with_retries(cfg.retries, [&] {
      fuse_record(record, clients);
      return 0;
    });
    if (cfg.pruning &&
        settle(pruning_filter(record, judge, cfg.thresholds, cfg.judge_failure, cfg.retries))) {
      return result;
    }
    std::string detail;
    for (const auto& f : flags) detail += (detail.empty() ? "" : "; ") + f;
    record.verdict = FilterVerdict::pass(std::move(detail));
    result.outcome = Outcome::kPassed;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kTransport && e.code() != ErrorCode::kUnknownLabel) throw;
    result.outcome = Outcome::kSkipped;
    result.skip_reason = entry.sample_id + ": " + e.what();
  }
  return result;
}

}  // namespace

PipelineResult run_pipeline(std::span<const ManifestEntry> manifest, const FaceAttackGraph& g,
                            const PipelineConfig& cfg, const GeneratorClients& clients) {
  if (manifest.empty()) throw Error(ErrorCode::kInvalidArgument, "run_pipeline: empty manifest");
  {
    std::set<std::string> ids;
    for (const auto& e : manifest) {
      if (!ids.insert(e.sample_id).second) {
        throw Error(ErrorCode::kInvalidArgument, "duplicate sample_id '" + e.sample_id + "'");
      }
    }
  }
  if (!clients.skeleton || !clients.captioner || !clients.fuser || !clients.judge) {
    throw Error(ErrorCode::kInvalidArgument, "run_pipeline: generator clients are not wired");
  }
  CountingJudge judge(*clients.judge);
  std::vector<EntryResult> results(manifest.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < manifest.size(); i = next.fetch_add(1)) {
      try {
        results[i] = process_entry(manifest[i], g, cfg, clients, judge);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(cfg.concurrency, 1, manifest.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  PipelineResult out;
  out.stats.attempted = manifest.size();
  for (auto& r : results) {
    switch (r.outcome) {
      case Outcome::kPassed:
        ++out.stats.passed;
        out.corpus.push_back(std::move(r.record));
        break;
      case Outcome::kRejected:
        ++out.stats.rejected[*r.record.verdict->reason];
        out.rejected.push_back(std::move(r.record));
        break;
      case Outcome::kSkipped:
        ++out.stats.skipped;
        spdlog::warn("skipped {}", r.skip_reason);
        out.stats.skip_reasons.push_back(std::move(r.skip_reason));
        break;
    }
  }
  out.stats.judge_calls = judge.calls();
  return out;
}

AgitRecord to_agit_record(const QARecord& record) {
  if (!record.verdict || !record.verdict->passed()) {
    throw Error(ErrorCode::kRejectedRecord,
                "record '" + record.sample_id + "' did not pass filtering");
  }
  AgitRecord out;
  out.image = record.image_ref;
  out.question = record.question;
  out.think = record.rationale.value_or("");
  out.think_missing = !record.rationale.has_value();
  out.answer = record.answer;
  return out;
}

ordered_json agit_to_json(const AgitRecord& record) {
  ordered_json out;
  out["image"] = record.image;
  out["question"] = record.question;
  out["think"] = record.think;
  out["answer"] = record.answer;
  return out;
}

}  // namespace fakg
