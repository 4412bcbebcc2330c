#pragma once

// FAKG-guided QA synthesis: ego-subgraph -> skeleton -> caption -> fusion,
// with structural, fact-conflict and pruning filters, and AGIT export.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fakg/graph.hpp"
#include "fakg/labels.hpp"
#include "fakg/remote_clients.hpp"

namespace fakg {

struct ManifestEntry {
  std::string sample_id;
  std::string image_ref;
  std::string label;  // resolved at synthesis time so bad labels can be skipped
};

// {"sample_id", "image", "label"}; throws Error(kParse).
ManifestEntry parse_manifest_entry(std::string_view json_line);

struct Skeleton {
  std::string question;
  std::vector<std::string> reasoning_steps;
  std::vector<RelationTriple> cited_triples;  // entity names or aliases
  std::string answer_hint;                    // label the skeleton argues for
};

struct Caption {
  std::string text;
};

struct Fusion {
  std::string question;
  std::string answer;
  std::optional<std::string> rationale;
};

enum class FilterStatus { kPass, kReject };
enum class RejectReason { kStructural, kFactConflict, kLowComplexity, kLowInfo };

std::string_view to_string(RejectReason reason);

struct FilterVerdict {
  FilterStatus status = FilterStatus::kPass;
  std::optional<RejectReason> reason;
  std::string detail;

  static FilterVerdict pass(std::string detail = {}) { return {FilterStatus::kPass, std::nullopt, std::move(detail)}; }
  static FilterVerdict reject(RejectReason r, std::string detail) {
    return {FilterStatus::kReject, r, std::move(detail)};
  }
  bool passed() const noexcept { return status == FilterStatus::kPass; }
};

struct Provenance {
  std::size_t k = 0;
  std::string center;
  std::string subgraph_hash;
  Skeleton skeleton;
  Caption caption;
};

struct QARecord {
  std::string sample_id;
  std::string image_ref;
  std::string label;
  std::string question;
  std::string answer;
  std::optional<std::string> rationale;
  Provenance provenance;
  std::optional<FilterVerdict> verdict;
};

nlohmann::ordered_json record_to_json(const QARecord& record);

// ---- generator clients --------------------------------------------------

class SkeletonGenerator {
 public:
  virtual ~SkeletonGenerator() = default;
  virtual Skeleton generate(const FaceAttackGraph& g, const Subgraph& subgraph) = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual Caption caption(const std::string& image_ref, FineLabel label) = 0;
};

class Fuser {
 public:
  virtual ~Fuser() = default;
  virtual Fusion fuse(const std::string& image_ref, const Skeleton& skeleton,
                      const Caption& caption) = 0;
};

enum class Rubric { kFactConflict, kPruning };

struct JudgeVerdict {
  bool conflict = false;
  double complexity = 0;  // [0,1]
  double info_gain = 0;   // [0,1]
  std::string detail;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeVerdict judge(const QARecord& record, Rubric rubric) = 0;
};

struct GeneratorClients {
  std::shared_ptr<SkeletonGenerator> skeleton;
  std::shared_ptr<Captioner> captioner;
  std::shared_ptr<Fuser> fuser;
  std::shared_ptr<Judge> judge;
};

// Template skeletons over the subgraph's relations. k=1 style subgraphs give
// "Why is this a print attack?"; when another attack is reachable the
// question contrasts it, preferring attacks of the same coarse category.
class StubSkeletonGenerator final : public SkeletonGenerator {
 public:
  Skeleton generate(const FaceAttackGraph& g, const Subgraph& subgraph) override;
};

// Label-keyed caption templates; the seed picks a variant per sample.
class StubCaptioner final : public Captioner {
 public:
  explicit StubCaptioner(std::uint64_t seed = 0) : seed_(seed) {}
  Caption caption(const std::string& image_ref, FineLabel label) override;

 private:
  std::uint64_t seed_;
};

// question = skeleton question; rationale = caption + reasoning steps;
// answer = skeleton answer hint.
class ConcatFuser final : public Fuser {
 public:
  Fusion fuse(const std::string& image_ref, const Skeleton& skeleton,
              const Caption& caption) override;
};

struct ConflictRule {
  std::string caption_phrase;  // case-insensitive substring
  EntityId attack;             // a cited triple from this attack conflicts
};

// Fact conflict: caption contains a rule phrase while the skeleton cites a
// triple of the rule's attack. Pruning scores: complexity = resolved cited
// triples / |R|, info gain = distinct cited features / feature count.
class StubJudge final : public Judge {
 public:
  // Default rule: "pristine high-resolution textures" vs. the Replay node.
  explicit StubJudge(const FaceAttackGraph& g);
  StubJudge(const FaceAttackGraph& g, std::vector<ConflictRule> rules);
  JudgeVerdict judge(const QARecord& record, Rubric rubric) override;

 private:
  const FaceAttackGraph& graph_;
  std::vector<ConflictRule> rules_;
};

GeneratorClients make_stub_clients(const FaceAttackGraph& g, std::uint64_t seed = 0);

// Chat-completion backed clients. Replies carrying structured fields are
// expected to contain one JSON object.
struct RemoteStageConfig {
  EndpointConfig skeleton;
  EndpointConfig captioner;
  EndpointConfig fuser;
  EndpointConfig judge;
  bool inline_images = false;  // base64 data URLs instead of references
};

GeneratorClients make_remote_clients(const RemoteStageConfig& cfg);

// Extracts the first balanced {...} object from model output.
nlohmann::json extract_json_object(std::string_view text);

// ---- operations ---------------------------------------------------------

// Resolves an entity by id, name or alias (case-insensitive).
std::optional<EntityId> resolve_entity_name(const FaceAttackGraph& g, std::string_view name);
// Resolves a cited triple to a graph relation, if it names one.
std::optional<RelationIndex> resolve_triple(const FaceAttackGraph& g, const RelationTriple& t);

// Subgraph, skeleton and caption only (question/answer left empty).
// Throws Error(kUnknownLabel) naming the sample.
QARecord prepare_record(const ManifestEntry& entry, const FaceAttackGraph& g, std::size_t k,
                        const GeneratorClients& clients);
void fuse_record(QARecord& record, const GeneratorClients& clients);
// prepare_record + fuse_record.
QARecord synthesize_one(const ManifestEntry& entry, const FaceAttackGraph& g, std::size_t k,
                        const GeneratorClients& clients);

FilterVerdict structural_filter(const Skeleton& s, const FaceAttackGraph& g);

enum class JudgeFailurePolicy { kPassThrough, kHardFail };

// kHardFail rethrows the transport error; kPassThrough passes with an
// "unverified" detail.
FilterVerdict logical_flow_filter(const QARecord& record, Judge& judge,
                                  JudgeFailurePolicy policy = JudgeFailurePolicy::kPassThrough,
                                  int retries = 0);

struct PruneThresholds {
  double min_complexity = 0.1;
  double min_info = 0.05;
};

FilterVerdict pruning_filter(const QARecord& record, Judge& judge, const PruneThresholds& t,
                             JudgeFailurePolicy policy = JudgeFailurePolicy::kPassThrough,
                             int retries = 0);

struct PipelineConfig {
  std::size_t k = 2;
  bool structural = true;
  bool fact_conflict = true;
  bool pruning = true;
  PruneThresholds thresholds;
  int retries = 1;  // extra attempts per client call
  JudgeFailurePolicy judge_failure = JudgeFailurePolicy::kPassThrough;
  std::size_t concurrency = 1;
};

struct PipelineStats {
  std::size_t attempted = 0;
  std::size_t passed = 0;
  std::map<RejectReason, std::size_t> rejected;
  std::size_t skipped = 0;
  std::size_t judge_calls = 0;
  std::vector<std::string> skip_reasons;  // "sample_id: reason"

  std::size_t rejected_total() const;
};

nlohmann::ordered_json stats_to_json(const PipelineStats& stats);

struct PipelineResult {
  std::vector<QARecord> corpus;    // passing records, manifest order
  std::vector<QARecord> rejected;  // rejected records, manifest order
  PipelineStats stats;
};

PipelineResult run_pipeline(std::span<const ManifestEntry> manifest, const FaceAttackGraph& g,
                            const PipelineConfig& cfg, const GeneratorClients& clients);

struct AgitRecord {
  std::string image;
  std::string question;
  std::string think;
  std::string answer;
  bool think_missing = false;  // not serialized
};

// Throws Error(kRejectedRecord) unless the record passed filtering.
AgitRecord to_agit_record(const QARecord& record);
// Exactly {"image", "question", "think", "answer"}.
nlohmann::ordered_json agit_to_json(const AgitRecord& record);

}  // namespace fakg
