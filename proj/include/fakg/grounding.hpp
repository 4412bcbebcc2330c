#pragma once

// Response parsing into think/answer segments and projection of rationale
// text onto the closed FAKG relation set.

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fakg/error.hpp"
#include "fakg/graph.hpp"

namespace fakg {

struct TagConfig {
  std::string think_open = "<think>";
  std::string think_close = "</think>";
  std::string answer_open = "<answer>";
  std::string answer_close = "</answer>";

  // Throws Error(kInvalidArgument) unless all four are non-empty and distinct.
  void validate() const;
  std::string render(std::string_view think, std::string_view answer) const;
};

struct ParsedResponse {
  std::string think;
  std::string answer;
  bool format_valid = false;
  std::vector<std::string> diagnostics;
};

// Total: never throws. Literal, first-occurrence delimiter matching.
ParsedResponse parse_response(std::string_view raw, const TagConfig& tags = {});

// Case-insensitive unanchored search of every effective pattern.
bool pattern_match(const FaceAttackGraph& g, RelationIndex relation, std::string_view think);

// What a verifier sees for each candidate relation.
struct VerifierCandidate {
  std::string attack;
  std::string predicate;
  std::string feature;
  std::string attack_name;
  std::string feature_name;
};

class VerifierClient {
 public:
  virtual ~VerifierClient() = default;
  // One answer per candidate, same order. Remote implementations throw
  // TransportError.
  virtual std::vector<bool> verify(std::string_view think,
                                   std::span<const VerifierCandidate> candidates) = 0;
};

class TransportError : public Error {
 public:
  TransportError(const std::string& message, std::vector<VerifierCandidate> failed)
      : Error(ErrorCode::kTransport, message), failed_(std::move(failed)) {}

  const std::vector<VerifierCandidate>& failed_candidates() const noexcept { return failed_; }

 private:
  std::vector<VerifierCandidate> failed_;
};

// Confirms a candidate iff its predicate string occurs verbatim in think.
class StubVerifier final : public VerifierClient {
 public:
  std::vector<bool> verify(std::string_view think,
                           std::span<const VerifierCandidate> candidates) override;
};

// Adapts an arbitrary callable; used by tests to script verifier behaviour.
class FunctionVerifier final : public VerifierClient {
 public:
  using Fn = std::function<std::vector<bool>(std::string_view, std::span<const VerifierCandidate>)>;
  explicit FunctionVerifier(Fn fn) : fn_(std::move(fn)) {}
  std::vector<bool> verify(std::string_view think,
                           std::span<const VerifierCandidate> candidates) override {
    return fn_(think, candidates);
  }

 private:
  Fn fn_;
};

enum class GroundingMode { kPatternOnly, kFallbackVerifier, kAlwaysVerifier };

std::string_view to_string(GroundingMode mode);
GroundingMode parse_grounding_mode(std::string_view text);

enum class MatchSource { kPattern, kVerifier };

std::string_view to_string(MatchSource source);

struct GroundedRelation {
  RelationIndex relation;
  MatchSource source;

  friend bool operator==(const GroundedRelation&, const GroundedRelation&) = default;
};

struct GroundingReport {
  std::vector<GroundedRelation> grounded;  // ascending by relation, unique
  std::size_t candidates_checked = 0;
  std::size_t verifier_calls = 0;  // candidates submitted to the verifier

  std::vector<RelationIndex> relations() const;
  friend bool operator==(const GroundingReport&, const GroundingReport&) = default;
};

VerifierCandidate make_candidate(const FaceAttackGraph& g, RelationIndex relation);

// verifier may be null only in kPatternOnly mode. Verifier answers are
// indexed against the candidate list, so nothing outside the graph can be
// grounded. A length mismatch throws TransportError.
GroundingReport ground(std::string_view think, const FaceAttackGraph& g,
                       VerifierClient* verifier, GroundingMode mode);

}  // namespace fakg
