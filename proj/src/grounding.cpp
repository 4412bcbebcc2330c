#include "fakg/grounding.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "fakg/error.hpp"

namespace fakg {

namespace {

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

bool blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

struct Segment {
  std::size_t open = std::string_view::npos;   // position of the open tag
  std::size_t close = std::string_view::npos;  // position of the close tag
  std::string_view body;
};

Segment find_segment(std::string_view raw, std::string_view open, std::string_view close) {
  Segment s;
  s.open = raw.find(open);
  if (s.open == std::string_view::npos) return s;
  const std::size_t body_start = s.open + open.size();
  s.close = raw.find(close, body_start);
  s.body = s.close == std::string_view::npos ? raw.substr(body_start)
                                             : raw.substr(body_start, s.close - body_start);
  return s;
}

}  // namespace

void TagConfig::validate() const {
  const std::vector<const std::string*> all = {&think_open, &think_close, &answer_open,
                                               &answer_close};
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i]->empty()) throw Error(ErrorCode::kInvalidArgument, "response tags must be non-empty");
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      if (*all[i] == *all[j]) {
        throw Error(ErrorCode::kInvalidArgument, "response tags must be pairwise distinct ('" +
                                                     *all[i] + "' repeats)");
      }
    }
  }
}

std::string TagConfig::render(std::string_view think, std::string_view answer) const {
  std::string out;
  out.reserve(think.size() + answer.size() + 40);
  out.append(think_open).append(think).append(think_close);
  out.append(answer_open).append(answer).append(answer_close);
  return out;
}

ParsedResponse parse_response(std::string_view raw, const TagConfig& tags) {
  ParsedResponse out;
  const Segment think = find_segment(raw, tags.think_open, tags.think_close);
  const Segment answer = find_segment(raw, tags.answer_open, tags.answer_close);
  out.think = std::string(think.body);
  out.answer = std::string(answer.body);

  auto& diag = out.diagnostics;
  if (think.open == std::string_view::npos) diag.push_back("missing think segment");
  else if (think.close == std::string_view::npos) diag.push_back("unterminated think segment");
  if (answer.open == std::string_view::npos) diag.push_back("missing answer segment");
  else if (answer.close == std::string_view::npos) diag.push_back("unterminated answer segment");
  if (count_occurrences(raw, tags.think_open) > 1 || count_occurrences(raw, tags.think_close) > 1) {
    diag.push_back("duplicate think segment");
  }
  if (count_occurrences(raw, tags.answer_open) > 1 ||
      count_occurrences(raw, tags.answer_close) > 1) {
    diag.push_back("duplicate answer segment");
  }
  if (!diag.empty()) return out;

  if (answer.open < think.close + tags.think_close.size()) {
    diag.push_back("answer segment does not follow the think segment");
    return out;
  }
  const std::string_view before = raw.substr(0, think.open);
  const std::size_t gap_start = think.close + tags.think_close.size();
  const std::string_view between = raw.substr(gap_start, answer.open - gap_start);
  const std::string_view after = raw.substr(answer.close + tags.answer_close.size());
  if (!blank(before) || !blank(between) || !blank(after)) {
    diag.push_back("text outside the think/answer segments");
    return out;
  }
  out.format_valid = true;
  return out;
}

namespace {

// The literal prefilter skips most regex runs; lowered must be
// lowercase_ascii(think).
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Same answer as regex_search with \b(?:f1|f2|...)\b, without the regex.
bool whole_word_any(std::string_view lowered, const std::vector<std::string>& forms) {
  for (const auto& f : forms) {
    for (std::size_t at = lowered.find(f); at != std::string_view::npos; at = lowered.find(f, at + 1)) {
      const std::size_t end = at + f.size();
      const bool left = (at > 0 && is_word(lowered[at - 1])) != is_word(f.front());
      const bool right = (end < lowered.size() && is_word(lowered[end])) != is_word(f.back());
      if (left && right) return true;
    }
  }
  return false;
}

bool pattern_match_lowered(const FaceAttackGraph& g, RelationIndex relation, std::string_view think,
                           std::string_view lowered) {
  if (think.empty()) return false;
  if (const auto& forms = g.fallback_forms(relation); !forms.empty()) return whole_word_any(lowered, forms);
  const auto& compiled = g.compiled_patterns(relation);
  const auto& literals = g.pattern_literals(relation);
  for (std::size_t p = 0; p < compiled.size(); ++p) {
    const auto& need = literals[p];
    if (!need.empty() && std::none_of(need.begin(), need.end(), [&](const std::string& lit) {
          return lowered.find(lit) != std::string_view::npos;
        })) {
      continue;
    }
    if (std::regex_search(think.begin(), think.end(), compiled[p])) return true;
  }
  return false;
}

}  // namespace

bool pattern_match(const FaceAttackGraph& g, RelationIndex relation, std::string_view think) {
  return pattern_match_lowered(g, relation, think, lowercase_ascii(think));
}

std::vector<bool> StubVerifier::verify(std::string_view think,
                                       std::span<const VerifierCandidate> candidates) {
  std::vector<bool> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    out.push_back(!c.predicate.empty() && think.find(c.predicate) != std::string_view::npos);
  }
  return out;
}

std::string_view to_string(GroundingMode mode) {
  switch (mode) {
    case GroundingMode::kPatternOnly: return "pattern_only";
    case GroundingMode::kFallbackVerifier: return "fallback_verifier";
    case GroundingMode::kAlwaysVerifier: return "always_verifier";
  }
  return "?";
}

GroundingMode parse_grounding_mode(std::string_view text) {
  for (auto mode : {GroundingMode::kPatternOnly, GroundingMode::kFallbackVerifier,
                    GroundingMode::kAlwaysVerifier}) {
    if (to_string(mode) == text) return mode;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown grounding mode '" + std::string(text) + "'");
}

std::string_view to_string(MatchSource source) {
  return source == MatchSource::kPattern ? "pattern" : "verifier";
}

std::vector<RelationIndex> GroundingReport::relations() const {
  std::vector<RelationIndex> out;
  out.reserve(grounded.size());
  for (const auto& g : grounded) out.push_back(g.relation);
  return out;
}

VerifierCandidate make_candidate(const FaceAttackGraph& g, RelationIndex relation) {
  const Relation& rel = g.relations().at(relation);
  return {rel.attack.str(), rel.predicate, rel.feature.str(), g.entity(rel.attack).name,
          g.entity(rel.feature).name};
}

GroundingReport ground(std::string_view think, const FaceAttackGraph& g, VerifierClient* verifier,
                       GroundingMode mode) {
  if (mode != GroundingMode::kPatternOnly && verifier == nullptr) {
    throw Error(ErrorCode::kInvalidArgument,
                "grounding mode " + std::string(to_string(mode)) + " requires a verifier");
  }
  GroundingReport report;
  report.candidates_checked = g.relations().size();
  std::vector<bool> matched(g.relations().size(), false);
  const std::string lowered = lowercase_ascii(think);
  for (RelationIndex r = 0; r < g.relations().size(); ++r) {
    matched[r] = pattern_match_lowered(g, r, think, lowered);
  }

  std::vector<RelationIndex> to_verify;
  if (mode != GroundingMode::kPatternOnly) {
    for (RelationIndex r = 0; r < g.relations().size(); ++r) {
      if (mode == GroundingMode::kAlwaysVerifier || !matched[r]) to_verify.push_back(r);
    }
  }
  std::vector<bool> confirmed(g.relations().size(), false);
  if (!to_verify.empty()) {
    std::vector<VerifierCandidate> candidates;
    candidates.reserve(to_verify.size());
    for (RelationIndex r : to_verify) candidates.push_back(make_candidate(g, r));
    const std::vector<bool> answers = verifier->verify(think, candidates);
    if (answers.size() != candidates.size()) {
      throw TransportError("verifier returned " + std::to_string(answers.size()) +
                               " answers for " + std::to_string(candidates.size()) + " candidates",
                           std::move(candidates));
    }
    report.verifier_calls = to_verify.size();
    for (std::size_t i = 0; i < to_verify.size(); ++i) confirmed[to_verify[i]] = answers[i];
  }

  for (RelationIndex r = 0; r < g.relations().size(); ++r) {
    if (matched[r]) {
      report.grounded.push_back({r, MatchSource::kPattern});
    } else if (confirmed[r]) {
      report.grounded.push_back({r, MatchSource::kVerifier});
    }
  }
  return report;
}

}  // namespace fakg
