#include "fakg/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "fakg/error.hpp"
#include "fakg/graph.hpp"
#include "fakg/grounding.hpp"
#include "fakg/protocol_eval.hpp"
#include "fakg/remote_clients.hpp"
#include "fakg/reward.hpp"
#include "fakg/sandbox.hpp"
#include "fakg/synthesis.hpp"

namespace fakg {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

struct CliFailure {
  int code;
  std::string message;
};

std::optional<std::string> env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

std::string read_text(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliFailure{kExitUsage, std::string("cannot read ") + what + " '" + path + "'"};
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

json read_json_file(const std::string& path, const char* what) {
  try {
    return json::parse(read_text(path, what));
  } catch (const json::parse_error& e) {
    throw CliFailure{kExitUsage, std::string(what) + " '" + path + "': " + e.what()};
  }
}

// Non-blank lines with 1-based line numbers.
std::vector<std::pair<std::size_t, std::string>> read_lines(const std::string& path, const char* what) {
  std::istringstream in(read_text(path, what));
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.emplace_back(n, line);
  }
  return out;
}

[[noreturn]] void bad_line(const std::string& path, std::size_t line, const std::string& why) {
  throw CliFailure{kExitUsage, path + ":" + std::to_string(line) + ": " + why};
}

json parse_line_object(const std::string& path, std::size_t n, const std::string& line) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    bad_line(path, n, e.what());
  }
  if (!doc.is_object()) bad_line(path, n, "expected a JSON object");
  return doc;
}

// Output destination: a file when a path is given, otherwise stdout.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : os_(&fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw CliFailure{kExitUsage, "cannot write '" + path + "'"};
      os_ = &file_;
    }
  }
  std::ostream& operator*() { return *os_; }

 private:
  std::ofstream file_;
  std::ostream* os_;
};

// ---- configuration ------------------------------------------------------

struct GlobalFlags {
  std::string config_path;
  std::string graph_path;
  std::string reward_config_path;
  std::string log_level;
  std::string think_open, think_close, answer_open, answer_close;
  std::string verifier_endpoint;
  std::string verifier_model;
  std::string verifier_kind;
  int verifier_timeout_ms = 0;
  std::size_t verifier_max_in_flight = 0;
  std::size_t verifier_batch_size = 0;
};

struct GlobalConfig {
  std::string graph_path;  // empty: bundled reference graph
  std::string reward_config_path;
  std::string log_level = "info";
  TagConfig tags;
  EndpointConfig verifier;
  std::string verifier_kind = "http";
  json stages = json::object();
  bool inline_images = false;
};

const json* lookup(const json& doc, std::initializer_list<const char*> path) {
  const json* cur = &doc;
  for (const char* key : path) {
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(key);
    if (it == cur->end()) return nullptr;
    cur = &*it;
  }
  return cur;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw CliFailure{kExitUsage, "config: '" + where + "' must be an object"};
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }) ==
        allowed.end()) {
      throw CliFailure{kExitUsage, "config: unknown key '" + where + "." + it.key() + "'"};
    }
  }
}

constexpr std::initializer_list<const char*> kEndpointKeys = {
    "endpoint", "credential", "model", "timeout_ms", "max_in_flight", "batch_size", "kind"};

void check_config_file(const json& doc) {
  check_keys(doc, {"graph", "reward_config", "log_level", "tags", "verifier", "stages", "inline_images"},
             "<root>");
  if (auto* t = lookup(doc, {"tags"})) {
    check_keys(*t, {"think_open", "think_close", "answer_open", "answer_close"}, "tags");
  }
  if (auto* v = lookup(doc, {"verifier"})) check_keys(*v, kEndpointKeys, "verifier");
  if (auto* s = lookup(doc, {"stages"})) {
    check_keys(*s, {"skeleton", "captioner", "fuser", "judge", "inline_images"}, "stages");
    for (const char* stage : {"skeleton", "captioner", "fuser", "judge"}) {
      if (auto* st = lookup(*s, {stage})) check_keys(*st, kEndpointKeys, std::string("stages.") + stage);
    }
  }
}

template <class T>
T config_value(const json* node, const std::string& name) {
  try {
    return node->get<T>();
  } catch (const json::exception&) {
    throw CliFailure{kExitUsage, "config: '" + name + "' has the wrong type"};
  }
}

// flag > environment > config file > default.
template <class T>
void resolve(T& target, const CLI::Option* flag, const T& flag_value,
             const std::optional<std::string>& env_value, const json* file_value,
             const std::string& name) {
  if (flag != nullptr && flag->count() > 0) {
    target = flag_value;
  } else if (env_value) {
    if constexpr (std::is_same_v<T, std::string>) {
      target = *env_value;
    } else {
      try {
        const long long v = std::stoll(*env_value);
        if (v <= 0) throw std::out_of_range("non-positive");
        target = static_cast<T>(v);
      } catch (const std::exception&) {
        throw CliFailure{kExitUsage, "environment: " + name + " must be a positive integer"};
      }
    }
  } else if (file_value != nullptr) {
    target = config_value<T>(file_value, name);
  }
}

// Endpoint settings for one stage from env (PREFIX_*) and a JSON block.
EndpointConfig endpoint_from(const std::string& prefix, const json* block, EndpointConfig base = {}) {
  auto field = [&](const char* key) { return block ? lookup(*block, {key}) : nullptr; };
  resolve<std::string>(base.endpoint, nullptr, {}, env(prefix + "_ENDPOINT"), field("endpoint"),
                       prefix + "_ENDPOINT");
  resolve<std::string>(base.credential, nullptr, {}, env(prefix + "_API_KEY"), field("credential"),
                       prefix + "_API_KEY");
  resolve<std::string>(base.model, nullptr, {}, env(prefix + "_MODEL"), field("model"),
                       prefix + "_MODEL");
  resolve<int>(base.timeout_ms, nullptr, 0, env(prefix + "_TIMEOUT_MS"), field("timeout_ms"),
               prefix + "_TIMEOUT_MS");
  if (auto* n = field("max_in_flight")) base.max_in_flight = config_value<std::size_t>(n, "max_in_flight");
  if (auto* n = field("batch_size")) base.batch_size = config_value<std::size_t>(n, "batch_size");
  return base;
}

struct Options {
  GlobalFlags flags;
  const CLI::Option* graph = nullptr;
  const CLI::Option* reward_config = nullptr;
  const CLI::Option* log_level = nullptr;
  const CLI::Option* think_open = nullptr;
  const CLI::Option* think_close = nullptr;
  const CLI::Option* answer_open = nullptr;
  const CLI::Option* answer_close = nullptr;
  const CLI::Option* verifier_endpoint = nullptr;
  const CLI::Option* verifier_model = nullptr;
  const CLI::Option* verifier_kind = nullptr;
  const CLI::Option* verifier_timeout = nullptr;
  const CLI::Option* verifier_in_flight = nullptr;
  const CLI::Option* verifier_batch = nullptr;
};

GlobalConfig resolve_config(const Options& o) {
  json file = json::object();
  if (!o.flags.config_path.empty()) {
    file = read_json_file(o.flags.config_path, "config file");
    check_config_file(file);
  }
  GlobalConfig cfg;
  const GlobalFlags& f = o.flags;
  resolve<std::string>(cfg.graph_path, o.graph, f.graph_path, std::nullopt, lookup(file, {"graph"}), "graph");
  resolve<std::string>(cfg.reward_config_path, o.reward_config, f.reward_config_path, std::nullopt,
                       lookup(file, {"reward_config"}), "reward_config");
  resolve<std::string>(cfg.log_level, o.log_level, f.log_level, std::nullopt, lookup(file, {"log_level"}),
                       "log_level");
  resolve<std::string>(cfg.tags.think_open, o.think_open, f.think_open, std::nullopt,
                       lookup(file, {"tags", "think_open"}), "tags.think_open");
  resolve<std::string>(cfg.tags.think_close, o.think_close, f.think_close, std::nullopt,
                       lookup(file, {"tags", "think_close"}), "tags.think_close");
  resolve<std::string>(cfg.tags.answer_open, o.answer_open, f.answer_open, std::nullopt,
                       lookup(file, {"tags", "answer_open"}), "tags.answer_open");
  resolve<std::string>(cfg.tags.answer_close, o.answer_close, f.answer_close, std::nullopt,
                       lookup(file, {"tags", "answer_close"}), "tags.answer_close");
  try {
    cfg.tags.validate();
  } catch (const Error& e) {
    throw CliFailure{kExitUsage, e.what()};
  }

  const json* v = lookup(file, {"verifier"});
  auto vf = [&](const char* key) { return v ? lookup(*v, {key}) : nullptr; };
  resolve<std::string>(cfg.verifier.endpoint, o.verifier_endpoint, f.verifier_endpoint,
                       env("VERIFIER_ENDPOINT"), vf("endpoint"), "VERIFIER_ENDPOINT");
  resolve<std::string>(cfg.verifier.credential, nullptr, {}, env("VERIFIER_API_KEY"), vf("credential"),
                       "VERIFIER_API_KEY");
  resolve<std::string>(cfg.verifier.model, o.verifier_model, f.verifier_model, env("VERIFIER_MODEL"),
                       vf("model"), "VERIFIER_MODEL");
  resolve<int>(cfg.verifier.timeout_ms, o.verifier_timeout, f.verifier_timeout_ms,
               env("VERIFIER_TIMEOUT_MS"), vf("timeout_ms"), "VERIFIER_TIMEOUT_MS");
  resolve<std::size_t>(cfg.verifier.max_in_flight, o.verifier_in_flight, f.verifier_max_in_flight,
                       std::nullopt, vf("max_in_flight"), "verifier.max_in_flight");
  resolve<std::size_t>(cfg.verifier.batch_size, o.verifier_batch, f.verifier_batch_size, std::nullopt,
                       vf("batch_size"), "verifier.batch_size");
  resolve<std::string>(cfg.verifier_kind, o.verifier_kind, f.verifier_kind, std::nullopt, vf("kind"),
                       "verifier.kind");
  if (cfg.verifier_kind != "http" && cfg.verifier_kind != "chat") {
    throw CliFailure{kExitUsage, "verifier kind must be 'http' or 'chat'"};
  }
  if (cfg.verifier.timeout_ms <= 0 || cfg.verifier.max_in_flight == 0) {
    throw CliFailure{kExitUsage, "verifier timeout and max-in-flight must be positive"};
  }
  if (auto* s = lookup(file, {"stages"})) cfg.stages = *s;
  if (auto* b = lookup(file, {"inline_images"})) cfg.inline_images = config_value<bool>(b, "inline_images");
  return cfg;
}

// ---- shared helpers -----------------------------------------------------

FaceAttackGraph load_graph_checked(const std::string& path) {
  try {
    if (path.empty()) return load_reference_graph();
    return load_graph_file(path);
  } catch (const Error& e) {
    throw CliFailure{kExitData, "graph load failed: " + std::string(e.what())};
  }
}

RewardConfig load_reward_checked(const std::string& path) {
  if (path.empty()) return {};
  try {
    return load_reward_config(path);
  } catch (const Error& e) {
    throw CliFailure{kExitUsage, e.what()};
  }
}

enum class VerifierFailure { kHardFail, kDegrade };

struct VerifierChoice {
  std::unique_ptr<VerifierClient> client;
  GroundingMode mode;
};

VerifierChoice make_verifier(const GlobalConfig& cfg, GroundingMode mode, bool stub) {
  VerifierChoice out{nullptr, mode};
  if (mode == GroundingMode::kPatternOnly) return out;
  if (stub) {
    out.client = std::make_unique<StubVerifier>();
    return out;
  }
  if (cfg.verifier.endpoint.empty()) {
    spdlog::warn("no verifier endpoint configured; grounding in pattern_only mode");
    out.mode = GroundingMode::kPatternOnly;
    return out;
  }
  spdlog::info("verifier: kind={} endpoint={} model={} credential={}", cfg.verifier_kind,
               cfg.verifier.endpoint, cfg.verifier.model.empty() ? "-" : cfg.verifier.model,
               cfg.verifier.credential.empty() ? "unset" : "set");
  try {
    if (cfg.verifier_kind == "chat") {
      out.client = std::make_unique<ChatVerifier>(cfg.verifier);
    } else {
      out.client = std::make_unique<HttpVerifier>(cfg.verifier);
    }
  } catch (const Error& e) {
    throw CliFailure{kExitUsage, e.what()};
  }
  return out;
}

VerifierFailure parse_failure_policy(const std::string& text) {
  if (text == "hard-fail") return VerifierFailure::kHardFail;
  if (text == "degrade") return VerifierFailure::kDegrade;
  throw CliFailure{kExitUsage, "verifier failure policy must be 'hard-fail' or 'degrade'"};
}

GroundingMode parse_mode_checked(const std::string& text) {
  try {
    return parse_grounding_mode(text);
  } catch (const Error& e) {
    throw CliFailure{kExitUsage, e.what()};
  }
}

// Runs fn with the configured verifier; on transport failure either
// propagates (exit 5) or retries the same work in pattern_only mode.
template <class F>
auto with_verifier_policy(VerifierFailure policy, std::size_t line, F&& fn) {
  try {
    return fn(false);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kTransport || policy == VerifierFailure::kHardFail) throw;
    spdlog::warn("line {}: verifier failed ({}); degrading to pattern_only", line, e.what());
    return fn(true);
  }
}

ordered_json grounded_json(const FaceAttackGraph& g, const GroundingReport& report) {
  ordered_json arr = ordered_json::array();
  for (const auto& gr : report.grounded) {
    const Relation& r = g.relations()[gr.relation];
    ordered_json item;
    item["relation"] = gr.relation;
    item["attack"] = r.attack.str();
    item["predicate"] = r.predicate;
    item["feature"] = r.feature.str();
    item["source"] = std::string(to_string(gr.source));
    arr.push_back(std::move(item));
  }
  return arr;
}

// ---- subcommands --------------------------------------------------------

int cmd_kg_validate(const GlobalConfig& cfg, const std::string& path, std::ostream& out) {
  const FaceAttackGraph g = load_graph_checked(path.empty() ? cfg.graph_path : path);
  const auto diagnostics = validate_graph(g);
  for (const auto& d : diagnostics) {
    out << to_string(d.kind) << ": " << d.message << "\n";
  }
  out << diagnostics.size() << " diagnostics\n";
  return diagnostics.empty() ? kExitOk : kExitFindings;
}

int cmd_kg_subgraph(const GlobalConfig& cfg, const std::string& center, std::size_t k, std::ostream& out) {
  const FaceAttackGraph g = load_graph_checked(cfg.graph_path);
  if (g.find_entity(center) == nullptr) throw CliFailure{kExitUsage, "unknown entity '" + center + "'"};
  const Subgraph s = ego_subgraph(g, EntityId(center), k);
  ordered_json doc;
  doc["center"] = s.center.str();
  doc["k"] = s.k;
  doc["nodes"] = ordered_json::array();
  for (const auto& n : s.nodes) doc["nodes"].push_back(n.str());
  doc["edges"] = ordered_json::array();
  for (RelationIndex r : s.edges) {
    const Relation& rel = g.relations()[r];
    doc["edges"].push_back(ordered_json{{"relation", r},
                                        {"attack", rel.attack.str()},
                                        {"predicate", rel.predicate},
                                        {"feature", rel.feature.str()}});
  }
  doc["hash"] = subgraph_hash(g, s);
  out << doc.dump(2) << "\n";
  return kExitOk;
}

struct GroundArgs {
  std::string input, output, mode = "fallback_verifier", on_failure = "hard-fail";
  bool stub_verifier = false;
};

int cmd_ground(const GlobalConfig& cfg, const GroundArgs& a, std::ostream& out) {
  const FaceAttackGraph g = load_graph_checked(cfg.graph_path);
  const auto policy = parse_failure_policy(a.on_failure);
  VerifierChoice v = make_verifier(cfg, parse_mode_checked(a.mode), a.stub_verifier);
  const auto lines = read_lines(a.input, "input");
  Sink sink(a.output, out);
  for (const auto& [n, line] : lines) {
    const json doc = parse_line_object(a.input, n, line);
    ordered_json result;
    if (auto it = doc.find("id"); it != doc.end()) result["id"] = *it;
    std::string think;
    if (auto it = doc.find("response"); it != doc.end() && it->is_string()) {
      const ParsedResponse parsed = parse_response(it->get<std::string>(), cfg.tags);
      think = parsed.think;
      result["format_valid"] = parsed.format_valid;
      result["answer"] = parsed.answer;
    } else if (auto t = doc.find("think"); t != doc.end() && t->is_string()) {
      think = t->get<std::string>();
    } else {
      bad_line(a.input, n, "expected a string 'response' or 'think'");
    }
    const GroundingReport report = with_verifier_policy(policy, n, [&](bool degraded) {
      return degraded ? ground(think, g, nullptr, GroundingMode::kPatternOnly)
                      : ground(think, g, v.client.get(), v.mode);
    });
    result["grounded"] = grounded_json(g, report);
    result["candidates_checked"] = report.candidates_checked;
    result["verifier_calls"] = report.verifier_calls;
    *sink << result.dump() << "\n";
  }
  return kExitOk;
}

int cmd_score(const GlobalConfig& cfg, const GroundArgs& a, std::ostream& out) {
  const FaceAttackGraph g = load_graph_checked(cfg.graph_path);
  const auto policy = parse_failure_policy(a.on_failure);
  VerifierChoice v = make_verifier(cfg, parse_mode_checked(a.mode), a.stub_verifier);
  ScoringContext ctx;
  ctx.graph = &g;
  ctx.verifier = v.client.get();
  ctx.mode = v.mode;
  ctx.tags = cfg.tags;
  ctx.config = load_reward_checked(cfg.reward_config_path);
  const auto lines = read_lines(a.input, "input");
  Sink sink(a.output, out);
  for (const auto& [n, line] : lines) {
    const json doc = parse_line_object(a.input, n, line);
    if (!doc.contains("truth") || !doc["truth"].is_string()) bad_line(a.input, n, "missing string 'truth'");
    if (!doc.contains("responses") || !doc["responses"].is_array() || doc["responses"].empty()) {
      bad_line(a.input, n, "'responses' must be a non-empty array");
    }
    const std::string truth_text = doc["truth"].get<std::string>();
    const auto truth = parse_fine_label(truth_text);
    if (!truth) bad_line(a.input, n, "unknown truth label '" + truth_text + "'");
    std::vector<std::string> raws;
    for (const auto& r : doc["responses"]) {
      if (!r.is_string()) bad_line(a.input, n, "responses must be strings");
      raws.push_back(r.get<std::string>());
    }
    GroupScore score;
    try {
      score = with_verifier_policy(policy, n, [&](bool degraded) {
        ScoringContext c = ctx;
        if (degraded) {
          c.verifier = nullptr;
          c.mode = GroundingMode::kPatternOnly;
        }
        return score_group(raws, *truth, c);
      });
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kUnknownLabel) bad_line(a.input, n, e.what());
      throw;
    }
    ordered_json result;
    if (auto it = doc.find("id"); it != doc.end()) result["id"] = *it;
    result["truth"] = std::string(to_string(*truth));
    result["responses"] = ordered_json::array();
    for (std::size_t i = 0; i < score.breakdowns.size(); ++i) {
      const auto& b = score.breakdowns[i];
      ordered_json item;
      item["r_acc"] = b.r_acc;
      item["r_fmt"] = b.r_fmt;
      item["r_match"] = b.r_match;
      item["r_conflict"] = b.r_conflict;
      item["r_kg"] = b.r_kg;
      item["total"] = b.total;
      item["grounded"] = score.reports[i].relations();
      result["responses"].push_back(std::move(item));
    }
    result["mu"] = score.mu;
    result["sigma"] = score.sigma;
    result["advantages"] = score.advantages;
    *sink << result.dump() << "\n";
  }
  return kExitOk;
}

struct EvalArgs {
  std::string protocol, pred, output;
  bool table = false;
  bool coarse = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  Protocol p;
  try {
    p = parse_protocol(a.protocol);
  } catch (const Error& e) {
    throw CliFailure{kExitUsage, e.what()};
  }
  const auto lines = read_lines(a.pred, "predictions");
  if (lines.empty()) throw CliFailure{kExitUsage, "predictions file '" + a.pred + "' has no records"};
  EvalReport report;
  if (a.coarse && p != Protocol::kP3) {
    std::vector<CoarseRecord> records;
    for (const auto& [n, line] : lines) {
      try {
        records.push_back(parse_coarse_prediction(line, p));
      } catch (const Error& e) {
        bad_line(a.pred, n, e.what());
      }
    }
    report = evaluate_coarse(records, p);
  } else {
    std::vector<PredictionRecord> records;
    for (const auto& [n, line] : lines) {
      try {
        records.push_back(parse_prediction(line));
      } catch (const Error& e) {
        bad_line(a.pred, n, e.what());
      }
    }
    report = evaluate(records, p);
  }
  for (const auto& d : report.diagnostics) spdlog::warn("eval: {}", d);
  Sink sink(a.output, out);
  if (a.table) {
    *sink << render_table(report);
  } else {
    *sink << report_to_json(report).dump(2) << "\n";
  }
  return kExitOk;
}

struct SynthArgs {
  std::string manifest, endpoints, out, rejected, stats, agit;
  std::size_t k = 2;
  bool stub = false;
  std::uint64_t seed = 0;
  std::size_t concurrency = 1;
  int retries = 1;
  std::string judge_failure = "pass-through";
  double min_complexity = PruneThresholds{}.min_complexity;
  double min_info = PruneThresholds{}.min_info;
  bool no_structural = false, no_fact_conflict = false, no_pruning = false;
};

RemoteStageConfig stage_config(const GlobalConfig& cfg, const std::string& endpoints_path) {
  json file = json::object();
  if (!endpoints_path.empty()) {
    file = read_json_file(endpoints_path, "endpoints config");
    if (!file.is_object()) throw CliFailure{kExitUsage, "endpoints config must be a JSON object"};
    check_keys(file, {"skeleton", "captioner", "fuser", "judge", "inline_images"}, "<endpoints>");
  }
  RemoteStageConfig out;
  const std::pair<const char*, EndpointConfig*> stages[] = {{"skeleton", &out.skeleton},
                                                            {"captioner", &out.captioner},
                                                            {"fuser", &out.fuser},
                                                            {"judge", &out.judge}};
  for (auto [name, target] : stages) {
    std::string prefix = name;
    for (auto& c : prefix) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    // Endpoints file outranks the global config's stage block; env outranks both.
    json merged = json::object();
    if (auto* g = lookup(cfg.stages, {name})) merged.update(*g);
    if (auto* block = lookup(file, {name})) {
      check_keys(*block, kEndpointKeys, name);
      merged.update(*block);
    }
    EndpointConfig base = endpoint_from(prefix, &merged);
    if (base.endpoint.empty()) {
      throw CliFailure{kExitUsage, std::string("stage '") + name + "' has no endpoint (set " + prefix +
                                       "_ENDPOINT or the endpoints config)"};
    }
    spdlog::info("stage {}: endpoint={} model={} credential={}", name, base.endpoint,
                 base.model.empty() ? "-" : base.model, base.credential.empty() ? "unset" : "set");
    *target = std::move(base);
  }
  out.inline_images = cfg.inline_images;
  if (auto* b = lookup(cfg.stages, {"inline_images"})) out.inline_images = config_value<bool>(b, "inline_images");
  if (auto* b = lookup(file, {"inline_images"})) out.inline_images = config_value<bool>(b, "inline_images");
  return out;
}

int cmd_synth(const GlobalConfig& cfg, const SynthArgs& a, std::ostream& out) {
  if (a.stub == !a.endpoints.empty()) {
    throw CliFailure{kExitUsage, "choose exactly one of --stub-clients or --endpoints"};
  }
  const FaceAttackGraph g = load_graph_checked(cfg.graph_path);
  std::vector<ManifestEntry> manifest;
  for (const auto& [n, line] : read_lines(a.manifest, "manifest")) {
    try {
      manifest.push_back(parse_manifest_entry(line));
    } catch (const Error& e) {
      bad_line(a.manifest, n, e.what());
    }
  }
  if (manifest.empty()) throw CliFailure{kExitUsage, "manifest '" + a.manifest + "' has no entries"};

  PipelineConfig pc;
  pc.k = a.k;
  pc.structural = !a.no_structural;
  pc.fact_conflict = !a.no_fact_conflict;
  pc.pruning = !a.no_pruning;
  pc.thresholds = {a.min_complexity, a.min_info};
  pc.retries = a.retries;
  pc.concurrency = a.concurrency;
  if (a.judge_failure == "pass-through") {
    pc.judge_failure = JudgeFailurePolicy::kPassThrough;
  } else if (a.judge_failure == "hard-fail") {
    pc.judge_failure = JudgeFailurePolicy::kHardFail;
  } else {
    throw CliFailure{kExitUsage, "--judge-failure must be 'pass-through' or 'hard-fail'"};
  }
  const GeneratorClients clients =
      a.stub ? make_stub_clients(g, a.seed) : make_remote_clients(stage_config(cfg, a.endpoints));

  PipelineResult result;
  try {
    result = run_pipeline(manifest, g, pc, clients);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidArgument) throw CliFailure{kExitUsage, e.what()};
    throw;
  }
  {
    Sink sink(a.out, out);
    for (const auto& r : result.corpus) *sink << record_to_json(r).dump() << "\n";
  }
  if (!a.rejected.empty()) {
    Sink sink(a.rejected, out);
    for (const auto& r : result.rejected) *sink << record_to_json(r).dump() << "\n";
  }
  if (!a.agit.empty()) {
    Sink sink(a.agit, out);
    for (const auto& r : result.corpus) {
      const AgitRecord rec = to_agit_record(r);
      if (rec.think_missing) spdlog::warn("{}: no rationale, exporting an empty think field", r.sample_id);
      *sink << agit_to_json(rec).dump() << "\n";
    }
  }
  const ordered_json stats = stats_to_json(result.stats);
  if (!a.stats.empty()) {
    Sink sink(a.stats, out);
    *sink << stats.dump(2) << "\n";
  } else {
    spdlog::info("synth stats: {}", stats.dump());
  }
  return kExitOk;
}

struct SimArgs {
  std::string templates, trace, summary, truth = "Replay";
  std::size_t iters = 200, group = 8;
  std::uint64_t seed = 7;
  double step = 0.5, temperature = 1.0;
  bool sparkline = false;
};

int cmd_sim(const GlobalConfig& cfg, const SimArgs& a, std::ostream& out) {
  const FaceAttackGraph g = load_graph_checked(cfg.graph_path);
  std::vector<Template> templates;
  try {
    templates = a.templates.empty() ? reference_templates() : parse_templates(read_text(a.templates, "templates"));
  } catch (const Error& e) {
    throw CliFailure{kExitUsage, e.what()};
  }
  TrainConfig tc;
  tc.iterations = a.iters;
  tc.group_size = a.group;
  tc.step_size = a.step;
  tc.seed = a.seed;
  tc.temperature = a.temperature;
  tc.tags = cfg.tags;
  tc.reward = load_reward_checked(cfg.reward_config_path);
  const auto truth = parse_fine_label(a.truth);
  if (!truth) throw CliFailure{kExitUsage, "unknown truth label '" + a.truth + "'"};
  tc.truth = *truth;
  if (a.group == 1) {
    spdlog::warn("group size 1: every group has zero variance, so no update will happen");
  }
  const TrainResult result = [&] {
    try {
      return train(g, templates, tc);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kInvalidArgument || e.code() == ErrorCode::kUnknownLabel) {
        throw CliFailure{kExitUsage, e.what()};
      }
      throw;
    }
  }();
  if (!a.trace.empty()) {
    Sink sink(a.trace, out);
    for (const auto& r : result.trace.iterations) *sink << iteration_to_json(r).dump() << "\n";
  }
  {
    Sink sink(a.summary, out);
    *sink << summary_to_json(result, tc).dump(2) << "\n";
  }
  if (a.sparkline) out << sparkline(result.trace.iterations) << "\n";
  return kExitOk;
}

// Routes spdlog output to err for the duration of one run.
class LogScope {
 public:
  explicit LogScope(std::ostream& err) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
    auto logger = std::make_shared<spdlog::logger>("fakg", sink);
    logger->set_pattern("[%l] %v");
    logger->set_level(spdlog::level::info);
    spdlog::set_default_logger(logger);
  }
  ~LogScope() { spdlog::set_default_logger(previous_); }
  LogScope(const LogScope&) = delete;
  LogScope& operator=(const LogScope&) = delete;

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  LogScope log_scope(err);
  CLI::App app{"Face attack knowledge graph toolkit", "fakg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "fakg 1.0.0");

  Options o;
  GlobalFlags& f = o.flags;
  app.add_option("--config", f.config_path, "JSON config file (graph, reward_config, tags, verifier, stages)");
  o.graph = app.add_option("--graph", f.graph_path, "Graph file (default: bundled reference graph)");
  o.reward_config = app.add_option("--reward-config", f.reward_config_path, "Reward config JSON");
  o.log_level = app.add_option("--log-level", f.log_level, "trace|debug|info|warn|error|off");
  o.think_open = app.add_option("--think-open", f.think_open, "Rationale open tag");
  o.think_close = app.add_option("--think-close", f.think_close, "Rationale close tag");
  o.answer_open = app.add_option("--answer-open", f.answer_open, "Answer open tag");
  o.answer_close = app.add_option("--answer-close", f.answer_close, "Answer close tag");
  o.verifier_endpoint = app.add_option("--verifier-endpoint", f.verifier_endpoint,
                                       "Verifier base URL (env VERIFIER_ENDPOINT); the credential comes "
                                       "from VERIFIER_API_KEY or the config file");
  o.verifier_model = app.add_option("--verifier-model", f.verifier_model, "Verifier model (env VERIFIER_MODEL)");
  o.verifier_kind = app.add_option("--verifier-kind", f.verifier_kind, "http (/verify contract) or chat");
  o.verifier_timeout = app.add_option("--verifier-timeout-ms", f.verifier_timeout_ms,
                                      "Request timeout (env VERIFIER_TIMEOUT_MS)");
  o.verifier_in_flight = app.add_option("--verifier-max-in-flight", f.verifier_max_in_flight,
                                        "Concurrent verifier requests");
  o.verifier_batch = app.add_option("--verifier-batch-size", f.verifier_batch_size,
                                    "Candidates per verifier request (0 = all)");

  std::function<int(const GlobalConfig&)> action;

  auto* kg = app.add_subcommand("kg", "Graph validation and subgraph queries");
  kg->require_subcommand(1);
  std::string validate_path;
  auto* kg_validate = kg->add_subcommand("validate", "Print graph diagnostics (exit 3 if any)");
  kg_validate->add_option("graph", validate_path, "Graph file (default: --graph or bundled)");
  kg_validate->callback([&] {
    action = [&](const GlobalConfig& c) { return cmd_kg_validate(c, validate_path, out); };
  });
  std::string center;
  std::size_t k = 0;
  auto* kg_subgraph = kg->add_subcommand("subgraph", "Print the k-hop ego subgraph as JSON");
  kg_subgraph->add_option("--center", center, "Center entity id")->required();
  kg_subgraph->add_option("--k", k, "Hop radius")->required();
  kg_subgraph->callback([&] {
    action = [&](const GlobalConfig& c) { return cmd_kg_subgraph(c, center, k, out); };
  });

  GroundArgs ga;
  auto add_grounding_flags = [&](CLI::App* cmd, const char* input_help) {
    cmd->add_option("--input", ga.input, input_help)->required();
    cmd->add_option("--out", ga.output, "Output file (default: stdout)");
    cmd->add_option("--mode", ga.mode, "pattern_only | fallback_verifier | always_verifier");
    cmd->add_option("--on-verifier-failure", ga.on_failure, "hard-fail (exit 5) | degrade");
    cmd->add_flag("--stub-verifier", ga.stub_verifier, "Use the offline predicate-substring verifier");
  };
  auto* ground_cmd = app.add_subcommand("ground", "Ground rationales onto graph relations (JSONL)");
  add_grounding_flags(ground_cmd, "JSONL with 'response' (tagged text) or 'think', optional 'id'");
  ground_cmd->callback([&] { action = [&](const GlobalConfig& c) { return cmd_ground(c, ga, out); }; });
  auto* score_cmd = app.add_subcommand("score", "Score response groups (JSONL)");
  add_grounding_flags(score_cmd, "JSONL with 'truth' and 'responses'");
  score_cmd->callback([&] { action = [&](const GlobalConfig& c) { return cmd_score(c, ga, out); }; });

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "ACC/HTER under a protocol");
  eval_cmd->add_option("--protocol", ea.protocol, "1, 2 or 3")->required();
  eval_cmd->add_option("--pred", ea.pred, "Predictions JSONL")->required();
  eval_cmd->add_option("--out", ea.output, "Output file (default: stdout)");
  eval_cmd->add_flag("--table", ea.table, "Print an aligned table instead of JSON");
  eval_cmd->add_flag("--coarse", ea.coarse, "Labels are already protocol categories");
  eval_cmd->callback([&] { action = [&](const GlobalConfig&) { return cmd_eval(ea, out); }; });

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Synthesize and filter a QA corpus");
  synth_cmd->add_option("--manifest", sa.manifest, "Manifest JSONL")->required();
  synth_cmd->add_option("--k", sa.k, "Ego-subgraph radius");
  auto* stub_flag = synth_cmd->add_flag("--stub-clients", sa.stub, "Offline deterministic generators");
  synth_cmd->add_option("--endpoints", sa.endpoints, "Per-stage endpoint config JSON")->excludes(stub_flag);
  synth_cmd->add_option("--seed", sa.seed, "Stub caption seed");
  synth_cmd->add_option("--out", sa.out, "Corpus JSONL (default: stdout)");
  synth_cmd->add_option("--rejected", sa.rejected, "Rejected records JSONL");
  synth_cmd->add_option("--stats", sa.stats, "Stats JSON (default: logged to stderr)");
  synth_cmd->add_option("--export-agit", sa.agit, "AGIT JSONL {image, question, think, answer}");
  synth_cmd->add_option("--concurrency", sa.concurrency, "Samples processed in parallel")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--retries", sa.retries, "Extra attempts per client call")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--judge-failure", sa.judge_failure, "pass-through | hard-fail");
  synth_cmd->add_option("--min-complexity", sa.min_complexity, "Pruning threshold");
  synth_cmd->add_option("--min-info", sa.min_info, "Pruning threshold");
  synth_cmd->add_flag("--no-structural", sa.no_structural, "Disable the structural filter");
  synth_cmd->add_flag("--no-fact-conflict", sa.no_fact_conflict, "Disable the fact-conflict filter");
  synth_cmd->add_flag("--no-pruning", sa.no_pruning, "Disable pruning");
  synth_cmd->callback([&] { action = [&](const GlobalConfig& c) { return cmd_synth(c, sa, out); }; });

  SimArgs ma;
  auto* sim_cmd = app.add_subcommand("sim", "Train the toy policy on response templates");
  sim_cmd->add_option("--templates", ma.templates, "Template JSON (default: bundled set)");
  sim_cmd->add_option("--iters", ma.iters, "Iterations");
  sim_cmd->add_option("--group", ma.group, "Group size G");
  sim_cmd->add_option("--seed", ma.seed, "RNG seed");
  sim_cmd->add_option("--step-size", ma.step, "Gradient step");
  sim_cmd->add_option("--temperature", ma.temperature, "Softmax temperature");
  sim_cmd->add_option("--truth", ma.truth, "Truth label");
  sim_cmd->add_option("--trace", ma.trace, "Per-iteration JSONL trace");
  sim_cmd->add_option("--summary", ma.summary, "Summary JSON (default: stdout)");
  sim_cmd->add_flag("--sparkline", ma.sparkline, "Print a learning-curve sparkline");
  sim_cmd->callback([&] { action = [&](const GlobalConfig& c) { return cmd_sim(c, ma, out); }; });

  std::vector<const char*> argv{"fakg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const GlobalConfig cfg = resolve_config(o);
    const auto level = spdlog::level::from_str(cfg.log_level);
    if (level == spdlog::level::off && cfg.log_level != "off") {
      throw CliFailure{kExitUsage, "unknown log level '" + cfg.log_level + "'"};
    }
    spdlog::set_level(level);
    return action(cfg);
  } catch (const CliFailure& e) {
    spdlog::error("{}", e.message);
    return e.code;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    switch (e.code()) {
      case ErrorCode::kTransport: return kExitRemote;
      case ErrorCode::kIntegrity: return kExitData;
      default: return kExitUsage;
    }
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return kExitData;
  }
}

}  // namespace fakg
