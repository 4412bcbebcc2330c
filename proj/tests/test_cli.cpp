#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include <json.hpp>

#include "fakg/cli.hpp"
#include "fakg/graph.hpp"
#include "support.hpp"

using namespace fakg;
using namespace fakg::testing;
using json = nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  for (const char* v : {"VERIFIER_ENDPOINT", "VERIFIER_API_KEY", "VERIFIER_MODEL", "VERIFIER_TIMEOUT_MS"}) {
    ::unsetenv(v);
  }
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<json> jsonl(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"kg", "subgraph", "--center", "print"}).code == kExitUsage);
  CHECK(run({"kg", "subgraph", "--center", "nobody", "--k", "1"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("kg validate and subgraph") {
  auto r = run({"kg", "validate"});
  CHECK(r.code == kExitOk);
  CHECK(r.out == "0 diagnostics\n");

  TempDir dir;
  GraphData d = toy_support_data();
  d.entities.push_back(feature("f_orphan", FeatureScope::kCommon));
  const std::string orphan = dir.write("orphan.json", serialize_graph(FaceAttackGraph(d)));
  r = run({"kg", "validate", orphan});
  CHECK(r.code == kExitFindings);
  CHECK(r.out.find("1 diagnostics") != std::string::npos);

  r = run({"--graph", dir.write("bad.json", "{not json"), "kg", "validate"});
  CHECK(r.code == kExitData);

  r = run({"kg", "subgraph", "--center", "print", "--k", "1"});
  REQUIRE(r.code == kExitOk);
  const auto doc = json::parse(r.out);
  CHECK(doc["center"] == "print");
  CHECK_FALSE(doc["edges"].empty());
  for (const auto& e : doc["edges"]) CHECK(e["attack"] == "print");
  CHECK(doc["hash"].get<std::string>().size() == 16);
}

TEST_CASE("ground: empty input, malformed lines, modes") {
  TempDir dir;
  auto r = run({"ground", "--input", dir.write("empty.jsonl", "")});
  CHECK(r.code == kExitOk);
  CHECK(r.out.empty());

  const std::string bad = dir.write("bad.jsonl", "{\"think\": \"moire pattern\"}\n\n{\"nope\": 1}\n");
  r = run({"ground", "--input", bad, "--mode", "pattern_only"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("bad.jsonl:3:") != std::string::npos);

  const std::string in = dir.write(
      "in.jsonl",
      "{\"id\": 1, \"response\": \"<think>a clear moire pattern</think><answer>Replay</answer>\"}\n"
      "{\"id\": 2, \"think\": \"the screen reveals nothing\"}\n");
  r = run({"ground", "--input", in});
  CHECK(r.code == kExitOk);
  CHECK(r.err.find("no verifier endpoint configured") != std::string::npos);
  auto lines = jsonl(r.out);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0]["id"] == 1);
  CHECK(lines[0]["format_valid"] == true);
  CHECK(lines[0]["verifier_calls"] == 0);
  CHECK_FALSE(lines[0]["grounded"].empty());

  r = run({"ground", "--input", in, "--stub-verifier", "--mode", "always_verifier"});
  lines = jsonl(r.out);
  CHECK(lines[1]["verifier_calls"] == lines[1]["candidates_checked"]);
  for (const auto& g : lines[1]["grounded"]) CHECK(g["predicate"] == "reveals");

  CHECK(run({"ground", "--input", in, "--mode", "sometimes"}).code == kExitUsage);
  CHECK(run({"ground", "--input", dir.file("missing.jsonl")}).code == kExitUsage);
}

TEST_CASE("ground: remote failures exit 5 or degrade") {
  TempDir dir;
  const std::string in = dir.write("in.jsonl", "{\"think\": \"moire pattern\"}\n");
  const std::vector<std::string> base = {"--verifier-endpoint", "http://127.0.0.1:1", "--verifier-timeout-ms", "300",
                                         "ground", "--input", in, "--mode", "always_verifier"};
  auto r = run(base);
  CHECK(r.code == kExitRemote);
  auto degrade = base;
  degrade.insert(degrade.end(), {"--on-verifier-failure", "degrade"});
  r = run(degrade);
  CHECK(r.code == kExitOk);
  CHECK(r.err.find("degrading to pattern_only") != std::string::npos);
}

TEST_CASE("credential never reaches the log") {
  TempDir dir;
  const std::string in = dir.write("in.jsonl", "{\"think\": \"x\"}\n");
  ::setenv("VERIFIER_API_KEY", "sk-very-secret", 1);
  std::ostringstream out, err;
  const int code = run_cli({"--log-level", "debug", "--verifier-endpoint", "http://127.0.0.1:1",
                            "--verifier-timeout-ms", "200", "ground", "--input", in,
                            "--on-verifier-failure", "degrade"},
                           out, err);
  ::unsetenv("VERIFIER_API_KEY");
  CHECK(code == kExitOk);
  CHECK(err.str().find("sk-very-secret") == std::string::npos);
  CHECK(err.str().find("credential=set") != std::string::npos);
}

TEST_CASE("score") {
  TempDir dir;
  const std::string in = dir.write(
      "s.jsonl",
      "{\"id\": \"g\", \"truth\": \"Replay\", \"responses\": [\"<think>moire pattern</think><answer>Replay</answer>\", \"\"]}\n");
  auto r = run({"score", "--input", in, "--mode", "pattern_only"});
  REQUIRE(r.code == kExitOk);
  const auto doc = json::parse(r.out);
  CHECK(doc["responses"][0]["r_acc"] == 1.0);
  CHECK(doc["responses"][1]["total"] == 0.0);
  CHECK(doc["advantages"][0].get<double>() > 0);

  const std::string bad = dir.write("b.jsonl", "{\"truth\": \"3D-Mask\", \"responses\": [\"x\"]}\n");
  r = run({"score", "--input", bad, "--mode", "pattern_only"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("b.jsonl:1:") != std::string::npos);
}

TEST_CASE("eval") {
  TempDir dir;
  const std::string pred = dir.write("p.jsonl",
                                     "{\"truth\": \"Real Face\", \"predicted\": \"Real Face\"}\n"
                                     "{\"truth\": \"Real Face\", \"predicted\": \"Print\"}\n"
                                     "{\"truth\": \"Print\", \"predicted\": \"Print\"}\n");
  auto r = run({"eval", "--protocol", "1", "--pred", pred});
  REQUIRE(r.code == kExitOk);
  const auto doc = json::parse(r.out);
  CHECK(doc.contains("categories"));
  r = run({"eval", "--protocol", "P1", "--pred", pred, "--table"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("66.7") != std::string::npos);
  CHECK(run({"eval", "--protocol", "4", "--pred", pred}).code == kExitUsage);
  CHECK(run({"eval", "--protocol", "1", "--pred", dir.write("e.jsonl", "")}).code == kExitUsage);
  r = run({"eval", "--protocol", "3", "--pred", dir.write("x.jsonl", "{\"truth\": \"Print\", \"predicted\": \"Print\"}\nbroken\n")});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("x.jsonl:2:") != std::string::npos);
  const std::string coarse = dir.write("c.jsonl", "{\"truth\": \"Physical\", \"predicted\": \"Digital\"}\n");
  CHECK(run({"eval", "--protocol", "2", "--pred", coarse, "--coarse"}).code == kExitOk);
  CHECK(run({"eval", "--protocol", "2", "--pred", coarse}).code == kExitUsage);
}

TEST_CASE("synth with stub clients") {
  TempDir dir;
  std::string manifest;
  for (int i = 0; i < 8; ++i) {
    static const char* labels[] = {"Print", "Replay", "Face Swap", "Real Face"};
    manifest += "{\"sample_id\": \"m" + std::to_string(i) + "\", \"image\": \"img/" + std::to_string(i) +
                ".jpg\", \"label\": \"" + labels[i % 4] + "\"}\n";
  }
  manifest += "{\"sample_id\": \"odd\", \"image\": \"img/odd.jpg\", \"label\": \"3D-Mask\"}\n";
  const std::string m = dir.write("m.jsonl", manifest);
  const std::string stats = dir.file("stats.json"), agit = dir.file("agit.jsonl"), rej = dir.file("rej.jsonl");
  auto r = run({"synth", "--manifest", m, "--stub-clients", "--stats", stats, "--export-agit", agit,
                "--rejected", rej, "--concurrency", "3"});
  REQUIRE(r.code == kExitOk);
  const auto s = json::parse(slurp(stats));
  CHECK(s["attempted"] == 9);
  CHECK(s["skipped"] == 1);
  std::size_t rejected = 0;
  for (const auto& [k, v] : s["rejected"].items()) rejected += v.get<std::size_t>();
  CHECK(s["passed"].get<std::size_t>() + rejected + 1 == 9);
  const auto corpus = jsonl(r.out);
  CHECK(corpus.size() == s["passed"].get<std::size_t>());
  CHECK(jsonl(slurp(rej)).size() == rejected);
  const auto exported = jsonl(slurp(agit));
  CHECK(exported.size() == corpus.size());
  for (const auto& e : exported) {
    CHECK(e.size() == 4);
    for (const char* key : {"image", "question", "think", "answer"}) CHECK(e.contains(key));
  }

  const auto again = run({"synth", "--manifest", m, "--stub-clients"});
  CHECK(again.out == r.out);
  CHECK(again.err.find("\"attempted\"") != std::string::npos);

  CHECK(run({"synth", "--manifest", m}).code == kExitUsage);
  CHECK(run({"synth", "--manifest", dir.file("none.jsonl"), "--stub-clients"}).code == kExitUsage);
  CHECK(run({"synth", "--manifest", dir.write("e.jsonl", ""), "--stub-clients"}).code == kExitUsage);
  r = run({"synth", "--manifest", dir.write("dup.jsonl", "{\"sample_id\": \"a\", \"image\": \"x\", \"label\": \"Print\"}\n"
                                                          "{\"sample_id\": \"a\", \"image\": \"y\", \"label\": \"Print\"}\n"),
           "--stub-clients"});
  CHECK(r.code == kExitUsage);
}

TEST_CASE("synth stages without endpoints is a usage error") {
  TempDir dir;
  const std::string m = dir.write("m.jsonl", "{\"sample_id\": \"a\", \"image\": \"x\", \"label\": \"Print\"}\n");
  const auto r = run({"synth", "--manifest", m, "--endpoints", dir.write("ep.json", "{}")});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("has no endpoint") != std::string::npos);
}

TEST_CASE("sim") {
  TempDir dir;
  auto r = run({"sim", "--iters", "0"});
  REQUIRE(r.code == kExitOk);
  auto doc = json::parse(r.out);
  CHECK(doc["iterations"] == 0);
  CHECK(doc["initial_expected_total"] == doc["final_expected_total"]);

  const std::string trace = dir.file("trace.jsonl");
  r = run({"sim", "--iters", "5", "--group", "1", "--trace", trace});
  CHECK(r.code == kExitOk);
  CHECK(r.err.find("group size 1") != std::string::npos);
  CHECK(jsonl(slurp(trace)).size() == 5);
  doc = json::parse(r.out);
  for (const auto& x : doc["final_logits"]) CHECK(x == 0.0);

  r = run({"sim", "--iters", "10", "--sparkline"});
  CHECK(r.code == kExitOk);
  CHECK(run({"sim", "--group", "0"}).code == kExitUsage);
  CHECK(run({"sim", "--truth", "3D-Mask"}).code == kExitUsage);
  CHECK(run({"sim", "--templates", dir.write("t.json", "[{\"id\": 3}]")}).code == kExitUsage);
}

TEST_CASE("config file precedence") {
  TempDir dir;
  const std::string in = dir.write("in.jsonl", "{\"think\": \"x\"}\n");
  const std::string cfg = dir.write("c.json", R"({"verifier": {"endpoint": "http://127.0.0.1:1", "timeout_ms": 200}})");
  auto r = run({"--config", cfg, "ground", "--input", in, "--mode", "always_verifier"});
  CHECK(r.code == kExitRemote);
  // A flag beats the file.
  r = run({"--config", cfg, "--verifier-endpoint", "ftp://nowhere", "ground", "--input", in});
  CHECK(r.code == kExitUsage);
  CHECK(run({"--config", dir.write("u.json", R"({"verifer": {}})"), "kg", "validate"}).code == kExitUsage);
}
