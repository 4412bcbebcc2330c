#include "fakg/remote_clients.hpp"

#include <algorithm>
#include <cctype>
#include <future>
#include <regex>
#include <sstream>

#include <httplib.h>
#include <openssl/evp.h>

#include "fakg/error.hpp"

namespace fakg {

namespace {

using json = nlohmann::json;

// Releases a semaphore slot on scope exit.
class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<1024>& sem) : sem_(sem) { sem_.acquire(); }
  ~SlotGuard() { sem_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<1024>& sem_;
};

std::ptrdiff_t slot_count(std::size_t max_in_flight) {
  return static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(max_in_flight, 1, 1024));
}

json candidate_json(const VerifierCandidate& c) {
  return {{"attack", c.attack},
          {"predicate", c.predicate},
          {"feature", c.feature},
          {"attack_name", c.attack_name},
          {"feature_name", c.feature_name}};
}

}  // namespace

ParsedEndpoint parse_endpoint(std::string_view url) {
  static const std::regex kUrl(R"(^(https?://[^/\s]+)(/\S*)?$)", std::regex::icase);
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(url.begin(), url.end(), m, kUrl)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid endpoint URL '" + std::string(url) + "'");
  }
  ParsedEndpoint out{m[1].str(), m[2].matched ? m[2].str() : std::string()};
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

json post_json(const EndpointConfig& cfg, const std::string& path, const json& body) {
  const ParsedEndpoint target = parse_endpoint(cfg.endpoint);
  httplib::Client client(target.scheme_host_port);
  const auto timeout = std::chrono::milliseconds(std::max(cfg.timeout_ms, 1));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!cfg.credential.empty()) headers.emplace("Authorization", "Bearer " + cfg.credential);

  auto res = client.Post(path.empty() ? "/" : path, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::kTransport, "POST " + target.scheme_host_port + path + " failed: " +
                                           httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::kTransport, "POST " + target.scheme_host_port + path +
                                           " returned status " + std::to_string(res->status));
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kTransport, "unparsable reply from " + target.scheme_host_port + path +
                                           ": " + e.what());
  }
}

// ---- HttpVerifier -------------------------------------------------------

HttpVerifier::HttpVerifier(EndpointConfig cfg)
    : cfg_(std::move(cfg)), in_flight_(slot_count(cfg_.max_in_flight)) {
  const ParsedEndpoint target = parse_endpoint(cfg_.endpoint);
  path_ = target.path;
  if (path_.size() < 7 || path_.compare(path_.size() - 7, 7, "/verify") != 0) path_ += "/verify";
  cfg_.endpoint = target.scheme_host_port;
}

std::vector<bool> HttpVerifier::verify_batch(std::string_view think,
                                             std::span<const VerifierCandidate> batch) {
  const std::vector<VerifierCandidate> failed(batch.begin(), batch.end());
  json body;
  body["think"] = std::string(think);
  body["candidates"] = json::array();
  for (const auto& c : batch) body["candidates"].push_back(candidate_json(c));

  json reply;
  try {
    SlotGuard slot(in_flight_);
    reply = post_json(cfg_, path_, body);
  } catch (const Error& e) {
    throw TransportError(e.what(), failed);
  }
  const auto it = reply.find("matches");
  if (it == reply.end() || !it->is_array() || it->size() != batch.size()) {
    throw TransportError("verifier reply does not carry " + std::to_string(batch.size()) +
                             " matches",
                         failed);
  }
  std::vector<bool> out;
  out.reserve(batch.size());
  for (const auto& v : *it) {
    if (!v.is_boolean()) throw TransportError("verifier match is not a boolean", failed);
    out.push_back(v.get<bool>());
  }
  return out;
}

std::vector<bool> HttpVerifier::verify(std::string_view think,
                                       std::span<const VerifierCandidate> candidates) {
  const std::size_t batch = cfg_.batch_size == 0 ? candidates.size() : cfg_.batch_size;
  if (candidates.empty()) return {};
  if (batch >= candidates.size()) return verify_batch(think, candidates);

  std::vector<std::future<std::vector<bool>>> pending;
  for (std::size_t start = 0; start < candidates.size(); start += batch) {
    const auto chunk = candidates.subspan(start, std::min(batch, candidates.size() - start));
    pending.push_back(std::async(std::launch::async,
                                 [this, think, chunk] { return verify_batch(think, chunk); }));
  }
  std::vector<bool> out;
  out.reserve(candidates.size());
  std::exception_ptr first_failure;
  for (auto& f : pending) {
    try {
      auto part = f.get();
      out.insert(out.end(), part.begin(), part.end());
    } catch (...) {
      if (!first_failure) first_failure = std::current_exception();
    }
  }
  if (first_failure) std::rethrow_exception(first_failure);
  return out;
}

// ---- chat completion ----------------------------------------------------

ChatCompletionClient::ChatCompletionClient(EndpointConfig cfg)
    : cfg_(std::move(cfg)),
      target_(parse_endpoint(cfg_.endpoint)),
      in_flight_(slot_count(cfg_.max_in_flight)) {}

std::string ChatCompletionClient::complete(const std::vector<ChatMessage>& messages) {
  json body;
  if (!cfg_.model.empty()) body["model"] = cfg_.model;
  body["temperature"] = 0;
  body["messages"] = json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});

  EndpointConfig base = cfg_;
  base.endpoint = target_.scheme_host_port;
  json reply;
  {
    SlotGuard slot(in_flight_);
    reply = post_json(base, target_.path, body);
  }
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kTransport, std::string("malformed chat-completion reply: ") + e.what());
  }
}

std::vector<ChatMessage> verifier_chat_prompt(std::string_view think,
                                              std::span<const VerifierCandidate> candidates) {
  std::ostringstream user;
  user << "Rationale:\n" << think << "\n\nQuestions:\n";
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    user << (i + 1) << ". Does the rationale state, possibly in paraphrase, that " << c.attack_name
         << " " << c.predicate << " " << c.feature_name << "?\n";
  }
  return {
      {"system",
       "You check face-attack rationales against a fixed list of knowledge-graph relations. "
       "Answer every numbered question with its number followed by yes or no, one per line. "
       "Do not add relations that are not asked about."},
      {"user", user.str()},
  };
}

std::vector<bool> parse_verifier_reply(std::string_view reply,
                                       std::span<const VerifierCandidate> candidates) {
  static const std::regex kLine(R"((\d+)\s*[.):\-]?\s*(yes|no)\b)", std::regex::icase);
  std::vector<int> answers(candidates.size(), -1);
  const std::string text(reply);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kLine); it != std::sregex_iterator();
       ++it) {
    const std::size_t n = std::stoul((*it)[1].str());
    if (n == 0 || n > candidates.size() || answers[n - 1] != -1) continue;
    std::string word = (*it)[2].str();
    answers[n - 1] = (std::tolower(static_cast<unsigned char>(word[0])) == 'y') ? 1 : 0;
  }
  std::vector<bool> out;
  out.reserve(answers.size());
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (answers[i] < 0) {
      throw TransportError("chat verifier left question " + std::to_string(i + 1) + " unanswered",
                           {candidates.begin(), candidates.end()});
    }
    out.push_back(answers[i] == 1);
  }
  return out;
}

std::vector<bool> ChatVerifier::verify(std::string_view think,
                                       std::span<const VerifierCandidate> candidates) {
  if (candidates.empty()) return {};
  std::string reply;
  try {
    reply = chat_.complete(verifier_chat_prompt(think, candidates));
  } catch (const Error& e) {
    throw TransportError(e.what(), {candidates.begin(), candidates.end()});
  }
  return parse_verifier_reply(reply, candidates);
}

}  // namespace fakg
