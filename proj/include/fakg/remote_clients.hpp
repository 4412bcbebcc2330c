#pragma once

// HTTP-backed clients: the JSON /verify contract, a chat-completion client,
// and a verifier adapter that phrases each candidate as a yes/no question.

#include <memory>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fakg/grounding.hpp"

namespace fakg {

struct EndpointConfig {
  std::string endpoint;    // http(s)://host[:port][/path]
  std::string credential;  // sent as a bearer token; never logged
  std::string model;
  int timeout_ms = 30000;
  std::size_t max_in_flight = 4;
  std::size_t batch_size = 0;  // candidates per request; 0 = one request
};

struct ParsedEndpoint {
  std::string scheme_host_port;  // "http://host:port"
  std::string path;              // "/..." (may be empty)
};

// Throws Error(kInvalidArgument) for anything but http(s) URLs.
ParsedEndpoint parse_endpoint(std::string_view url);

std::string base64_encode(std::string_view bytes);

// POSTs a JSON body and returns the parsed JSON reply. Non-2xx statuses and
// unparsable bodies throw Error(kTransport).
nlohmann::json post_json(const EndpointConfig& cfg, const std::string& path,
                         const nlohmann::json& body);

// POST {endpoint}/verify with {"think", "candidates"} -> {"matches"}.
class HttpVerifier final : public VerifierClient {
 public:
  explicit HttpVerifier(EndpointConfig cfg);
  std::vector<bool> verify(std::string_view think,
                           std::span<const VerifierCandidate> candidates) override;

 private:
  std::vector<bool> verify_batch(std::string_view think,
                                 std::span<const VerifierCandidate> batch);

  EndpointConfig cfg_;
  std::string path_;
  std::counting_semaphore<1024> in_flight_;
};

struct ChatMessage {
  std::string role;
  nlohmann::json content;  // string, or an array of typed content parts
};

// Chat-completion request/response: {"model", "messages", "temperature"}
// -> choices[0].message.content.
class ChatCompletionClient {
 public:
  explicit ChatCompletionClient(EndpointConfig cfg);
  std::string complete(const std::vector<ChatMessage>& messages);
  const EndpointConfig& config() const noexcept { return cfg_; }

 private:
  EndpointConfig cfg_;
  ParsedEndpoint target_;
  std::counting_semaphore<1024> in_flight_;
};

// Builds the yes/no question list sent by ChatVerifier.
std::vector<ChatMessage> verifier_chat_prompt(std::string_view think,
                                              std::span<const VerifierCandidate> candidates);
// Parses "1. yes" / "2: no" style lines; throws TransportError if any
// question is left unanswered.
std::vector<bool> parse_verifier_reply(std::string_view reply,
                                       std::span<const VerifierCandidate> candidates);

class ChatVerifier final : public VerifierClient {
 public:
  explicit ChatVerifier(EndpointConfig cfg) : chat_(std::move(cfg)) {}
  std::vector<bool> verify(std::string_view think,
                           std::span<const VerifierCandidate> candidates) override;

 private:
  ChatCompletionClient chat_;
};

}  // namespace fakg
