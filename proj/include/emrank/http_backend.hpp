#pragma once

#include <chrono>
#include <string>

#include <json.hpp>

#include "emrank/backend.hpp"

namespace emrank {

struct HttpBackendConfig {
  /// e.g. https://api.openai.com/v1 ; "/chat/completions" is appended.
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  std::string model;
  bool supports_token_scoring = false;
  std::size_t max_context_tokens = 4096;
  std::chrono::seconds timeout{120};

  /// Reads EMRANK_API_KEY and EMRANK_API_BASE.
  static HttpBackendConfig from_env(std::string model);
};

/// OpenAI-compatible chat-completion client. Token scoring uses the legacy
/// /completions endpoint with echo=true, which vLLM and llama.cpp servers
/// implement.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  ChatResponse complete(const ChatRequest& request) override;
  std::vector<ScoredToken> score_continuation(
      std::string_view context_text,
      std::string_view continuation_text) override;

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;

  HttpBackendConfig config_;
  BackendDescriptor descriptor_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

namespace wire {

nlohmann::json chat_request_body(const ChatRequest& request);
ChatResponse parse_chat_response(const nlohmann::json& body);

nlohmann::json scoring_request_body(const std::string& model,
                                    std::string_view context_text,
                                    std::string_view continuation_text);
/// Extracts the continuation tokens from an echo=true completion response.
/// Tokens are selected by text offset >= the context length in bytes.
std::vector<ScoredToken> parse_scoring_response(const nlohmann::json& body,
                                                std::size_t context_bytes);

/// Maps an HTTP status and body to a BackendError.
BackendError error_for_status(int status, const std::string& body);

}  // namespace wire

}  // namespace emrank
