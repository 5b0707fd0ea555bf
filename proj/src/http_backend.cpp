#include "emrank/http_backend.hpp"

#include <cstdlib>
#include <limits>

#include <httplib.h>

#include "emrank/error.hpp"

namespace emrank {

using nlohmann::json;

HttpBackendConfig HttpBackendConfig::from_env(std::string model) {
  HttpBackendConfig config;
  config.model = std::move(model);
  if (const char* key = std::getenv("EMRANK_API_KEY")) config.api_key = key;
  if (const char* base = std::getenv("EMRANK_API_BASE")) config.base_url = base;
  return config;
}

HttpBackend::HttpBackend(HttpBackendConfig config)
    : config_(std::move(config)) {
  if (config_.model.empty())
    throw ValidationError("HTTP backend needs a model name");
  descriptor_.name = "http:" + config_.model;
  descriptor_.supports_token_scoring = config_.supports_token_scoring;
  descriptor_.max_context_tokens = config_.max_context_tokens;

  // Split "https://host:port/v1" into client address and path prefix.
  const auto scheme_end = config_.base_url.find("://");
  if (scheme_end == std::string::npos)
    throw ValidationError("API base URL needs a scheme: " + config_.base_url);
  const auto path_start = config_.base_url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.base_url.substr(0, path_start);
  if (path_start != std::string::npos) {
    path_prefix_ = config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/')
      path_prefix_.pop_back();
  }
}

json HttpBackend::post(const std::string& path, const json& body) const {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  httplib::Headers headers;
  if (!config_.api_key.empty())
    headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto res = client.Post(path_prefix_ + path, headers, body.dump(),
                         "application/json");
  if (!res) {
    throw BackendError(BackendErrorKind::Transport,
                       "request to " + scheme_host_port_ + " failed: " +
                           httplib::to_string(res.error()));
  }
  if (res->status != 200) throw wire::error_for_status(res->status, res->body);
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw BackendError(BackendErrorKind::Protocol,
                       std::string("malformed response body: ") + e.what());
  }
}

ChatResponse HttpBackend::complete(const ChatRequest& request) {
  check_request(request, descriptor_);
  ChatRequest sent = request;
  if (sent.model_name.empty()) sent.model_name = config_.model;
  return wire::parse_chat_response(
      post("/chat/completions", wire::chat_request_body(sent)));
}

std::vector<ScoredToken> HttpBackend::score_continuation(
    std::string_view context_text, std::string_view continuation_text) {
  check_scoring(continuation_text, descriptor_);
  const json body = post("/completions",
                         wire::scoring_request_body(
                             config_.model, context_text, continuation_text));
  auto tokens = wire::parse_scoring_response(body, context_text.size());
  std::string joined;
  for (const auto& t : tokens) joined += t.token_text;
  if (joined != continuation_text) {
    throw BackendError(BackendErrorKind::Protocol,
                       "scored tokens do not reconstruct the continuation "
                       "(tokenizer boundary straddles the context)");
  }
  return tokens;
}

namespace wire {

json chat_request_body(const ChatRequest& request) {
  json messages = json::array();
  if (request.system_text && !request.system_text->empty())
    messages.push_back({{"role", "system"}, {"content", *request.system_text}});
  messages.push_back({{"role", "user"}, {"content", request.user_text}});
  return {{"model", request.model_name},
          {"messages", messages},
          {"max_tokens", request.max_output_tokens},
          {"temperature", request.temperature}};
}

ChatResponse parse_chat_response(const json& body) {
  try {
    const auto& choice = body.at("choices").at(0);
    ChatResponse out;
    const auto& content = choice.at("message").at("content");
    out.text = content.is_null() ? std::string() : content.get<std::string>();
    const std::string finish =
        choice.contains("finish_reason") && choice["finish_reason"].is_string()
            ? choice["finish_reason"].get<std::string>()
            : "";
    out.finish_reason = finish == "stop"     ? FinishReason::Stop
                        : finish == "length" ? FinishReason::Length
                                             : FinishReason::Other;
    if (body.contains("usage") && body["usage"].is_object()) {
      out.usage.prompt_tokens = body["usage"].value("prompt_tokens", 0U);
      out.usage.completion_tokens = body["usage"].value("completion_tokens", 0U);
    }
    if (out.finish_reason == FinishReason::Stop && out.text.empty())
      throw BackendError(BackendErrorKind::Protocol,
                         "finished response without text");
    return out;
  } catch (const json::exception& e) {
    throw BackendError(BackendErrorKind::Protocol,
                       std::string("unexpected chat response shape: ") + e.what());
  }
}

json scoring_request_body(const std::string& model,
                          std::string_view context_text,
                          std::string_view continuation_text) {
  std::string prompt(context_text);
  prompt.append(continuation_text);
  return {{"model", model},  {"prompt", prompt}, {"max_tokens", 0},
          {"echo", true},    {"logprobs", 0},    {"temperature", 0.0}};
}

std::vector<ScoredToken> parse_scoring_response(const json& body,
                                                std::size_t context_bytes) {
  try {
    const auto& lp = body.at("choices").at(0).at("logprobs");
    const auto& tokens = lp.at("tokens");
    const auto& logprobs = lp.at("token_logprobs");
    const auto& offsets = lp.at("text_offset");
    if (tokens.size() != logprobs.size() || tokens.size() != offsets.size())
      throw BackendError(BackendErrorKind::Protocol,
                         "logprob arrays differ in length");
    std::vector<ScoredToken> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (offsets[i].get<std::size_t>() < context_bytes) continue;
      const auto& v = logprobs[i];
      const double logprob =
          v.is_null() ? -std::numeric_limits<double>::infinity()
                      : std::min(0.0, v.get<double>());
      out.push_back({tokens[i].get<std::string>(), logprob});
    }
    return out;
  } catch (const json::exception& e) {
    throw BackendError(BackendErrorKind::Protocol,
                       std::string("unexpected scoring response shape: ") +
                           e.what());
  }
}

BackendError error_for_status(int status, const std::string& body) {
  std::string message = body.substr(0, 500);
  std::string code;
  try {
    const json j = json::parse(body);
    if (j.contains("error") && j["error"].is_object()) {
      message = j["error"].value("message", message);
      if (j["error"].contains("code") && j["error"]["code"].is_string())
        code = j["error"]["code"].get<std::string>();
    }
  } catch (const json::exception&) {
  }
  const std::string what = "HTTP " + std::to_string(status) + ": " + message;
  if (status == 401 || status == 403)
    return {BackendErrorKind::InvalidCredentials, what};
  if (status == 429) return {BackendErrorKind::RateLimited, what};
  if (status >= 500) return {BackendErrorKind::Transport, what};
  if (code == "context_length_exceeded" ||
      message.find("context length") != std::string::npos)
    return {BackendErrorKind::ContextOverflow, what};
  return {BackendErrorKind::Protocol, what};
}

}  // namespace wire

}  // namespace emrank
