#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emrank {

enum class FinishReason { Stop, Length, Other };

struct TokenUsage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct ChatRequest {
  std::optional<std::string> system_text;
  std::string user_text;
  std::size_t max_output_tokens = 1024;
  double temperature = 0.0;
  std::string model_name;

  /// System and user text joined the way fixture keys see them.
  std::string full_prompt() const;
};

struct ChatResponse {
  std::string text;
  FinishReason finish_reason = FinishReason::Stop;
  TokenUsage usage;
};

struct ScoredToken {
  std::string token_text;
  double logprob = 0.0;  // <= 0; -inf marks a zero-probability token

  bool operator==(const ScoredToken&) const = default;
};

struct BackendDescriptor {
  std::string name;
  bool supports_token_scoring = false;
  std::size_t max_context_tokens = 4096;
};

enum class BackendErrorKind {
  Transport,
  RateLimited,
  InvalidCredentials,
  ContextOverflow,
  CapabilityMissing,
  FixtureMissing,
  Protocol,
};

std::string_view to_string(BackendErrorKind kind) noexcept;

class BackendError : public std::runtime_error {
 public:
  BackendError(BackendErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  BackendErrorKind kind() const noexcept { return kind_; }

  /// Worth retrying: network trouble and rate limiting.
  bool transient() const noexcept {
    return kind_ == BackendErrorKind::Transport ||
           kind_ == BackendErrorKind::RateLimited;
  }

 private:
  BackendErrorKind kind_;
};

/// A chat-completion model. Implementations must be safe to call from
/// several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  virtual ChatResponse complete(const ChatRequest& request) = 0;

  /// Log-probabilities of each continuation token given the context and the
  /// preceding continuation tokens. Concatenated token texts reproduce the
  /// continuation.
  virtual std::vector<ScoredToken> score_continuation(
      std::string_view context_text, std::string_view continuation_text) = 0;
};

using BackendPtr = std::shared_ptr<Backend>;

/// Whitespace token estimate used for context-limit checks.
std::size_t estimate_tokens(std::string_view text);

/// Throws ValidationError for malformed requests and
/// BackendError(ContextOverflow) when prompt plus output budget exceeds the
/// backend's context window.
void check_request(const ChatRequest& request,
                   const BackendDescriptor& descriptor);

/// Throws ValidationError on an empty continuation and
/// BackendError(CapabilityMissing) when the backend cannot score tokens.
void check_scoring(std::string_view continuation_text,
                   const BackendDescriptor& descriptor);

/// Fixture key of a chat request: hex FNV-1a of the full prompt.
std::string prompt_key(const ChatRequest& request);
std::string prompt_key(std::string_view full_prompt);

/// Fixture key of a scoring call.
std::string scoring_key(std::string_view context_text,
                        std::string_view continuation_text);

/// Splits text into tokens that each carry their leading whitespace, so that
/// concatenating them gives back the input exactly.
std::vector<std::string> whitespace_tokens(std::string_view text);

}  // namespace emrank
