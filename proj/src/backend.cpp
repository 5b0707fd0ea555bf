#include "emrank/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <thread>

#include "emrank/error.hpp"
#include "emrank/hashing.hpp"
#include "emrank/model.hpp"
#include "emrank/retry.hpp"

namespace emrank {

std::string_view to_string(BackendErrorKind kind) noexcept {
  switch (kind) {
    case BackendErrorKind::Transport:
      return "transport";
    case BackendErrorKind::RateLimited:
      return "rate_limited";
    case BackendErrorKind::InvalidCredentials:
      return "invalid_credentials";
    case BackendErrorKind::ContextOverflow:
      return "context_overflow";
    case BackendErrorKind::CapabilityMissing:
      return "capability_missing";
    case BackendErrorKind::FixtureMissing:
      return "fixture_missing";
    case BackendErrorKind::Protocol:
      break;
  }
  return "protocol";
}

std::string ChatRequest::full_prompt() const {
  if (!system_text || system_text->empty()) return user_text;
  return *system_text + "\n\n" + user_text;
}

std::size_t estimate_tokens(std::string_view text) { return word_count(text); }

void check_request(const ChatRequest& request,
                   const BackendDescriptor& descriptor) {
  if (request.user_text.empty())
    throw ValidationError("chat request has empty user text");
  if (request.max_output_tokens == 0)
    throw ValidationError("max_output_tokens must be positive");
  if (!(request.temperature >= 0.0))
    throw ValidationError("temperature must be nonnegative");
  const std::size_t prompt_tokens = estimate_tokens(request.full_prompt());
  if (prompt_tokens + request.max_output_tokens >
      descriptor.max_context_tokens) {
    throw BackendError(
        BackendErrorKind::ContextOverflow,
        "prompt (" + std::to_string(prompt_tokens) + " tokens) plus output budget (" +
            std::to_string(request.max_output_tokens) + ") exceeds " +
            descriptor.name + " context of " +
            std::to_string(descriptor.max_context_tokens));
  }
}

void check_scoring(std::string_view continuation_text,
                   const BackendDescriptor& descriptor) {
  if (continuation_text.empty())
    throw ValidationError("continuation to score must not be empty");
  if (!descriptor.supports_token_scoring)
    throw BackendError(BackendErrorKind::CapabilityMissing,
                       descriptor.name + " does not support token scoring");
}

std::string prompt_key(std::string_view full_prompt) {
  return hex64(fnv1a64(full_prompt));
}

std::string prompt_key(const ChatRequest& request) {
  return prompt_key(request.full_prompt());
}

std::string scoring_key(std::string_view context_text,
                        std::string_view continuation_text) {
  std::string joined;
  joined.reserve(context_text.size() + continuation_text.size() + 1);
  joined.append(context_text);
  joined.push_back('\x1e');
  joined.append(continuation_text);
  return hex64(fnv1a64(joined));
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  std::size_t i = 0;
  auto is_space = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
  };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    while (i < text.size() && !is_space(text[i])) ++i;
    tokens.emplace_back(text.substr(start, i - start));
    start = i;
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// RetryingBackend

std::chrono::milliseconds RetryPolicy::nominal_delay(int failed_attempt) const {
  double ms = static_cast<double>(initial_delay.count()) *
              std::pow(multiplier, std::max(0, failed_attempt - 1));
  ms = std::min(ms, static_cast<double>(max_delay.count()));
  return std::chrono::milliseconds(static_cast<long long>(ms));
}

RetryingBackend::RetryingBackend(BackendPtr inner, RetryPolicy policy,
                                 Sleeper sleeper)
    : inner_(std::move(inner)),
      policy_(policy),
      sleeper_(std::move(sleeper)),
      rng_(policy.jitter_seed) {
  if (!inner_) throw ValidationError("RetryingBackend needs a backend");
  if (policy_.max_attempts < 1)
    throw ValidationError("retry policy needs at least one attempt");
  if (!sleeper_) {
    sleeper_ = [](std::chrono::milliseconds d) {
      std::this_thread::sleep_for(d);
    };
  }
}

std::chrono::milliseconds RetryingBackend::jittered(int failed_attempt) {
  const auto nominal = policy_.nominal_delay(failed_attempt);
  const double jitter = std::clamp(policy_.jitter, 0.0, 1.0);
  double fraction = 1.0;
  {
    std::lock_guard lock(rng_mutex_);
    std::uniform_real_distribution<double> dist(1.0 - jitter, 1.0);
    fraction = dist(rng_);
  }
  return std::chrono::milliseconds(static_cast<long long>(
      static_cast<double>(nominal.count()) * fraction));
}

template <typename Fn>
auto RetryingBackend::run(Fn&& fn) -> decltype(fn()) {
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const BackendError& e) {
      if (!e.transient() || attempt >= policy_.max_attempts) throw;
    }
    sleeper_(jittered(attempt));
  }
}

ChatResponse RetryingBackend::complete(const ChatRequest& request) {
  return run([&] { return inner_->complete(request); });
}

std::vector<ScoredToken> RetryingBackend::score_continuation(
    std::string_view context_text, std::string_view continuation_text) {
  return run([&] {
    return inner_->score_continuation(context_text, continuation_text);
  });
}

}  // namespace emrank
