#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <random>

#include "emrank/backend.hpp"

namespace emrank {

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_delay{1000};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{30000};
  /// Fraction of each delay that is randomized: the actual wait is drawn
  /// uniformly from [delay * (1 - jitter), delay].
  double jitter = 0.5;
  std::uint64_t jitter_seed = 0x5eed;

  /// Upper bound of the wait after the given failed attempt (1-based).
  std::chrono::milliseconds nominal_delay(int failed_attempt) const;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Decorator that retries transient BackendErrors with jittered exponential
/// backoff. Non-transient errors propagate immediately.
class RetryingBackend final : public Backend {
 public:
  RetryingBackend(BackendPtr inner, RetryPolicy policy, Sleeper sleeper = {});

  const BackendDescriptor& descriptor() const override {
    return inner_->descriptor();
  }
  ChatResponse complete(const ChatRequest& request) override;
  std::vector<ScoredToken> score_continuation(
      std::string_view context_text,
      std::string_view continuation_text) override;

  const RetryPolicy& policy() const noexcept { return policy_; }

 private:
  template <typename Fn>
  auto run(Fn&& fn) -> decltype(fn());

  std::chrono::milliseconds jittered(int failed_attempt);

  BackendPtr inner_;
  RetryPolicy policy_;
  Sleeper sleeper_;
  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
};

}  // namespace emrank
