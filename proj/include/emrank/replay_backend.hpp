#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "emrank/backend.hpp"

namespace emrank {

/// One scripted reply. A fixture key maps to a queue of these; each call
/// consumes the front entry and the last entry repeats once the queue is
/// drained.
struct FixtureEntry {
  enum class Kind { Text, Scored, Error };

  Kind kind = Kind::Text;
  std::string text;
  FinishReason finish_reason = FinishReason::Stop;
  /// Explicit tokens, or empty when only logprobs were given (the tokens are
  /// then the whitespace tokens of the continuation).
  std::vector<ScoredToken> tokens;
  std::vector<double> logprobs;
  BackendErrorKind error = BackendErrorKind::Transport;
  std::string message;

  static FixtureEntry reply(std::string text);
  static FixtureEntry scored(std::vector<ScoredToken> tokens);
  static FixtureEntry scored_logprobs(std::vector<double> logprobs);
  static FixtureEntry failure(BackendErrorKind kind, std::string message = {});
};

/// Prompt-hash keyed replies. JSON form:
///   { "<key>": {"text": "..."}
///            | {"scored_tokens": [{"token": "..", "logprob": -0.1}, ...]}
///            | {"logprobs": [-0.1, ...]}        (null encodes -infinity)
///            | {"error": "rate_limited", "message": "..."}
///            | [ entry, entry, ... ] }           (queue)
class FixtureSet {
 public:
  static FixtureSet from_json(const nlohmann::json& j);
  static FixtureSet load(const std::filesystem::path& path);

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  void add(const std::string& key, FixtureEntry entry);
  void set(const std::string& key, std::vector<FixtureEntry> queue);

  bool contains(const std::string& key) const { return map_.count(key) > 0; }
  std::size_t size() const noexcept { return map_.size(); }
  const std::map<std::string, std::vector<FixtureEntry>>& entries() const {
    return map_;
  }

 private:
  std::map<std::string, std::vector<FixtureEntry>> map_;
};

/// Deterministic backend that answers from a FixtureSet. Its tokenizer is
/// whitespace: completions are truncated to max_output_tokens words.
class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(FixtureSet fixtures,
                         BackendDescriptor descriptor = default_descriptor());

  static BackendDescriptor default_descriptor();

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  ChatResponse complete(const ChatRequest& request) override;
  std::vector<ScoredToken> score_continuation(
      std::string_view context_text,
      std::string_view continuation_text) override;

  /// Number of complete/score calls served, including scripted failures.
  std::size_t call_count() const noexcept { return calls_.load(); }

 private:
  FixtureEntry next(const std::string& key, std::string_view what);

  BackendDescriptor descriptor_;
  FixtureSet fixtures_;
  std::map<std::string, std::size_t> cursor_;
  std::mutex mutex_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace emrank
