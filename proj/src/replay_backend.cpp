#include "emrank/replay_backend.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "emrank/error.hpp"

namespace emrank {

using nlohmann::json;

namespace {

std::optional<BackendErrorKind> parse_error_kind(std::string_view s) {
  for (auto kind :
       {BackendErrorKind::Transport, BackendErrorKind::RateLimited,
        BackendErrorKind::InvalidCredentials, BackendErrorKind::ContextOverflow,
        BackendErrorKind::CapabilityMissing, BackendErrorKind::FixtureMissing,
        BackendErrorKind::Protocol}) {
    if (to_string(kind) == s) return kind;
  }
  return std::nullopt;
}

double logprob_from_json(const json& j) {
  if (j.is_null()) return -std::numeric_limits<double>::infinity();
  const double v = j.get<double>();
  if (v > 0.0) throw ValidationError("fixture logprob must be <= 0");
  return v;
}

json logprob_to_json(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

FixtureEntry entry_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("fixture entry must be an object");
  if (j.contains("text")) {
    FixtureEntry e = FixtureEntry::reply(j.at("text").get<std::string>());
    if (j.value("finish_reason", "stop") == "length")
      e.finish_reason = FinishReason::Length;
    return e;
  }
  if (j.contains("scored_tokens")) {
    std::vector<ScoredToken> tokens;
    for (const auto& t : j.at("scored_tokens")) {
      tokens.push_back({t.at("token").get<std::string>(),
                        logprob_from_json(t.at("logprob"))});
    }
    return FixtureEntry::scored(std::move(tokens));
  }
  if (j.contains("logprobs")) {
    std::vector<double> lps;
    for (const auto& v : j.at("logprobs")) lps.push_back(logprob_from_json(v));
    return FixtureEntry::scored_logprobs(std::move(lps));
  }
  if (j.contains("error")) {
    const auto name = j.at("error").get<std::string>();
    const auto kind = parse_error_kind(name);
    if (!kind) throw ValidationError("unknown fixture error kind '" + name + "'");
    return FixtureEntry::failure(*kind, j.value("message", ""));
  }
  throw ValidationError(
      "fixture entry needs one of text, scored_tokens, logprobs, error");
}

json entry_to_json(const FixtureEntry& e) {
  switch (e.kind) {
    case FixtureEntry::Kind::Text: {
      json j = {{"text", e.text}};
      if (e.finish_reason == FinishReason::Length) j["finish_reason"] = "length";
      return j;
    }
    case FixtureEntry::Kind::Scored: {
      if (e.tokens.empty()) {
        json lps = json::array();
        for (double v : e.logprobs) lps.push_back(logprob_to_json(v));
        return {{"logprobs", lps}};
      }
      json toks = json::array();
      for (const auto& t : e.tokens)
        toks.push_back({{"token", t.token_text},
                        {"logprob", logprob_to_json(t.logprob)}});
      return {{"scored_tokens", toks}};
    }
    case FixtureEntry::Kind::Error:
      break;
  }
  json j = {{"error", std::string(to_string(e.error))}};
  if (!e.message.empty()) j["message"] = e.message;
  return j;
}

}  // namespace

FixtureEntry FixtureEntry::reply(std::string text) {
  FixtureEntry e;
  e.kind = Kind::Text;
  e.text = std::move(text);
  return e;
}

FixtureEntry FixtureEntry::scored(std::vector<ScoredToken> tokens) {
  FixtureEntry e;
  e.kind = Kind::Scored;
  e.tokens = std::move(tokens);
  return e;
}

FixtureEntry FixtureEntry::scored_logprobs(std::vector<double> logprobs) {
  FixtureEntry e;
  e.kind = Kind::Scored;
  e.logprobs = std::move(logprobs);
  return e;
}

FixtureEntry FixtureEntry::failure(BackendErrorKind kind, std::string message) {
  FixtureEntry e;
  e.kind = Kind::Error;
  e.error = kind;
  e.message = std::move(message);
  return e;
}

FixtureSet FixtureSet::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("fixture file must be a JSON object");
  FixtureSet set;
  for (const auto& [key, value] : j.items()) {
    std::vector<FixtureEntry> queue;
    if (value.is_array()) {
      for (const auto& v : value) queue.push_back(entry_from_json(v));
      if (queue.empty())
        throw ValidationError("fixture '" + key + "' has an empty queue");
    } else {
      queue.push_back(entry_from_json(value));
    }
    set.map_[key] = std::move(queue);
  }
  return set;
}

FixtureSet FixtureSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fixture file " + path.string());
  json j;
  try {
    j = json::parse(in);
    return from_json(j);
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  } catch (const ValidationError& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

json FixtureSet::to_json() const {
  json j = json::object();
  for (const auto& [key, queue] : map_) {
    if (queue.size() == 1) {
      j[key] = entry_to_json(queue.front());
    } else {
      json arr = json::array();
      for (const auto& e : queue) arr.push_back(entry_to_json(e));
      j[key] = arr;
    }
  }
  return j;
}

void FixtureSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write fixture file " + path.string());
  out << to_json().dump(2) << '\n';
}

void FixtureSet::add(const std::string& key, FixtureEntry entry) {
  map_[key].push_back(std::move(entry));
}

void FixtureSet::set(const std::string& key, std::vector<FixtureEntry> queue) {
  if (queue.empty()) throw ValidationError("fixture queue must not be empty");
  map_[key] = std::move(queue);
}

ReplayBackend::ReplayBackend(FixtureSet fixtures, BackendDescriptor descriptor)
    : descriptor_(std::move(descriptor)), fixtures_(std::move(fixtures)) {}

BackendDescriptor ReplayBackend::default_descriptor() {
  return {"replay", true, 4096};
}

FixtureEntry ReplayBackend::next(const std::string& key, std::string_view what) {
  ++calls_;
  std::lock_guard lock(mutex_);
  const auto it = fixtures_.entries().find(key);
  if (it == fixtures_.entries().end()) {
    throw BackendError(BackendErrorKind::FixtureMissing,
                       "no fixture for " + std::string(what) + " key " + key);
  }
  const auto& queue = it->second;
  std::size_t& pos = cursor_[key];
  const FixtureEntry& entry = queue[std::min(pos, queue.size() - 1)];
  if (pos < queue.size()) ++pos;
  if (entry.kind == FixtureEntry::Kind::Error)
    throw BackendError(entry.error, entry.message.empty()
                                        ? "scripted failure for key " + key
                                        : entry.message);
  return entry;
}

ChatResponse ReplayBackend::complete(const ChatRequest& request) {
  check_request(request, descriptor_);
  const FixtureEntry entry = next(prompt_key(request), "prompt");
  if (entry.kind != FixtureEntry::Kind::Text)
    throw BackendError(BackendErrorKind::Protocol,
                       "fixture for prompt is not a text reply");

  ChatResponse response;
  response.finish_reason = entry.finish_reason;
  response.usage.prompt_tokens = estimate_tokens(request.full_prompt());
  auto tokens = whitespace_tokens(entry.text);
  // A trailing whitespace-only token is not a word.
  std::size_t words = 0;
  std::size_t cut = 0;
  for (; cut < tokens.size(); ++cut) {
    if (estimate_tokens(tokens[cut]) == 0) continue;
    if (words == request.max_output_tokens) break;
    ++words;
  }
  if (cut < tokens.size() && words == request.max_output_tokens &&
      estimate_tokens(tokens[cut]) > 0) {
    response.finish_reason = FinishReason::Length;
  }
  for (std::size_t i = 0; i < cut; ++i) response.text += tokens[i];
  response.usage.completion_tokens = words;
  return response;
}

std::vector<ScoredToken> ReplayBackend::score_continuation(
    std::string_view context_text, std::string_view continuation_text) {
  check_scoring(continuation_text, descriptor_);
  const FixtureEntry entry =
      next(scoring_key(context_text, continuation_text), "scoring");
  if (entry.kind != FixtureEntry::Kind::Scored)
    throw BackendError(BackendErrorKind::Protocol,
                       "fixture for scoring is not a token list");

  std::vector<ScoredToken> out = entry.tokens;
  if (out.empty()) {
    const auto pieces = whitespace_tokens(continuation_text);
    if (pieces.size() != entry.logprobs.size()) {
      throw BackendError(BackendErrorKind::Protocol,
                         "fixture has " + std::to_string(entry.logprobs.size()) +
                             " logprobs for " + std::to_string(pieces.size()) +
                             " tokens");
    }
    for (std::size_t i = 0; i < pieces.size(); ++i)
      out.push_back({pieces[i], entry.logprobs[i]});
  }
  std::string joined;
  for (const auto& t : out) joined += t.token_text;
  if (joined != continuation_text)
    throw BackendError(BackendErrorKind::Protocol,
                       "fixture tokens do not reconstruct the continuation");
  return out;
}

}  // namespace emrank
