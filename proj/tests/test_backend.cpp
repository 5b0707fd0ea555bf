#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "emrank/error.hpp"
#include "emrank/hashing.hpp"
#include "emrank/http_backend.hpp"
#include "emrank/replay_backend.hpp"
#include "emrank/retry.hpp"
#include "test_support.hpp"

using namespace emrank;
using nlohmann::json;

namespace {

ChatRequest request(std::string user, std::size_t max_out = 64) {
  ChatRequest r;
  r.user_text = std::move(user);
  r.max_output_tokens = max_out;
  return r;
}

struct RecordingSleeper {
  std::shared_ptr<std::vector<std::chrono::milliseconds>> delays =
      std::make_shared<std::vector<std::chrono::milliseconds>>();
  Sleeper fn() {
    auto d = delays;
    return [d](std::chrono::milliseconds ms) { d->push_back(ms); };
  }
};

}  // namespace

TEST_CASE("prompt and scoring keys hash the exact text") {
  ChatRequest r = request("user part");
  CHECK(prompt_key(r) == hex64(fnv1a64("user part")));
  r.system_text = "system part";
  CHECK(r.full_prompt() == "system part\n\nuser part");
  CHECK(prompt_key(r) == hex64(fnv1a64("system part\n\nuser part")));
  CHECK(scoring_key("ctx", "cont") == hex64(fnv1a64(std::string("ctx\x1e" "cont"))));
  CHECK(scoring_key("ab", "c") != scoring_key("a", "bc"));
}

TEST_CASE("whitespace_tokens reconstruct the text") {
  for (const std::string text : {"a b  c", " leading", "trailing ", "one\ntwo\tthree"}) {
    std::string joined;
    for (const auto& t : whitespace_tokens(text)) joined += t;
    CHECK(joined == text);
  }
  CHECK(whitespace_tokens("x y z").size() == 3);
}

TEST_CASE("replay returns the scripted reply for identical requests") {
  FixtureSet set;
  set.add(prompt_key(request("hello")), FixtureEntry::reply("Response 1 is kind."));
  ReplayBackend backend(set);
  for (int i = 0; i < 3; ++i)
    CHECK(backend.complete(request("hello")).text == "Response 1 is kind.");
  CHECK(backend.call_count() == 3);
}

TEST_CASE("replay reports unknown prompts as FixtureMissing") {
  ReplayBackend backend{FixtureSet{}};
  try {
    backend.complete(request("never scripted"));
    FAIL("expected an error");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendErrorKind::FixtureMissing);
    CHECK_FALSE(e.transient());
  }
}

TEST_CASE("replay truncates to the output budget") {
  FixtureSet set;
  set.add(prompt_key(request("p", 4)),
          FixtureEntry::reply("one two three four five six"));
  set.add(prompt_key(request("q", 6)), FixtureEntry::reply("one two three"));
  ReplayBackend backend(set);
  const auto cut = backend.complete(request("p", 4));
  CHECK(cut.text == "one two three four");
  CHECK(cut.finish_reason == FinishReason::Length);
  CHECK(cut.usage.completion_tokens == 4);
  const auto whole = backend.complete(request("q", 6));
  CHECK(whole.text == "one two three");
  CHECK(whole.finish_reason == FinishReason::Stop);
}

TEST_CASE("context overflow is raised before any call") {
  FixtureSet set;
  std::string prompt;
  for (int i = 0; i < 40; ++i) prompt += "word ";
  set.add(prompt_key(request(prompt, 20)), FixtureEntry::reply("never seen"));
  ReplayBackend backend(set, {"tiny", true, 50});
  try {
    backend.complete(request(prompt, 20));
    FAIL("expected overflow");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendErrorKind::ContextOverflow);
  }
  CHECK_NOTHROW(backend.complete(request(prompt, 10)));
}

TEST_CASE("retry succeeds after transient failures and records backoff") {
  FixtureSet set;
  set.set(prompt_key(request("flaky")),
          {FixtureEntry::failure(BackendErrorKind::Transport),
           FixtureEntry::failure(BackendErrorKind::RateLimited),
           FixtureEntry::reply("ok now")});
  auto inner = std::make_shared<ReplayBackend>(set);
  RecordingSleeper sleeper;
  RetryPolicy policy;
  RetryingBackend backend(inner, policy, sleeper.fn());

  CHECK(backend.complete(request("flaky")).text == "ok now");
  CHECK(inner->call_count() == 3);
  REQUIRE(sleeper.delays->size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto nominal = policy.nominal_delay(static_cast<int>(i) + 1).count();
    CHECK((*sleeper.delays)[i].count() <= nominal);
    CHECK((*sleeper.delays)[i].count() >= nominal / 2);
  }
}

TEST_CASE("nominal backoff doubles up to the cap") {
  RetryPolicy p;
  CHECK(p.nominal_delay(1).count() == 1000);
  CHECK(p.nominal_delay(2).count() == 2000);
  CHECK(p.nominal_delay(3).count() == 4000);
  CHECK(p.nominal_delay(5).count() == 16000);
  CHECK(p.nominal_delay(6).count() == 30000);
  CHECK(p.nominal_delay(20).count() == 30000);
}

TEST_CASE("retry gives up after max attempts and skips permanent errors") {
  FixtureSet set;
  set.add(prompt_key(request("down")), FixtureEntry::failure(BackendErrorKind::Transport));
  set.add(prompt_key(request("denied")),
          FixtureEntry::failure(BackendErrorKind::InvalidCredentials));
  auto inner = std::make_shared<ReplayBackend>(set);
  RecordingSleeper sleeper;
  RetryPolicy policy;
  policy.max_attempts = 4;
  RetryingBackend backend(inner, policy, sleeper.fn());

  CHECK_THROWS_AS(backend.complete(request("down")), BackendError);
  CHECK(inner->call_count() == 4);
  CHECK(sleeper.delays->size() == 3);

  CHECK_THROWS_AS(backend.complete(request("denied")), BackendError);
  CHECK(inner->call_count() == 5);
  CHECK(sleeper.delays->size() == 3);
}

TEST_CASE("scored fixtures reconstruct the continuation") {
  FixtureSet set;
  set.add(scoring_key("ctx:", " a b"), FixtureEntry::scored_logprobs({-0.5, -1.5}));
  set.add(scoring_key("ctx:", " c"), FixtureEntry::scored({{" c", -0.25}}));
  set.add(scoring_key("ctx:", " bad"), FixtureEntry::scored({{" wrong", -0.1}}));
  ReplayBackend backend(set);
  const auto toks = backend.score_continuation("ctx:", " a b");
  REQUIRE(toks.size() == 2);
  CHECK(toks[0].token_text == " a");
  CHECK(toks[1].logprob == -1.5);
  CHECK(backend.score_continuation("ctx:", " c").front().logprob == -0.25);
  CHECK_THROWS_AS(backend.score_continuation("ctx:", " bad"), BackendError);
  CHECK_THROWS_AS(backend.score_continuation("ctx:", ""), ValidationError);
}

TEST_CASE("scoring on a backend without the capability fails clearly") {
  ReplayBackend backend(FixtureSet{}, {"chat-only", false, 4096});
  try {
    backend.score_continuation("ctx", " x");
    FAIL("expected CapabilityMissing");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendErrorKind::CapabilityMissing);
  }
}

TEST_CASE("fixture JSON round-trips, including null logprobs") {
  const json j = json::parse(R"({
    "k1": {"text": "hello", "finish_reason": "length"},
    "k2": [{"error": "rate_limited"}, {"text": "later"}],
    "k3": {"logprobs": [-0.5, null]},
    "k4": {"scored_tokens": [{"token": "x", "logprob": -1.0}]}
  })");
  const auto set = FixtureSet::from_json(j);
  CHECK(set.size() == 4);
  CHECK(set.to_json() == j);
  const auto& lp = set.entries().at("k3").front().logprobs;
  CHECK(std::isinf(lp[1]));
  CHECK_THROWS_AS(FixtureSet::from_json(json::parse(R"({"k": {"logprobs": [0.5]}})")),
                  ValidationError);
  CHECK_THROWS_AS(FixtureSet::from_json(json::parse(R"({"k": {"error": "nope"}})")),
                  ValidationError);
}

// ---------------------------------------------------------------------------
// HTTP backend against a local mock server

namespace {

class MockServer {
 public:
  explicit MockServer(const std::function<void(httplib::Server&)>& routes) {
    routes(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }
  std::string base() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

HttpBackendConfig config_for(const MockServer& mock, bool scoring = false) {
  HttpBackendConfig c;
  c.base_url = mock.base();
  c.api_key = "test-key";
  c.model = "mock-model";
  c.supports_token_scoring = scoring;
  c.timeout = std::chrono::seconds(5);
  return c;
}

}  // namespace

TEST_CASE("chat completions use the OpenAI wire format") {
  json seen;
  std::string auth;
  MockServer mock([&](httplib::Server& srv) {
  srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Response 2 is more empathetic"},"finish_reason":"stop"}],"usage":{"prompt_tokens":12,"completion_tokens":5}})",
                    "application/json");
  });
  });
  HttpBackend backend(config_for(mock));
  ChatRequest r = request("Which response is more empathetic?", 32);
  r.system_text = "Be brief.";
  const auto out = backend.complete(r);
  CHECK(out.text == "Response 2 is more empathetic");
  CHECK(out.finish_reason == FinishReason::Stop);
  CHECK(out.usage.prompt_tokens == 12);
  CHECK(auth == "Bearer test-key");
  CHECK(seen["model"] == "mock-model");
  CHECK(seen["max_tokens"] == 32);
  CHECK(seen["temperature"] == 0.0);
  REQUIRE(seen["messages"].size() == 2);
  CHECK(seen["messages"][0]["role"] == "system");
  CHECK(seen["messages"][1]["content"] == "Which response is more empathetic?");
}

TEST_CASE("HTTP status codes map to error kinds") {
  CHECK(wire::error_for_status(401, "{}").kind() == BackendErrorKind::InvalidCredentials);
  CHECK(wire::error_for_status(403, "").kind() == BackendErrorKind::InvalidCredentials);
  CHECK(wire::error_for_status(429, "").kind() == BackendErrorKind::RateLimited);
  CHECK(wire::error_for_status(503, "").kind() == BackendErrorKind::Transport);
  CHECK(wire::error_for_status(
            400, R"({"error":{"message":"too long","code":"context_length_exceeded"}})")
            .kind() == BackendErrorKind::ContextOverflow);
  CHECK(wire::error_for_status(400, R"({"error":{"message":"bad"}})").kind() ==
        BackendErrorKind::Protocol);
}

TEST_CASE("rate limiting over HTTP is retried") {
  int calls = 0;
  MockServer mock([&](httplib::Server& srv) {
  srv.Post("/v1/chat/completions",
                     [&](const httplib::Request&, httplib::Response& res) {
                       if (++calls < 3) {
                         res.status = 429;
                         res.set_content(R"({"error":{"message":"slow down"}})",
                                         "application/json");
                         return;
                       }
                       res.set_content(
                           R"({"choices":[{"message":{"content":"fine"},"finish_reason":"length"}]})",
                           "application/json");
                     });
  });
  auto http = std::make_shared<HttpBackend>(config_for(mock));
  RecordingSleeper sleeper;
  RetryingBackend backend(http, RetryPolicy{}, sleeper.fn());
  const auto out = backend.complete(request("hi"));
  CHECK(out.text == "fine");
  CHECK(out.finish_reason == FinishReason::Length);
  CHECK(calls == 3);
  CHECK(sleeper.delays->size() == 2);
}

TEST_CASE("credential errors over HTTP are not retried") {
  int calls = 0;
  MockServer mock([&](httplib::Server& srv) {
  srv.Post("/v1/chat/completions",
                     [&](const httplib::Request&, httplib::Response& res) {
                       ++calls;
                       res.status = 401;
                     });
  });
  auto http = std::make_shared<HttpBackend>(config_for(mock));
  RecordingSleeper sleeper;
  RetryingBackend backend(http, RetryPolicy{}, sleeper.fn());
  try {
    backend.complete(request("hi"));
    FAIL("expected failure");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendErrorKind::InvalidCredentials);
  }
  CHECK(calls == 1);
}

TEST_CASE("unreachable hosts surface as transient transport errors") {
  HttpBackendConfig c;
  c.base_url = "http://127.0.0.1:1/v1";
  c.model = "m";
  c.timeout = std::chrono::seconds(2);
  HttpBackend backend(c);
  try {
    backend.complete(request("hi"));
    FAIL("expected failure");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendErrorKind::Transport);
    CHECK(e.transient());
  }
}

TEST_CASE("token scoring uses echoed logprobs past the context offset") {
  json seen;
  MockServer mock([&](httplib::Server& srv) {
  srv.Post("/v1/completions", [&](const httplib::Request& req,
                                            httplib::Response& res) {
    seen = json::parse(req.body);
    // "Q:" + " yes" + " ok"; the first token has no logprob.
    res.set_content(R"({"choices":[{"text":"Q: yes ok","logprobs":{
        "tokens":["Q:"," yes"," ok"],
        "token_logprobs":[null,-0.5,-1.25],
        "text_offset":[0,2,6]}}]})",
                    "application/json");
  });
  });
  HttpBackend backend(config_for(mock, true));
  const auto toks = backend.score_continuation("Q:", " yes ok");
  REQUIRE(toks.size() == 2);
  CHECK(toks[0] == ScoredToken{" yes", -0.5});
  CHECK(toks[1] == ScoredToken{" ok", -1.25});
  CHECK(seen["prompt"] == "Q: yes ok");
  CHECK(seen["echo"] == true);
  CHECK(seen["max_tokens"] == 0);

  HttpBackend chat_only(config_for(mock, false));
  CHECK_THROWS_AS(chat_only.score_continuation("Q:", " yes"), BackendError);
}

TEST_CASE("malformed provider responses are protocol errors") {
  CHECK_THROWS_AS(wire::parse_chat_response(json::parse(R"({"choices":[]})")),
                  BackendError);
  CHECK_THROWS_AS(wire::parse_scoring_response(
                      json::parse(R"({"choices":[{"logprobs":{"tokens":["a"],"token_logprobs":[],"text_offset":[0]}}]})"),
                      0),
                  BackendError);
}
