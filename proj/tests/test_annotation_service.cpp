#include <doctest.h>

#include <algorithm>
#include <cctype>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "emrank/annotation_service.hpp"
#include "emrank/datastore.hpp"
#include "emrank/error.hpp"
#include "test_support.hpp"

using namespace emrank;
using nlohmann::json;
using testing::TempDir;

namespace {

StudyConfig config(std::vector<std::string> annotators = {"ann-a", "ann-b", "ann-c"}) {
  StudyConfig c;
  c.seed = 31;
  c.annotators = std::move(annotators);
  c.admin_key = "secret";
  return c;
}

void check_no_provenance(const std::string& body) {
  std::string l = body;
  std::transform(l.begin(), l.end(), l.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const char* word : {"physician", "chatbot", "provenance", "assignment", "slot1_is"})
    CHECK_MESSAGE(l.find(word) == std::string::npos, word << " leaked in " << body);
}

int status_of(const httplib::Result& r) { return r ? r->status : -1; }

}  // namespace

TEST_CASE("sessions are deterministic and idempotent") {
  AnnotationStudy study(testing::make_items(10), config());
  const auto s1 = study.create_session("ann-a");
  const auto s2 = study.create_session("ann-a");
  CHECK(s1.session_id == s2.session_id);
  CHECK(s1.session_id == AnnotationStudy::session_id_for("ann-a", 31));
  CHECK(s1.item_order.size() == 10);
  CHECK(s1.item_order == study.item_order_for("ann-a"));
  CHECK(study.item_order_for("ann-a") != study.item_order_for("ann-b"));
  try {
    study.create_session("stranger");
    FAIL("unknown annotator accepted");
  } catch (const StudyError& e) {
    CHECK(e.status() == 404);
    CHECK(e.code() == "unknown_annotator");
  }
}

TEST_CASE("item limit keeps the first items") {
  auto c = config();
  c.item_limit = 3;
  AnnotationStudy study(testing::make_items(10), c);
  CHECK(study.item_count() == 3);
  const auto order = study.item_order_for("ann-b");
  const std::set<std::string> ids(order.begin(), order.end());
  CHECK(ids == std::set<std::string>{"item-0", "item-1", "item-2"});
}

TEST_CASE("judgments advance the cursor and are validated") {
  AnnotationStudy study(testing::make_items(3), config());
  const auto s = study.create_session("ann-a");
  auto pair = study.next_pair(s.session_id);
  REQUIRE(pair);
  CHECK(pair->item_id == s.item_order[0]);

  auto expect_error = [&](const std::string& item, SlotVerdict v, int status,
                          const std::string& code) {
    try {
      study.submit_judgment(s.session_id, item, v, "");
      FAIL("accepted an invalid judgment");
    } catch (const StudyError& e) {
      CHECK(e.status() == status);
      CHECK(e.code() == code);
    }
  };
  expect_error(pair->item_id, SlotVerdict::Abstain, 400, "invalid_choice");
  expect_error(s.item_order[1], SlotVerdict::Slot1, 409, "out_of_order");

  for (std::size_t i = 0; i < 3; ++i) {
    pair = study.next_pair(s.session_id);
    REQUIRE(pair);
    study.submit_judgment(s.session_id, pair->item_id, SlotVerdict::Slot2, "why");
  }
  CHECK_FALSE(study.next_pair(s.session_id));
  expect_error(s.item_order[0], SlotVerdict::Slot1, 409, "session_complete");
  CHECK(study.records().size() == 3);
  CHECK(study.session(s.session_id).cursor == 3);
}

TEST_CASE("exports unblind and require the admin key") {
  const auto items = testing::make_items(3);
  AnnotationStudy study(items, config());
  const auto s = study.create_session("ann-b");
  std::map<std::string, Provenance> chosen;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto pair = study.next_pair(s.session_id);
    const auto prov = i == 1 ? Provenance::Physician : Provenance::Chatbot;
    const auto slot = study.pairs().at(pair->item_id).slot_of(prov);
    study.submit_judgment(s.session_id, pair->item_id, slot, "");
    chosen[pair->item_id] = prov;
  }
  const auto rows = study.export_records("secret");
  REQUIRE(rows.size() == 3);
  for (const auto& row : rows) {
    const auto want = chosen.at(row.record.item_id) == Provenance::Chatbot
                          ? ProvenanceVerdict::ChatbotMoreEmpathetic
                          : ProvenanceVerdict::PhysicianMoreEmpathetic;
    CHECK(row.verdict == want);
  }
  try {
    study.export_records("wrong");
    FAIL("export without key");
  } catch (const StudyError& e) {
    CHECK(e.status() == 401);
  }
}

TEST_CASE("annotations persist and are replayed on restart") {
  TempDir tmp;
  auto c = config();
  c.annotations_path = tmp / "ann.csv";
  const auto items = testing::make_items(4);
  std::string sid;
  {
    AnnotationStudy study(items, c);
    sid = study.create_session("ann-c").session_id;
    for (int i = 0; i < 2; ++i) {
      const auto p = study.next_pair(sid);
      study.submit_judgment(sid, p->item_id, SlotVerdict::Slot1, "first pass");
    }
  }
  CHECK(load_annotations(tmp / "ann.csv").size() == 2);
  AnnotationStudy resumed(items, c);
  const auto s = resumed.create_session("ann-c");
  CHECK(s.session_id == sid);
  CHECK(s.cursor == 2);
  CHECK(resumed.records().size() == 2);
  const auto p = resumed.next_pair(sid);
  REQUIRE(p);
  CHECK(p->item_id == s.item_order[2]);
}

TEST_CASE("payloads never carry provenance over 500 items") {
  const auto items = testing::make_items(500, "blind-");
  AnnotationStudy study(items, config({"solo"}));
  const auto s = study.create_session("solo");
  CHECK_FALSE(s.to_json().contains("item_order"));
  check_no_provenance(s.to_json().dump());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto p = study.next_pair(s.session_id);
    REQUIRE(p);
    const auto body = p->to_json();
    CHECK(body.size() == 4);
    check_no_provenance(body.dump());
    study.submit_judgment(s.session_id, p->item_id, SlotVerdict::Slot1, "");
  }
}

TEST_CASE("HTTP session walk-through") {
  const auto items = testing::make_items(3);
  AnnotationStudy study(items, config());
  AnnotationServer server(study);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);

  auto created = client.Post("/sessions", R"({"annotator_id": "ann-a"})", "application/json");
  REQUIRE(status_of(created) == 200);
  check_no_provenance(created->body);
  CHECK(created->get_header_value("Access-Control-Allow-Origin") == "*");
  const auto session = json::parse(created->body);
  const std::string sid = session["session_id"];
  CHECK(session["total"] == 3);

  std::map<std::string, int> submitted;
  for (int i = 0; i < 3; ++i) {
    auto next = client.Get("/sessions/" + sid + "/next");
    REQUIRE(status_of(next) == 200);
    check_no_provenance(next->body);
    const auto pair = json::parse(next->body);
    const std::string item = pair["item_id"];
    CHECK(pair.contains("response_1"));
    const int choice = 1 + i % 2;
    const json body = {{"item_id", item}, {"choice", choice}, {"justification", "felt heard"}};
    auto posted = client.Post("/sessions/" + sid + "/judgments", body.dump(), "application/json");
    REQUIRE(status_of(posted) == 201);
    CHECK(json::parse(posted->body)["cursor"] == i + 1);
    submitted[item] = choice;

    auto again = client.Post("/sessions/" + sid + "/judgments", body.dump(), "application/json");
    CHECK(status_of(again) == 409);
  }
  auto done = client.Get("/sessions/" + sid + "/next");
  REQUIRE(status_of(done) == 200);
  CHECK(json::parse(done->body)["done"] == true);

  CHECK(status_of(client.Get("/admin/export")) == 401);
  auto exported = client.Get("/admin/export", {{"X-Admin-Key", "secret"}});
  REQUIRE(status_of(exported) == 200);
  const auto records = json::parse(exported->body)["records"];
  REQUIRE(records.size() == 3);
  for (const auto& r : records) {
    const std::string id = r["item_id"];
    CHECK(r["slot_choice"] == submitted.at(id));
    const auto slot = submitted.at(id) == 1 ? SlotVerdict::Slot1 : SlotVerdict::Slot2;
    CHECK(r["verdict"] == std::string(to_string(unblind(study.pairs().at(id), slot))));
  }
  server.stop();
}

TEST_CASE("HTTP error shapes") {
  AnnotationStudy study(testing::make_items(2), config());
  AnnotationServer server(study);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);

  auto unknown = client.Post("/sessions", R"({"annotator_id": "nobody"})", "application/json");
  CHECK(status_of(unknown) == 404);
  CHECK(json::parse(unknown->body)["code"] == "unknown_annotator");
  CHECK(status_of(client.Post("/sessions", "not json", "application/json")) == 400);
  CHECK(status_of(client.Get("/sessions/s-missing/next")) == 404);

  const auto sid = json::parse(client.Post("/sessions", R"({"annotator_id": "ann-a"})",
                                           "application/json")->body)["session_id"]
                       .get<std::string>();
  const auto item = json::parse(client.Get("/sessions/" + sid + "/next")->body)["item_id"]
                        .get<std::string>();
  const json abstain = {{"item_id", item}, {"choice", 0}};
  auto bad = client.Post("/sessions/" + sid + "/judgments", abstain.dump(), "application/json");
  CHECK(status_of(bad) == 400);
  CHECK(json::parse(bad->body)["code"] == "invalid_choice");
  auto preflight = client.Options("/sessions");
  CHECK(status_of(preflight) == 204);
  server.stop();
}

TEST_CASE("concurrent annotators do not interfere") {
  const auto items = testing::make_items(20);
  std::vector<std::string> who;
  for (int i = 0; i < 6; ++i) who.push_back("ann-" + std::to_string(i));
  AnnotationStudy study(items, config(who));
  AnnotationServer server(study);
  const int port = server.start("127.0.0.1", 0);

  std::vector<std::thread> threads;
  std::atomic<int> failures{0};
  for (const auto& name : who) {
    threads.emplace_back([&, name] {
      httplib::Client client("127.0.0.1", port);
      const json req = {{"annotator_id", name}};
      auto created = client.Post("/sessions", req.dump(), "application/json");
      if (status_of(created) != 200) {
        ++failures;
        return;
      }
      const std::string sid = json::parse(created->body)["session_id"];
      for (;;) {
        auto next = client.Get("/sessions/" + sid + "/next");
        if (status_of(next) != 200) {
          ++failures;
          return;
        }
        const auto body = json::parse(next->body);
        if (body.contains("done")) return;
        const json j = {{"item_id", body["item_id"]}, {"choice", 2}};
        if (status_of(client.Post("/sessions/" + sid + "/judgments", j.dump(),
                                  "application/json")) != 201)
          ++failures;
      }
    });
  }
  for (auto& t : threads) t.join();
  server.stop();
  CHECK(failures == 0);
  const auto records = study.records();
  CHECK(records.size() == items.size() * who.size());
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& r : records) keys.emplace(r.item_id, r.annotator_id);
  CHECK(keys.size() == records.size());
}
