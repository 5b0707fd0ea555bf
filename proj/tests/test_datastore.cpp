#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "emrank/datastore.hpp"
#include "emrank/error.hpp"
#include "test_support.hpp"

using namespace emrank;
using testing::TempDir;

namespace {

RunResult sample_run(std::size_t n, MetricKind metric = MetricKind::OneShot) {
  RunResult run;
  run.metric = metric;
  run.seed = 12345678901234ULL;
  for (std::size_t i = 0; i < n; ++i) {
    ItemResult r;
    r.assignment = i % 2 ? Assignment::Slot1IsChatbot : Assignment::Slot1IsPhysician;
    r.votes = {SlotVerdict::Slot1, SlotVerdict::Abstain, SlotVerdict::Slot2};
    r.slot_verdict = i % 3 == 0 ? SlotVerdict::Slot1
                     : i % 3 == 1 ? SlotVerdict::Slot2
                                  : SlotVerdict::Abstain;
    BlindedPair orient;
    orient.assignment = r.assignment;
    r.provenance_verdict = unblind(orient, r.slot_verdict);
    r.raw_outputs = {"Response 1 is more empathetic.", "", "quote \" and\nnewline"};
    if (i == 4) {
      r.evaluated = false;
      r.errors = {"transport: connection reset"};
      r.slot_verdict = SlotVerdict::Abstain;
      r.provenance_verdict = ProvenanceVerdict::Undecided;
    }
    if (i % 5 == 0)
      r.ppl = std::make_pair(1.25 + static_cast<double>(i),
                             i == 10 ? std::numeric_limits<double>::infinity() : 3.5);
    run.per_item.emplace("item/" + std::to_string(i), r);
  }
  run.summary = summarize(run.per_item);
  return run;
}

}  // namespace

TEST_CASE("dataset loads with recomputed word counts") {
  std::istringstream in(
      R"({"id": "a", "question": "one two three", "physician_response": "four five", "chatbot_response": "six seven eight nine"})"
      "\n\n"
      R"({"id": 7, "question": "ten eleven", "physician_response": "twelve thirteen fourteen fifteen"})"
      "\n");
  const auto ds = parse_dataset(in, "inline");
  REQUIRE(ds.records.size() == 2);
  CHECK(ds.records[1].id == "7");
  CHECK_FALSE(ds.records[1].chatbot_response.has_value());
  const auto s = ds.stats();
  CHECK(s.questions == 2);
  CHECK(s.avg_question_words == doctest::Approx((3.0 + 2.0) / 2));
  CHECK(s.avg_physician_words == doctest::Approx((2.0 + 4.0) / 2));
  REQUIRE(s.avg_chatbot_words);
  CHECK(*s.avg_chatbot_words == doctest::Approx(4.0));
  CHECK(s.with_chatbot_response == 1);
  CHECK_FALSE(ds.complete());
  CHECK_THROWS_AS(ds.eval_items(), ValidationError);
}

TEST_CASE("bundled dataset statistics match a manual count") {
  const auto ds = load_dataset(testing::data_path("synthetic20.jsonl"));
  CHECK(ds.records.size() == 20);
  CHECK(ds.complete());
  double q = 0;
  for (const auto& r : ds.records) {
    std::istringstream words(r.question);
    std::string w;
    while (words >> w) ++q;
  }
  CHECK(ds.stats().avg_question_words == doctest::Approx(q / 20.0));
}

TEST_CASE("duplicate ids and malformed lines report file and line") {
  std::istringstream dup(
      R"({"id": "x", "question": "q", "physician_response": "p"})"
      "\n"
      R"({"id": "x", "question": "q2", "physician_response": "p2"})"
      "\n");
  try {
    parse_dataset(dup, "data.jsonl");
    FAIL("expected duplicate error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("'x'") != std::string::npos);
    CHECK(std::string(e.what()).find("data.jsonl:2") != std::string::npos);
  }
  std::istringstream broken(R"({"id": "x", "question": )");
  CHECK_THROWS_AS(parse_dataset(broken, "b"), ParseError);
  std::istringstream empty_text(R"({"id": "x", "question": " ", "physician_response": "p"})");
  CHECK_THROWS_AS(parse_dataset(empty_text, "c"), ParseError);
  CHECK_THROWS_AS(load_dataset("/nonexistent/file.jsonl"), IoError);
}

TEST_CASE("dataset save and load round-trip") {
  TempDir tmp;
  const auto original = load_dataset(testing::data_path("synthetic20.jsonl"));
  save_dataset(original, tmp / "copy.jsonl");
  CHECK(load_dataset(tmp / "copy.jsonl").records == original.records);
  CHECK_FALSE(std::filesystem::exists(tmp / "copy.jsonl.tmp"));
}

TEST_CASE("run results round-trip through JSON and archives") {
  TempDir tmp;
  const auto run = sample_run(20);
  CHECK(run_from_json(to_json(run)) == run);
  const auto dir = save_run(run, {{"note", "test"}}, tmp.path());
  CHECK(load_run(dir) == run);
  CHECK(load_run(dir / "result.json") == run);
  const auto cfg = load_run_config(dir);
  CHECK(cfg["note"] == "test");
  CHECK(cfg["seed"] == run.seed);
  CHECK(cfg["metric"] == "one-shot");
  CHECK(std::filesystem::exists(dir / "raw"));
  std::size_t raw_files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "raw"))
    ++raw_files;
  CHECK(raw_files == 20);
  const auto reloaded = load_run(dir);
  CHECK(std::isinf(reloaded.per_item.at("item/10").ppl->second));
}

TEST_CASE("serialized results are byte-stable") {
  const auto run = sample_run(8);
  CHECK(serialize_result(run) == serialize_result(run_from_json(to_json(run))));
}

TEST_CASE("archives are never overwritten") {
  TempDir tmp;
  const auto run = sample_run(3);
  const auto a = save_run(run, {}, tmp.path());
  const auto b = save_run(run, {}, tmp.path());
  const auto c = save_run(run, {}, tmp.path());
  CHECK(a != b);
  CHECK(b != c);
  CHECK(a != c);
  CHECK(load_run(a) == load_run(c));
}

TEST_CASE("truncated result files fail to load") {
  TempDir tmp;
  const auto dir = save_run(sample_run(5), {}, tmp.path());
  const auto full = testing::read_file(dir / "result.json");
  testing::write_file(tmp / "cut.json", full.substr(0, full.size() / 2));
  CHECK_THROWS_AS(load_run(tmp / "cut.json"), ParseError);
  testing::write_file(tmp / "wrong.json", R"({"metric": "zero-shot"})");
  CHECK_THROWS_AS(load_run(tmp / "wrong.json"), ParseError);
}

TEST_CASE("annotation CSV round-trips tricky text") {
  TempDir tmp;
  std::vector<AnnotationRecord> recs = {
      {"q1", "ann-a", SlotVerdict::Slot1, "plain", "2026-01-01T00:00:00Z"},
      {"q1", "ann-b", SlotVerdict::Slot2, "has, comma and \"quotes\"", "2026-01-01T00:00:01Z"},
      {"q2", "ann-a", SlotVerdict::Slot2, "line\nbreak", "2026-01-01T00:00:02Z"},
      {"q2", "ann-b", SlotVerdict::Slot1, "", "2026-01-01T00:00:03Z"},
  };
  save_annotations(recs, tmp / "a.csv");
  CHECK(load_annotations(tmp / "a.csv") == recs);
  CHECK(testing::read_file(tmp / "a.csv").rfind(std::string(kAnnotationCsvHeader), 0) == 0);

  const AnnotationRecord extra{"q3", "ann-c", SlotVerdict::Slot1, "late", "2026-01-02T00:00:00Z"};
  append_annotation(extra, tmp / "a.csv");
  recs.push_back(extra);
  CHECK(load_annotations(tmp / "a.csv") == recs);

  append_annotation(extra, tmp / "fresh.csv");
  CHECK(load_annotations(tmp / "fresh.csv").size() == 1);

  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_escape("plain") == "plain");
}

TEST_CASE("annotation CSV rejects bad rows") {
  const std::string header = std::string(kAnnotationCsvHeader) + "\n";
  std::istringstream abstain(header + "q1,a,abstain,,2026-01-01T00:00:00Z\n");
  CHECK_THROWS_AS(parse_annotations_csv(abstain, "x"), ParseError);
  std::istringstream dup(header + "q1,a,1,,t\nq1,a,2,,t\n");
  try {
    parse_annotations_csv(dup, "dup.csv");
    FAIL("expected duplicate error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::istringstream bad_header("id,who,choice\n");
  CHECK_THROWS_AS(parse_annotations_csv(bad_header, "h"), ParseError);
  std::istringstream open_quote(header + "q1,a,1,\"never closed,t\n");
  CHECK_THROWS_AS(parse_annotations_csv(open_quote, "q"), ParseError);
}

TEST_CASE("bundled annotations load") {
  const auto recs = load_annotations(testing::data_path("synthetic20.annotations.csv"));
  CHECK(recs.size() == 60);
}
