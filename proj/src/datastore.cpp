#include "emrank/datastore.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "emrank/error.hpp"
#include "emrank/hashing.hpp"

namespace emrank {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Datasets

DatasetStats Dataset::stats() const {
  DatasetStats s;
  s.questions = records.size();
  if (records.empty()) return s;
  double q = 0.0;
  double p = 0.0;
  double c = 0.0;
  for (const auto& r : records) {
    q += static_cast<double>(word_count(r.question));
    p += static_cast<double>(word_count(r.physician_response));
    if (r.chatbot_response) {
      c += static_cast<double>(word_count(*r.chatbot_response));
      ++s.with_chatbot_response;
    }
  }
  const double n = static_cast<double>(records.size());
  s.avg_question_words = q / n;
  s.avg_physician_words = p / n;
  if (s.with_chatbot_response > 0)
    s.avg_chatbot_words = c / static_cast<double>(s.with_chatbot_response);
  return s;
}

bool Dataset::complete() const {
  for (const auto& r : records)
    if (!r.chatbot_response) return false;
  return true;
}

std::vector<EvalItem> Dataset::eval_items() const {
  std::vector<EvalItem> items;
  items.reserve(records.size());
  for (const auto& r : records) {
    if (!r.chatbot_response)
      throw ValidationError("item '" + r.id + "' has no chatbot response yet");
    items.push_back(EvalItem::make(r.id, r.question, r.physician_response,
                                   *r.chatbot_response));
  }
  return items;
}

Dataset parse_dataset(std::istream& in, const std::string& name) {
  Dataset ds;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (word_count(line) == 0) continue;
    DatasetRecord rec;
    try {
      const json j = json::parse(line);
      rec.id = j.at("id").is_string() ? j.at("id").get<std::string>()
                                      : j.at("id").dump();
      rec.question = j.at("question").get<std::string>();
      rec.physician_response = j.at("physician_response").get<std::string>();
      if (j.contains("chatbot_response") && !j["chatbot_response"].is_null())
        rec.chatbot_response = j["chatbot_response"].get<std::string>();
    } catch (const json::exception& e) {
      throw ParseError(name, lineno, e.what());
    }
    try {
      PatientQuestion::make(rec.id, rec.question);
      CandidateResponse::make(rec.id, rec.physician_response,
                              Provenance::Physician);
      if (rec.chatbot_response)
        CandidateResponse::make(rec.id, *rec.chatbot_response,
                                Provenance::Chatbot);
    } catch (const ValidationError& e) {
      throw ParseError(name, lineno, e.what());
    }
    if (!ids.insert(rec.id).second)
      throw ParseError(name, lineno, "duplicate id '" + rec.id + "'");
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

Dataset load_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return parse_dataset(in, path.string());
}

namespace {

void write_atomically(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << bytes;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() +
                        ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

void save_dataset(const Dataset& dataset, const fs::path& path) {
  std::string out;
  for (const auto& r : dataset.records) {
    json j = {{"id", r.id},
              {"question", r.question},
              {"physician_response", r.physician_response}};
    if (r.chatbot_response) j["chatbot_response"] = *r.chatbot_response;
    out += j.dump();
    out += '\n';
  }
  write_atomically(path, out);
}

// ---------------------------------------------------------------------------
// Runs

namespace {

json number_or_null(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

json optional_rate(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

json summary_json(const WinSummary& s) {
  return {{"chatbot_wins", s.chatbot_wins},
          {"physician_wins", s.physician_wins},
          {"undecided", s.undecided},
          {"failed", s.failed},
          {"chatbot_rate", optional_rate(s.chatbot_rate)},
          {"physician_rate", optional_rate(s.physician_rate)}};
}

WinSummary summary_from(const json& j) {
  WinSummary s;
  s.chatbot_wins = j.at("chatbot_wins").get<std::size_t>();
  s.physician_wins = j.at("physician_wins").get<std::size_t>();
  s.undecided = j.at("undecided").get<std::size_t>();
  s.failed = j.at("failed").get<std::size_t>();
  if (!j.at("chatbot_rate").is_null())
    s.chatbot_rate = j["chatbot_rate"].get<double>();
  if (!j.at("physician_rate").is_null())
    s.physician_rate = j["physician_rate"].get<double>();
  return s;
}

template <typename Enum, typename Parser>
Enum parse_enum(const json& j, Parser parse, std::string_view what) {
  const auto s = j.get<std::string>();
  const auto v = parse(s);
  if (!v) throw ValidationError("unknown " + std::string(what) + " '" + s + "'");
  return *v;
}

std::string file_stem_for(const std::string& item_id) {
  std::string out;
  bool changed = item_id.empty();
  for (char c : item_id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' ||
                    c == '_' || c == '.';
    out.push_back(ok ? c : '_');
    changed |= !ok;
  }
  if (out.empty() || out.front() == '.') {
    if (out.empty()) out.push_back('_');
    else out.front() = '_';
    changed = true;
  }
  if (changed) out += "-" + hex64(fnv1a64(item_id)).substr(0, 8);
  return out;
}

}  // namespace

json to_json(const RunResult& run) {
  json items = json::object();
  for (const auto& [id, r] : run.per_item) {
    json votes = json::array();
    for (auto v : r.votes) votes.push_back(std::string(to_string(v)));
    json item = {{"slot_verdict", std::string(to_string(r.slot_verdict))},
                 {"provenance_verdict",
                  std::string(to_string(r.provenance_verdict))},
                 {"assignment", std::string(to_string(r.assignment))},
                 {"votes", votes},
                 {"raw_outputs", r.raw_outputs},
                 {"errors", r.errors},
                 {"evaluated", r.evaluated}};
    if (r.ppl)
      item["ppl"] = {number_or_null(r.ppl->first), number_or_null(r.ppl->second)};
    items[id] = std::move(item);
  }
  return {{"metric", std::string(to_string(run.metric))},
          {"seed", run.seed},
          {"summary", summary_json(run.summary)},
          {"items", items}};
}

RunResult run_from_json(const json& j) {
  RunResult run;
  run.metric = parse_enum<MetricKind>(j.at("metric"), parse_metric_kind, "metric");
  run.seed = j.at("seed").get<std::uint64_t>();
  run.summary = summary_from(j.at("summary"));
  for (const auto& [id, item] : j.at("items").items()) {
    ItemResult r;
    r.slot_verdict = parse_enum<SlotVerdict>(item.at("slot_verdict"),
                                             parse_slot_verdict, "slot verdict");
    r.provenance_verdict = parse_enum<ProvenanceVerdict>(
        item.at("provenance_verdict"), parse_provenance_verdict,
        "provenance verdict");
    r.assignment = parse_enum<Assignment>(item.at("assignment"),
                                          parse_assignment, "assignment");
    for (const auto& v : item.at("votes"))
      r.votes.push_back(parse_enum<SlotVerdict>(v, parse_slot_verdict, "vote"));
    r.raw_outputs = item.at("raw_outputs").get<std::vector<std::string>>();
    r.errors = item.at("errors").get<std::vector<std::string>>();
    r.evaluated = item.at("evaluated").get<bool>();
    if (item.contains("ppl"))
      r.ppl = std::make_pair(number_from(item["ppl"].at(0)),
                             number_from(item["ppl"].at(1)));
    run.per_item.emplace(id, std::move(r));
  }
  return run;
}

std::string serialize_result(const RunResult& run) {
  return to_json(run).dump(2) + "\n";
}

fs::path save_run(const RunResult& run, const json& config,
                  const fs::path& out_root) {
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec) throw IoError("cannot create " + out_root.string() + ": " + ec.message());

  std::string stamp = utc_timestamp_now();
  std::erase(stamp, ':');
  std::erase(stamp, '-');
  const std::string base = "run-" + stamp + "-" + std::string(to_string(run.metric));
  fs::path dir;
  for (int suffix = 0;; ++suffix) {
    dir = out_root / (suffix == 0 ? base : base + "-" + std::to_string(suffix));
    // create_directory reports false when the directory already exists, which
    // keeps earlier archives untouched.
    if (fs::create_directory(dir, ec)) break;
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  }
  fs::create_directory(dir / "raw");

  json cfg = config;
  cfg["seed"] = run.seed;
  cfg["metric"] = std::string(to_string(run.metric));
  cfg["saved_at"] = utc_timestamp_now();
  write_atomically(dir / "config.json", cfg.dump(2) + "\n");
  write_atomically(dir / "result.json", serialize_result(run));
  for (const auto& [id, r] : run.per_item) {
    json votes = json::array();
    for (auto v : r.votes) votes.push_back(std::string(to_string(v)));
    const json raw = {{"item_id", id},
                      {"raw_outputs", r.raw_outputs},
                      {"votes", votes},
                      {"errors", r.errors}};
    write_atomically(dir / "raw" / (file_stem_for(id) + ".json"),
                     raw.dump(2) + "\n");
  }
  return dir;
}

RunResult load_run(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "result.json" : path;
  const std::string bytes = read_file(file);
  try {
    return run_from_json(json::parse(bytes));
  } catch (const json::exception& e) {
    throw ParseError(file.string(), 0, e.what());
  } catch (const ValidationError& e) {
    throw ParseError(file.string(), 0, e.what());
  }
}

json load_run_config(const fs::path& archive_dir) {
  const fs::path file = archive_dir / "config.json";
  try {
    return json::parse(read_file(file));
  } catch (const json::exception& e) {
    throw ParseError(file.string(), 0, e.what());
  }
}

// ---------------------------------------------------------------------------
// Annotations CSV

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos)
    return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

namespace {

/// Reads one RFC 4180 record; quoted fields may span lines. Returns false at
/// end of input. `lines` counts physical lines consumed.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields,
                     std::size_t& lines, const std::string& name) {
  fields.clear();
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get();
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++lines;
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++lines;
      fields.push_back(std::move(field));
      return true;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw ParseError(name, lines + 1, "unterminated quoted field");
  if (!any) return false;
  ++lines;
  fields.push_back(std::move(field));
  return true;
}

}  // namespace

std::vector<AnnotationRecord> parse_annotations_csv(std::istream& in,
                                                    const std::string& name) {
  std::vector<AnnotationRecord> out;
  std::vector<std::string> fields;
  std::size_t lines = 0;
  if (!read_csv_record(in, fields, lines, name)) return out;
  std::string header;
  for (std::size_t i = 0; i < fields.size(); ++i)
    header += (i ? "," : "") + fields[i];
  if (header != kAnnotationCsvHeader)
    throw ParseError(name, 1, "unexpected header '" + header + "'");

  std::set<std::pair<std::string, std::string>> seen;
  while (true) {
    const std::size_t first_line = lines + 1;
    if (!read_csv_record(in, fields, lines, name)) break;
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (fields.size() != 5)
      throw ParseError(name, first_line,
                       "expected 5 fields, got " + std::to_string(fields.size()));
    AnnotationRecord rec;
    rec.item_id = fields[0];
    rec.annotator_id = fields[1];
    if (fields[2] == "1") rec.slot_choice = SlotVerdict::Slot1;
    else if (fields[2] == "2") rec.slot_choice = SlotVerdict::Slot2;
    else
      throw ParseError(name, first_line,
                       "slot_choice must be 1 or 2, got '" + fields[2] + "'");
    rec.justification = fields[3];
    rec.submitted_at = fields[4];
    try {
      rec.validate();
    } catch (const ValidationError& e) {
      throw ParseError(name, first_line, e.what());
    }
    if (!seen.emplace(rec.item_id, rec.annotator_id).second)
      throw ParseError(name, first_line,
                       "duplicate annotation of '" + rec.item_id + "' by '" +
                           rec.annotator_id + "'");
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<AnnotationRecord> load_annotations(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open annotations " + path.string());
  return parse_annotations_csv(in, path.string());
}

namespace {

std::string csv_row(const AnnotationRecord& r) {
  return csv_escape(r.item_id) + "," + csv_escape(r.annotator_id) + "," +
         (r.slot_choice == SlotVerdict::Slot1 ? "1" : "2") + "," +
         csv_escape(r.justification) + "," + csv_escape(r.submitted_at) + "\n";
}

}  // namespace

void save_annotations(std::span<const AnnotationRecord> records,
                      const fs::path& path) {
  std::string out(kAnnotationCsvHeader);
  out += '\n';
  for (const auto& r : records) out += csv_row(r);
  write_atomically(path, out);
}

void append_annotation(const AnnotationRecord& record, const fs::path& path) {
  record.validate();
  std::error_code ec;
  const bool fresh = !fs::exists(path, ec) || fs::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  if (fresh) out << kAnnotationCsvHeader << '\n';
  out << csv_row(record);
  out.flush();
  if (!out) throw IoError("append failed for " + path.string());
}

}  // namespace emrank
