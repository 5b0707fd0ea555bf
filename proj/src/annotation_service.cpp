#include "emrank/annotation_service.hpp"

#include <algorithm>
#include <set>

#include <httplib.h>

#include "emrank/datastore.hpp"
#include "emrank/error.hpp"
#include "emrank/hashing.hpp"

namespace emrank {

using nlohmann::json;

namespace {

constexpr std::uint64_t kOrderSalt = 0x6f726465725f7631ULL;  // "order_v1"
constexpr std::uint64_t kSessionSalt = 0x73657373696f6e31ULL;

}  // namespace

json Session::to_json() const {
  return {{"session_id", session_id},
          {"annotator_id", annotator_id},
          {"cursor", cursor},
          {"total", item_order.size()},
          {"created_at", created_at}};
}

json PairPayload::to_json() const {
  return {{"item_id", item_id},
          {"question", question},
          {"response_1", response_1},
          {"response_2", response_2}};
}

AnnotationStudy::AnnotationStudy(std::vector<EvalItem> items, StudyConfig config)
    : config_(std::move(config)) {
  if (items.empty()) throw ValidationError("annotation study needs items");
  if (config_.item_limit && *config_.item_limit < items.size())
    items.resize(*config_.item_limit);
  std::set<std::string> annotators(config_.annotators.begin(),
                                   config_.annotators.end());
  if (annotators.size() != config_.annotators.size())
    throw ValidationError("annotator ids must be unique");
  for (const auto& item : items) {
    if (pairs_.count(item.id()))
      throw ValidationError("duplicate item id '" + item.id() + "'");
    pairs_.emplace(item.id(), blind(item, config_.seed));
    item_ids_.push_back(item.id());
  }
  if (config_.annotations_path && std::filesystem::exists(*config_.annotations_path)) {
    for (const auto& rec : load_annotations(*config_.annotations_path))
      restore(rec);
  }
}

std::string AnnotationStudy::session_id_for(const std::string& annotator_id,
                                            std::uint64_t seed) {
  return "s-" + hex64(keyed_hash(annotator_id, seed ^ kSessionSalt));
}

std::vector<std::string> AnnotationStudy::item_order_for(
    const std::string& annotator_id) const {
  const auto perm = seeded_permutation(
      item_ids_.size(), keyed_hash(annotator_id, config_.seed ^ kOrderSalt));
  std::vector<std::string> order;
  order.reserve(perm.size());
  for (auto i : perm) order.push_back(item_ids_[i]);
  return order;
}

void AnnotationStudy::restore(const AnnotationRecord& record) {
  const bool known = std::find(config_.annotators.begin(),
                               config_.annotators.end(),
                               record.annotator_id) != config_.annotators.end();
  if (!known || !pairs_.count(record.item_id))
    throw ValidationError("stored annotation of '" + record.item_id + "' by '" +
                          record.annotator_id + "' does not belong to this study");
  Session& s = find_session(create_session(record.annotator_id).session_id);
  if (s.cursor >= s.item_order.size() || s.item_order[s.cursor] != record.item_id)
    throw ValidationError("stored annotations are out of order for '" +
                          record.annotator_id + "'");
  recorded_.emplace(std::make_pair(record.item_id, record.annotator_id),
                    records_.size());
  records_.push_back(record);
  ++s.cursor;
}

Session AnnotationStudy::create_session(const std::string& annotator_id) {
  const bool known = std::find(config_.annotators.begin(),
                               config_.annotators.end(),
                               annotator_id) != config_.annotators.end();
  if (!known)
    throw StudyError(404, "unknown_annotator",
                     "annotator '" + annotator_id + "' is not registered");
  std::lock_guard lock(mutex_);
  const std::string id = session_id_for(annotator_id, config_.seed);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) {
    Session s;
    s.session_id = id;
    s.annotator_id = annotator_id;
    s.item_order = item_order_for(annotator_id);
    s.created_at = utc_timestamp_now();
    it = sessions_.emplace(id, std::move(s)).first;
  }
  return it->second;
}

Session& AnnotationStudy::find_session(const std::string& session_id) {
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end())
    throw StudyError(404, "unknown_session", "no session '" + session_id + "'");
  return it->second;
}

const Session& AnnotationStudy::find_session(const std::string& session_id) const {
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end())
    throw StudyError(404, "unknown_session", "no session '" + session_id + "'");
  return it->second;
}

Session AnnotationStudy::session(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  return find_session(session_id);
}

std::optional<PairPayload> AnnotationStudy::next_pair(
    const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const Session& s = find_session(session_id);
  if (s.cursor >= s.item_order.size()) return std::nullopt;
  const BlindedPair& pair = pairs_.at(s.item_order[s.cursor]);
  return PairPayload{pair.item_id, pair.question_text, pair.slot1_text,
                     pair.slot2_text};
}

AnnotationRecord AnnotationStudy::submit_judgment(
    const std::string& session_id, const std::string& item_id,
    SlotVerdict choice, const std::string& justification) {
  if (choice == SlotVerdict::Abstain)
    throw StudyError(400, "invalid_choice", "choice must be 1 or 2");
  std::lock_guard lock(mutex_);
  Session& s = find_session(session_id);
  if (s.cursor >= s.item_order.size())
    throw StudyError(409, "session_complete", "every item has been judged");
  if (recorded_.count({item_id, s.annotator_id}))
    throw StudyError(409, "duplicate",
                     "item '" + item_id + "' was already judged in this session");
  if (s.item_order[s.cursor] != item_id)
    throw StudyError(409, "out_of_order",
                     "expected item '" + s.item_order[s.cursor] + "', got '" +
                         item_id + "'");

  AnnotationRecord rec{item_id, s.annotator_id, choice, justification,
                       utc_timestamp_now()};
  if (config_.annotations_path) append_annotation(rec, *config_.annotations_path);
  recorded_.emplace(std::make_pair(item_id, s.annotator_id), records_.size());
  records_.push_back(rec);
  ++s.cursor;
  return rec;
}

std::vector<AnnotationRecord> AnnotationStudy::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::vector<ExportRow> AnnotationStudy::export_records(
    const std::string& admin_key) const {
  if (config_.admin_key.empty() || admin_key != config_.admin_key)
    throw StudyError(401, "unauthorized", "a valid admin key is required");
  std::lock_guard lock(mutex_);
  std::vector<ExportRow> out;
  out.reserve(records_.size());
  for (const auto& r : records_)
    out.push_back({r, unblind(pairs_.at(r.item_id), r.slot_choice)});
  return out;
}

// ---------------------------------------------------------------------------
// HTTP

struct AnnotationServer::Impl {
  AnnotationStudy& study;
  httplib::Server server;

  explicit Impl(AnnotationStudy& s) : study(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  send_json(res, status, {{"code", code}, {"message", message}});
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const StudyError& e) {
    send_error(res, e.status(), e.code(), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body);
  if (!body.is_object())
    throw StudyError(400, "bad_request", "request body must be a JSON object");
  return body;
}

}  // namespace

AnnotationServer::AnnotationServer(
    AnnotationStudy& study, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(study)) {
  auto& srv = impl_->server;
  auto& st = impl_->study;

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers",
                            "Content-Type, X-Admin-Key"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
  });

  srv.Post("/sessions", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.contains("annotator_id") || !body["annotator_id"].is_string())
        throw StudyError(400, "bad_request", "annotator_id is required");
      send_json(res, 200,
                st.create_session(body["annotator_id"].get<std::string>()).to_json());
    });
  });

  srv.Get(R"(/sessions/([^/]+)/next)",
          [&st](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
              const auto payload = st.next_pair(req.matches[1]);
              if (!payload) {
                send_json(res, 200, {{"done", true}});
              } else {
                send_json(res, 200, payload->to_json());
              }
            });
          });

  srv.Post(R"(/sessions/([^/]+)/judgments)",
           [&st](const httplib::Request& req, httplib::Response& res) {
             guarded(res, [&] {
               const json body = parse_body(req);
               if (!body.contains("item_id") || !body["item_id"].is_string())
                 throw StudyError(400, "bad_request", "item_id is required");
               const json& choice = body.value("choice", json());
               SlotVerdict slot = SlotVerdict::Abstain;
               if (choice.is_number_integer()) {
                 const auto c = choice.get<long long>();
                 if (c == 1) slot = SlotVerdict::Slot1;
                 if (c == 2) slot = SlotVerdict::Slot2;
               }
               const std::string justification =
                   body.contains("justification") && body["justification"].is_string()
                       ? body["justification"].get<std::string>()
                       : std::string();
               const auto rec = st.submit_judgment(
                   req.matches[1], body["item_id"].get<std::string>(), slot,
                   justification);
               const auto session = st.session(req.matches[1]);
               send_json(res, 201,
                         {{"status", "recorded"},
                          {"item_id", rec.item_id},
                          {"submitted_at", rec.submitted_at},
                          {"cursor", session.cursor},
                          {"total", session.item_order.size()}});
             });
           });

  srv.Get("/admin/export", [&st](const httplib::Request& req,
                                 httplib::Response& res) {
    guarded(res, [&] {
      const auto rows = st.export_records(req.get_header_value("X-Admin-Key"));
      json records = json::array();
      for (const auto& row : rows) {
        records.push_back(
            {{"item_id", row.record.item_id},
             {"annotator_id", row.record.annotator_id},
             {"slot_choice", row.record.slot_choice == SlotVerdict::Slot1 ? 1 : 2},
             {"justification", row.record.justification},
             {"submitted_at", row.record.submitted_at},
             {"verdict", std::string(to_string(row.verdict))}});
      }
      send_json(res, 200, {{"records", records}});
    });
  });

  if (static_dir) srv.set_mount_point("/", static_dir->string());
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host)
                              : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0)
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

bool AnnotationServer::listen(const std::string& host, int port) {
  return impl_->server.listen(host, port);
}

void AnnotationServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace emrank
