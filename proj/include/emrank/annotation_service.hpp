#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "emrank/model.hpp"

namespace emrank {

struct StudyConfig {
  /// Drives both the study-wide slot order and each annotator's item order.
  std::uint64_t seed = 0;
  std::vector<std::string> annotators;
  /// Required by the export route; export is disabled when empty.
  std::string admin_key;
  /// Only the first `item_limit` dataset items are part of the study.
  std::optional<std::size_t> item_limit;
  /// Append-only CSV; existing rows are replayed on startup.
  std::optional<std::filesystem::path> annotations_path;
};

struct Session {
  std::string session_id;
  std::string annotator_id;
  std::vector<std::string> item_order;
  std::size_t cursor = 0;
  std::string created_at;

  nlohmann::json to_json() const;  // no item order: {session_id, annotator_id, cursor, total, created_at}
};

/// Exactly what an annotator client sees for one item.
struct PairPayload {
  std::string item_id;
  std::string question;
  std::string response_1;
  std::string response_2;

  nlohmann::json to_json() const;
};

struct ExportRow {
  AnnotationRecord record;
  ProvenanceVerdict verdict = ProvenanceVerdict::Undecided;
};

/// Failure with an HTTP-style status and a short machine-readable code.
class StudyError : public std::runtime_error {
 public:
  StudyError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}

  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

/// Blinded human-evaluation study. Every annotator walks the same blinded
/// pairs in their own seeded order; judgments are append-only. All members
/// are thread-safe.
class AnnotationStudy {
 public:
  AnnotationStudy(std::vector<EvalItem> items, StudyConfig config);

  /// Idempotent: a second call for the same annotator resumes.
  Session create_session(const std::string& annotator_id);
  Session session(const std::string& session_id) const;

  /// Current item of the session, or nullopt once every item is judged.
  std::optional<PairPayload> next_pair(const std::string& session_id) const;

  AnnotationRecord submit_judgment(const std::string& session_id,
                                   const std::string& item_id,
                                   SlotVerdict choice,
                                   const std::string& justification);

  std::vector<AnnotationRecord> records() const;
  std::vector<ExportRow> export_records(const std::string& admin_key) const;

  const std::map<std::string, BlindedPair>& pairs() const noexcept {
    return pairs_;
  }
  std::size_t item_count() const noexcept { return item_ids_.size(); }

  static std::string session_id_for(const std::string& annotator_id,
                                    std::uint64_t seed);
  /// Item order of an annotator: seeded permutation of the study items.
  std::vector<std::string> item_order_for(const std::string& annotator_id) const;

 private:
  Session& find_session(const std::string& session_id);
  const Session& find_session(const std::string& session_id) const;
  void restore(const AnnotationRecord& record);

  StudyConfig config_;
  std::vector<std::string> item_ids_;
  std::map<std::string, BlindedPair> pairs_;
  std::map<std::string, Session> sessions_;  // by session id
  std::vector<AnnotationRecord> records_;
  std::map<std::pair<std::string, std::string>, std::size_t> recorded_;
  mutable std::mutex mutex_;
};

/// HTTP+JSON front end:
///   POST /sessions                  {annotator_id}
///   GET  /sessions/{id}/next
///   POST /sessions/{id}/judgments   {item_id, choice: 1|2, justification}
///   GET  /admin/export              (header X-Admin-Key)
/// Errors are {code, message}.
class AnnotationServer {
 public:
  explicit AnnotationServer(AnnotationStudy& study,
                            std::optional<std::filesystem::path> static_dir = {});
  ~AnnotationServer();

  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace emrank
