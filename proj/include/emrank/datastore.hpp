#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "emrank/metrics.hpp"
#include "emrank/model.hpp"

namespace emrank {

/// One line of a dataset file. The chatbot response is absent until the
/// generate step fills it.
struct DatasetRecord {
  std::string id;
  std::string question;
  std::string physician_response;
  std::optional<std::string> chatbot_response;

  bool operator==(const DatasetRecord&) const = default;
};

struct DatasetStats {
  std::size_t questions = 0;
  std::size_t with_chatbot_response = 0;
  double avg_question_words = 0.0;
  double avg_physician_words = 0.0;
  std::optional<double> avg_chatbot_words;
};

struct Dataset {
  std::vector<DatasetRecord> records;

  DatasetStats stats() const;
  bool complete() const;
  /// Throws ValidationError if any record lacks a chatbot response.
  std::vector<EvalItem> eval_items() const;
};

/// JSON Lines, one {"id","question","physician_response","chatbot_response"?}
/// object per line. Blank lines are skipped. Errors carry the line number.
Dataset parse_dataset(std::istream& in, const std::string& name);
Dataset load_dataset(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

nlohmann::json to_json(const RunResult& run);
RunResult run_from_json(const nlohmann::json& j);

/// Creates a new archive directory under `out_root` holding config.json,
/// result.json and raw/<item_id>.json. Never reuses an existing directory.
/// Returns the archive path.
std::filesystem::path save_run(const RunResult& run, const nlohmann::json& config,
                               const std::filesystem::path& out_root);

/// Accepts an archive directory or a result.json path.
RunResult load_run(const std::filesystem::path& path);
nlohmann::json load_run_config(const std::filesystem::path& archive_dir);

/// Canonical byte form of result.json.
std::string serialize_result(const RunResult& run);

/// CSV with header item_id,annotator_id,slot_choice,justification,submitted_at
/// where slot_choice is 1 or 2.
std::vector<AnnotationRecord> parse_annotations_csv(std::istream& in,
                                                    const std::string& name);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);
void save_annotations(std::span<const AnnotationRecord> records,
                      const std::filesystem::path& path);
/// Appends one row, writing the header first if the file is new or empty.
void append_annotation(const AnnotationRecord& record,
                       const std::filesystem::path& path);

inline constexpr std::string_view kAnnotationCsvHeader =
    "item_id,annotator_id,slot_choice,justification,submitted_at";

std::string csv_escape(std::string_view field);

}  // namespace emrank
