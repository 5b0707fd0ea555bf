#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "emrank/metrics.hpp"
#include "emrank/model.hpp"

namespace emrank {

/// Per-item category counts for Fleiss' kappa. Every row sums to the same
/// rater count.
struct RatingTable {
  std::vector<std::vector<std::size_t>> counts;  // [item][category]

  std::size_t rater_count() const;
  std::size_t category_count() const;
  /// Throws ValidationError on ragged rows, unequal row sums, fewer than two
  /// categories or fewer than two raters.
  void validate() const;
};

struct KappaResult {
  /// Empty when chance agreement is 1 and kappa is undefined.
  std::optional<double> kappa;
  double observed_agreement = 0.0;  // mean P_i
  double chance_agreement = 0.0;    // sum of squared category shares
  std::size_t items = 0;
  std::size_t raters = 0;

  bool undefined() const noexcept { return !kappa.has_value(); }
};

KappaResult fleiss_kappa(const RatingTable& table);

struct CorrelationResult {
  /// Empty when either side has zero variance or fewer than two pairs.
  std::optional<double> r;
  /// Fisher z interval; empty when n <= 3 or r is undefined.
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::size_t n = 0;
  double confidence = 0.95;

  bool undefined() const noexcept { return !r.has_value(); }
};

/// Sample Pearson correlation with a Fisher-z confidence interval.
/// Throws ValidationError when lengths differ or n < 2.
CorrelationResult pearson(std::span<const double> x, std::span<const double> y,
                          double confidence = 0.95);

/// Two-sided standard-normal critical value for the given confidence.
double normal_critical_value(double confidence);

/// Unblinds every annotation against its item's pair and takes a per-item
/// majority; ties are Undecided. Throws ValidationError for annotations on
/// unknown items.
std::map<std::string, ProvenanceVerdict> consensus(
    std::span<const AnnotationRecord> annotations,
    const std::map<std::string, BlindedPair>& pairs);

/// Two-category rating table (chatbot, physician) over items that carry the
/// most common annotation count. Items with a different number of
/// annotations are left out.
RatingTable rating_table(std::span<const AnnotationRecord> annotations,
                         const std::map<std::string, BlindedPair>& pairs);

/// Pearson r of chatbot=1 / physician=0 encodings over items decided on
/// both sides.
CorrelationResult metric_human_agreement(
    const RunResult& run, const std::map<std::string, ProvenanceVerdict>& human);

struct WinRateColumn {
  std::string label;
  WinSummary summary;
};

/// Table of chatbot / physician / undecided percentages per metric, with an
/// optional human-evaluation column.
struct WinRateReport {
  std::vector<WinRateColumn> columns;

  nlohmann::json to_json() const;
  /// Aligned plain-text table; rows ChatGPT, Physician, Undecided.
  std::string to_text() const;
};

WinRateReport win_rate_report(
    std::span<const RunResult> runs,
    const std::map<std::string, ProvenanceVerdict>& human);

}  // namespace emrank
