#pragma once

#include <cstddef>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emrank/model.hpp"

namespace emrank {

/// A verdict-extraction regex. `group` names the capture group that holds
/// the slot digit; group 0 means the digit is the one following "response"
/// inside the whole match.
struct ExtractionPattern {
  std::string pattern;
  std::size_t group = 0;

  bool operator==(const ExtractionPattern&) const = default;
};

/// The two zero-shot post-processing patterns, verbatim.
std::vector<ExtractionPattern> default_patterns();

enum class MatchedPattern { Pattern1, Pattern2, None, Conflict };

std::string_view to_string(MatchedPattern m) noexcept;

struct ExtractionOutcome {
  SlotVerdict verdict = SlotVerdict::Abstain;
  MatchedPattern matched_pattern = MatchedPattern::None;
  /// Byte offsets [start, end) of the leftmost match of the deciding pattern.
  std::optional<std::pair<std::size_t, std::size_t>> matched_span;
  /// Index into the extractor's pattern list of the deciding pattern; for
  /// the defaults this agrees with matched_pattern.
  std::optional<std::size_t> pattern_index;

  bool operator==(const ExtractionOutcome&) const = default;
};

/// Turns free-form judge output into a slot verdict. Matching is
/// case-insensitive. Every match of every pattern is collected; if the
/// matches name both slots the outcome is a Conflict abstention, otherwise
/// the first pattern (in list order) that matched decides.
class VerdictExtractor {
 public:
  VerdictExtractor();
  explicit VerdictExtractor(std::vector<ExtractionPattern> patterns);

  ExtractionOutcome extract(std::string_view judge_text) const;

  const std::vector<ExtractionPattern>& patterns() const { return specs_; }

 private:
  std::vector<ExtractionPattern> specs_;
  std::vector<std::regex> compiled_;
};

/// extract() with the default patterns.
ExtractionOutcome extract(std::string_view judge_text);

}  // namespace emrank
