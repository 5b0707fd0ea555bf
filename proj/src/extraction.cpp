#include "emrank/extraction.hpp"

#include "emrank/error.hpp"

namespace emrank {

namespace {

constexpr auto kFlags = std::regex::ECMAScript | std::regex::icase;

const std::regex& slot_digit_regex() {
  static const std::regex re(R"(response\s*([12]))", kFlags);
  return re;
}

std::optional<SlotVerdict> digit_to_slot(std::string_view digit) {
  if (digit == "1") return SlotVerdict::Slot1;
  if (digit == "2") return SlotVerdict::Slot2;
  return std::nullopt;
}

std::optional<SlotVerdict> slot_in(const std::string& captured) {
  if (auto direct = digit_to_slot(captured)) return direct;
  std::smatch m;
  if (std::regex_search(captured, m, slot_digit_regex()))
    return digit_to_slot(m.str(1));
  return std::nullopt;
}

}  // namespace

std::vector<ExtractionPattern> default_patterns() {
  return {
      {R"(response [12] \w+ (?:slightly )?more empath)", 0},
      {R"(\w+ that shows more empathy \w+ response [12])", 0},
  };
}

std::string_view to_string(MatchedPattern m) noexcept {
  switch (m) {
    case MatchedPattern::Pattern1:
      return "pattern1";
    case MatchedPattern::Pattern2:
      return "pattern2";
    case MatchedPattern::None:
      return "none";
    case MatchedPattern::Conflict:
      break;
  }
  return "conflict";
}

VerdictExtractor::VerdictExtractor() : VerdictExtractor(default_patterns()) {}

VerdictExtractor::VerdictExtractor(std::vector<ExtractionPattern> patterns)
    : specs_(std::move(patterns)) {
  if (specs_.empty()) throw ValidationError("no extraction patterns given");
  compiled_.reserve(specs_.size());
  for (const auto& spec : specs_) {
    try {
      compiled_.emplace_back(spec.pattern, kFlags);
    } catch (const std::regex_error& e) {
      throw ValidationError("bad extraction pattern '" + spec.pattern +
                            "': " + e.what());
    }
    if (spec.group > compiled_.back().mark_count())
      throw ValidationError("pattern '" + spec.pattern + "' has no group " +
                            std::to_string(spec.group));
  }
}

ExtractionOutcome VerdictExtractor::extract(std::string_view judge_text) const {
  const std::string text(judge_text);
  bool seen[2] = {false, false};

  struct FirstHit {
    std::size_t pattern;
    SlotVerdict slot;
    std::size_t start;
    std::size_t end;
  };
  std::optional<FirstHit> decider;

  for (std::size_t p = 0; p < compiled_.size(); ++p) {
    try {
      for (auto it = std::sregex_iterator(text.begin(), text.end(), compiled_[p]);
           it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        const auto slot = slot_in(m.str(specs_[p].group));
        if (!slot) continue;
        seen[*slot == SlotVerdict::Slot1 ? 0 : 1] = true;
        if (!decider) {
          const auto start = static_cast<std::size_t>(m.position(0));
          decider = FirstHit{p, *slot, start,
                             start + static_cast<std::size_t>(m.length(0))};
        }
      }
    } catch (const std::regex_error&) {
      // Pathological input exhausted the matcher; treat as no match.
    }
  }

  ExtractionOutcome out;
  if (!decider) return out;
  if (seen[0] && seen[1]) {
    out.matched_pattern = MatchedPattern::Conflict;
    return out;
  }
  out.verdict = decider->slot;
  out.matched_pattern =
      decider->pattern == 0 ? MatchedPattern::Pattern1 : MatchedPattern::Pattern2;
  out.matched_span = std::make_pair(decider->start, decider->end);
  out.pattern_index = decider->pattern;
  return out;
}

ExtractionOutcome extract(std::string_view judge_text) {
  static const VerdictExtractor extractor;
  return extractor.extract(judge_text);
}

}  // namespace emrank
