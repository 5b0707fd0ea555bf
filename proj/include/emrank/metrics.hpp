#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "emrank/backend.hpp"
#include "emrank/extraction.hpp"
#include "emrank/model.hpp"
#include "emrank/prompting.hpp"

namespace emrank {

enum class MetricKind { ZeroShot, OneShot, FewShot, Ensemble, PplRank };

std::string_view to_string(MetricKind kind) noexcept;
std::optional<MetricKind> parse_metric_kind(std::string_view s) noexcept;

/// Strict majority over the non-abstaining votes; ties and all-abstain give
/// Abstain. Throws ValidationError on an empty sequence.
SlotVerdict majority(std::span<const SlotVerdict> votes);

struct JudgeSettings {
  std::string model_name;
  std::size_t max_output_tokens = 512;
  double temperature = 0.0;
};

/// Verdict of one judge metric on one pair, with every vote and raw output.
/// votes[i] and raw_outputs[i] belong to the same completion; a failed
/// completion contributes an Abstain vote, an empty raw output and a
/// message in errors.
struct JudgeOutcome {
  SlotVerdict verdict = SlotVerdict::Abstain;
  std::vector<SlotVerdict> votes;
  std::vector<std::string> raw_outputs;
  std::vector<std::string> errors;
};

JudgeOutcome judge_zero_shot(Backend& backend, const BlindedPair& pair,
                             const JudgeTemplate& tmpl,
                             const VerdictExtractor& extractor,
                             const JudgeSettings& settings = {});

/// One completion per bank example, majority over the three (or however
/// many) verdicts.
JudgeOutcome judge_one_shot(Backend& backend, const IclBank& bank,
                            const BlindedPair& pair, const JudgeTemplate& tmpl,
                            const VerdictExtractor& extractor,
                            const JudgeSettings& settings = {});

/// One completion per ordering of the bank, majority over the verdicts.
JudgeOutcome judge_few_shot(Backend& backend, const IclBank& bank,
                            const BlindedPair& pair, const JudgeTemplate& tmpl,
                            const VerdictExtractor& extractor,
                            const JudgeSettings& settings = {});

SlotVerdict judge_ensemble(SlotVerdict zero, SlotVerdict one, SlotVerdict few);

/// exp(-(1/N) * sum(logprobs)). Returns +infinity when any token has
/// probability zero. Throws ValidationError on an empty sequence.
double perplexity(std::span<const double> logprobs);

/// Perplexity of the answer tokens conditioned on the question.
double ppl(Backend& backend, std::string_view question_text,
           std::string_view answer_text);

struct PplRanking {
  SlotVerdict verdict = SlotVerdict::Abstain;
  double slot1_ppl = 0.0;
  double slot2_ppl = 0.0;
};

/// Lower perplexity wins; exact ties (including two infinities) abstain.
PplRanking ppl_rank(Backend& backend, const BlindedPair& pair);

struct ItemResult {
  SlotVerdict slot_verdict = SlotVerdict::Abstain;
  ProvenanceVerdict provenance_verdict = ProvenanceVerdict::Undecided;
  Assignment assignment = Assignment::Slot1IsChatbot;
  std::vector<SlotVerdict> votes;
  std::vector<std::string> raw_outputs;
  /// Slot 1 and slot 2 perplexities for PplRank; infinity is a flagged
  /// zero-probability answer.
  std::optional<std::pair<double, double>> ppl;
  std::vector<std::string> errors;
  bool evaluated = true;

  bool operator==(const ItemResult&) const = default;
};

/// Win counts over a set of items. Rates use decided items only and are
/// empty when nothing was decided. Unevaluated items count as undecided and
/// are additionally reported in `failed`.
struct WinSummary {
  std::size_t chatbot_wins = 0;
  std::size_t physician_wins = 0;
  std::size_t undecided = 0;
  std::size_t failed = 0;
  std::optional<double> chatbot_rate;
  std::optional<double> physician_rate;

  std::size_t total() const noexcept {
    return chatbot_wins + physician_wins + undecided;
  }
  void add(ProvenanceVerdict v);
  void finalize();

  bool operator==(const WinSummary&) const = default;
};

struct RunResult {
  MetricKind metric = MetricKind::ZeroShot;
  std::uint64_t seed = 0;
  std::map<std::string, ItemResult> per_item;
  WinSummary summary;

  bool operator==(const RunResult&) const = default;
};

WinSummary summarize(const std::map<std::string, ItemResult>& per_item);

/// Win summary of each individual vote position (e.g. each one-shot example
/// or few-shot ordering), computed by unblinding votes[i] of every item.
/// Items with fewer votes contribute Undecided.
std::vector<WinSummary> vote_breakdown(const RunResult& run);

struct EvalConfig {
  BackendPtr judge;
  /// Token-scoring backend for PplRank; the judge is used when null.
  BackendPtr scorer;
  JudgeTemplate judge_template = JudgeTemplate::defaults();
  IclBank bank = IclBank::defaults();
  std::vector<ExtractionPattern> patterns = default_patterns();
  JudgeSettings settings;
  std::size_t parallelism = 1;
};

class RunFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Blinds every item with the run seed, applies the metric, unblinds and
/// aggregates. Per-item failures are recorded and the run continues; throws
/// RunFailed only when no item could be evaluated. The result does not
/// depend on parallelism.
RunResult evaluate_dataset(MetricKind metric, std::span<const EvalItem> items,
                           std::uint64_t seed, const EvalConfig& config);

/// Ensemble run composed from stored zero-, one- and few-shot runs without
/// new backend calls. All three must share the seed and item set.
RunResult ensemble_from_runs(const RunResult& zero, const RunResult& one,
                             const RunResult& few);

}  // namespace emrank
