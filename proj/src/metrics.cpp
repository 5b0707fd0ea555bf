#include "emrank/metrics.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "emrank/error.hpp"

namespace emrank {

std::string_view to_string(MetricKind kind) noexcept {
  switch (kind) {
    case MetricKind::ZeroShot:
      return "zero-shot";
    case MetricKind::OneShot:
      return "one-shot";
    case MetricKind::FewShot:
      return "few-shot";
    case MetricKind::Ensemble:
      return "ensemble";
    case MetricKind::PplRank:
      break;
  }
  return "ppl";
}

std::optional<MetricKind> parse_metric_kind(std::string_view s) noexcept {
  for (auto k : {MetricKind::ZeroShot, MetricKind::OneShot, MetricKind::FewShot,
                 MetricKind::Ensemble, MetricKind::PplRank}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

SlotVerdict majority(std::span<const SlotVerdict> votes) {
  if (votes.empty()) throw ValidationError("majority of an empty vote list");
  std::size_t ones = 0;
  std::size_t twos = 0;
  for (auto v : votes) {
    if (v == SlotVerdict::Slot1) ++ones;
    if (v == SlotVerdict::Slot2) ++twos;
  }
  if (ones > twos) return SlotVerdict::Slot1;
  if (twos > ones) return SlotVerdict::Slot2;
  return SlotVerdict::Abstain;
}

namespace {

ChatRequest judge_request(std::string prompt, const JudgeSettings& settings) {
  ChatRequest req;
  req.user_text = std::move(prompt);
  req.max_output_tokens = settings.max_output_tokens;
  req.temperature = settings.temperature;
  req.model_name = settings.model_name;
  return req;
}

/// Runs each prompt, extracting a vote per completion. Failed completions
/// vote Abstain; if every completion fails the last error is rethrown.
JudgeOutcome vote(Backend& backend, const std::vector<std::string>& prompts,
                  const VerdictExtractor& extractor,
                  const JudgeSettings& settings) {
  JudgeOutcome out;
  std::exception_ptr last_error;
  for (const auto& prompt : prompts) {
    try {
      const auto response = backend.complete(judge_request(prompt, settings));
      out.votes.push_back(extractor.extract(response.text).verdict);
      out.raw_outputs.push_back(response.text);
    } catch (const BackendError& e) {
      last_error = std::current_exception();
      out.votes.push_back(SlotVerdict::Abstain);
      out.raw_outputs.emplace_back();
      out.errors.emplace_back(e.what());
    }
  }
  if (out.errors.size() == prompts.size() && last_error)
    std::rethrow_exception(last_error);
  out.verdict = majority(out.votes);
  return out;
}

}  // namespace

JudgeOutcome judge_zero_shot(Backend& backend, const BlindedPair& pair,
                             const JudgeTemplate& tmpl,
                             const VerdictExtractor& extractor,
                             const JudgeSettings& settings) {
  const auto response =
      backend.complete(judge_request(render_zero_shot(pair, tmpl), settings));
  JudgeOutcome out;
  out.verdict = extractor.extract(response.text).verdict;
  out.votes = {out.verdict};
  out.raw_outputs = {response.text};
  return out;
}

JudgeOutcome judge_one_shot(Backend& backend, const IclBank& bank,
                            const BlindedPair& pair, const JudgeTemplate& tmpl,
                            const VerdictExtractor& extractor,
                            const JudgeSettings& settings) {
  if (bank.examples.empty())
    throw ValidationError("one-shot judging needs at least one example");
  std::vector<std::string> prompts;
  for (const auto& example : bank.examples)
    prompts.push_back(render_one_shot(example, pair, tmpl));
  return vote(backend, prompts, extractor, settings);
}

JudgeOutcome judge_few_shot(Backend& backend, const IclBank& bank,
                            const BlindedPair& pair, const JudgeTemplate& tmpl,
                            const VerdictExtractor& extractor,
                            const JudgeSettings& settings) {
  if (bank.orderings.empty())
    throw ValidationError("few-shot judging needs at least one ordering");
  std::vector<std::string> prompts;
  for (std::size_t i = 0; i < bank.orderings.size(); ++i)
    prompts.push_back(render_few_shot(bank, i, pair, tmpl));
  return vote(backend, prompts, extractor, settings);
}

SlotVerdict judge_ensemble(SlotVerdict zero, SlotVerdict one, SlotVerdict few) {
  const SlotVerdict votes[] = {zero, one, few};
  return majority(votes);
}

double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty())
    throw ValidationError("perplexity of an empty token sequence");
  double sum = 0.0;
  for (double lp : logprobs) {
    if (lp > 0.0 || std::isnan(lp))
      throw ValidationError("log-probabilities must be <= 0");
    if (std::isinf(lp)) return std::numeric_limits<double>::infinity();
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

double ppl(Backend& backend, std::string_view question_text,
           std::string_view answer_text) {
  const auto tokens = backend.score_continuation(
      render_scoring_context(question_text), answer_text);
  std::vector<double> logprobs;
  logprobs.reserve(tokens.size());
  for (const auto& t : tokens) logprobs.push_back(t.logprob);
  return perplexity(logprobs);
}

PplRanking ppl_rank(Backend& backend, const BlindedPair& pair) {
  PplRanking out;
  out.slot1_ppl = ppl(backend, pair.question_text, pair.slot1_text);
  out.slot2_ppl = ppl(backend, pair.question_text, pair.slot2_text);
  if (out.slot1_ppl < out.slot2_ppl) out.verdict = SlotVerdict::Slot1;
  else if (out.slot2_ppl < out.slot1_ppl) out.verdict = SlotVerdict::Slot2;
  return out;
}

void WinSummary::add(ProvenanceVerdict v) {
  switch (v) {
    case ProvenanceVerdict::ChatbotMoreEmpathetic:
      ++chatbot_wins;
      break;
    case ProvenanceVerdict::PhysicianMoreEmpathetic:
      ++physician_wins;
      break;
    case ProvenanceVerdict::Undecided:
      ++undecided;
      break;
  }
}

void WinSummary::finalize() {
  const std::size_t decided = chatbot_wins + physician_wins;
  if (decided == 0) {
    chatbot_rate.reset();
    physician_rate.reset();
    return;
  }
  chatbot_rate = static_cast<double>(chatbot_wins) / static_cast<double>(decided);
  physician_rate =
      static_cast<double>(physician_wins) / static_cast<double>(decided);
}

WinSummary summarize(const std::map<std::string, ItemResult>& per_item) {
  WinSummary s;
  for (const auto& [id, item] : per_item) {
    s.add(item.provenance_verdict);
    if (!item.evaluated) ++s.failed;
  }
  s.finalize();
  return s;
}

std::vector<WinSummary> vote_breakdown(const RunResult& run) {
  std::size_t positions = 0;
  for (const auto& [id, item] : run.per_item)
    positions = std::max(positions, item.votes.size());
  std::vector<WinSummary> out(positions);
  for (const auto& [id, item] : run.per_item) {
    BlindedPair orientation;
    orientation.assignment = item.assignment;
    for (std::size_t i = 0; i < positions; ++i) {
      const SlotVerdict v =
          i < item.votes.size() ? item.votes[i] : SlotVerdict::Abstain;
      out[i].add(unblind(orientation, v));
      if (!item.evaluated) ++out[i].failed;
    }
  }
  for (auto& s : out) s.finalize();
  return out;
}

namespace {

struct Evaluator {
  MetricKind metric;
  std::uint64_t seed;
  const EvalConfig& config;
  VerdictExtractor extractor;

  Backend& judge() const {
    if (!config.judge) throw ValidationError("no judge backend configured");
    return *config.judge;
  }

  Backend& scorer() const {
    if (config.scorer) return *config.scorer;
    return judge();
  }

  JudgeOutcome constituent(MetricKind kind, const BlindedPair& pair) const {
    switch (kind) {
      case MetricKind::ZeroShot:
        return judge_zero_shot(judge(), pair, config.judge_template, extractor,
                               config.settings);
      case MetricKind::OneShot:
        return judge_one_shot(judge(), config.bank, pair, config.judge_template,
                              extractor, config.settings);
      case MetricKind::FewShot:
        return judge_few_shot(judge(), config.bank, pair, config.judge_template,
                              extractor, config.settings);
      default:
        break;
    }
    throw ValidationError("not a constituent judge metric");
  }

  ItemResult run(const EvalItem& item) const {
    const BlindedPair pair = blind(item, seed);
    ItemResult r;
    r.assignment = pair.assignment;
    try {
      switch (metric) {
        case MetricKind::ZeroShot:
        case MetricKind::OneShot:
        case MetricKind::FewShot: {
          auto o = constituent(metric, pair);
          r.slot_verdict = o.verdict;
          r.votes = std::move(o.votes);
          r.raw_outputs = std::move(o.raw_outputs);
          r.errors = std::move(o.errors);
          break;
        }
        case MetricKind::Ensemble: {
          std::size_t failures = 0;
          for (auto kind :
               {MetricKind::ZeroShot, MetricKind::OneShot, MetricKind::FewShot}) {
            try {
              auto o = constituent(kind, pair);
              r.votes.push_back(o.verdict);
              r.raw_outputs.insert(r.raw_outputs.end(), o.raw_outputs.begin(),
                                   o.raw_outputs.end());
              r.errors.insert(r.errors.end(), o.errors.begin(), o.errors.end());
            } catch (const BackendError& e) {
              ++failures;
              r.votes.push_back(SlotVerdict::Abstain);
              r.errors.emplace_back(e.what());
            }
          }
          if (failures == 3) {
            r.evaluated = false;
            r.votes.clear();
          } else {
            r.slot_verdict = judge_ensemble(r.votes[0], r.votes[1], r.votes[2]);
          }
          break;
        }
        case MetricKind::PplRank: {
          const auto ranking = ppl_rank(scorer(), pair);
          r.slot_verdict = ranking.verdict;
          r.votes = {ranking.verdict};
          r.ppl = std::make_pair(ranking.slot1_ppl, ranking.slot2_ppl);
          break;
        }
      }
    } catch (const BackendError& e) {
      r = ItemResult{};
      r.assignment = pair.assignment;
      r.evaluated = false;
      r.errors.emplace_back(e.what());
    }
    r.provenance_verdict = unblind(pair, r.slot_verdict);
    return r;
  }
};

}  // namespace

RunResult evaluate_dataset(MetricKind metric, std::span<const EvalItem> items,
                           std::uint64_t seed, const EvalConfig& config) {
  if (items.empty()) throw ValidationError("cannot evaluate an empty dataset");
  std::set<std::string> ids;
  for (const auto& item : items) {
    item.validate();
    if (!ids.insert(item.id()).second)
      throw ValidationError("duplicate item id '" + item.id() + "'");
  }

  const Evaluator evaluator{metric, seed, config,
                            VerdictExtractor(config.patterns)};
  std::vector<ItemResult> results(items.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      try {
        results[i] = evaluator.run(items[i]);
      } catch (...) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        next = items.size();
        return;
      }
    }
  };

  const std::size_t threads =
      std::clamp<std::size_t>(config.parallelism, 1, items.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);

  RunResult run;
  run.metric = metric;
  run.seed = seed;
  for (std::size_t i = 0; i < items.size(); ++i)
    run.per_item.emplace(items[i].id(), std::move(results[i]));
  run.summary = summarize(run.per_item);
  if (run.summary.failed == items.size()) {
    throw RunFailed("every item failed; first error: " +
                    (run.per_item.begin()->second.errors.empty()
                         ? std::string("unknown")
                         : run.per_item.begin()->second.errors.front()));
  }
  return run;
}

RunResult ensemble_from_runs(const RunResult& zero, const RunResult& one,
                             const RunResult& few) {
  if (zero.metric != MetricKind::ZeroShot || one.metric != MetricKind::OneShot ||
      few.metric != MetricKind::FewShot)
    throw ValidationError("ensemble needs zero-, one- and few-shot runs");
  if (zero.seed != one.seed || zero.seed != few.seed)
    throw ValidationError("ensemble constituents were blinded with different seeds");
  if (zero.per_item.size() != one.per_item.size() ||
      zero.per_item.size() != few.per_item.size())
    throw ValidationError("ensemble constituents cover different items");

  RunResult run;
  run.metric = MetricKind::Ensemble;
  run.seed = zero.seed;
  for (const auto& [id, z] : zero.per_item) {
    const auto o = one.per_item.find(id);
    const auto f = few.per_item.find(id);
    if (o == one.per_item.end() || f == few.per_item.end())
      throw ValidationError("item '" + id + "' missing from a constituent run");
    ItemResult r;
    r.assignment = z.assignment;
    r.votes = {z.slot_verdict, o->second.slot_verdict, f->second.slot_verdict};
    for (const ItemResult* part : {&z, &o->second, &f->second}) {
      r.raw_outputs.insert(r.raw_outputs.end(), part->raw_outputs.begin(),
                           part->raw_outputs.end());
      r.errors.insert(r.errors.end(), part->errors.begin(), part->errors.end());
    }
    r.evaluated = z.evaluated || o->second.evaluated || f->second.evaluated;
    if (r.evaluated) {
      r.slot_verdict = judge_ensemble(r.votes[0], r.votes[1], r.votes[2]);
    } else {
      r.votes.clear();
    }
    BlindedPair orientation;
    orientation.assignment = r.assignment;
    r.provenance_verdict = unblind(orientation, r.slot_verdict);
    run.per_item.emplace(id, std::move(r));
  }
  run.summary = summarize(run.per_item);
  return run;
}

}  // namespace emrank
