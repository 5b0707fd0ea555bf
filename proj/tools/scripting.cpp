#include "scripting.hpp"

#include <fstream>

#include "emrank/error.hpp"

namespace emrank::scripting {

using nlohmann::json;

Vote parse_vote(std::string_view s) {
  if (s == "chatbot") return Vote::Chatbot;
  if (s == "physician") return Vote::Physician;
  if (s == "abstain") return Vote::Abstain;
  if (s == "fail") return Vote::Fail;
  throw ValidationError("unknown plan vote '" + std::string(s) + "'");
}

Plan Plan::from_json(const json& j) {
  Plan plan;
  plan.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& [id, item] : j.at("items").items()) {
    ItemPlan p;
    p.zero = parse_vote(item.value("zero-shot", "chatbot"));
    for (const auto& v : item.value("one-shot", json::array()))
      p.one.push_back(parse_vote(v.get<std::string>()));
    for (const auto& v : item.value("few-shot", json::array()))
      p.few.push_back(parse_vote(v.get<std::string>()));
    p.ppl = parse_vote(item.value("ppl", "chatbot"));
    p.generation = item.value("generation", "");
    plan.items.emplace(id, std::move(p));
  }
  return plan;
}

Plan Plan::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open plan " + path.string());
  return from_json(json::parse(in));
}

namespace {

std::optional<FixtureEntry> judge_reply(Vote vote, const BlindedPair& pair,
                                        std::size_t variant) {
  if (vote == Vote::Fail) return std::nullopt;
  if (vote == Vote::Abstain)
    return FixtureEntry::reply("Please let me know how I can assist you.");
  const SlotVerdict slot = pair.slot_of(
      vote == Vote::Chatbot ? Provenance::Chatbot : Provenance::Physician);
  const char k = slot == SlotVerdict::Slot1 ? '1' : '2';
  switch (variant % 3) {
    case 0:
      return FixtureEntry::reply(std::string("Response ") + k +
                                 " is more empathetic because it acknowledges "
                                 "the concern before giving advice.");
    case 1:
      return FixtureEntry::reply(
          std::string("Empathy means recognizing the feelings behind a "
                      "message. Reading both replies, the one that shows more "
                      "empathy is response ") +
          k + ".");
    default:
      return FixtureEntry::reply(std::string("Response ") + k +
                                 " is slightly more empathetic, as it offers "
                                 "reassurance.");
  }
}

void add_judge(FixtureSet& set, const std::string& prompt,
               std::optional<FixtureEntry> reply,
               const JudgeSettings& settings) {
  if (!reply) return;
  ChatRequest req;
  req.user_text = prompt;
  req.max_output_tokens = settings.max_output_tokens;
  set.add(prompt_key(req), std::move(*reply));
}

std::vector<double> flat_logprobs(std::string_view text, double value) {
  return std::vector<double>(whitespace_tokens(text).size(), value);
}

}  // namespace

FixtureSet script_fixtures(std::span<const EvalItem> items, const Plan& plan,
                           const TemplateSet& templates,
                           const JudgeSettings& settings) {
  FixtureSet set;
  std::size_t variant = 0;
  for (const auto& item : items) {
    const auto it = plan.items.find(item.id());
    if (it == plan.items.end()) continue;
    const ItemPlan& p = it->second;
    const BlindedPair pair = blind(item, plan.seed);

    add_judge(set, render_zero_shot(pair, templates.judge),
              judge_reply(p.zero, pair, variant++), settings);
    if (p.one.size() > templates.bank.examples.size())
      throw ValidationError("plan has more one-shot votes than examples");
    for (std::size_t i = 0; i < p.one.size(); ++i)
      add_judge(set,
                render_one_shot(templates.bank.examples[i], pair, templates.judge),
                judge_reply(p.one[i], pair, 0), settings);
    if (p.few.size() > templates.bank.orderings.size())
      throw ValidationError("plan has more few-shot votes than orderings");
    for (std::size_t i = 0; i < p.few.size(); ++i)
      add_judge(set, render_few_shot(templates.bank, i, pair, templates.judge),
                judge_reply(p.few[i], pair, 0), settings);

    if (p.ppl != Vote::Fail) {
      const std::string context = render_scoring_context(item.question.text);
      const double chatbot_lp = p.ppl == Vote::Chatbot     ? -0.1
                                : p.ppl == Vote::Physician ? -1.0
                                                           : -0.5;
      const double physician_lp = p.ppl == Vote::Chatbot     ? -1.0
                                  : p.ppl == Vote::Physician ? -0.1
                                                             : -0.5;
      set.add(scoring_key(context, item.chatbot_response.text),
              FixtureEntry::scored_logprobs(
                  flat_logprobs(item.chatbot_response.text, chatbot_lp)));
      set.add(scoring_key(context, item.physician_response.text),
              FixtureEntry::scored_logprobs(
                  flat_logprobs(item.physician_response.text, physician_lp)));
    }
  }
  return set;
}

void add_generation_fixtures(FixtureSet& fixtures,
                             std::span<const PatientQuestion> questions,
                             const Plan& plan, const GenerationTemplate& tmpl) {
  for (const auto& q : questions) {
    const auto it = plan.items.find(q.id);
    if (it == plan.items.end() || it->second.generation.empty()) continue;
    fixtures.add(prompt_key(render_generation(q, tmpl)),
                 FixtureEntry::reply(it->second.generation));
  }
}

}  // namespace emrank::scripting
