#include "emrank/prompting.hpp"

#include <fstream>

#include "emrank/error.hpp"

namespace emrank {

using nlohmann::json;

GenerationTemplate GenerationTemplate::defaults() {
  return {
      "You are a urology expert answering a message sent by a patient who "
      "had surgery for prostate cancer.",
      "Respond to the patient with empathy.",
      100,
  };
}

JudgeTemplate JudgeTemplate::defaults() {
  return {
      "You are given a patient message and two responses. Decide which "
      "response is more empathetic and answer in the form 'Response 1 is more "
      "empathetic' or 'Response 2 is more empathetic', then explain.",
      "Which response is more empathetic?",
  };
}

void IclExample::validate() const {
  if (question.empty() || response1.empty() || response2.empty() ||
      justification.empty())
    throw ValidationError("in-context example has an empty field");
  if (verdict == SlotVerdict::Abstain)
    throw ValidationError("in-context example must choose Response 1 or 2");
}

void IclBank::validate() const {
  if (examples.empty())
    throw ValidationError("in-context example bank is empty");
  for (const auto& e : examples) e.validate();
  for (const auto& order : orderings) {
    std::vector<bool> hit(examples.size(), false);
    if (order.size() != examples.size())
      throw ValidationError("ordering length differs from the bank size");
    for (auto idx : order) {
      if (idx >= examples.size() || hit[idx])
        throw ValidationError("ordering is not a permutation of the bank");
      hit[idx] = true;
    }
  }
}

IclBank IclBank::defaults() {
  IclBank bank;
  bank.examples = {
      {
          "I had my surgery three weeks ago and I am still leaking urine "
          "whenever I stand up. Is this normal, and will it ever get better?",
          "Leakage at this stage is expected. Continue the pelvic floor "
          "exercises and we will review it at your next visit.",
          "I am sorry you are dealing with this, it can be really "
          "frustrating. Leakage three weeks after surgery is very common and "
          "usually improves steadily over the coming months. Keep up your "
          "pelvic floor exercises and let us know if it gets worse so we can "
          "help.",
          SlotVerdict::Slot2,
          "it recognizes how frustrating the leakage is and offers "
          "reassurance along with clear next steps.",
      },
      {
          "My latest PSA came back at 0.1. Should I be worried that the "
          "cancer is back?",
          "I understand how unsettling it is to wait on these numbers. A "
          "value of 0.1 is low, and one result on its own does not mean the "
          "cancer has returned. We will repeat the test in three months and "
          "talk through any next steps together.",
          "PSA 0.1. Repeat in 3 months.",
          SlotVerdict::Slot1,
          "it acknowledges the worry and explains the result in a calm and "
          "supportive way.",
      },
      {
          "I have not been sleeping well since my diagnosis and I keep "
          "thinking about the treatment. Is there anything that can help?",
          "Many people feel this way after a diagnosis, and it makes sense "
          "that your mind is busy. Talking with a counselor or a support "
          "group can help, and we are glad to arrange that for you.",
          "Sleep problems are common. Try to keep a regular bedtime and limit "
          "caffeine.",
          SlotVerdict::Slot1,
          "it validates the patient's feelings and offers personal support "
          "instead of only general advice.",
      },
  };
  bank.orderings = {{0, 1, 2}, {2, 0, 1}, {1, 2, 0}};
  return bank;
}

namespace {

void append_pair_block(std::string& out, std::string_view question,
                       std::string_view first, std::string_view second) {
  out += kQuestionLabel;
  out += question;
  out += "\n\nResponse 1: ";
  out += first;
  out += "\n\nResponse 2: ";
  out += second;
}

void append_hint(std::string& out, const JudgeTemplate& tmpl) {
  if (tmpl.answer_format_hint.empty()) return;
  out += "\n\n";
  out += tmpl.answer_format_hint;
}

void append_demonstration(std::string& out, const IclExample& example,
                          const JudgeTemplate& tmpl) {
  example.validate();
  append_pair_block(out, example.question, example.response1,
                    example.response2);
  append_hint(out, tmpl);
  out += "\n\nResponse ";
  out += example.verdict == SlotVerdict::Slot1 ? '1' : '2';
  out += " is more empathetic because ";
  out += example.justification;
  out += "\n\n";
}

std::string instruction_header(const JudgeTemplate& tmpl) {
  if (word_count(tmpl.instruction_text) == 0)
    throw ValidationError("judge template has an empty instruction");
  return tmpl.instruction_text + "\n\n";
}

void append_target(std::string& out, const BlindedPair& pair,
                   const JudgeTemplate& tmpl) {
  append_pair_block(out, pair.question_text, pair.slot1_text, pair.slot2_text);
  append_hint(out, tmpl);
}

}  // namespace

std::string render_generation(const PatientQuestion& question,
                              const GenerationTemplate& tmpl) {
  if (word_count(question.text) == 0)
    throw ValidationError("cannot render a prompt for an empty question");
  if (tmpl.word_limit == 0) throw ValidationError("word limit must be positive");
  std::string out;
  if (!tmpl.persona_text.empty()) out += tmpl.persona_text + " ";
  if (!tmpl.empathy_instruction.empty()) out += tmpl.empathy_instruction + " ";
  out += "Please limit your response to " + std::to_string(tmpl.word_limit) +
         " words.\n\n";
  out += kQuestionLabel;
  out += question.text;
  return out;
}

std::string render_zero_shot(const BlindedPair& pair, const JudgeTemplate& tmpl) {
  std::string out = instruction_header(tmpl);
  append_target(out, pair, tmpl);
  return out;
}

std::string render_one_shot(const IclExample& example, const BlindedPair& pair,
                            const JudgeTemplate& tmpl) {
  std::string out = instruction_header(tmpl);
  append_demonstration(out, example, tmpl);
  append_target(out, pair, tmpl);
  return out;
}

std::string render_few_shot(const IclBank& bank, std::size_t ordering_index,
                            const BlindedPair& pair, const JudgeTemplate& tmpl) {
  if (ordering_index >= bank.orderings.size())
    throw ValidationError("ordering index " + std::to_string(ordering_index) +
                          " out of range (" +
                          std::to_string(bank.orderings.size()) +
                          " orderings)");
  bank.validate();
  std::string out = instruction_header(tmpl);
  for (auto idx : bank.orderings[ordering_index])
    append_demonstration(out, bank.examples[idx], tmpl);
  append_target(out, pair, tmpl);
  return out;
}

std::string render_scoring_context(std::string_view question_text) {
  std::string out(kQuestionLabel);
  out += question_text;
  out += "\n\nResponse:";
  return out;
}

// ---------------------------------------------------------------------------
// Templates file

TemplateSet TemplateSet::from_json(const json& j) {
  TemplateSet set;
  try {
    if (j.contains("instruction_text"))
      set.judge.instruction_text = j.at("instruction_text").get<std::string>();
    if (j.contains("answer_format_hint"))
      set.judge.answer_format_hint = j.at("answer_format_hint").get<std::string>();
    if (j.contains("examples")) {
      set.bank.examples.clear();
      for (const auto& e : j.at("examples")) {
        IclExample ex;
        ex.question = e.at("question").get<std::string>();
        ex.response1 = e.at("response1").get<std::string>();
        ex.response2 = e.at("response2").get<std::string>();
        const int v = e.at("verdict").get<int>();
        if (v != 1 && v != 2)
          throw ValidationError("example verdict must be 1 or 2");
        ex.verdict = v == 1 ? SlotVerdict::Slot1 : SlotVerdict::Slot2;
        ex.justification = e.at("justification").get<std::string>();
        set.bank.examples.push_back(std::move(ex));
      }
    }
    if (j.contains("orderings")) {
      set.bank.orderings =
          j.at("orderings").get<std::vector<std::vector<std::size_t>>>();
    } else if (j.contains("examples") && set.bank.examples.size() != 3) {
      // The default rotations only fit a three-example bank.
      std::vector<std::size_t> identity(set.bank.examples.size());
      for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = i;
      set.bank.orderings = {identity};
    }
    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      set.generation.persona_text =
          g.value("persona_text", set.generation.persona_text);
      set.generation.empathy_instruction =
          g.value("empathy_instruction", set.generation.empathy_instruction);
      set.generation.word_limit = g.value("word_limit", set.generation.word_limit);
    }
    if (j.contains("patterns")) {
      set.patterns.clear();
      for (const auto& p : j.at("patterns"))
        set.patterns.push_back(
            {p.at("pattern").get<std::string>(), p.value("group", std::size_t{0})});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed templates: ") + e.what());
  }
  set.bank.validate();
  VerdictExtractor check(set.patterns);
  (void)check;
  return set;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open templates file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  } catch (const ValidationError& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

json TemplateSet::to_json() const {
  json examples = json::array();
  for (const auto& e : bank.examples) {
    examples.push_back({{"question", e.question},
                        {"response1", e.response1},
                        {"response2", e.response2},
                        {"verdict", e.verdict == SlotVerdict::Slot1 ? 1 : 2},
                        {"justification", e.justification}});
  }
  json patterns_json = json::array();
  for (const auto& p : patterns)
    patterns_json.push_back({{"pattern", p.pattern}, {"group", p.group}});
  return {
      {"instruction_text", judge.instruction_text},
      {"answer_format_hint", judge.answer_format_hint},
      {"examples", examples},
      {"orderings", bank.orderings},
      {"generation",
       {{"persona_text", generation.persona_text},
        {"empathy_instruction", generation.empathy_instruction},
        {"word_limit", generation.word_limit}}},
      {"patterns", patterns_json},
  };
}

}  // namespace emrank
