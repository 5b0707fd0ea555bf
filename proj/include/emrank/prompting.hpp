#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "emrank/extraction.hpp"
#include "emrank/model.hpp"

namespace emrank {

/// Prompt used to ask the generator model for a reply to a patient.
struct GenerationTemplate {
  std::string persona_text;
  std::string empathy_instruction;
  std::size_t word_limit = 100;

  static GenerationTemplate defaults();
};

/// A patient-annotated demonstration: which of two responses is more
/// empathetic, and why.
struct IclExample {
  std::string question;
  std::string response1;
  std::string response2;
  SlotVerdict verdict = SlotVerdict::Slot1;
  std::string justification;

  void validate() const;
};

struct IclBank {
  std::vector<IclExample> examples;
  /// Each ordering is a permutation of example indices used by few-shot.
  std::vector<std::vector<std::size_t>> orderings;

  void validate() const;
  static IclBank defaults();
};

struct JudgeTemplate {
  std::string instruction_text;
  std::string answer_format_hint;

  static JudgeTemplate defaults();
};

/// Everything loadable from a templates file:
///   {instruction_text, answer_format_hint,
///    examples: [{question, response1, response2, verdict: 1|2, justification}],
///    orderings: [[0,1,2], ...],
///    generation?: {persona_text, empathy_instruction, word_limit},
///    patterns?: [{pattern, group}]}
/// Missing keys keep their defaults.
struct TemplateSet {
  GenerationTemplate generation = GenerationTemplate::defaults();
  JudgeTemplate judge = JudgeTemplate::defaults();
  IclBank bank = IclBank::defaults();
  std::vector<ExtractionPattern> patterns = default_patterns();

  static TemplateSet from_json(const nlohmann::json& j);
  static TemplateSet load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Line introducing the patient question in every judge prompt block.
inline constexpr std::string_view kQuestionLabel = "Patient message: ";

std::string render_generation(const PatientQuestion& question,
                              const GenerationTemplate& tmpl);

std::string render_zero_shot(const BlindedPair& pair, const JudgeTemplate& tmpl);

/// Instruction, one demonstration, then the target pair.
std::string render_one_shot(const IclExample& example, const BlindedPair& pair,
                            const JudgeTemplate& tmpl);

/// Instruction, every bank example in the chosen ordering, then the target.
std::string render_few_shot(const IclBank& bank, std::size_t ordering_index,
                            const BlindedPair& pair, const JudgeTemplate& tmpl);

/// Context that perplexity scoring conditions the answer on.
std::string render_scoring_context(std::string_view question_text);

}  // namespace emrank
