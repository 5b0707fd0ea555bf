#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "emrank/metrics.hpp"
#include "emrank/prompting.hpp"
#include "emrank/replay_backend.hpp"

// Builds replay fixtures from a per-item plan written in provenance terms
// ("the chatbot wins this vote"), so that expected win counts can be read
// straight off the plan regardless of how each item was blinded.
namespace emrank::scripting {

enum class Vote { Chatbot, Physician, Abstain, Fail };

struct ItemPlan {
  Vote zero = Vote::Chatbot;
  std::vector<Vote> one;  // one per bank example
  std::vector<Vote> few;  // one per ordering
  Vote ppl = Vote::Chatbot;
  /// Optional generated reply for the generate step.
  std::string generation;
};

struct Plan {
  std::uint64_t seed = 0;
  std::map<std::string, ItemPlan> items;

  static Plan from_json(const nlohmann::json& j);
  static Plan load(const std::filesystem::path& path);
};

Vote parse_vote(std::string_view s);

/// Judge and scoring fixtures for every planned vote. Fail votes get no
/// fixture at all, which the replay backend reports as FixtureMissing.
FixtureSet script_fixtures(std::span<const EvalItem> items, const Plan& plan,
                           const TemplateSet& templates,
                           const JudgeSettings& settings = {});

/// Fixtures for the generate step keyed on the rendered generation prompt.
void add_generation_fixtures(FixtureSet& fixtures,
                             std::span<const PatientQuestion> questions,
                             const Plan& plan, const GenerationTemplate& tmpl);

}  // namespace emrank::scripting
