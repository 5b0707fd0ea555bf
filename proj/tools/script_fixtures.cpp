// Writes replay fixtures for a dataset from a provenance-level vote plan.
#include <iostream>

#include <CLI11.hpp>

#include "emrank/datastore.hpp"
#include "scripting.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Script replay fixtures from a vote plan"};
  std::string dataset, plan_path, templates_path, out;
  std::size_t max_output_tokens = 512;
  bool with_generation = false;
  app.add_option("--dataset", dataset, "JSONL dataset")->required();
  app.add_option("--plan", plan_path, "Vote plan (JSON)")->required();
  app.add_option("--templates", templates_path, "Template set (JSON)");
  app.add_option("--out", out, "Fixture file to write")->required();
  app.add_option("--max-output-tokens", max_output_tokens, "Judge token budget");
  app.add_flag("--with-generation", with_generation,
               "Also add fixtures for the generate step");
  CLI11_PARSE(app, argc, argv);

  try {
    using namespace emrank;
    const Dataset ds = load_dataset(dataset);
    const auto plan = scripting::Plan::load(plan_path);
    const TemplateSet templates =
        templates_path.empty() ? TemplateSet{} : TemplateSet::load(templates_path);
    JudgeSettings settings;
    settings.max_output_tokens = max_output_tokens;

    std::vector<EvalItem> items;
    std::vector<PatientQuestion> questions;
    for (const auto& rec : ds.records) {
      questions.push_back(PatientQuestion::make(rec.id, rec.question));
      if (rec.chatbot_response)
        items.push_back(EvalItem::make(rec.id, rec.question,
                                       rec.physician_response, *rec.chatbot_response));
    }
    FixtureSet fixtures = scripting::script_fixtures(items, plan, templates, settings);
    if (with_generation)
      scripting::add_generation_fixtures(fixtures, questions, plan,
                                         templates.generation);
    fixtures.save(out);
    std::cout << "wrote " << fixtures.size() << " fixture keys to " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
