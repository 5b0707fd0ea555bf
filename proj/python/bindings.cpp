#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "emrank/datastore.hpp"
#include "emrank/error.hpp"
#include "emrank/extraction.hpp"
#include "emrank/metrics.hpp"
#include "emrank/prompting.hpp"
#include "emrank/replay_backend.hpp"
#include "emrank/stats.hpp"

namespace py = pybind11;
using namespace emrank;

namespace {

// Results cross the boundary as plain dicts; the C++ JSON encoding is the
// single source of truth for field names.
py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

SlotVerdict slot_verdict(const std::string& s) {
  if (auto v = parse_slot_verdict(s)) return *v;
  throw ValidationError("unknown slot verdict '" + s + "'");
}

Assignment assignment(const std::string& s) {
  if (auto a = parse_assignment(s)) return *a;
  throw ValidationError("unknown assignment '" + s + "'");
}

MetricKind metric_kind(const std::string& s) {
  if (auto m = parse_metric_kind(s)) return *m;
  throw ValidationError("unknown metric '" + s + "'");
}

py::dict pair_dict(const BlindedPair& p) {
  py::dict d;
  d["item_id"] = p.item_id;
  d["question_text"] = p.question_text;
  d["slot1_text"] = p.slot1_text;
  d["slot2_text"] = p.slot2_text;
  d["assignment"] = std::string(to_string(p.assignment));
  d["seed"] = p.seed;
  return d;
}

BlindedPair pair_from(const std::string& question, const std::string& slot1,
                      const std::string& slot2) {
  BlindedPair p;
  p.question_text = question;
  p.slot1_text = slot1;
  p.slot2_text = slot2;
  return p;
}

py::dict correlation_dict(const CorrelationResult& c) {
  py::dict d;
  d["r"] = c.r;
  d["ci_low"] = c.ci_low;
  d["ci_high"] = c.ci_high;
  d["n"] = c.n;
  d["confidence"] = c.confidence;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the emrank empathy-ranking workbench";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<BackendError>(m, "BackendError", PyExc_RuntimeError);
  py::register_exception<RunFailed>(m, "RunFailed", PyExc_RuntimeError);

  m.def("word_count", [](const std::string& s) { return word_count(s); });

  m.def("blinding_assignment",
        [](const std::string& item_id, std::uint64_t seed) {
          return std::string(to_string(blinding_assignment(item_id, seed)));
        },
        py::arg("item_id"), py::arg("seed"));

  m.def("blind",
        [](const std::string& item_id, const std::string& question,
           const std::string& physician, const std::string& chatbot, std::uint64_t seed) {
          return pair_dict(blind(EvalItem::make(item_id, question, physician, chatbot), seed));
        },
        py::arg("item_id"), py::arg("question"), py::arg("physician_response"),
        py::arg("chatbot_response"), py::arg("seed"),
        "Place both responses in anonymous slots. The returned dict includes the "
        "assignment so callers can unblind; never show it to a judge.");

  m.def("unblind",
        [](const std::string& assign, const std::string& verdict) {
          BlindedPair p;
          p.assignment = assignment(assign);
          return std::string(to_string(unblind(p, slot_verdict(verdict))));
        },
        py::arg("assignment"), py::arg("verdict"));

  m.def("extract",
        [](const std::string& text, std::optional<std::vector<std::pair<std::string, std::size_t>>>
                                        patterns) {
          ExtractionOutcome out;
          if (patterns) {
            std::vector<ExtractionPattern> specs;
            for (const auto& [p, g] : *patterns) specs.push_back({p, g});
            out = VerdictExtractor(std::move(specs)).extract(text);
          } else {
            out = extract(text);
          }
          py::dict d;
          d["verdict"] = std::string(to_string(out.verdict));
          d["matched_pattern"] = std::string(to_string(out.matched_pattern));
          d["span"] = out.matched_span;
          d["pattern_index"] = out.pattern_index;
          return d;
        },
        py::arg("text"), py::arg("patterns") = py::none());

  m.def("majority",
        [](const std::vector<std::string>& votes) {
          std::vector<SlotVerdict> v;
          for (const auto& s : votes) v.push_back(slot_verdict(s));
          return std::string(to_string(majority(v)));
        },
        py::arg("votes"));

  m.def("perplexity", [](const std::vector<double>& lps) { return perplexity(lps); },
        py::arg("logprobs"));

  m.def("fleiss_kappa",
        [](const std::vector<std::vector<std::size_t>>& counts) {
          const auto k = fleiss_kappa(RatingTable{counts});
          py::dict d;
          d["kappa"] = k.kappa;
          d["observed_agreement"] = k.observed_agreement;
          d["chance_agreement"] = k.chance_agreement;
          d["items"] = k.items;
          d["raters"] = k.raters;
          return d;
        },
        py::arg("counts"));

  m.def("pearson",
        [](const std::vector<double>& x, const std::vector<double>& y, double confidence) {
          return correlation_dict(pearson(x, y, confidence));
        },
        py::arg("x"), py::arg("y"), py::arg("confidence") = 0.95);

  m.def("render_generation",
        [](const std::string& question, std::size_t word_limit) {
          auto tmpl = GenerationTemplate::defaults();
          tmpl.word_limit = word_limit;
          return render_generation(PatientQuestion::make("q", question), tmpl);
        },
        py::arg("question"), py::arg("word_limit") = GenerationTemplate::defaults().word_limit);

  m.def("render_zero_shot",
        [](const std::string& question, const std::string& slot1, const std::string& slot2) {
          return render_zero_shot(pair_from(question, slot1, slot2), JudgeTemplate::defaults());
        },
        py::arg("question"), py::arg("slot1_text"), py::arg("slot2_text"));

  m.def("render_one_shot",
        [](const std::string& question, const std::string& slot1, const std::string& slot2,
           std::size_t example) {
          const auto bank = IclBank::defaults();
          if (example >= bank.examples.size()) throw py::index_error("no such example");
          return render_one_shot(bank.examples[example], pair_from(question, slot1, slot2),
                                 JudgeTemplate::defaults());
        },
        py::arg("question"), py::arg("slot1_text"), py::arg("slot2_text"),
        py::arg("example") = 0);

  m.def("render_few_shot",
        [](const std::string& question, const std::string& slot1, const std::string& slot2,
           std::size_t ordering) {
          return render_few_shot(IclBank::defaults(), ordering,
                                 pair_from(question, slot1, slot2), JudgeTemplate::defaults());
        },
        py::arg("question"), py::arg("slot1_text"), py::arg("slot2_text"),
        py::arg("ordering") = 0);

  m.def("load_dataset",
        [](const std::filesystem::path& path) {
          const auto ds = load_dataset(path);
          py::list records;
          for (const auto& r : ds.records) {
            py::dict d;
            d["id"] = r.id;
            d["question"] = r.question;
            d["physician_response"] = r.physician_response;
            d["chatbot_response"] = r.chatbot_response;
            records.append(d);
          }
          return records;
        },
        py::arg("path"));

  m.def("dataset_stats",
        [](const std::filesystem::path& path) {
          const auto s = load_dataset(path).stats();
          py::dict d;
          d["questions"] = s.questions;
          d["with_chatbot_response"] = s.with_chatbot_response;
          d["avg_question_words"] = s.avg_question_words;
          d["avg_physician_words"] = s.avg_physician_words;
          d["avg_chatbot_words"] = s.avg_chatbot_words;
          return d;
        },
        py::arg("path"));

  m.def("load_run", [](const std::filesystem::path& path) { return to_python(to_json(load_run(path))); },
        py::arg("path"));

  m.def("evaluate_replay",
        [](const std::string& metric, const std::filesystem::path& dataset,
           const std::filesystem::path& fixtures, std::uint64_t seed, std::size_t parallelism,
           std::optional<std::filesystem::path> templates) {
          const auto items = load_dataset(dataset).eval_items();
          EvalConfig cfg;
          if (templates) {
            const auto t = TemplateSet::load(*templates);
            cfg.judge_template = t.judge;
            cfg.bank = t.bank;
            cfg.patterns = t.patterns;
          }
          cfg.judge = std::make_shared<ReplayBackend>(FixtureSet::load(fixtures));
          cfg.parallelism = parallelism;
          RunResult run;
          {
            py::gil_scoped_release release;
            run = evaluate_dataset(metric_kind(metric), items, seed, cfg);
          }
          return to_python(to_json(run));
        },
        py::arg("metric"), py::arg("dataset"), py::arg("fixtures"), py::arg("seed"),
        py::arg("parallelism") = 1, py::arg("templates") = py::none(),
        "Run one metric over a dataset against recorded fixtures.");
}
