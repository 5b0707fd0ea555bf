#include "cli_app.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "emrank/annotation_service.hpp"
#include "emrank/datastore.hpp"
#include "emrank/error.hpp"
#include "emrank/hashing.hpp"
#include "emrank/http_backend.hpp"
#include "emrank/metrics.hpp"
#include "emrank/prompting.hpp"
#include "emrank/replay_backend.hpp"
#include "emrank/retry.hpp"
#include "emrank/stats.hpp"

namespace emrank::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct BackendOptions {
  std::string fixtures;
  std::string templates;
  std::size_t max_context_tokens = 4096;
  std::size_t max_output_tokens = 512;
  int retry_attempts = 5;
  long retry_delay_ms = 1000;
};

struct GenerateOptions {
  std::string dataset;
  std::string output;
  std::string backend = "replay";
  std::size_t word_limit = 100;
  double temperature = 1.0;
};

struct JudgeOptions {
  std::string dataset;
  std::string metric = "zero-shot";
  std::string judge_backend = "replay";
  std::string scorer_backend;
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  std::string out = "runs";
  double temperature = 0.0;
};

struct StatsOptions {
  std::vector<std::string> runs;
  std::string annotations;
  std::string dataset;
  std::uint64_t seed = 0;
  std::string json_out;
};

struct ServeOptions {
  std::string dataset;
  std::uint64_t seed = 0;
  std::vector<std::string> annotators;
  std::string admin_key;
  std::string annotations = "annotations.csv";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t item_limit = 0;
  std::string static_dir;
};

struct ValidateOptions {
  std::string dataset;
};

std::string percent(std::optional<double> v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << *v * 100.0 << "%";
  return os.str();
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string file_hash(const std::string& path) {
  if (path.empty()) return "";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return hex64(fnv1a64(os.str()));
}

TemplateSet load_templates(const BackendOptions& o) {
  return o.templates.empty() ? TemplateSet{} : TemplateSet::load(o.templates);
}

class BackendFactory {
 public:
  explicit BackendFactory(const BackendOptions& o) : options_(o) {}

  BackendPtr make(const std::string& spec, bool scoring) {
    BackendPtr inner;
    if (spec == "replay") {
      if (options_.fixtures.empty())
        throw ValidationError("replay backend requires --fixtures");
      if (!replay_) {
        auto descriptor = ReplayBackend::default_descriptor();
        descriptor.max_context_tokens = options_.max_context_tokens;
        replay_ = std::make_shared<ReplayBackend>(
            FixtureSet::load(options_.fixtures), descriptor);
      }
      inner = replay_;
    } else if (spec.rfind("http:", 0) == 0) {
      auto config = HttpBackendConfig::from_env(spec.substr(5));
      if (config.api_key.empty())
        throw ValidationError("live backend '" + spec +
                              "' requires EMRANK_API_KEY to be set");
      config.supports_token_scoring = scoring;
      config.max_context_tokens = options_.max_context_tokens;
      inner = std::make_shared<HttpBackend>(config);
    } else {
      throw ValidationError("unknown backend '" + spec +
                            "' (expected 'replay' or 'http:<model>')");
    }
    RetryPolicy policy;
    policy.max_attempts = options_.retry_attempts;
    policy.initial_delay = std::chrono::milliseconds(options_.retry_delay_ms);
    return std::make_shared<RetryingBackend>(inner, policy);
  }

  const std::shared_ptr<ReplayBackend>& replay() const { return replay_; }

 private:
  const BackendOptions& options_;
  std::shared_ptr<ReplayBackend> replay_;
};

// ---------------------------------------------------------------------------
// generate

int cmd_generate(const GenerateOptions& g, const BackendOptions& b,
                 std::ostream& out, std::ostream& err) {
  Dataset ds = load_dataset(g.dataset);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    if (!ds.records[i].chatbot_response) pending.push_back(i);
  if (pending.empty()) {
    out << "every item already has a chatbot response; nothing to generate\n";
    return 0;
  }

  TemplateSet templates = load_templates(b);
  templates.generation.word_limit = g.word_limit;
  BackendFactory factory(b);
  BackendPtr backend = factory.make(g.backend, false);

  std::size_t generated = 0;
  std::size_t words = 0;
  std::size_t failed = 0;
  for (auto i : pending) {
    auto& rec = ds.records[i];
    ChatRequest req;
    req.user_text = render_generation(PatientQuestion::make(rec.id, rec.question),
                                      templates.generation);
    req.max_output_tokens = b.max_output_tokens;
    req.temperature = g.temperature;
    try {
      const auto response = backend->complete(req);
      if (word_count(response.text) == 0)
        throw BackendError(BackendErrorKind::Protocol, "empty reply");
      rec.chatbot_response = response.text;
      words += word_count(response.text);
      ++generated;
    } catch (const BackendError& e) {
      ++failed;
      err << "generate: item '" << rec.id << "' failed: " << e.what() << "\n";
    }
  }
  const std::string target = g.output.empty() ? g.dataset : g.output;
  if (generated > 0) save_dataset(ds, target);
  out << "generated " << generated << " of " << pending.size()
      << " responses (" << failed << " failed)\n";
  if (generated > 0) {
    out << "average generated length: "
        << fixed(static_cast<double>(words) / static_cast<double>(generated), 2)
        << " words\n";
    out << "dataset written to " << target << "\n";
  }
  return generated > 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// judge

void print_summary(std::ostream& out, const RunResult& run) {
  const auto& s = run.summary;
  out << "metric: " << to_string(run.metric) << "  items: " << run.per_item.size()
      << "  chatbot: " << s.chatbot_wins << "  physician: " << s.physician_wins
      << "  undecided: " << s.undecided << "  failed: " << s.failed << "\n";
  out << "chatbot rate: " << percent(s.chatbot_rate)
      << "  physician rate: " << percent(s.physician_rate) << "\n";
  if (run.metric == MetricKind::OneShot || run.metric == MetricKind::FewShot) {
    const auto parts = vote_breakdown(run);
    const char* label = run.metric == MetricKind::OneShot ? "example" : "order";
    for (std::size_t i = 0; i < parts.size(); ++i) {
      out << "  " << label << " " << i + 1 << ": chatbot " << parts[i].chatbot_wins
          << ", physician " << parts[i].physician_wins << ", undecided "
          << parts[i].undecided << ", chatbot rate "
          << percent(parts[i].chatbot_rate) << "\n";
    }
  }
}

json run_config(const JudgeOptions& j, const BackendOptions& b,
                const TemplateSet& templates) {
  json identity = {
      {"dataset_hash", file_hash(j.dataset)},
      {"judge_backend", j.judge_backend},
      {"scorer_backend", j.scorer_backend.empty() ? j.judge_backend : j.scorer_backend},
      {"fixtures_hash", file_hash(b.fixtures)},
      {"templates", templates.to_json()},
      {"max_output_tokens", b.max_output_tokens},
      {"temperature", j.temperature},
      {"seed", j.seed},
  };
  json cfg = identity;
  cfg["config_hash"] = hex64(fnv1a64(identity.dump()));
  cfg["dataset"] = j.dataset;
  cfg["fixtures"] = b.fixtures;
  cfg["templates_path"] = b.templates;
  cfg["parallelism"] = j.parallelism;
  cfg["max_context_tokens"] = b.max_context_tokens;
  return cfg;
}

/// Latest archive under `root` for the metric whose config hash matches.
std::optional<fs::path> find_archive(const fs::path& root, MetricKind metric,
                                     const std::string& config_hash) {
  std::optional<fs::path> best;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) return best;
  for (const auto& entry : fs::directory_iterator(root, ec)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "config.json"))
      continue;
    try {
      const json cfg = load_run_config(entry.path());
      if (cfg.value("config_hash", "") != config_hash ||
          cfg.value("metric", "") != to_string(metric))
        continue;
    } catch (const std::exception&) {
      continue;
    }
    if (!best || entry.path().filename() > best->filename()) best = entry.path();
  }
  return best;
}

int cmd_judge(const JudgeOptions& j, const BackendOptions& b, std::ostream& out,
              std::ostream& err) {
  const auto metric = parse_metric_kind(j.metric);
  if (!metric) throw ValidationError("unknown metric '" + j.metric + "'");
  const Dataset ds = load_dataset(j.dataset);
  if (!ds.complete())
    throw ValidationError("dataset has items without chatbot responses; run "
                          "`emrank generate` first");
  const auto items = ds.eval_items();
  const TemplateSet templates = load_templates(b);
  const json cfg = run_config(j, b, templates);
  const std::string config_hash = cfg["config_hash"];

  BackendFactory factory(b);
  std::optional<EvalConfig> eval;
  auto eval_config = [&]() -> const EvalConfig& {
    if (!eval) {
      EvalConfig c;
      c.judge = factory.make(j.judge_backend, false);
      if (*metric == MetricKind::PplRank || !j.scorer_backend.empty()) {
        c.scorer = factory.make(
            j.scorer_backend.empty() ? j.judge_backend : j.scorer_backend, true);
      }
      c.judge_template = templates.judge;
      c.bank = templates.bank;
      c.patterns = templates.patterns;
      c.settings.max_output_tokens = b.max_output_tokens;
      c.settings.temperature = j.temperature;
      c.parallelism = j.parallelism;
      eval = std::move(c);
    }
    return *eval;
  };

  auto report_failures = [&](const RunResult& run) {
    for (const auto& [id, item] : run.per_item)
      if (!item.evaluated)
        err << "judge: item '" << id << "' unevaluated: "
            << (item.errors.empty() ? "unknown error" : item.errors.front()) << "\n";
  };

  RunResult run;
  json archive_cfg = cfg;
  try {
    if (*metric == MetricKind::Ensemble) {
      std::vector<RunResult> parts;
      json sources = json::array();
      for (auto kind :
           {MetricKind::ZeroShot, MetricKind::OneShot, MetricKind::FewShot}) {
        if (auto found = find_archive(j.out, kind, config_hash)) {
          out << "reusing " << to_string(kind) << " run " << found->string() << "\n";
          parts.push_back(load_run(*found));
          sources.push_back(found->string());
        } else {
          RunResult part = evaluate_dataset(kind, items, j.seed, eval_config());
          report_failures(part);
          json part_cfg = cfg;
          const auto dir = save_run(part, part_cfg, j.out);
          out << "computed " << to_string(kind) << " run " << dir.string() << "\n";
          parts.push_back(std::move(part));
          sources.push_back(dir.string());
        }
      }
      run = ensemble_from_runs(parts[0], parts[1], parts[2]);
      archive_cfg["constituents"] = sources;
    } else {
      run = evaluate_dataset(*metric, items, j.seed, eval_config());
      report_failures(run);
    }
  } catch (const RunFailed& e) {
    err << "judge: " << e.what() << "\n";
    return 1;
  }

  const auto dir = save_run(run, archive_cfg, j.out);
  print_summary(out, run);
  out << "archive: " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// stats

json correlation_json(const CorrelationResult& c) {
  auto opt = [](const std::optional<double>& v) -> json {
    if (v) return *v;
    return nullptr;
  };
  return {{"r", opt(c.r)},
          {"ci_low", opt(c.ci_low)},
          {"ci_high", opt(c.ci_high)},
          {"n", c.n},
          {"confidence", c.confidence}};
}

std::string correlation_text(const CorrelationResult& c) {
  if (!c.r) return "undefined (n = " + std::to_string(c.n) + ")";
  std::string s = "r = " + fixed(*c.r);
  if (c.ci_low && c.ci_high)
    s += "  95% CI [" + fixed(*c.ci_low) + ", " + fixed(*c.ci_high) + "]";
  else
    s += "  (CI undefined)";
  return s + "  n = " + std::to_string(c.n);
}

RunResult vote_run(const RunResult& run, std::size_t position) {
  RunResult view = run;
  for (auto& [id, item] : view.per_item) {
    item.slot_verdict =
        position < item.votes.size() ? item.votes[position] : SlotVerdict::Abstain;
    BlindedPair orientation;
    orientation.assignment = item.assignment;
    item.provenance_verdict = unblind(orientation, item.slot_verdict);
  }
  view.summary = summarize(view.per_item);
  return view;
}

int cmd_stats(const StatsOptions& s, std::ostream& out, std::ostream& err) {
  std::vector<RunResult> runs;
  for (const auto& path : s.runs) runs.push_back(load_run(path));

  std::map<std::string, ProvenanceVerdict> human;
  std::optional<KappaResult> kappa;
  if (!s.annotations.empty()) {
    if (s.dataset.empty())
      throw ValidationError("--annotations needs --dataset to rebuild the blinded pairs");
    const auto items = load_dataset(s.dataset).eval_items();
    std::map<std::string, BlindedPair> pairs;
    for (const auto& item : items) pairs.emplace(item.id(), blind(item, s.seed));
    const auto annotations = load_annotations(s.annotations);
    human = consensus(annotations, pairs);
    const RatingTable table = rating_table(annotations, pairs);
    if (table.counts.size() >= 2 && table.rater_count() >= 2) {
      kappa = fleiss_kappa(table);
    } else {
      err << "stats: not enough multiply-rated items for Fleiss' kappa\n";
    }
  }

  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i > 0 && runs[i].per_item.size() != runs[0].per_item.size())
      err << "warning: run " << s.runs[i] << " covers " << runs[i].per_item.size()
          << " items, run " << s.runs[0] << " covers " << runs[0].per_item.size()
          << "\n";
    if (!human.empty()) {
      std::size_t overlap = 0;
      for (const auto& [id, v] : human) overlap += runs[i].per_item.count(id);
      if (overlap != human.size() || overlap != runs[i].per_item.size())
        err << "warning: run " << s.runs[i] << " covers " << runs[i].per_item.size()
            << " items, human consensus covers " << human.size() << ", overlap "
            << overlap << "\n";
    }
  }

  const WinRateReport table = win_rate_report(runs, human);
  json report = {{"win_rates", table.to_json()}};
  out << "Win rates (ChatGPT / Physician over decided items; Undecided over all)\n"
      << table.to_text();

  if (!human.empty()) {
    json agreement = json::array();
    out << "\nAgreement with human consensus (Pearson r)\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto c = metric_human_agreement(runs[i], human);
      json entry = {{"run", s.runs[i]},
                    {"metric", std::string(to_string(runs[i].metric))},
                    {"overall", correlation_json(c)}};
      out << "  " << std::left << std::setw(12) << to_string(runs[i].metric)
          << correlation_text(c) << "\n";
      if (runs[i].metric == MetricKind::OneShot ||
          runs[i].metric == MetricKind::FewShot) {
        const char* label = runs[i].metric == MetricKind::OneShot ? "example" : "order";
        json per_vote = json::array();
        std::size_t positions = 0;
        for (const auto& [id, item] : runs[i].per_item)
          positions = std::max(positions, item.votes.size());
        for (std::size_t p = 0; p < positions; ++p) {
          const auto cv = metric_human_agreement(vote_run(runs[i], p), human);
          per_vote.push_back(correlation_json(cv));
          out << "    " << label << " " << p + 1 << ": " << correlation_text(cv)
              << "\n";
        }
        entry["per_vote"] = per_vote;
      }
      agreement.push_back(entry);
    }
    report["agreement"] = agreement;
  }
  if (kappa) {
    out << "\nFleiss' kappa: "
        << (kappa->kappa ? fixed(*kappa->kappa) : std::string("undefined (chance agreement is 1)"))
        << "  (" << kappa->items << " items, " << kappa->raters << " raters)\n";
    report["fleiss_kappa"] = {
        {"kappa", kappa->kappa ? json(*kappa->kappa) : json(nullptr)},
        {"observed_agreement", kappa->observed_agreement},
        {"chance_agreement", kappa->chance_agreement},
        {"items", kappa->items},
        {"raters", kappa->raters}};
  }
  if (!s.json_out.empty()) {
    std::ofstream f(s.json_out);
    if (!f) throw IoError("cannot write " + s.json_out);
    f << report.dump(2) << "\n";
  }
  return runs.empty() && human.empty() ? 1 : 0;
}

// ---------------------------------------------------------------------------
// serve / validate

int cmd_serve(const ServeOptions& s, std::ostream& out) {
  const auto items = load_dataset(s.dataset).eval_items();
  StudyConfig config;
  config.seed = s.seed;
  config.annotators = s.annotators;
  config.admin_key = s.admin_key;
  if (config.admin_key.empty())
    if (const char* key = std::getenv("EMRANK_ADMIN_KEY")) config.admin_key = key;
  if (s.item_limit > 0) config.item_limit = s.item_limit;
  config.annotations_path = s.annotations;
  AnnotationStudy study(items, config);
  std::optional<fs::path> static_dir;
  if (!s.static_dir.empty()) static_dir = s.static_dir;
  AnnotationServer server(study, static_dir);
  out << "serving " << study.item_count() << " items to "
      << s.annotators.size() << " annotators on http://" << s.host << ":"
      << s.port << "\n"
      << std::flush;
  return server.listen(s.host, s.port) ? 0 : 1;
}

int cmd_validate(const ValidateOptions& v, const BackendOptions& b,
                 std::ostream& out) {
  const Dataset ds = load_dataset(v.dataset);
  const auto st = ds.stats();
  out << "dataset: " << v.dataset << "\n"
      << "  questions: " << st.questions << "\n"
      << "  average question length: " << fixed(st.avg_question_words, 2) << " words\n"
      << "  average physician response length: "
      << fixed(st.avg_physician_words, 2) << " words\n";
  if (st.avg_chatbot_words)
    out << "  average chatbot response length: " << fixed(*st.avg_chatbot_words, 2)
        << " words (" << st.with_chatbot_response << " items)\n";
  out << "  complete: " << (ds.complete() ? "yes" : "no") << "\n";
  if (!b.templates.empty()) {
    const auto t = TemplateSet::load(b.templates);
    out << "templates: " << t.bank.examples.size() << " examples, "
        << t.bank.orderings.size() << " orderings, " << t.patterns.size()
        << " extraction patterns\n";
  }
  if (!b.fixtures.empty()) {
    const auto f = FixtureSet::load(b.fixtures);
    out << "fixtures: " << f.size() << " keys\n";
  }
  return 0;
}

void add_backend_options(CLI::App* cmd, BackendOptions& b) {
  cmd->add_option("--fixtures", b.fixtures, "Replay fixture file (JSON)");
  cmd->add_option("--templates", b.templates, "Prompt templates / ICL bank (JSON)");
  cmd->add_option("--max-context", b.max_context_tokens, "Backend context window");
  cmd->add_option("--max-output-tokens", b.max_output_tokens,
                  "Completion token budget");
  cmd->add_option("--retry-attempts", b.retry_attempts, "Attempts per request")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--retry-delay-ms", b.retry_delay_ms,
                  "Initial backoff delay in milliseconds");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"emrank: pairwise empathy ranking with LLM judges"};
  app.set_config("--config", "", "TOML/INI config file; command-line flags win");
  app.require_subcommand(1);

  BackendOptions backend;
  GenerateOptions gen;
  JudgeOptions judge;
  StatsOptions stats;
  ServeOptions serve;
  ValidateOptions validate;

  auto* g = app.add_subcommand("generate", "Fill missing chatbot responses");
  g->add_option("--dataset", gen.dataset, "JSONL dataset")->required();
  g->add_option("--output", gen.output, "Write here instead of in place");
  g->add_option("--backend", gen.backend, "Generator: replay | http:<model>");
  g->add_option("--word-limit", gen.word_limit, "Word limit in the prompt");
  g->add_option("--temperature", gen.temperature, "Sampling temperature");
  add_backend_options(g, backend);

  auto* j = app.add_subcommand("judge", "Run an empathy-ranking metric");
  j->add_option("--dataset", judge.dataset, "JSONL dataset")->required();
  j->add_option("--metric", judge.metric,
                "zero-shot | one-shot | few-shot | ensemble | ppl");
  j->add_option("--judge-backend,--backend", judge.judge_backend,
                "Judge: replay | http:<model>");
  j->add_option("--scorer-backend", judge.scorer_backend,
                "Token scorer for ppl (defaults to the judge)");
  j->add_option("--seed", judge.seed, "Blinding seed");
  j->add_option("--parallelism", judge.parallelism, "Concurrent items")
      ->check(CLI::PositiveNumber);
  j->add_option("--out", judge.out, "Run archive root");
  j->add_option("--temperature", judge.temperature, "Judge temperature");
  add_backend_options(j, backend);

  auto* s = app.add_subcommand("stats", "Win rates, agreement and kappa");
  s->add_option("--runs", stats.runs, "Run archives")->expected(0, -1);
  s->add_option("--annotations", stats.annotations, "Annotation CSV");
  s->add_option("--dataset", stats.dataset, "Dataset the study was built from");
  s->add_option("--seed", stats.seed, "Study blinding seed");
  s->add_option("--json", stats.json_out, "Also write the report as JSON");

  auto* v = app.add_subcommand("serve", "Run the blinded annotation service");
  v->add_option("--dataset", serve.dataset, "JSONL dataset")->required();
  v->add_option("--seed", serve.seed, "Study blinding seed");
  v->add_option("--annotators", serve.annotators, "Registered annotator ids")
      ->delimiter(',')
      ->required();
  v->add_option("--admin-key", serve.admin_key,
                "Export key (default: $EMRANK_ADMIN_KEY)");
  v->add_option("--annotations", serve.annotations, "Append-only annotation CSV");
  v->add_option("--host", serve.host, "Bind address");
  v->add_option("--port", serve.port, "Port");
  v->add_option("--item-limit", serve.item_limit, "Use only the first N items");
  v->add_option("--static-dir", serve.static_dir, "Serve a browser client from here");

  auto* c = app.add_subcommand("validate", "Check dataset, templates and fixtures");
  c->add_option("--dataset", validate.dataset, "JSONL dataset")->required();
  add_backend_options(c, backend);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (g->parsed()) return cmd_generate(gen, backend, out, err);
    if (j->parsed()) return cmd_judge(judge, backend, out, err);
    if (s->parsed()) return cmd_stats(stats, out, err);
    if (v->parsed()) return cmd_serve(serve, out);
    if (c->parsed()) return cmd_validate(validate, backend, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("emrank");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace emrank::cli
