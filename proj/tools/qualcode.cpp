// qualcode: command-line driver for the coding pipeline.

#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "qualcode/qualcode.hpp"
#include "qualcode/remote.hpp"

namespace qc = qualcode;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config = "qualcode.json";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string backend;
  bool resume = false;
  bool frozen_clock = false;
  std::string out = "out";
  bool verbose = false;
};

struct Session {
  qc::Config config;
  std::unique_ptr<qc::Clock> clock;
  qc::RunOptions run;
};

Session open_session(const Globals& g) {
  Session s;
  s.config = qc::load_config(g.config);
  if (g.seed) qc::apply_seed(s.config, *g.seed);
  if (g.jobs) s.config.jobs = *g.jobs;
  if (g.backend == "mock") {
    s.config.backend.kind = "mock";
  } else if (!g.backend.empty()) {
    s.config.backend.kind = "http";
    s.config.backend.url = g.backend;
  }
  if (g.frozen_clock) s.clock = std::make_unique<qc::FixedClock>();
  else s.clock = std::make_unique<qc::SystemClock>();
  s.run.out_dir = g.out;
  s.run.jobs = std::max<std::size_t>(1, s.config.jobs);
  s.run.resume = g.resume;
  s.run.clock = s.clock.get();
  return s;
}

qc::Backends backends_for(const qc::Config& c) {
  auto factory = qc::remote_factory(c.max_retries);
  return qc::make_backends(c, &factory);
}

int run_grid_until(const Globals& g, std::optional<qc::Stage> stop_after, bool report) {
  auto s = open_session(g);
  auto corpus = qc::load_corpus(s.config);
  auto backends = backends_for(s.config);
  auto specs = qc::enumerate_grid(s.config);
  s.run.stop_after = stop_after;
  spdlog::info("{} experiment(s), {} interview(s)", specs.size(), corpus.interviews.size());
  auto outcome = qc::run_grid(specs, corpus, backends, s.run);

  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& r = outcome.records[i];
    std::string status = r.complete ? "complete" : r.failed_stage ? "failed in " + *r.failed_stage : "stopped";
    fmt::print("{}  {:<9} {:<11} chunks={} codes={}", specs[i].id, qc::strategy_name(specs[i].prompt.strategy),
               qc::template_name(specs[i].prompt.template_id), r.chunks.size(), r.unique_codes.size());
    if (r.topics && r.topics->model) fmt::print(" formal={}", r.topics->formal_codes.size());
    if (r.percent_refused) fmt::print(" refused={:.1f}%", 100.0 * *r.percent_refused);
    fmt::print("  {}\n", status);
  }
  if (report) {
    auto records = qc::load_records(s.run.out_dir);
    if (!records.empty()) {
      std::optional<qc::HumanColumn> human;
      if (corpus.codebook)
        human = qc::HumanColumn{s.config.human_hours, corpus.codebook->initial_codes.size(),
                                corpus.codebook->formal_codes.size()};
      auto dir = s.run.out_dir / "report";
      qc::write_reports(qc::build_reports(records, human), dir);
      fmt::print("reports written to {}\n", dir.string());
    }
  }
  for (const auto& [id, err] : outcome.failures) fmt::print(stderr, "experiment {} failed: {}\n", id, err);
  return outcome.failures.empty() ? 0 : 3;
}

int cmd_ingest(const Globals& g) {
  auto s = open_session(g);
  auto corpus = qc::load_corpus(s.config);
  std::map<qc::Strategy, std::vector<qc::Chunk>> sets;
  std::unique_ptr<qc::Backends> backends;
  for (auto strategy : s.config.strategies) {
    if (strategy == qc::Strategy::Question) {
      if (!corpus.protocol) {
        spdlog::warn("no question protocol configured; skipping question chunk counts");
        continue;
      }
      if (!backends) backends = std::make_unique<qc::Backends>(backends_for(s.config));
    }
    qc::ChunkSettings cs{strategy, s.config.max_tokens, s.config.sim_threshold};
    sets[strategy] = qc::chunk_corpus(corpus.interviews, cs, qc::Tokenizer::whitespace(),
                                      corpus.protocol ? &*corpus.protocol : nullptr,
                                      backends ? backends->question.get() : nullptr, s.run.jobs);
  }
  auto stats = qc::corpus_stats(corpus.interviews, sets, corpus.protocol ? corpus.protocol->size() : 0,
                                s.config.sd_kind);
  std::cout << qc::render_corpus_stats(stats);

  fs::create_directories(s.run.out_dir);
  auto path = s.run.out_dir / "corpus.jsonl";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  for (const auto& iv : corpus.interviews) f << qc::serialize_transcript(iv, qc::TranscriptFormat::TurnRecords);
  if (!f) throw qc::Error("cannot write " + path.string());
  fmt::print("cleaned corpus written to {} (fingerprint {})\n", path.string(), corpus.fingerprint);
  return 0;
}

qc::RunRecord find_record(const Globals& g, const std::string& id) {
  auto path = qc::run_log_path(g.out, id);
  if (!fs::exists(path)) {
    // Accept an unambiguous id prefix.
    std::vector<fs::path> hits;
    if (fs::exists(fs::path(g.out) / "runs"))
      for (const auto& e : fs::directory_iterator(fs::path(g.out) / "runs"))
        if (e.path().extension() == ".jsonl" && e.path().stem().string().rfind(id, 0) == 0) hits.push_back(e.path());
    if (hits.size() != 1)
      throw qc::NotFoundError(hits.empty() ? "no run log for experiment '" + id + "'"
                                           : "experiment prefix '" + id + "' is ambiguous");
    path = hits.front();
  }
  return qc::load_record(path);
}

int cmd_report(const Globals& g) {
  std::optional<qc::HumanColumn> human;
  if (fs::exists(g.config)) {
    auto cfg = qc::load_config(g.config);
    if (cfg.codebook) {
      auto cb = qc::parse_codebook(nlohmann::json::parse(qc::detail::read_file(*cfg.codebook)));
      human = qc::HumanColumn{cfg.human_hours, cb.initial_codes.size(), cb.formal_codes.size()};
    }
  }
  auto records = qc::load_records(g.out);
  if (records.empty()) throw qc::NotFoundError("no completed run records under " + (fs::path(g.out) / "runs").string());
  auto dir = fs::path(g.out) / "report";
  for (const auto& p : qc::write_reports(qc::build_reports(records, human), dir)) fmt::print("{}\n", p.string());
  return 0;
}

int cmd_provenance(const Globals& g, const std::string& experiment, const std::string& code) {
  auto record = find_record(g, experiment);
  qc::ProvenanceIndex index(record);
  if (code.empty()) {
    for (const auto& id : index.code_ids())
      fmt::print("{}\t{}\t{}\n", id, index.lookup(id).size(), index.code_text(id));
    return 0;
  }
  fmt::print("{}: {}\n", code, index.code_text(code));
  for (const auto& e : index.lookup(code)) {
    std::vector<std::string> turns;
    for (auto t : e.turn_indices) turns.push_back(std::to_string(t));
    fmt::print("\n[{}] interview {} turns {}\n{}\n", e.chunk_id, e.interview_id, qc::text::join(turns, ","), e.text);
  }
  return 0;
}

int cmd_redact(const Globals& g, std::string names_path) {
  if (names_path.empty()) {
    auto cfg = qc::load_config(g.config);
    if (!cfg.redaction_names) throw qc::ConfigError("no name list: set [redaction] names or pass --names");
    names_path = cfg.redaction_names->string();
  }
  auto names = qc::parse_name_list(qc::detail::read_file(names_path));
  auto records = qc::load_records(g.out, true);
  std::size_t total = 0;
  for (const auto& r : records) {
    auto codes = qc::emitted_codes(r);
    for (const auto& v : qc::redaction_check(codes, names)) {
      fmt::print("{}\t{}\t{}\t{}\n", r.experiment_id, v.code_id, qc::text::join(v.names, ";"), v.code);
      ++total;
    }
  }
  fmt::print(stderr, "{} violation(s) in {} record(s)\n", total, records.size());
  return 0;
}

int cmd_refusals(const Globals& g) {
  int rc = run_grid_until(g, std::nullopt, false);
  for (const auto& r : qc::load_records(g.out)) {
    if (!r.percent_refused) continue;
    fmt::print("{} refused {:.1f}% ({} responses)\n", r.experiment_id, 100.0 * *r.percent_refused, r.refusals.size());
    for (const auto& [cat, n] : qc::refusal_distribution(r.refusals, qc::record_taxonomy(r)))
      if (n > 0) fmt::print("  {:<14}{}\n", cat, n);
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("qualcode");
  spdlog::set_default_logger(logger);

  CLI::App app{"Inductive coding of interview transcripts with a chat model"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Config file (JSON)");
  app.add_option("--seed", g.seed, "Reseed every mock component");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--backend", g.backend, "Chat backend: 'mock' or an endpoint URL");
  app.add_flag("--resume", g.resume, "Continue interrupted runs from their logs");
  app.add_flag("--frozen-clock", g.frozen_clock, "Record zero timestamps and durations");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");

  auto* ingest = app.add_subcommand("ingest", "Parse and clean transcripts, print corpus statistics");
  auto* chunk = app.add_subcommand("chunk", "Run experiments up to chunking");
  auto* generate = app.add_subcommand("generate", "Run experiments up to initial codes");
  auto* topics = app.add_subcommand("topics", "Run experiments up to formal codes");
  auto* evaluate = app.add_subcommand("evaluate", "Run experiments up to evaluation");
  auto* refusals = app.add_subcommand("refusals", "Run experiments and print refusal audits");
  auto* run = app.add_subcommand("run", "Run every experiment and write reports");
  auto* report = app.add_subcommand("report", "Write reports from finished run logs");
  auto* provenance = app.add_subcommand("provenance", "List codes of a run, or the excerpts behind one code");
  std::string prov_experiment, prov_code;
  provenance->add_option("experiment", prov_experiment, "Experiment id (or unique prefix)")->required();
  provenance->add_option("code", prov_code, "Code id, e.g. ic-0001 or fc-0001");
  auto* redact = app.add_subcommand("redact", "Flag emitted codes containing listed names");
  std::string names_path;
  redact->add_option("--names", names_path, "Name list, one per line");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*ingest) return cmd_ingest(g);
    if (*chunk) return run_grid_until(g, qc::Stage::Chunk, false);
    if (*generate) return run_grid_until(g, qc::Stage::Dedupe, false);
    if (*topics) return run_grid_until(g, qc::Stage::Topics, false);
    if (*evaluate) return run_grid_until(g, qc::Stage::Evaluate, false);
    if (*refusals) return cmd_refusals(g);
    if (*run) return run_grid_until(g, std::nullopt, true);
    if (*report) return cmd_report(g);
    if (*provenance) return cmd_provenance(g, prov_experiment, prov_code);
    if (*redact) return cmd_redact(g, names_path);
  } catch (const qc::ParseError& e) {
    fmt::print(stderr, "parse error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
