#include <atomic>
#include <fstream>
#include <set>

#include <catch_amalgamated.hpp>

#include "pipeline_fixture.hpp"

using namespace qualcode;
using namespace qualcode::testing;
using Catch::Matchers::ContainsSubstring;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> n{0};
    path = fs::temp_directory_path() / fmt::format("qualcode-test-{}-{}", ::getpid(), n++);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Config all_axes() {
  Config c;
  c.strategies = {Strategy::Paired, Strategy::Question, Strategy::FullText};
  c.templates.assign(kAllTemplates.begin(), kAllTemplates.end());
  c.identities = default_identities();
  c.contexts = default_contexts();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

RunOptions options(const fs::path& out, std::size_t jobs, FixedClock& clock) {
  RunOptions o;
  o.out_dir = out;
  o.jobs = jobs;
  o.clock = &clock;
  return o;
}

}  // namespace

TEST_CASE("grid enumeration covers every axis combination", "[grid]") {
  auto cfg = all_axes();
  auto specs = enumerate_grid(cfg);
  CHECK(specs.size() == 3 * 5 * 3 * 2);

  std::set<std::string> ids;
  for (const auto& s : specs) ids.insert(s.id);
  CHECK(ids.size() == specs.size());

  // strategy is the outermost axis, context the innermost
  CHECK(specs[0].prompt.strategy == Strategy::Paired);
  CHECK(specs[0].prompt.context == cfg.contexts[0]);
  CHECK(specs[1].prompt.context == cfg.contexts[1]);
  CHECK(specs[2].prompt.identity == cfg.identities[1]);
  CHECK(specs[30].prompt.strategy == Strategy::Question);

  auto again = enumerate_grid(cfg);
  for (std::size_t i = 0; i < specs.size(); ++i) CHECK(again[i].id == specs[i].id);
}

TEST_CASE("grid size follows the axis sizes", "[grid]") {
  Config one;
  CHECK(enumerate_grid(one).size() == 1);

  auto cfg = all_axes();
  auto base = enumerate_grid(cfg).size();
  cfg.identities.push_back("a sociologist");
  CHECK(enumerate_grid(cfg).size() == base + 3 * 5 * 2);
}

TEST_CASE("experiment id tracks backend and parameter changes", "[grid]") {
  Config a;
  auto id = enumerate_grid(a).front().id;
  CHECK(id.size() == 16);

  Config b;
  b.backend.seed = 99;
  CHECK(enumerate_grid(b).front().id != id);

  Config c;
  c.params.temperature = 0.3;
  CHECK(enumerate_grid(c).front().id != id);

  Config d;
  d.grid.linkage_thresholds = {0.5};
  CHECK(enumerate_grid(d).front().id != id);
}

TEST_CASE("config parsing", "[config]") {
  SECTION("defaults") {
    auto c = parse_config(nlohmann::json::object(), "/base");
    CHECK(c.strategies == std::vector<Strategy>{Strategy::Paired});
    CHECK(c.templates == std::vector<TemplateId>{TemplateId::BaseT});
    CHECK(c.eval_threshold == 0.6);
    CHECK(c.backend.kind == "mock");
    CHECK(c.topic_embedders.size() == 2);
  }
  SECTION("paths resolve against the config directory") {
    auto j = nlohmann::json::parse(R"({"corpus": {"transcripts": ["t", "/abs/u"], "protocol": "p.txt"}})");
    auto c = parse_config(j, "/base/dir");
    REQUIRE(c.transcripts.size() == 2);
    CHECK(c.transcripts[0] == fs::path("/base/dir/t"));
    CHECK(c.transcripts[1] == fs::path("/abs/u"));
    CHECK(*c.protocol == fs::path("/base/dir/p.txt"));
  }
  SECTION("axes and grid") {
    auto j = nlohmann::json::parse(R"({
      "chunking": {"strategies": ["paired", "question"]},
      "generation": {"templates": ["base_t", "cot_t"], "identities": ["x", "y", "z"]},
      "topics": {"grid": {"reduced_dims": [3], "linkage_thresholds": [0.7]}},
      "evaluation": {"threshold": 0.5}
    })");
    auto c = parse_config(j, ".");
    CHECK(enumerate_grid(c).size() == 2 * 2 * 3 * 1);
    CHECK(c.grid.cells().size() == 4 * 1 * 4 * 1);
    CHECK(c.eval_threshold == 0.5);
  }
  SECTION("evaluation embedders fall back to topic embedders") {
    auto j = nlohmann::json::parse(R"({"embeddings": {"topics": [{"kind": "mock", "seed": 3, "dim": 16}]}})");
    auto c = parse_config(j, ".");
    REQUIRE(c.eval_embedders.size() == 1);
    CHECK(c.eval_embedders[0].dim == 16);
    CHECK(c.question_embedders[0].seed == 3);
  }
  SECTION("errors") {
    auto bad = [](const char* s) { return parse_config(nlohmann::json::parse(s), "."); };
    CHECK_THROWS_AS(bad(R"({"corpus": {"format": "docx"}})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"chunking": {"strategy": "paired", "strategies": ["paired"]}})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"chunking": {"tokenizer": "bpe"}})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"generation": {"identities": []}})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"topics": {"grid": {"min_cluster_sizes": []}}})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"backend": {"kind": "carrier-pigeon"}})"), ConfigError);
    CHECK_THROWS_AS(bad(R"([1, 2])"), ConfigError);
  }
  SECTION("load_config reports malformed JSON") {
    TempDir t;
    std::ofstream(t.path / "q.json") << "{ nope";
    CHECK_THROWS_AS(load_config(t.path / "q.json"), ConfigError);
  }
}

TEST_CASE("seed override reaches every mock component", "[config]") {
  Config c;
  apply_seed(c, 17);
  CHECK(c.backend.seed == 17);
  CHECK(c.grid.random_seed == 17);
  CHECK(c.topic_embedders[0].seed != c.topic_embedders[1].seed);
  Config d;
  apply_seed(d, 18);
  CHECK(enumerate_grid(c).front().id != enumerate_grid(d).front().id);
}

TEST_CASE("run log tolerates a torn final line", "[runlog]") {
  TempDir t;
  auto p = t.path / "runs" / "x.jsonl";
  {
    RunLog log(p, false);
    log.append({{"event", "a"}, {"n", 1}});
    log.append({{"event", "b"}, {"n", 2}});
  }
  std::ofstream(p, std::ios::app) << R"({"event": "c", "n)";
  auto events = read_run_log(p);
  REQUIRE(events.size() == 2);
  CHECK(events[1]["n"] == 2);

  {
    RunLog log(p, true);
    log.append({{"event", "d"}, {"n", 4}});
  }
  events = read_run_log(p);
  REQUIRE(events.size() == 3);
  CHECK(events[2]["event"] == "d");

  {
    RunLog log(p, false);
  }
  CHECK(read_run_log(p).empty());
}

TEST_CASE("run log rejects damage before the final line", "[runlog]") {
  TempDir t;
  auto p = t.path / "x.jsonl";
  std::ofstream(p) << "{\"event\":\"a\"}\n{oops\n{\"event\":\"b\"}\n";
  try {
    read_run_log(p);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(read_run_log(t.path / "missing.jsonl"), NotFoundError);
  std::ofstream(p) << "{\"event\":\"mystery\",\"experiment_id\":\"z\"}\n";
  CHECK_THROWS_AS(load_record(p), ParseError);
}

TEST_CASE("an experiment runs end to end on mocks", "[pipeline]") {
  TempDir t;
  auto corpus = synthetic_corpus(3, 4, 12);
  auto cfg = grid_config();
  auto spec = enumerate_grid(cfg).front();
  auto backends = make_backends(cfg);
  FixedClock clock;
  auto r = run_experiment(spec, corpus, backends, options(t.path, 2, clock));

  REQUIRE(r.complete);
  CHECK(r.experiment_id == spec.id);
  CHECK(r.corpus_fingerprint == corpus.fingerprint);
  CHECK(r.chunks.size() == 4 * 6);
  CHECK(r.results.size() == r.chunks.size());
  CHECK(r.unique_codes.size() == r.occurrences.size());
  std::size_t occ = 0;
  for (const auto& o : r.occurrences) occ += o.size();
  CHECK(occ == r.initial_code_count);
  REQUIRE(r.evaluation);
  REQUIRE(r.percent_refused);
  CHECK(*r.percent_refused >= 0.0);
  CHECK(*r.percent_refused <= 1.0);
  CHECK(r.duration_seconds == 0.0);
  std::vector<std::string> stages;
  for (const auto& s : r.stages) stages.push_back(s.stage);
  CHECK(stages == std::vector<std::string>{"chunk", "generate", "dedupe", "topics", "evaluate", "refusals"});

  auto replay = load_record(run_log_path(t.path, spec.id));
  CHECK(record_content(replay) == record_content(r));
}

TEST_CASE("runs are reproducible across repeats and worker counts", "[pipeline]") {
  auto corpus = synthetic_corpus(5, 4, 12);
  auto cfg = grid_config();
  auto specs = enumerate_grid(cfg);
  specs.resize(4);
  FixedClock clock;

  TempDir a, b, c;
  auto ra = run_grid(specs, corpus, make_backends(cfg), options(a.path, 1, clock));
  auto rb = run_grid(specs, corpus, make_backends(cfg), options(b.path, 1, clock));
  auto rc = run_grid(specs, corpus, make_backends(cfg), options(c.path, 8, clock));
  REQUIRE(ra.failures.empty());
  REQUIRE(rc.failures.empty());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CHECK(record_content(ra.records[i]) == record_content(rb.records[i]));
    CHECK(record_content(ra.records[i]) == record_content(rc.records[i]));
    CHECK(slurp(run_log_path(a.path, specs[i].id)) == slurp(run_log_path(b.path, specs[i].id)));
  }
  CHECK(bundle_bytes(build_reports(ra.records)) == bundle_bytes(build_reports(rc.records)));
}

TEST_CASE("single experiment with many workers matches one worker", "[pipeline]") {
  auto corpus = synthetic_corpus(6, 5, 12);
  auto cfg = grid_config();
  auto spec = enumerate_grid(cfg)[1];
  FixedClock clock;
  TempDir a, b;
  auto r1 = run_experiment(spec, corpus, make_backends(cfg), options(a.path, 1, clock));
  auto r8 = run_experiment(spec, corpus, make_backends(cfg), options(b.path, 8, clock));
  CHECK(record_content(r1) == record_content(r8));
}

TEST_CASE("resuming a finished run makes no backend calls", "[pipeline][resume]") {
  TempDir t;
  auto corpus = synthetic_corpus(7, 3, 10);
  auto cfg = grid_config();
  auto spec = enumerate_grid(cfg).front();
  FixedClock clock;
  auto first = run_experiment(spec, corpus, make_backends(cfg), options(t.path, 1, clock));

  auto backends = make_backends(cfg);
  auto counting = std::make_shared<CountingChat>(backends.chat);
  backends.chat = counting;
  auto o = options(t.path, 1, clock);
  o.resume = true;
  auto again = run_experiment(spec, corpus, backends, o);
  CHECK(counting->calls() == 0);
  CHECK(record_content(again) == record_content(first));
}

TEST_CASE("a crashed run resumes to the same record", "[pipeline][resume]") {
  auto corpus = synthetic_corpus(8, 4, 12);
  auto cfg = grid_config();
  auto spec = enumerate_grid(cfg)[2];
  FixedClock clock;

  TempDir clean;
  auto backends = make_backends(cfg);
  auto counter = std::make_shared<CountingChat>(backends.chat);
  backends.chat = counter;
  auto reference = run_experiment(spec, corpus, backends, options(clean.path, 1, clock));
  const long full_calls = counter->calls();
  REQUIRE(full_calls > 10);

  TempDir t;
  auto killed = make_backends(cfg);
  killed.chat = std::make_shared<CountingChat>(killed.chat, 9);
  CHECK_THROWS_WITH(run_experiment(spec, corpus, killed, options(t.path, 1, clock)), "process killed");
  auto path = run_log_path(t.path, spec.id);
  auto partial = load_record(path);
  CHECK_FALSE(partial.complete);
  REQUIRE(partial.failed_stage);
  CHECK(*partial.failed_stage == "generate");
  CHECK(partial.failure == "process killed");
  std::ofstream(path, std::ios::app) << R"({"event": "chunk_res)";

  auto resumed_backends = make_backends(cfg);
  auto resumed_counter = std::make_shared<CountingChat>(resumed_backends.chat);
  resumed_backends.chat = resumed_counter;
  auto o = options(t.path, 1, clock);
  o.resume = true;
  auto resumed = run_experiment(spec, corpus, resumed_backends, o);
  CHECK(resumed.complete);
  CHECK_FALSE(resumed.failed_stage);
  CHECK(resumed_counter->calls() < full_calls);
  CHECK(record_content(resumed) == record_content(reference));
}

TEST_CASE("resume refuses a changed corpus", "[pipeline][resume]") {
  TempDir t;
  auto cfg = grid_config();
  auto spec = enumerate_grid(cfg).front();
  FixedClock clock;
  run_experiment(spec, synthetic_corpus(9, 2, 8), make_backends(cfg), options(t.path, 1, clock));
  auto o = options(t.path, 1, clock);
  o.resume = true;
  CHECK_THROWS_AS(run_experiment(spec, synthetic_corpus(10, 2, 8), make_backends(cfg), o), ConfigError);
}

TEST_CASE("stop_after ends the run after the named stage", "[pipeline]") {
  TempDir t;
  auto corpus = synthetic_corpus(11, 2, 8);
  auto cfg = grid_config();
  auto spec = enumerate_grid(cfg).front();
  auto backends = make_backends(cfg);
  auto counter = std::make_shared<CountingChat>(backends.chat);
  backends.chat = counter;
  FixedClock clock;
  auto o = options(t.path, 1, clock);
  o.stop_after = Stage::Chunk;
  auto r = run_experiment(spec, corpus, backends, o);
  CHECK_FALSE(r.complete);
  CHECK(r.chunks.size() == 2 * 4);
  CHECK(r.results.empty());
  CHECK(counter->calls() == 0);

  o.stop_after = Stage::Dedupe;
  r = run_experiment(spec, corpus, backends, o);
  CHECK_FALSE(r.topics);
  CHECK(r.unique_codes.size() > 0);
  CHECK(load_records(t.path).empty());
  CHECK(load_records(t.path, true).size() == 1);
}

TEST_CASE("a failing experiment does not stop the grid", "[pipeline]") {
  TempDir t;
  auto corpus = synthetic_corpus(12, 2, 8);
  auto cfg = grid_config();
  auto specs = enumerate_grid(cfg);
  specs.resize(2);
  specs[1].params.temperature = -1.0;  // rejected at generation
  specs[1].id = experiment_id(specs[1]);
  FixedClock clock;
  auto out = run_grid(specs, corpus, make_backends(cfg), options(t.path, 2, clock));
  REQUIRE(out.failures.size() == 1);
  CHECK(out.failures[0].first == specs[1].id);
  CHECK(out.records[0].complete);
  CHECK_FALSE(out.records[1].complete);
  REQUIRE(out.records[1].failed_stage);
  CHECK(*out.records[1].failed_stage == "generate");
}

TEST_CASE("provenance resolves every emitted code", "[provenance]") {
  TempDir t;
  auto corpus = synthetic_corpus(13, 4, 12);
  auto cfg = grid_config();
  auto spec = enumerate_grid(cfg).front();
  FixedClock clock;
  auto r = run_experiment(spec, corpus, make_backends(cfg), options(t.path, 1, clock));
  ProvenanceIndex idx(r);

  std::map<std::string, const Chunk*> chunks;
  for (const auto& c : r.chunks) chunks[c.id] = &c;
  for (const auto& code : emitted_codes(r)) {
    const auto& ex = idx.lookup(code.id);
    CHECK_FALSE(ex.empty());
    CHECK(idx.code_text(code.id) == code.text);
    for (const auto& e : ex) {
      REQUIRE(chunks.count(e.chunk_id));
      CHECK(chunks[e.chunk_id]->text == e.text);
      CHECK(chunks[e.chunk_id]->interview_id == e.interview_id);
    }
    for (std::size_t i = 1; i < ex.size(); ++i)
      CHECK(std::tie(ex[i - 1].interview_id, ex[i - 1].turn_indices.front()) <=
            std::tie(ex[i].interview_id, ex[i].turn_indices.front()));
  }
  for (std::size_t i = 0; i < r.unique_codes.size(); ++i)
    CHECK(idx.lookup(initial_code_id(i)).size() == r.occurrences[i].size());
  CHECK_THROWS_AS(idx.lookup("ic-9999"), NotFoundError);
  CHECK_THROWS_AS(idx.code_text("zz"), NotFoundError);
}

TEST_CASE("provenance lists every occurrence of a repeated code", "[provenance]") {
  RunRecord r;
  for (int i = 0; i < 4; ++i) {
    Chunk c;
    c.id = fmt::format("c{}", i);
    c.interview_id = i < 2 ? "b" : "a";
    c.ordinal = static_cast<std::size_t>(i);
    c.source_turn_indices = {static_cast<std::size_t>(10 - i)};
    c.text = fmt::format("excerpt {}", i);
    r.chunks.push_back(c);
  }
  r.unique_codes = {InitialCode{"Fear", std::nullopt, "c0", "e", 1}, InitialCode{"Family", std::nullopt, "c1", "e", 1}};
  r.occurrences = {{"c0", "c1", "c3"}, {"c1"}};
  ProvenanceIndex idx(r);
  const auto& ex = idx.lookup("ic-0001");
  REQUIRE(ex.size() == 3);
  CHECK(ex[0].chunk_id == "c3");
  CHECK(ex[1].chunk_id == "c1");
  CHECK(ex[2].chunk_id == "c0");
  CHECK(idx.lookup("ic-0002").size() == 1);
  CHECK(idx.code_ids() == std::vector<std::string>{"ic-0001", "ic-0002"});
}

TEST_CASE("redaction check", "[redaction]") {
  std::vector<CodeRef> codes;
  for (int i = 0; i < 100; ++i) codes.push_back({initial_code_id(static_cast<std::size_t>(i)), fmt::format("Theme {}", i)});
  std::vector<std::string> none;
  CHECK(redaction_check(codes, none).empty());

  codes[17].text = "Marcus and his brother";
  codes[64].text = "Loss of MARCUS";
  std::vector<std::string> names = {"Marcus"};
  auto v = redaction_check(codes, names);
  REQUIRE(v.size() == 2);
  CHECK(v[0].code_id == "ic-0018");
  CHECK(v[1].code_id == "ic-0065");
  CHECK(v[0].names == names);

  std::vector<CodeRef> near = {{"x", "Marcusville pride"}, {"y", "Mar cus"}};
  CHECK(redaction_check(near, names).empty());

  CHECK(parse_name_list("# names\nMarcus\n\n  Dee \n") == std::vector<std::string>{"Marcus", "Dee"});
}

TEST_CASE("a planted pseudonym is caught in a real run", "[redaction]") {
  TempDir t;
  auto corpus = synthetic_corpus(14, 3, 10);
  corpus.interviews[1].turns[2].text = "And Marcus?";
  corpus.interviews[1].turns[3].text = "Marcus.";
  corpus.fingerprint = corpus_fingerprint(corpus);
  auto cfg = grid_config();
  cfg.backend.refusal_rate = 0.0;
  auto spec = enumerate_grid(cfg).front();
  FixedClock clock;
  auto r = run_experiment(spec, corpus, make_backends(cfg), options(t.path, 1, clock));
  std::vector<std::string> names = {"Marcus"};
  auto v = redaction_check(emitted_codes(r), names);
  CHECK_FALSE(v.empty());
  for (const auto& x : v) CHECK(text::contains_word(x.code, "marcus"));
}

TEST_CASE("report bundle from live records matches replayed logs", "[reports]") {
  TempDir t;
  auto corpus = synthetic_corpus(15, 4, 12);
  auto cfg = grid_config();
  auto specs = enumerate_grid(cfg);
  FixedClock clock;
  auto out = run_grid(specs, corpus, make_backends(cfg), options(t.path, 4, clock));
  REQUIRE(out.failures.empty());

  HumanColumn hc{35.0, corpus.codebook->initial_codes.size(), corpus.codebook->formal_codes.size()};
  auto live = build_reports(out.records, hc);
  auto replay = build_reports(load_records(t.path), hc);
  CHECK(bundle_bytes(live) == bundle_bytes(replay));

  auto files = write_reports(live, t.path / "report");
  std::set<std::string> names;
  for (const auto& f : files) {
    CHECK(fs::exists(f));
    names.insert(f.filename().string());
  }
  CHECK(names == std::set<std::string>{"comparison.md", "comparison.csv", "scatter.csv", "refusals.csv",
                                       "linkage.json", "statistics.json"});
  CHECK_THROWS_AS(build_reports({}), DomainError);

  CHECK_THAT(live.comparison_md, ContainsSubstring("| HC |"));
  CHECK_THAT(live.comparison_md, ContainsSubstring("| Time Spent (hrs) | 35 |"));

  // one scatter row per experiment
  CHECK(text::split_lines(live.scatter_csv).size() == 1 + specs.size());

  auto stats = nlohmann::json::parse(live.statistics_json);
  CHECK(stats.contains("wilcoxon"));
  CHECK(stats.contains("pearson"));
  auto linkage = nlohmann::json::parse(live.linkage_json);
  CHECK(linkage.size() == specs.size());
}

TEST_CASE("refusal csv totals match a direct tally", "[reports]") {
  TempDir t;
  auto corpus = synthetic_corpus(16, 4, 12);
  auto cfg = grid_config();
  cfg.backend.refusal_rate = 0.5;
  auto specs = enumerate_grid(cfg);
  specs.resize(3);
  FixedClock clock;
  auto out = run_grid(specs, corpus, make_backends(cfg), options(t.path, 3, clock));
  REQUIRE(out.failures.empty());

  // tally category labels straight from the records; a refusal may carry several
  std::map<std::string, std::size_t> tally;
  std::size_t refused = 0, labels = 0;
  for (const auto& r : out.records) {
    for (const auto& rec : r.refusals) {
      CHECK_FALSE(rec.categories.empty());
      for (const auto& c : rec.categories) ++tally[c];
      labels += rec.categories.size();
    }
    refused += r.refusals.size();
  }
  REQUIRE(refused > 0);

  auto csv = build_reports(out.records).refusals_csv;
  std::map<std::string, std::size_t> all;
  std::size_t per_experiment_sum = 0;
  for (auto line : text::split_lines(csv)) {
    std::vector<std::string> f;
    std::string cell;
    for (char ch : line) {
      if (ch == ',') f.push_back(std::exchange(cell, {}));
      else cell += ch;
    }
    f.push_back(cell);
    if (f.size() < 5 || f[0] == "experiment_id") continue;
    if (f[0] == "ALL") {
      all[f[1]] = std::stoul(f[2]);
      CHECK(std::stoul(f[3]) == refused);
    } else {
      per_experiment_sum += std::stoul(f[2]);
    }
  }
  CHECK(per_experiment_sum == labels);
  for (const auto& [cat, n] : tally) CHECK(all[cat] == n);
  std::size_t all_sum = 0;
  for (const auto& [_, n] : all) all_sum += n;
  CHECK(all_sum == labels);
}

TEST_CASE("number formatting", "[reports]") {
  CHECK(format_trimmed(0.694, 3) == ".694");
  CHECK(format_trimmed(0.68, 3) == ".68");
  CHECK(format_trimmed(0.16, 2) == ".16");
  CHECK(format_trimmed(35.0, 2) == "35");
  CHECK(format_trimmed(1.449999, 2) == "1.45");
  CHECK(format_trimmed(0.0, 3) == "0");
  CHECK(format_percent(100.0, 0) == "100%");
  CHECK(format_percent(9.009, 1) == "9.0%");
  CHECK(format_percent(26.5, 0) == "27%");
  CHECK(format_percent(0.0, 0) == "0%");
}

TEST_CASE("comparison table renders missing values as N/A", "[reports]") {
  HumanColumn h{35.0, 41, 11};
  auto col = human_column(h);
  CHECK(column_line(col) == "35 | 41 | 11 | N/A | N/A | N/A | N/A | N/A");
  h.hours.reset();
  CHECK(column_line(human_column(h)).rfind("N/A | 41", 0) == 0);
}
