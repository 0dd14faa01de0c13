#pragma once

// Experiment orchestration: corpus loading, the experiment grid, the staged
// run (chunk, generate, dedupe, topics, evaluate, refusal audit) with its
// run log, provenance lookup and the redaction check.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "qualcode/chunking.hpp"
#include "qualcode/config.hpp"
#include "qualcode/embeddings.hpp"
#include "qualcode/error.hpp"
#include "qualcode/evaluation.hpp"
#include "qualcode/generation.hpp"
#include "qualcode/json_io.hpp"
#include "qualcode/parallel.hpp"
#include "qualcode/refusals.hpp"
#include "qualcode/run_record.hpp"
#include "qualcode/text.hpp"
#include "qualcode/topics.hpp"
#include "qualcode/transcripts.hpp"

namespace qualcode {

// ---------------------------------------------------------------------------
// Corpus

struct Corpus {
  std::vector<Interview> interviews;
  std::optional<QuestionProtocol> protocol;
  std::optional<HumanCodebook> codebook;
  std::string fingerprint;
};

inline std::string corpus_fingerprint(const Corpus& c) {
  std::string blob;
  for (const auto& iv : c.interviews) blob += serialize_transcript(iv, TranscriptFormat::TurnRecords);
  blob += '\x1e';
  if (c.protocol)
    for (const auto& q : c.protocol->questions) blob += q + '\n';
  blob += '\x1e';
  if (c.codebook) {
    for (const auto& s : c.codebook->initial_codes) blob += s + '\n';
    blob += '\x1f';
    for (const auto& s : c.codebook->formal_codes) blob += s + '\n';
  }
  return text::sha256_hex(blob).substr(0, 16);
}

namespace detail {

inline std::vector<fs::path> expand_paths(const std::vector<fs::path>& paths) {
  std::vector<fs::path> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path());
      std::sort(files.begin(), files.end());
      out.insert(out.end(), files.begin(), files.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw ConfigError("transcript path not found: " + p.string());
    }
  }
  return out;
}

}  // namespace detail

inline Corpus load_corpus(const Config& cfg) {
  Corpus c;
  if (cfg.transcripts.empty()) throw ConfigError("[corpus] lists no transcripts");
  for (const auto& file : detail::expand_paths(cfg.transcripts)) {
    auto raw = detail::read_file(file);
    std::vector<Interview> parsed;
    try {
      if (cfg.format == TranscriptFormat::TurnRecords) parsed = parse_turn_records(raw, cfg.parse);
      else parsed.push_back(parse_transcript(raw, cfg.format, file.stem().string(), cfg.parse));
    } catch (const ParseError& e) {
      throw ParseError(e.line(), file.string() + ": " + e.what());
    }
    for (auto& iv : parsed) {
      for (const auto& existing : c.interviews)
        if (existing.id == iv.id) throw ConfigError("interview '" + iv.id + "' appears in more than one place");
      c.interviews.push_back(std::move(iv));
    }
  }
  if (c.interviews.empty()) throw ConfigError("corpus holds no interviews");
  if (cfg.protocol) c.protocol = parse_protocol(detail::read_file(*cfg.protocol));
  if (cfg.codebook) c.codebook = parse_codebook(nlohmann::json::parse(detail::read_file(*cfg.codebook)));
  c.fingerprint = corpus_fingerprint(c);
  return c;
}

// ---------------------------------------------------------------------------
// Backends

struct Backends {
  std::shared_ptr<ChatBackend> chat;
  std::shared_ptr<const EnsembleEmbedder> question;
  std::shared_ptr<const EnsembleEmbedder> topics;
  std::shared_ptr<const EnsembleEmbedder> evaluation;
  Tokenizer tokenizer = Tokenizer::whitespace();
};

// Builders for the HTTP implementations, supplied by the remote header so the
// core does not depend on an HTTP client.
struct RemoteFactory {
  std::function<std::shared_ptr<ChatBackend>(const BackendConfig&)> chat;
  std::function<std::shared_ptr<EmbeddingProvider>(const ProviderConfig&)> embedder;
};

inline Backends make_backends(const Config& cfg, const RemoteFactory* remote = nullptr) {
  Backends b;
  if (cfg.backend.kind == "mock") {
    MockChatOptions o;
    o.seed = cfg.backend.seed;
    o.refusal_rate = cfg.backend.refusal_rate;
    o.naming_refusal_rate = cfg.backend.naming_refusal_rate;
    b.chat = std::make_shared<MockChatBackend>(o);
  } else {
    if (!remote || !remote->chat) throw ConfigError("HTTP chat backend is not available in this build");
    b.chat = remote->chat(cfg.backend);
  }
  auto cache = std::make_shared<EmbeddingCache>();
  EmbedOptions eo;
  eo.max_in_flight = std::max<std::size_t>(1, cfg.backend.in_flight);
  auto build = [&](const std::vector<ProviderConfig>& list) {
    std::vector<std::shared_ptr<EmbeddingProvider>> providers;
    for (const auto& p : list) {
      if (p.kind == "mock") {
        providers.push_back(std::make_shared<MockEmbeddingProvider>(p.seed, p.dim, p.text_weight));
      } else {
        if (!remote || !remote->embedder) throw ConfigError("HTTP embedding provider is not available in this build");
        providers.push_back(remote->embedder(p));
      }
    }
    return std::make_shared<const EnsembleEmbedder>(std::move(providers), cache, eo);
  };
  b.question = build(cfg.question_embedders);
  b.topics = build(cfg.topic_embedders);
  b.evaluation = build(cfg.eval_embedders);
  return b;
}

// ---------------------------------------------------------------------------
// Experiment grid

struct ExperimentSpec {
  std::string id;
  PromptSpec prompt;
  GenerationParams params;
  ChunkSettings chunk;
  std::size_t max_retries = 3;
  std::vector<std::string> refusal_markers = default_refusal_markers();
  bool topics_enabled = true;
  std::vector<TopicParams> topic_grid;
  KeywordOptions keywords;
  std::size_t representatives = 3;
  double eval_threshold = kDefaultMatchThreshold;
  RefusalTaxonomy taxonomy = default_taxonomy();
  nlohmann::json backends = nlohmann::json::object();  // chat and embedder settings
};

// Canonical settings document; object keys are sorted on output, so equal
// settings always dump to equal bytes.
inline nlohmann::json spec_json(const ExperimentSpec& s) {
  nlohmann::json tax = nlohmann::json::array();
  for (const auto& c : s.taxonomy.categories) tax.push_back({{"name", c.name}, {"keywords", c.keywords}});
  return {{"prompt", s.prompt},
          {"generation", s.params},
          {"chunking", s.chunk},
          {"max_retries", s.max_retries},
          {"refusal_markers", s.refusal_markers},
          {"topics", {{"enabled", s.topics_enabled},
                      {"grid", s.topic_grid},
                      {"top_k", s.keywords.top_k},
                      {"remove_stop_words", s.keywords.remove_stop_words},
                      {"representatives", s.representatives}}},
          {"evaluation", {{"threshold", s.eval_threshold}}},
          {"taxonomy", tax},
          {"backends", s.backends}};
}

inline std::string experiment_id(const ExperimentSpec& s) { return text::sha256_hex(spec_json(s).dump()).substr(0, 16); }

// strategy x template x identity x context, in that nesting order.
inline std::vector<ExperimentSpec> enumerate_grid(const Config& cfg) {
  nlohmann::json backends = {{"chat", backend_json(cfg.backend)}};
  for (auto [key, list] : {std::pair{"question", &cfg.question_embedders}, std::pair{"topics", &cfg.topic_embedders},
                           std::pair{"evaluation", &cfg.eval_embedders}}) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : *list) arr.push_back(provider_json(p));
    backends["embedders"][key] = std::move(arr);
  }
  std::vector<ExperimentSpec> out;
  for (auto strategy : cfg.strategies)
    for (auto tmpl : cfg.templates) {
      try {
        (void)prompt_template(tmpl, strategy);
      } catch (const RenderError&) {
        continue;
      }
      for (const auto& identity : cfg.identities)
        for (const auto& context : cfg.contexts) {
          ExperimentSpec s;
          s.prompt = {tmpl, identity, context, strategy};
          s.params = cfg.params;
          s.chunk = {strategy, cfg.max_tokens, cfg.sim_threshold};
          s.max_retries = cfg.max_retries;
          s.refusal_markers = cfg.refusal_markers;
          s.topics_enabled = cfg.topics_enabled;
          s.topic_grid = cfg.grid.cells();
          s.keywords = cfg.keywords;
          s.representatives = cfg.representatives;
          s.eval_threshold = cfg.eval_threshold;
          s.taxonomy = cfg.taxonomy;
          s.backends = backends;
          s.id = experiment_id(s);
          out.push_back(std::move(s));
        }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Running one experiment

enum class Stage { Chunk, Generate, Dedupe, Topics, Evaluate, Refusals };

inline std::string_view stage_name(Stage s) noexcept {
  switch (s) {
    case Stage::Chunk: return "chunk";
    case Stage::Generate: return "generate";
    case Stage::Dedupe: return "dedupe";
    case Stage::Topics: return "topics";
    case Stage::Evaluate: return "evaluate";
    case Stage::Refusals: return "refusals";
  }
  return "?";
}

struct RunOptions {
  fs::path out_dir = "out";
  std::size_t jobs = 1;
  bool resume = false;
  Clock* clock = nullptr;  // system clock when null
  std::optional<Stage> stop_after;
};

inline fs::path run_log_path(const fs::path& out_dir, std::string_view id) {
  return out_dir / "runs" / (std::string(id) + ".jsonl");
}

// Text a formal code is evaluated under: its name, or its keywords when the
// model declined to name it.
inline std::string formal_code_text(const FormalCode& f) { return f.name ? *f.name : text::join(f.keywords, " "); }

inline RunRecord run_experiment(const ExperimentSpec& spec, const Corpus& corpus, const Backends& backends,
                                const RunOptions& opts = {}) {
  if (!backends.chat || !backends.question || !backends.topics || !backends.evaluation)
    throw ConfigError("run_experiment: backends incomplete");
  SystemClock system_clock;
  Clock& clock = opts.clock ? *opts.clock : system_clock;
  const auto path = run_log_path(opts.out_dir, spec.id);

  std::unordered_map<std::string, LlmTurnResult> completed;
  if (opts.resume && fs::exists(path)) {
    auto events = read_run_log(path);
    auto prev = fold_record(events);
    if (!prev.corpus_fingerprint.empty() && prev.corpus_fingerprint != corpus.fingerprint)
      throw ConfigError("corpus changed since run " + spec.id + " started; rerun without --resume");
    if (prev.complete) return prev;
    for (const auto& e : events)
      if (e.at("event") == "chunk_result") {
        auto r = e.at("result").get<LlmTurnResult>();
        if (r.status != ResultStatus::TransportFailed) completed.insert_or_assign(r.chunk_id, std::move(r));
      }
    if (!completed.empty()) spdlog::info("{}: resuming with {} finished chunks", spec.id, completed.size());
  }

  RunLog log(path, opts.resume);
  const auto t0 = clock.now();
  auto event = [&](std::string_view kind) {
    return nlohmann::json{{"event", kind}, {"experiment_id", spec.id}, {"time", iso_timestamp(clock.now())}};
  };
  {
    auto e = event("experiment_start");
    e["spec"] = spec_json(spec);
    e["corpus_fingerprint"] = corpus.fingerprint;
    log.append(e);
  }

  // Runs one stage; returns true when the run should stop after it.
  auto stage = [&](Stage s, auto&& body) {
    const auto ts = clock.now();
    try {
      body();
    } catch (const std::exception& ex) {
      auto e = event("stage_failed");
      e["stage"] = stage_name(s);
      e["error"] = ex.what();
      log.append(e);
      throw;
    }
    auto e = event("stage_complete");
    e["stage"] = stage_name(s);
    e["seconds"] = seconds_between(ts, clock.now());
    log.append(e);
    return opts.stop_after == s;
  };
  auto finish = [&] { return load_record(path); };

  const QuestionProtocol* protocol = corpus.protocol ? &*corpus.protocol : nullptr;

  std::vector<Chunk> chunks;
  if (stage(Stage::Chunk, [&] {
        chunks = chunk_corpus(corpus.interviews, spec.chunk, backends.tokenizer, protocol, backends.question.get(),
                              opts.jobs);
        auto e = event("chunks");
        e["chunks"] = chunks;
        log.append(e);
      }))
    return finish();

  std::vector<LlmTurnResult> results;
  if (stage(Stage::Generate, [&] {
        GenerationOptions g;
        g.experiment_id = spec.id;
        g.jobs = opts.jobs;
        g.max_retries = spec.max_retries;
        g.refusal_markers = spec.refusal_markers;
        g.protocol = protocol;
        g.completed = &completed;
        g.on_result = [&](const LlmTurnResult& r) {
          auto e = event("chunk_result");
          e["result"] = r;
          log.append(e);
        };
        results = run_generation(chunks, spec.prompt, spec.params, *backends.chat, g);
      }))
    return finish();

  std::vector<InitialCode> unique;
  if (stage(Stage::Dedupe, [&] {
        std::vector<InitialCode> all;
        for (const auto& r : results) all.insert(all.end(), r.parsed_codes.begin(), r.parsed_codes.end());
        auto d = dedupe(all);
        std::vector<std::vector<std::string>> occ;
        for (const auto& group : d.occurrences) {
          std::vector<std::string> ids;
          for (const auto& c : group) ids.push_back(c.chunk_id);
          occ.push_back(std::move(ids));
        }
        unique = d.unique;
        auto e = event("codes");
        e["initial_count"] = all.size();
        e["unique"] = d.unique;
        e["occurrences"] = occ;
        log.append(e);
      }))
    return finish();

  std::optional<TopicOutcome> topics;
  if (spec.topics_enabled) {
    if (stage(Stage::Topics, [&] {
          TopicOutcome t;
          std::vector<std::string> docs;
          for (const auto& c : unique) docs.push_back(c.text);
          GridSearchOptions go;
          go.jobs = opts.jobs;
          go.representatives = spec.representatives;
          go.keywords = spec.keywords;
          try {
            auto g = grid_search(docs, *backends.topics, spec.topic_grid, go);
            t.model = std::move(g.model);
            t.cells = std::move(g.cells);
          } catch (const DomainError& ex) {
            t.skipped = ex.what();
            spdlog::warn("{}: topic model skipped: {}", spec.id, t.skipped);
          }
          if (t.model) {
            auto named = name_topics(*t.model, unique, *backends.chat, spec.params, opts.jobs, spec.max_retries);
            t.formal_codes = std::move(named.formal_codes);
            for (auto& r : named.results)
              t.naming.push_back({std::move(r.name), std::move(r.raw_response), r.refused, r.transport_failed});
          }
          topics = t;
          auto e = event("topics");
          e["topics"] = t;
          log.append(e);
        }))
      return finish();
  }

  if (corpus.codebook) {
    if (stage(Stage::Evaluate, [&] {
          const auto& cb = *corpus.codebook;
          const auto& emb = *backends.evaluation;
          const double thr = spec.eval_threshold;
          EvaluationOutcome ev;
          ev.hc_initial_count = cb.initial_codes.size();
          ev.hc_formal_count = cb.formal_codes.size();
          auto all_hc = cb.all_codes();
          auto hc_formal = emb.embed_batch(cb.formal_codes);
          auto hc_all = emb.embed_batch(all_hc);
          auto score = [&](const std::vector<std::string>& mc) {
            Scores s;
            auto mv = emb.embed_batch(mc);
            s.captured = percent_captured_vectors(hc_formal, mv, thr);
            if (!mv.empty()) s.relevant = percent_relevant_vectors(mv, hc_all, thr);
            return s;
          };
          std::vector<std::string> mc;
          for (const auto& c : unique) mc.push_back(c.text);
          ev.initial = score(mc);
          if (topics && topics->model && !topics->formal_codes.empty()) {
            std::vector<std::string> fm;
            for (const auto& f : topics->formal_codes) fm.push_back(formal_code_text(f));
            ev.formal = score(fm);
            ev.alignment = alignment_table(cb.formal_codes, *topics->model, topics->formal_codes, *backends.topics, thr);
          }
          auto e = event("evaluation");
          e["evaluation"] = ev;
          log.append(e);
        }))
      return finish();
  }

  stage(Stage::Refusals, [&] {
    auto records = audit_refusals(results, spec.id, spec.taxonomy);
    auto e = event("refusal_audit");
    bool reached = std::any_of(results.begin(), results.end(),
                               [](const auto& r) { return r.status != ResultStatus::TransportFailed; });
    e["percent_refused"] = reached ? nlohmann::json(percent_refused(results)) : nlohmann::json(nullptr);
    e["records"] = records;
    log.append(e);
  });

  auto e = event("experiment_complete");
  e["duration_seconds"] = seconds_between(t0, clock.now());
  log.append(e);
  return finish();
}

struct GridOutcome {
  std::vector<RunRecord> records;               // spec order
  std::vector<std::pair<std::string, std::string>> failures;  // experiment id, error
};

// Runs every spec. With several experiments and jobs > 1 the experiments run
// in parallel and each one runs single-threaded inside. A failing experiment
// keeps its partial record and does not stop the others.
inline GridOutcome run_grid(const std::vector<ExperimentSpec>& specs, const Corpus& corpus, const Backends& backends,
                            const RunOptions& opts = {}) {
  GridOutcome out;
  out.records.resize(specs.size());
  std::vector<std::optional<std::string>> errors(specs.size());
  const std::size_t outer = specs.size() > 1 ? opts.jobs : 1;
  RunOptions inner = opts;
  if (outer > 1) inner.jobs = 1;
  parallel_for(specs.size(), outer, [&](std::size_t i) {
    try {
      out.records[i] = run_experiment(specs[i], corpus, backends, inner);
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
      spdlog::error("experiment {} failed: {}", specs[i].id, ex.what());
      auto path = run_log_path(opts.out_dir, specs[i].id);
      if (fs::exists(path)) out.records[i] = load_record(path);
    }
  });
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (errors[i]) out.failures.emplace_back(specs[i].id, *errors[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Provenance

inline std::string initial_code_id(std::size_t i) { return fmt::format("ic-{:04}", i + 1); }
inline std::string formal_code_id(std::size_t c) { return fmt::format("fc-{:04}", c + 1); }

struct Excerpt {
  std::string chunk_id;
  std::string interview_id;
  std::vector<std::size_t> turn_indices;
  std::string text;
};

class ProvenanceIndex {
 public:
  explicit ProvenanceIndex(const RunRecord& r) {
    std::unordered_map<std::string, const Chunk*> chunks;
    for (const auto& c : r.chunks) chunks[c.id] = &c;
    auto excerpts_of = [&](const std::vector<std::string>& chunk_ids) {
      std::vector<Excerpt> out;
      for (const auto& id : chunk_ids) {
        auto it = chunks.find(id);
        if (it == chunks.end()) throw NotFoundError("record has no chunk " + id);
        const Chunk& c = *it->second;
        out.push_back({c.id, c.interview_id, c.source_turn_indices, c.text});
      }
      std::stable_sort(out.begin(), out.end(), [](const Excerpt& a, const Excerpt& b) {
        auto first = [](const Excerpt& e) { return e.turn_indices.empty() ? std::size_t{0} : e.turn_indices.front(); };
        return std::make_tuple(std::cref(a.interview_id), first(a)) < std::make_tuple(std::cref(b.interview_id), first(b));
      });
      return out;
    };
    for (std::size_t i = 0; i < r.unique_codes.size(); ++i) {
      auto id = initial_code_id(i);
      texts_[id] = r.unique_codes[i].text;
      map_[id] = excerpts_of(r.occurrences.at(i));
    }
    if (r.topics)
      for (const auto& f : r.topics->formal_codes) {
        std::vector<std::string> ids;
        for (auto m : f.representative_codes) {
          const auto& occ = r.occurrences.at(m);
          ids.insert(ids.end(), occ.begin(), occ.end());
        }
        auto id = formal_code_id(f.cluster_id);
        texts_[id] = formal_code_text(f);
        map_[id] = excerpts_of(ids);
      }
  }

  // Source excerpts ordered by interview, then turn.
  const std::vector<Excerpt>& lookup(const std::string& code_id) const {
    auto it = map_.find(code_id);
    if (it == map_.end()) throw NotFoundError("unknown code id '" + code_id + "'");
    return it->second;
  }

  const std::string& code_text(const std::string& code_id) const {
    auto it = texts_.find(code_id);
    if (it == texts_.end()) throw NotFoundError("unknown code id '" + code_id + "'");
    return it->second;
  }

  std::vector<std::string> code_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : map_) out.push_back(id);
    return out;
  }

 private:
  std::map<std::string, std::vector<Excerpt>> map_;
  std::map<std::string, std::string> texts_;
};

// ---------------------------------------------------------------------------
// Redaction

struct CodeRef {
  std::string id;
  std::string text;
};

struct RedactionViolation {
  std::string code_id;
  std::string code;
  std::vector<std::string> names;
};

// Whole-word, case-insensitive. Report only.
inline std::vector<RedactionViolation> redaction_check(std::span<const CodeRef> codes,
                                                       std::span<const std::string> names) {
  std::vector<RedactionViolation> out;
  for (const auto& c : codes) {
    RedactionViolation v{c.id, c.text, {}};
    for (const auto& n : names)
      if (text::contains_word(c.text, n)) v.names.push_back(n);
    if (!v.names.empty()) out.push_back(std::move(v));
  }
  return out;
}

// Every code a record emits: unique initial codes, then formal codes.
inline std::vector<CodeRef> emitted_codes(const RunRecord& r) {
  std::vector<CodeRef> out;
  for (std::size_t i = 0; i < r.unique_codes.size(); ++i) out.push_back({initial_code_id(i), r.unique_codes[i].text});
  if (r.topics)
    for (const auto& f : r.topics->formal_codes) out.push_back({formal_code_id(f.cluster_id), formal_code_text(f)});
  return out;
}

// One name per line; blank lines and lines starting with '#' are skipped.
inline std::vector<std::string> parse_name_list(std::string_view raw) {
  std::vector<std::string> out;
  for (auto line : text::split_lines(raw)) {
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.emplace_back(t);
  }
  return out;
}

}  // namespace qualcode
