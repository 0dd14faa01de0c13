#pragma once

// Run configuration, read from a JSON document with one object per section:
// corpus, chunking, generation, embeddings, topics, evaluation, refusals,
// redaction, backend, report. Every key is optional; relative paths are
// resolved against the directory holding the config file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qualcode/chunking.hpp"
#include "qualcode/corpus_stats.hpp"
#include "qualcode/error.hpp"
#include "qualcode/evaluation.hpp"
#include "qualcode/generation.hpp"
#include "qualcode/json_io.hpp"
#include "qualcode/prompts.hpp"
#include "qualcode/refusals.hpp"
#include "qualcode/topics.hpp"
#include "qualcode/transcripts.hpp"

namespace qualcode {

namespace fs = std::filesystem;

// "mock" providers are local and deterministic; "http" providers speak the
// embedding wire protocol.
struct ProviderConfig {
  std::string kind = "mock";
  std::uint64_t seed = 0;
  std::size_t dim = 768;
  double text_weight = 0.25;
  std::string url;    // http: falls back to EMBED_API_URL
  std::string model;  // http: sent as "model" when non-empty
};

struct BackendConfig {
  std::string kind = "mock";  // "mock" | "http"
  std::uint64_t seed = 0;
  double refusal_rate = 0.0;
  double naming_refusal_rate = 0.0;
  std::string url;  // http: falls back to LLM_API_URL
  double timeout_seconds = 120.0;
  std::size_t in_flight = 4;
};

inline std::vector<ProviderConfig> default_providers() {
  return {ProviderConfig{"mock", 1, 768, 0.25, "", ""}, ProviderConfig{"mock", 2, 384, 0.25, "", ""}};
}

struct Config {
  fs::path base_dir = ".";

  // corpus
  std::vector<fs::path> transcripts;
  TranscriptFormat format = TranscriptFormat::PrefixedText;
  std::optional<fs::path> protocol;
  std::optional<fs::path> codebook;
  ParseOptions parse;
  SdKind sd_kind = SdKind::Sample;

  // chunking
  std::vector<Strategy> strategies = {Strategy::Paired};
  std::size_t max_tokens = 256;
  double sim_threshold = 0.20;

  // generation
  GenerationParams params;
  std::vector<std::string> identities = {default_identities().front()};
  std::vector<std::string> contexts = {default_contexts().front()};
  std::vector<TemplateId> templates = {TemplateId::BaseT};
  std::size_t max_retries = 3;
  std::vector<std::string> refusal_markers = default_refusal_markers();

  // embeddings; question chunking, topic modeling and evaluation may differ
  std::vector<ProviderConfig> question_embedders = default_providers();
  std::vector<ProviderConfig> topic_embedders = default_providers();
  std::vector<ProviderConfig> eval_embedders = default_providers();

  // topics
  bool topics_enabled = true;
  TopicGrid grid;
  KeywordOptions keywords;
  std::size_t representatives = 3;

  double eval_threshold = kDefaultMatchThreshold;

  RefusalTaxonomy taxonomy = default_taxonomy();
  nlohmann::json taxonomy_overrides;  // as applied, kept for the experiment id

  std::optional<fs::path> redaction_names;

  BackendConfig backend;

  // Human column of the comparison table.
  std::optional<double> human_hours;

  std::size_t jobs = 1;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json section(const nlohmann::json& root, const char* name) {
  auto it = root.find(name);
  if (it == root.end() || it->is_null()) return nlohmann::json::object();
  if (!it->is_object()) throw ConfigError(std::string("[") + name + "] must be an object");
  return *it;
}

template <typename T>
void read(const nlohmann::json& sec, const char* section_name, const char* key, T& dst) {
  auto it = sec.find(key);
  if (it == sec.end()) return;
  try {
    it->get_to(dst);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("[") + section_name + "] " + key + ": " + e.what());
  }
}

inline std::vector<ProviderConfig> read_providers(const nlohmann::json& sec, const char* key,
                                                  const std::vector<ProviderConfig>& fallback) {
  auto it = sec.find(key);
  if (it == sec.end()) return fallback;
  if (!it->is_array() || it->empty()) throw ConfigError(std::string("[embeddings] ") + key + " must be a non-empty list");
  std::vector<ProviderConfig> out;
  for (const auto& p : *it) {
    ProviderConfig c;
    c.kind = p.value("kind", c.kind);
    c.seed = p.value("seed", c.seed);
    c.dim = p.value("dim", c.dim);
    c.text_weight = p.value("text_weight", c.text_weight);
    c.url = p.value("url", c.url);
    c.model = p.value("model", c.model);
    if (c.kind != "mock" && c.kind != "http") throw ConfigError("[embeddings] unknown provider kind '" + c.kind + "'");
    if (c.dim == 0) throw ConfigError("[embeddings] dim must be positive");
    out.push_back(std::move(c));
  }
  return out;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

inline nlohmann::json provider_json(const ProviderConfig& p) {
  if (p.kind == "mock") return {{"kind", p.kind}, {"seed", p.seed}, {"dim", p.dim}, {"text_weight", p.text_weight}};
  return {{"kind", p.kind}, {"url", p.url}, {"model", p.model}, {"dim", p.dim}};
}

inline nlohmann::json backend_json(const BackendConfig& b) {
  if (b.kind == "mock")
    return {{"kind", b.kind}, {"seed", b.seed}, {"refusal_rate", b.refusal_rate},
            {"naming_refusal_rate", b.naming_refusal_rate}};
  return {{"kind", b.kind}, {"url", b.url}};
}

inline Config parse_config(const nlohmann::json& root, const fs::path& base_dir) {
  if (!root.is_object()) throw ConfigError("config must be an object");
  Config c;
  c.base_dir = base_dir;

  auto corpus = detail::section(root, "corpus");
  if (auto it = corpus.find("transcripts"); it != corpus.end()) {
    auto list = it->is_string() ? nlohmann::json::array({*it}) : *it;
    if (!list.is_array()) throw ConfigError("[corpus] transcripts must be a path or a list of paths");
    for (const auto& p : list) c.transcripts.push_back(detail::resolve(base_dir, p.get<std::string>()));
  }
  if (auto it = corpus.find("format"); it != corpus.end()) {
    auto f = it->get<std::string>();
    if (f == "turn_records") c.format = TranscriptFormat::TurnRecords;
    else if (f == "prefixed") c.format = TranscriptFormat::PrefixedText;
    else throw ConfigError("[corpus] format must be 'turn_records' or 'prefixed'");
  }
  if (auto it = corpus.find("protocol"); it != corpus.end()) c.protocol = detail::resolve(base_dir, it->get<std::string>());
  if (auto it = corpus.find("codebook"); it != corpus.end()) c.codebook = detail::resolve(base_dir, it->get<std::string>());
  detail::read(corpus, "corpus", "annotations", c.parse.clean_options.parenthetical_annotations);
  detail::read(corpus, "corpus", "clean", c.parse.clean);
  if (auto it = corpus.find("sd"); it != corpus.end()) {
    auto s = it->get<std::string>();
    if (s == "sample") c.sd_kind = SdKind::Sample;
    else if (s == "population") c.sd_kind = SdKind::Population;
    else throw ConfigError("[corpus] sd must be 'sample' or 'population'");
  }

  auto chunking = detail::section(root, "chunking");
  if (chunking.contains("strategy") && chunking.contains("strategies"))
    throw ConfigError("[chunking] give either strategy or strategies");
  if (chunking.contains("strategy")) c.strategies = {chunking["strategy"].get<Strategy>()};
  detail::read(chunking, "chunking", "strategies", c.strategies);
  detail::read(chunking, "chunking", "max_tokens", c.max_tokens);
  detail::read(chunking, "chunking", "sim_threshold", c.sim_threshold);
  if (auto tk = chunking.value("tokenizer", std::string("whitespace")); tk != "whitespace")
    throw ConfigError("[chunking] tokenizer '" + tk + "' is not available from a config file");
  if (c.max_tokens == 0) throw ConfigError("[chunking] max_tokens must be positive");

  auto gen = detail::section(root, "generation");
  c.params = gen.get<GenerationParams>();
  detail::read(gen, "generation", "identities", c.identities);
  detail::read(gen, "generation", "contexts", c.contexts);
  detail::read(gen, "generation", "templates", c.templates);
  detail::read(gen, "generation", "max_retries", c.max_retries);
  detail::read(gen, "generation", "refusal_markers", c.refusal_markers);
  try {
    c.params.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("[generation] ") + e.what());
  }

  auto emb = detail::section(root, "embeddings");
  c.topic_embedders = detail::read_providers(emb, "topics", default_providers());
  c.question_embedders = detail::read_providers(emb, "question", c.topic_embedders);
  c.eval_embedders = detail::read_providers(emb, "evaluation", c.topic_embedders);

  auto topics = detail::section(root, "topics");
  detail::read(topics, "topics", "enabled", c.topics_enabled);
  detail::read(topics, "topics", "top_k", c.keywords.top_k);
  detail::read(topics, "topics", "remove_stop_words", c.keywords.remove_stop_words);
  detail::read(topics, "topics", "representatives", c.representatives);
  if (auto it = topics.find("grid"); it != topics.end()) {
    const auto& g = *it;
    detail::read(g, "topics.grid", "neighborhood_sizes", c.grid.neighborhood_sizes);
    detail::read(g, "topics.grid", "reduced_dims", c.grid.reduced_dims);
    detail::read(g, "topics.grid", "min_cluster_sizes", c.grid.min_cluster_sizes);
    detail::read(g, "topics.grid", "linkage_thresholds", c.grid.linkage_thresholds);
    detail::read(g, "topics.grid", "random_seed", c.grid.random_seed);
  }
  if (c.grid.cells().empty()) throw ConfigError("[topics] grid has an empty axis");
  try {
    for (const auto& p : c.grid.cells()) p.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("[topics] ") + e.what());
  }

  auto eval = detail::section(root, "evaluation");
  detail::read(eval, "evaluation", "threshold", c.eval_threshold);

  auto ref = detail::section(root, "refusals");
  if (auto it = ref.find("overrides"); it != ref.end()) {
    c.taxonomy_overrides = it->is_string()
                               ? nlohmann::json::parse(detail::read_file(detail::resolve(base_dir, it->get<std::string>())))
                               : *it;
    apply_taxonomy_overrides(c.taxonomy, c.taxonomy_overrides);
  }

  auto red = detail::section(root, "redaction");
  if (auto it = red.find("names"); it != red.end()) c.redaction_names = detail::resolve(base_dir, it->get<std::string>());

  auto be = detail::section(root, "backend");
  detail::read(be, "backend", "kind", c.backend.kind);
  detail::read(be, "backend", "seed", c.backend.seed);
  detail::read(be, "backend", "refusal_rate", c.backend.refusal_rate);
  detail::read(be, "backend", "naming_refusal_rate", c.backend.naming_refusal_rate);
  detail::read(be, "backend", "url", c.backend.url);
  detail::read(be, "backend", "timeout_seconds", c.backend.timeout_seconds);
  detail::read(be, "backend", "in_flight", c.backend.in_flight);
  if (c.backend.kind != "mock" && c.backend.kind != "http")
    throw ConfigError("[backend] kind must be 'mock' or 'http'");

  auto rep = detail::section(root, "report");
  if (auto it = rep.find("human_hours"); it != rep.end() && !it->is_null()) c.human_hours = it->get<double>();

  auto run = detail::section(root, "run");
  detail::read(run, "run", "jobs", c.jobs);
  detail::read(run, "run", "seed", c.seed);

  auto nonempty = [](std::size_t n, const char* axis) {
    if (n == 0) throw ConfigError(std::string("grid axis '") + axis + "' is empty");
  };
  nonempty(c.strategies.size(), "strategies");
  nonempty(c.templates.size(), "templates");
  nonempty(c.identities.size(), "identities");
  nonempty(c.contexts.size(), "contexts");
  return c;
}

inline Config load_config(const fs::path& path) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto base = path.parent_path();
  return parse_config(root, base.empty() ? fs::path(".") : base);
}

// --seed: reseeds every mock component so one flag varies a whole run.
inline void apply_seed(Config& c, std::uint64_t seed) {
  c.seed = seed;
  c.backend.seed = seed;
  c.grid.random_seed = seed;
  for (auto* list : {&c.question_embedders, &c.topic_embedders, &c.eval_embedders})
    for (std::size_t i = 0; i < list->size(); ++i)
      if ((*list)[i].kind == "mock") (*list)[i].seed = seed * 1000 + i + 1;
}

}  // namespace qualcode
