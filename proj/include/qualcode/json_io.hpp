#pragma once

// nlohmann::json conversions for the library's value types. Doubles are
// written with round-trip precision, so a record read back compares equal.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qualcode/chunking.hpp"
#include "qualcode/error.hpp"
#include "qualcode/evaluation.hpp"
#include "qualcode/generation.hpp"
#include "qualcode/refusals.hpp"
#include "qualcode/topics.hpp"
#include "qualcode/transcripts.hpp"

namespace qualcode {

using nlohmann::json;

namespace detail {

template <typename T>
void put_opt(json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? json(*v) : json(nullptr);
}

template <typename T>
void get_opt(const json& j, const char* key, std::optional<T>& v) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) v.reset();
  else v = it->get<T>();
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Matrix matrix_from_json(const json& j) {
  auto rows = j.at("rows").get<Eigen::Index>();
  auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows) throw ConfigError("matrix row count mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = data[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ConfigError("matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

template <typename E, typename Parse>
E enum_from(const json& j, Parse parse, const char* what) {
  auto s = j.get<std::string>();
  auto v = parse(s);
  if (!v) throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
  return *v;
}

}  // namespace detail

inline void to_json(json& j, Strategy s) { j = std::string(strategy_name(s)); }
inline void from_json(const json& j, Strategy& s) { s = detail::enum_from<Strategy>(j, parse_strategy, "strategy"); }

inline void to_json(json& j, TemplateId t) { j = std::string(template_name(t)); }
inline void from_json(const json& j, TemplateId& t) {
  t = detail::enum_from<TemplateId>(j, parse_template, "template");
}

inline void to_json(json& j, ResultStatus s) { j = std::string(status_name(s)); }
inline void from_json(const json& j, ResultStatus& s) {
  s = detail::enum_from<ResultStatus>(j, parse_status, "result status");
}

inline void to_json(json& j, const QuestionId& q) { j = q.ordinal; }
inline void from_json(const json& j, QuestionId& q) { q.ordinal = j.get<std::size_t>(); }

inline void to_json(json& j, const Chunk& c) {
  j = json{{"id", c.id},
           {"interview_id", c.interview_id},
           {"strategy", c.strategy},
           {"ordinal", c.ordinal},
           {"text", c.text},
           {"token_count", c.token_count},
           {"source_turn_indices", c.source_turn_indices}};
  detail::put_opt(j, "question_id", c.question_id);
}
inline void from_json(const json& j, Chunk& c) {
  j.at("id").get_to(c.id);
  j.at("interview_id").get_to(c.interview_id);
  j.at("strategy").get_to(c.strategy);
  j.at("ordinal").get_to(c.ordinal);
  j.at("text").get_to(c.text);
  j.at("token_count").get_to(c.token_count);
  j.at("source_turn_indices").get_to(c.source_turn_indices);
  detail::get_opt(j, "question_id", c.question_id);
}

inline void to_json(json& j, const ChunkSettings& s) {
  j = json{{"strategy", s.strategy}, {"max_tokens", s.max_tokens}, {"sim_threshold", s.sim_threshold}};
}
inline void from_json(const json& j, ChunkSettings& s) {
  j.at("strategy").get_to(s.strategy);
  j.at("max_tokens").get_to(s.max_tokens);
  j.at("sim_threshold").get_to(s.sim_threshold);
}

inline void to_json(json& j, const PromptSpec& p) {
  j = json{{"template", p.template_id}, {"identity", p.identity}, {"context", p.context}, {"strategy", p.strategy}};
}
inline void from_json(const json& j, PromptSpec& p) {
  j.at("template").get_to(p.template_id);
  j.at("identity").get_to(p.identity);
  j.at("context").get_to(p.context);
  j.at("strategy").get_to(p.strategy);
}

inline void to_json(json& j, const GenerationParams& p) {
  j = json{{"temperature", p.temperature},
           {"top_p", p.top_p},
           {"max_output_tokens", p.max_output_tokens},
           {"model", p.model_name}};
}
inline void from_json(const json& j, GenerationParams& p) {
  p = GenerationParams{};
  p.temperature = j.value("temperature", p.temperature);
  p.top_p = j.value("top_p", p.top_p);
  p.max_output_tokens = j.value("max_output_tokens", p.max_output_tokens);
  p.model_name = j.value("model", p.model_name);
}

inline void to_json(json& j, const InitialCode& c) {
  j = json{{"text", c.text}, {"chunk_id", c.chunk_id}, {"experiment_id", c.experiment_id}, {"item", c.item_ordinal}};
  detail::put_opt(j, "justification", c.justification);
}
inline void from_json(const json& j, InitialCode& c) {
  j.at("text").get_to(c.text);
  j.at("chunk_id").get_to(c.chunk_id);
  j.at("experiment_id").get_to(c.experiment_id);
  j.at("item").get_to(c.item_ordinal);
  detail::get_opt(j, "justification", c.justification);
}

inline void to_json(json& j, const LlmTurnResult& r) {
  j = json{{"chunk_id", r.chunk_id},   {"raw_response", r.raw_response}, {"codes", r.parsed_codes},
           {"refusal", r.refusal},     {"status", r.status},             {"attempts", r.attempts},
           {"error", r.error}};
  detail::put_opt(j, "refusal_text", r.refusal_text);
}
inline void from_json(const json& j, LlmTurnResult& r) {
  j.at("chunk_id").get_to(r.chunk_id);
  j.at("raw_response").get_to(r.raw_response);
  j.at("codes").get_to(r.parsed_codes);
  j.at("refusal").get_to(r.refusal);
  j.at("status").get_to(r.status);
  j.at("attempts").get_to(r.attempts);
  r.error = j.value("error", std::string{});
  detail::get_opt(j, "refusal_text", r.refusal_text);
}

inline void to_json(json& j, const TopicParams& p) {
  j = json{{"neighborhood_size", p.neighborhood_size},
           {"reduced_dims", p.reduced_dims},
           {"min_cluster_size", p.min_cluster_size},
           {"linkage_threshold", p.linkage_threshold},
           {"random_seed", p.random_seed}};
}
inline void from_json(const json& j, TopicParams& p) {
  j.at("neighborhood_size").get_to(p.neighborhood_size);
  j.at("reduced_dims").get_to(p.reduced_dims);
  j.at("min_cluster_size").get_to(p.min_cluster_size);
  j.at("linkage_threshold").get_to(p.linkage_threshold);
  p.random_seed = j.value("random_seed", std::uint64_t{42});
}

inline void to_json(json& j, const LinkageStep& s) { j = json::array({s.left, s.right, s.distance, s.size}); }
inline void from_json(const json& j, LinkageStep& s) {
  if (!j.is_array() || j.size() != 4) throw ConfigError("linkage step must be [left, right, distance, size]");
  s = {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<double>(), j[3].get<std::size_t>()};
}

inline void to_json(json& j, const GridCellOutcome& c) {
  j = json{{"params", c.params}, {"clusters", c.clusters}, {"noise", c.noise}, {"skip_reason", c.skip_reason}};
  detail::put_opt(j, "silhouette", c.silhouette);
}
inline void from_json(const json& j, GridCellOutcome& c) {
  j.at("params").get_to(c.params);
  j.at("clusters").get_to(c.clusters);
  j.at("noise").get_to(c.noise);
  j.at("skip_reason").get_to(c.skip_reason);
  detail::get_opt(j, "silhouette", c.silhouette);
}

inline constexpr int kTopicModelSchema = 1;

inline void to_json(json& j, const TopicModel& m) {
  j = json{{"schema", kTopicModelSchema},
           {"params", m.params},
           {"reducer", {{"mean", std::vector<double>(m.reducer.mean.data(), m.reducer.mean.data() + m.reducer.mean.size())},
                        {"components", detail::matrix_to_json(m.reducer.components)}}},
           {"labels", m.labels},
           {"centroids", detail::matrix_to_json(m.centroids)},
           {"silhouette", m.silhouette},
           {"keywords", m.keywords},
           {"representatives", m.representatives},
           {"linkage", m.linkage}};
}
inline void from_json(const json& j, TopicModel& m) {
  if (j.value("schema", 0) != kTopicModelSchema)
    throw ConfigError("unsupported topic model schema " + j.value("schema", json(nullptr)).dump());
  j.at("params").get_to(m.params);
  auto mean = j.at("reducer").at("mean").get<std::vector<double>>();
  m.reducer.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  m.reducer.components = detail::matrix_from_json(j.at("reducer").at("components"));
  j.at("labels").get_to(m.labels);
  m.centroids = detail::matrix_from_json(j.at("centroids"));
  j.at("silhouette").get_to(m.silhouette);
  j.at("keywords").get_to(m.keywords);
  j.at("representatives").get_to(m.representatives);
  j.at("linkage").get_to(m.linkage);
}

inline void to_json(json& j, const FormalCode& f) {
  j = json{{"cluster_id", f.cluster_id},
           {"keywords", f.keywords},
           {"representatives", f.representative_codes},
           {"member_count", f.member_count}};
  detail::put_opt(j, "name", f.name);
}
inline void from_json(const json& j, FormalCode& f) {
  j.at("cluster_id").get_to(f.cluster_id);
  j.at("keywords").get_to(f.keywords);
  j.at("representatives").get_to(f.representative_codes);
  j.at("member_count").get_to(f.member_count);
  detail::get_opt(j, "name", f.name);
}

inline void to_json(json& j, const RefusalRecord& r) {
  j = json{{"experiment_id", r.experiment_id}, {"chunk_id", r.chunk_id}, {"text", r.text}, {"categories", r.categories}};
}
inline void from_json(const json& j, RefusalRecord& r) {
  j.at("experiment_id").get_to(r.experiment_id);
  j.at("chunk_id").get_to(r.chunk_id);
  j.at("text").get_to(r.text);
  j.at("categories").get_to(r.categories);
}

inline void to_json(json& j, const AlignmentRow& r) {
  j = json{{"hc_code", r.hc_code},
           {"cluster_id", r.cluster_id},
           {"cluster_distance", r.cluster_distance},
           {"semantic_similarity", r.semantic_similarity}};
  detail::put_opt(j, "cluster_match", r.cluster_match);
  detail::put_opt(j, "semantic_match", r.semantic_match);
}
inline void from_json(const json& j, AlignmentRow& r) {
  j.at("hc_code").get_to(r.hc_code);
  j.at("cluster_id").get_to(r.cluster_id);
  j.at("cluster_distance").get_to(r.cluster_distance);
  j.at("semantic_similarity").get_to(r.semantic_similarity);
  detail::get_opt(j, "cluster_match", r.cluster_match);
  detail::get_opt(j, "semantic_match", r.semantic_match);
}

}  // namespace qualcode
