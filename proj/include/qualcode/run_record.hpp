#pragma once

// Append-only run logs. Each experiment writes <out>/runs/<id>.jsonl, one
// stage event per line, flushed as it is written. A RunRecord is the fold of
// those events, so a finished log can be replayed into reports without any
// backend.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "qualcode/error.hpp"
#include "qualcode/json_io.hpp"
#include "qualcode/text.hpp"

namespace qualcode {

namespace fs = std::filesystem;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::chrono::system_clock::time_point now() = 0;
};

class SystemClock final : public Clock {
 public:
  std::chrono::system_clock::time_point now() override { return std::chrono::system_clock::now(); }
};

// Always reports the same instant, so every duration is zero.
class FixedClock final : public Clock {
 public:
  explicit FixedClock(std::chrono::system_clock::time_point t = std::chrono::system_clock::time_point{}) : t_(t) {}
  std::chrono::system_clock::time_point now() override { return t_; }

 private:
  std::chrono::system_clock::time_point t_;
};

inline std::string iso_timestamp(std::chrono::system_clock::time_point t) {
  auto ms = std::chrono::time_point_cast<std::chrono::milliseconds>(t);
  return fmt::format("{:%Y-%m-%dT%H:%M:%S}Z", ms);
}

inline double seconds_between(std::chrono::system_clock::time_point a, std::chrono::system_clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

class RunLog {
 public:
  // Opens for appending. Without `keep`, any existing log is discarded. With
  // it, a torn trailing line left by a crash is cut off first.
  RunLog(fs::path path, bool keep) : path_(std::move(path)) {
    fs::create_directories(path_.parent_path());
    if (keep && fs::exists(path_)) {
      auto good = valid_prefix_size(path_);
      if (good != fs::file_size(path_)) {
        spdlog::warn("{}: dropping torn trailing line", path_.string());
        fs::resize_file(path_, good);
      }
      out_.open(path_, std::ios::binary | std::ios::app);
    } else {
      out_.open(path_, std::ios::binary | std::ios::trunc);
    }
    if (!out_) throw Error("cannot open run log " + path_.string());
  }

  void append(const nlohmann::json& event) {
    std::lock_guard lock(mu_);
    out_ << event.dump() << '\n';
    out_.flush();
    if (!out_) throw Error("write failed on run log " + path_.string());
  }

  const fs::path& path() const noexcept { return path_; }

  // Length of the leading run of complete, parseable lines.
  static std::uintmax_t valid_prefix_size(const fs::path& p) {
    auto raw = read_log(p);
    std::size_t pos = 0, good = 0;
    while (pos < raw.size()) {
      auto nl = raw.find('\n', pos);
      if (nl == std::string::npos) break;
      if (!nlohmann::json::accept(std::string_view(raw).substr(pos, nl - pos))) break;
      pos = nl + 1;
      good = pos;
    }
    return good;
  }

 private:
  static std::string read_log(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  }

  fs::path path_;
  std::ofstream out_;
  std::mutex mu_;
};

// Events of a log. A damaged final line (the crash case) is skipped; damage
// anywhere else is an error.
inline std::vector<nlohmann::json> read_run_log(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("no run log at " + path.string());
  std::string raw(std::istreambuf_iterator<char>(in), {});
  auto lines = text::split_lines(raw);
  while (!lines.empty() && text::trim(lines.back()).empty()) lines.pop_back();
  std::vector<nlohmann::json> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::trim(lines[i]).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(lines[i]));
    } catch (const nlohmann::json::parse_error& e) {
      if (i + 1 == lines.size()) {
        spdlog::warn("{}: ignoring torn trailing line", path.string());
        break;
      }
      throw ParseError(i + 1, std::string("bad run log event: ") + e.what());
    }
  }
  return out;
}

struct StageTime {
  std::string stage;
  double seconds = 0.0;
};

struct NamingSummary {
  std::optional<std::string> name;
  std::string raw_response;
  bool refused = false;
  bool transport_failed = false;
};

struct TopicOutcome {
  std::optional<TopicModel> model;  // absent when no grid cell produced two clusters
  std::string skipped;
  std::vector<GridCellOutcome> cells;
  std::vector<FormalCode> formal_codes;
  std::vector<NamingSummary> naming;
};

struct Scores {
  std::optional<double> captured;
  std::optional<double> relevant;
};

struct EvaluationOutcome {
  Scores initial;
  std::optional<Scores> formal;
  std::vector<AlignmentRow> alignment;
  std::size_t hc_initial_count = 0;
  std::size_t hc_formal_count = 0;
};

struct RunRecord {
  std::string experiment_id;
  nlohmann::json spec;
  std::string corpus_fingerprint;
  std::string started_at;
  std::string finished_at;
  double duration_seconds = 0.0;
  std::vector<StageTime> stages;

  std::vector<Chunk> chunks;
  std::vector<LlmTurnResult> results;  // by (interview_id, ordinal)
  std::size_t initial_code_count = 0;  // before dedupe
  std::vector<InitialCode> unique_codes;
  std::vector<std::vector<std::string>> occurrences;  // per unique code: source chunk ids, with repeats

  std::optional<TopicOutcome> topics;
  std::optional<EvaluationOutcome> evaluation;
  std::optional<double> percent_refused;
  std::vector<RefusalRecord> refusals;

  std::optional<std::string> failed_stage;
  std::string failure;
  bool complete = false;

  double stage_seconds(std::string_view stage) const {
    for (const auto& s : stages)
      if (s.stage == stage) return s.seconds;
    return 0.0;
  }
};

// Record serializations ----------------------------------------------------

inline void to_json(nlohmann::json& j, const NamingSummary& n) {
  j = {{"raw_response", n.raw_response}, {"refused", n.refused}, {"transport_failed", n.transport_failed}};
  detail::put_opt(j, "name", n.name);
}
inline void from_json(const nlohmann::json& j, NamingSummary& n) {
  j.at("raw_response").get_to(n.raw_response);
  j.at("refused").get_to(n.refused);
  j.at("transport_failed").get_to(n.transport_failed);
  detail::get_opt(j, "name", n.name);
}

inline void to_json(nlohmann::json& j, const TopicOutcome& t) {
  j = {{"skipped", t.skipped}, {"cells", t.cells}, {"formal_codes", t.formal_codes}, {"naming", t.naming}};
  j["model"] = t.model ? nlohmann::json(*t.model) : nlohmann::json(nullptr);
}
inline void from_json(const nlohmann::json& j, TopicOutcome& t) {
  j.at("skipped").get_to(t.skipped);
  j.at("cells").get_to(t.cells);
  j.at("formal_codes").get_to(t.formal_codes);
  j.at("naming").get_to(t.naming);
  if (j.at("model").is_null()) t.model.reset();
  else t.model = j.at("model").get<TopicModel>();
}

inline void to_json(nlohmann::json& j, const Scores& s) {
  j = nlohmann::json::object();
  detail::put_opt(j, "captured", s.captured);
  detail::put_opt(j, "relevant", s.relevant);
}
inline void from_json(const nlohmann::json& j, Scores& s) {
  detail::get_opt(j, "captured", s.captured);
  detail::get_opt(j, "relevant", s.relevant);
}

inline void to_json(nlohmann::json& j, const EvaluationOutcome& e) {
  j = {{"initial", e.initial},
       {"alignment", e.alignment},
       {"hc_initial_count", e.hc_initial_count},
       {"hc_formal_count", e.hc_formal_count}};
  detail::put_opt(j, "formal", e.formal);
}
inline void from_json(const nlohmann::json& j, EvaluationOutcome& e) {
  j.at("initial").get_to(e.initial);
  j.at("alignment").get_to(e.alignment);
  j.at("hc_initial_count").get_to(e.hc_initial_count);
  j.at("hc_formal_count").get_to(e.hc_formal_count);
  detail::get_opt(j, "formal", e.formal);
}

// Everything except wall-clock fields. Two runs of the same experiment with
// mock backends give equal content.
inline nlohmann::json record_content(const RunRecord& r) {
  nlohmann::json j = {{"experiment_id", r.experiment_id},
                      {"spec", r.spec},
                      {"corpus_fingerprint", r.corpus_fingerprint},
                      {"chunks", r.chunks},
                      {"results", r.results},
                      {"initial_code_count", r.initial_code_count},
                      {"unique_codes", r.unique_codes},
                      {"occurrences", r.occurrences},
                      {"refusals", r.refusals},
                      {"failure", r.failure},
                      {"complete", r.complete}};
  j["topics"] = r.topics ? nlohmann::json(*r.topics) : nlohmann::json(nullptr);
  j["evaluation"] = r.evaluation ? nlohmann::json(*r.evaluation) : nlohmann::json(nullptr);
  detail::put_opt(j, "percent_refused", r.percent_refused);
  detail::put_opt(j, "failed_stage", r.failed_stage);
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : r.stages) stages.push_back(s.stage);
  j["stages"] = std::move(stages);
  return j;
}

// Folds events in order. Later events of the same kind replace earlier ones,
// which is what a resumed log needs: the resumed pass re-emits every stage.
inline RunRecord fold_record(const std::vector<nlohmann::json>& events) {
  RunRecord r;
  std::unordered_map<std::string, LlmTurnResult> results;
  for (const auto& e : events) {
    auto kind = e.at("event").get<std::string>();
    if (kind == "experiment_start") {
      r.experiment_id = e.at("experiment_id").get<std::string>();
      r.spec = e.at("spec");
      r.corpus_fingerprint = e.value("corpus_fingerprint", std::string{});
      if (r.started_at.empty()) r.started_at = e.value("time", std::string{});
      r.failed_stage.reset();
      r.failure.clear();
      r.complete = false;
    } else if (kind == "chunks") {
      r.chunks = e.at("chunks").get<std::vector<Chunk>>();
    } else if (kind == "chunk_result") {
      auto res = e.at("result").get<LlmTurnResult>();
      auto id = res.chunk_id;
      results.insert_or_assign(std::move(id), std::move(res));
    } else if (kind == "codes") {
      r.initial_code_count = e.at("initial_count").get<std::size_t>();
      r.unique_codes = e.at("unique").get<std::vector<InitialCode>>();
      r.occurrences = e.at("occurrences").get<std::vector<std::vector<std::string>>>();
    } else if (kind == "topics") {
      r.topics = e.at("topics").get<TopicOutcome>();
    } else if (kind == "evaluation") {
      r.evaluation = e.at("evaluation").get<EvaluationOutcome>();
    } else if (kind == "refusal_audit") {
      detail::get_opt(e, "percent_refused", r.percent_refused);
      r.refusals = e.at("records").get<std::vector<RefusalRecord>>();
    } else if (kind == "stage_complete") {
      StageTime st{e.at("stage").get<std::string>(), e.at("seconds").get<double>()};
      auto it = std::find_if(r.stages.begin(), r.stages.end(), [&](const auto& s) { return s.stage == st.stage; });
      if (it == r.stages.end()) r.stages.push_back(st);
      else *it = st;
    } else if (kind == "stage_failed") {
      r.failed_stage = e.at("stage").get<std::string>();
      r.failure = e.value("error", std::string{});
    } else if (kind == "experiment_complete") {
      r.finished_at = e.value("time", std::string{});
      r.duration_seconds = e.value("duration_seconds", 0.0);
      r.complete = true;
    } else {
      throw ParseError(0, "unknown run log event '" + kind + "'");
    }
  }
  std::vector<const Chunk*> order;
  for (const auto& c : r.chunks) order.push_back(&c);
  std::stable_sort(order.begin(), order.end(), [](const Chunk* a, const Chunk* b) {
    return std::tie(a->interview_id, a->ordinal) < std::tie(b->interview_id, b->ordinal);
  });
  for (const auto* c : order)
    if (auto it = results.find(c->id); it != results.end()) r.results.push_back(it->second);
  return r;
}

inline RunRecord load_record(const fs::path& path) { return fold_record(read_run_log(path)); }

}  // namespace qualcode
