#pragma once

// Report bundle built from run records: the comparison table, scatter data,
// refusal histograms, dendrogram linkage and the paired statistics. All of
// it is a pure fold over the records, so replaying logs reproduces it.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "qualcode/corpus_stats.hpp"
#include "qualcode/evaluation.hpp"
#include "qualcode/refusals.hpp"
#include "qualcode/run_record.hpp"

namespace qualcode {

// ---------------------------------------------------------------------------
// Number formatting

// Rounded to `decimals`, trailing zeros dropped, no leading zero before the
// point: 0.6940 -> ".694", 35.0 -> "35".
inline std::string format_trimmed(double v, int decimals) {
  auto s = fmt::format("{:.{}f}", round_half_away(v, decimals), decimals);
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  if (s.rfind("0.", 0) == 0) s.erase(0, 1);
  else if (s.rfind("-0.", 0) == 0) s.erase(1, 1);
  return s;
}

inline std::string format_percent(double pct, int decimals) {
  return fmt::format("{:.{}f}%", round_half_away(pct, decimals), decimals);
}

// ---------------------------------------------------------------------------
// Comparison table

struct ComparisonColumn {
  std::string label;
  std::optional<double> hours;
  std::optional<std::size_t> initial_codes;
  std::optional<std::size_t> formal_codes;
  std::optional<double> silhouette;
  std::optional<double> captured_initial;
  std::optional<double> captured_formal;
  std::optional<double> relevant_initial;
  std::optional<double> relevant_formal;
};

inline ComparisonColumn comparison_column(const RunRecord& r) {
  ComparisonColumn c;
  c.label = r.experiment_id;
  c.hours = r.duration_seconds / 3600.0;
  c.initial_codes = r.unique_codes.size();
  if (r.topics && r.topics->model) {
    c.formal_codes = r.topics->formal_codes.size();
    c.silhouette = r.topics->model->silhouette;
  }
  if (r.evaluation) {
    c.captured_initial = r.evaluation->initial.captured;
    c.relevant_initial = r.evaluation->initial.relevant;
    if (r.evaluation->formal) {
      c.captured_formal = r.evaluation->formal->captured;
      c.relevant_formal = r.evaluation->formal->relevant;
    }
  }
  return c;
}

struct HumanColumn {
  std::optional<double> hours;
  std::size_t initial_codes = 0;
  std::size_t formal_codes = 0;
};

inline ComparisonColumn human_column(const HumanColumn& h) {
  ComparisonColumn c;
  c.label = "HC";
  c.hours = h.hours;
  c.initial_codes = h.initial_codes;
  c.formal_codes = h.formal_codes;
  return c;
}

struct ComparisonRow {
  std::string metric;
  std::vector<std::string> cells;
};

inline std::vector<ComparisonRow> comparison_rows(const std::vector<ComparisonColumn>& cols) {
  auto fmt_opt = [](const auto& v, auto f) { return v ? f(*v) : std::string("N/A"); };
  auto count = [](std::size_t n) { return std::to_string(n); };
  auto row = [&](std::string metric, auto get, auto f) {
    ComparisonRow r{std::move(metric), {}};
    for (const auto& c : cols) r.cells.push_back(fmt_opt(get(c), f));
    return r;
  };
  auto trimmed = [](int d) { return [d](double v) { return format_trimmed(v, d); }; };
  auto pct = [](int d) { return [d](double v) { return format_percent(v, d); }; };
  return {
      row("Time Spent (hrs)", [](const auto& c) { return c.hours; }, trimmed(2)),
      row("# of Initial Codes", [](const auto& c) { return c.initial_codes; }, count),
      row("# of Formal Codes", [](const auto& c) { return c.formal_codes; }, count),
      row("Silhouette Score", [](const auto& c) { return c.silhouette; }, trimmed(3)),
      row("% Captured: Initial", [](const auto& c) { return c.captured_initial; }, pct(0)),
      row("% Captured: Formal", [](const auto& c) { return c.captured_formal; }, pct(0)),
      row("% Relevant: Initial", [](const auto& c) { return c.relevant_initial; }, pct(1)),
      row("% Relevant: Formal", [](const auto& c) { return c.relevant_formal; }, pct(0)),
  };
}

// Cells of one column, top to bottom, joined with " | ".
inline std::string column_line(const ComparisonColumn& col) {
  std::vector<std::string> cells;
  for (const auto& r : comparison_rows({col})) cells.push_back(r.cells.front());
  return text::join(cells, " | ");
}

inline std::string render_comparison_md(const std::vector<ComparisonColumn>& cols) {
  std::string out = "| Metric |";
  for (const auto& c : cols) out += " " + c.label + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) out += "---|";
  out += '\n';
  for (const auto& r : comparison_rows(cols)) {
    out += "| " + r.metric + " |";
    for (const auto& cell : r.cells) out += " " + cell + " |";
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::string csv_line(const std::vector<std::string>& fields) {
  std::vector<std::string> q;
  for (const auto& f : fields) q.push_back(csv_field(f));
  return text::join(q, ",") + "\n";
}

inline std::string csv_number(const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : std::string(); }

}  // namespace detail

inline std::string render_comparison_csv(const std::vector<ComparisonColumn>& cols) {
  std::vector<std::string> header{"metric"};
  for (const auto& c : cols) header.push_back(c.label);
  std::string out = detail::csv_line(header);
  for (const auto& r : comparison_rows(cols)) {
    std::vector<std::string> line{r.metric};
    line.insert(line.end(), r.cells.begin(), r.cells.end());
    out += detail::csv_line(line);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-experiment data

inline std::string spec_field(const RunRecord& r, const char* key) {
  if (!r.spec.is_object() || !r.spec.contains("prompt")) return {};
  const auto& p = r.spec.at("prompt");
  return p.contains(key) ? p.at(key).get<std::string>() : std::string();
}

// Experiment settings next to its id, for reading the comparison table.
inline std::string render_legend_md(const std::vector<RunRecord>& records) {
  std::string out = "| Experiment | Strategy | Template | Identity | Context |\n|---|---|---|---|---|\n";
  for (const auto& r : records)
    out += fmt::format("| {} | {} | {} | {} | {} |\n", r.experiment_id, spec_field(r, "strategy"),
                       spec_field(r, "template"), spec_field(r, "identity"), spec_field(r, "context"));
  return out;
}

inline std::string render_scatter_csv(const std::vector<RunRecord>& records) {
  std::string out = detail::csv_line({"experiment_id", "strategy", "template", "identity", "context",
                                      "initial_captured", "initial_relevant", "formal_captured", "formal_relevant"});
  for (const auto& r : records) {
    Scores init, formal;
    if (r.evaluation) {
      init = r.evaluation->initial;
      if (r.evaluation->formal) formal = *r.evaluation->formal;
    }
    out += detail::csv_line({r.experiment_id, spec_field(r, "strategy"), spec_field(r, "template"),
                             spec_field(r, "identity"), spec_field(r, "context"), detail::csv_number(init.captured),
                             detail::csv_number(init.relevant), detail::csv_number(formal.captured),
                             detail::csv_number(formal.relevant)});
  }
  return out;
}

inline RefusalTaxonomy record_taxonomy(const RunRecord& r) {
  if (!r.spec.is_object() || !r.spec.contains("taxonomy")) return default_taxonomy();
  RefusalTaxonomy t;
  for (const auto& c : r.spec.at("taxonomy"))
    t.categories.push_back({c.at("name").get<std::string>(), c.at("keywords").get<std::vector<std::string>>()});
  return t;
}

// Long format: one row per (experiment, category), then ALL rows summing
// over experiments. Categories follow the taxonomy of the first record.
inline std::string render_refusals_csv(const std::vector<RunRecord>& records) {
  std::string out = detail::csv_line({"experiment_id", "category", "count", "refused", "percent_refused"});
  if (records.empty()) return out;
  auto tax = record_taxonomy(records.front());
  std::vector<std::pair<std::string, std::size_t>> total;
  std::size_t refused_total = 0;
  for (const auto& r : records) {
    auto hist = refusal_distribution(r.refusals, tax);
    std::string pct = r.percent_refused ? fmt::format("{:.6f}", 100.0 * *r.percent_refused) : std::string();
    for (const auto& [cat, n] : hist) {
      out += detail::csv_line({r.experiment_id, cat, std::to_string(n), std::to_string(r.refusals.size()), pct});
      auto it = std::find_if(total.begin(), total.end(), [&](const auto& p) { return p.first == cat; });
      if (it == total.end()) total.emplace_back(cat, n);
      else it->second += n;
    }
    refused_total += r.refusals.size();
  }
  for (const auto& [cat, n] : total)
    out += detail::csv_line({"ALL", cat, std::to_string(n), std::to_string(refused_total), ""});
  return out;
}

inline nlohmann::json linkage_json(const std::vector<RunRecord>& records) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& r : records) {
    if (!r.topics || !r.topics->model) continue;
    const auto& m = *r.topics->model;
    std::vector<std::string> leaves;
    for (const auto& c : r.unique_codes) leaves.push_back(c.text);
    nlohmann::json names = nlohmann::json::array();
    for (const auto& f : r.topics->formal_codes) names.push_back(f.name ? nlohmann::json(*f.name) : nlohmann::json(nullptr));
    out[r.experiment_id] = {{"leaves", leaves},
                            {"linkage", m.linkage},
                            {"labels", m.labels},
                            {"cut_threshold", m.params.linkage_threshold},
                            {"cluster_names", names}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paired statistics

namespace detail {

inline const std::vector<std::pair<const char*, std::optional<double> (*)(const RunRecord&)>>& metrics() {
  static const std::vector<std::pair<const char*, std::optional<double> (*)(const RunRecord&)>> m = {
      {"initial_captured",
       [](const RunRecord& r) { return r.evaluation ? r.evaluation->initial.captured : std::nullopt; }},
      {"initial_relevant",
       [](const RunRecord& r) { return r.evaluation ? r.evaluation->initial.relevant : std::nullopt; }},
      {"formal_captured",
       [](const RunRecord& r) -> std::optional<double> {
         return r.evaluation && r.evaluation->formal ? r.evaluation->formal->captured : std::nullopt;
       }},
      {"formal_relevant",
       [](const RunRecord& r) -> std::optional<double> {
         return r.evaluation && r.evaluation->formal ? r.evaluation->formal->relevant : std::nullopt;
       }},
  };
  return m;
}

inline std::string method_name(WilcoxonMethod m) {
  switch (m) {
    case WilcoxonMethod::Exact: return "exact";
    case WilcoxonMethod::Normal: return "normal";
    case WilcoxonMethod::Auto: return "auto";
  }
  return "?";
}

}  // namespace detail

// For each grid axis and each pair of its values, experiments are paired when
// they agree on every other axis. The pairing is written out with the test.
inline nlohmann::json statistics_json(const std::vector<RunRecord>& records) {
  static constexpr const char* kAxes[] = {"strategy", "template", "identity", "context"};
  nlohmann::json out = {{"wilcoxon", nlohmann::json::array()}, {"pearson", nlohmann::json::array()}};

  for (const char* axis : kAxes) {
    std::vector<std::string> values;
    for (const auto& r : records) {
      auto v = spec_field(r, axis);
      if (std::find(values.begin(), values.end(), v) == values.end()) values.push_back(v);
    }
    std::sort(values.begin(), values.end());
    auto rest_key = [&](const RunRecord& r) {
      std::string k;
      for (const char* other : kAxes)
        if (std::string_view(other) != axis) k += spec_field(r, other) + '\x1f';
      return k;
    };
    for (std::size_t i = 0; i < values.size(); ++i)
      for (std::size_t j = i + 1; j < values.size(); ++j) {
        std::map<std::string, std::pair<const RunRecord*, const RunRecord*>> pairs;
        for (const auto& r : records) {
          auto v = spec_field(r, axis);
          if (v == values[i]) pairs[rest_key(r)].first = &r;
          else if (v == values[j]) pairs[rest_key(r)].second = &r;
        }
        for (const auto& [name, get] : detail::metrics()) {
          std::vector<double> a, b;
          nlohmann::json pairing = nlohmann::json::array();
          for (const auto& [_, p] : pairs) {
            if (!p.first || !p.second) continue;
            auto x = get(*p.first), y = get(*p.second);
            if (!x || !y) continue;
            a.push_back(*x);
            b.push_back(*y);
            pairing.push_back({p.first->experiment_id, p.second->experiment_id});
          }
          nlohmann::json entry = {{"axis", axis}, {"a", values[i]}, {"b", values[j]},
                                  {"metric", name}, {"pairs", pairing}};
          try {
            auto w = wilcoxon_signed_rank(a, b);
            entry["n"] = w.n;
            entry["statistic"] = w.statistic;
            entry["p_value"] = w.p_value;
            entry["method"] = detail::method_name(w.method);
          } catch (const DomainError& e) {
            entry["n"] = a.size();
            entry["error"] = e.what();
          }
          out["wilcoxon"].push_back(std::move(entry));
        }
      }
  }

  // Captured against relevant, per code level, across experiments.
  for (const char* level : {"initial", "formal"}) {
    std::vector<double> x, y;
    std::string cap = std::string(level) + "_captured", rel = std::string(level) + "_relevant";
    for (const auto& r : records) {
      std::optional<double> cv, rv;
      for (const auto& [name, get] : detail::metrics()) {
        if (name == cap) cv = get(r);
        if (name == rel) rv = get(r);
      }
      if (cv && rv) {
        x.push_back(*cv);
        y.push_back(*rv);
      }
    }
    nlohmann::json entry = {{"x", cap}, {"y", rel}, {"n", x.size()}};
    try {
      double r = pearson(x, y);
      if (std::isfinite(r)) entry["r"] = r;
      else entry["error"] = "undefined for constant input";
    } catch (const DomainError& e) {
      entry["error"] = e.what();
    }
    out["pearson"].push_back(std::move(entry));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bundle

struct ReportBundle {
  std::string comparison_md;
  std::string comparison_csv;
  std::string scatter_csv;
  std::string refusals_csv;
  std::string linkage_json;
  std::string statistics_json;
};

inline ReportBundle build_reports(std::vector<RunRecord> records, const std::optional<HumanColumn>& human = {}) {
  if (records.empty()) throw DomainError("reports need at least one run record");
  std::sort(records.begin(), records.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.experiment_id < b.experiment_id; });
  std::vector<ComparisonColumn> cols;
  if (human) cols.push_back(human_column(*human));
  for (const auto& r : records) cols.push_back(comparison_column(r));
  ReportBundle b;
  b.comparison_md = render_comparison_md(cols) + "\n" + render_legend_md(records);
  b.comparison_csv = render_comparison_csv(cols);
  b.scatter_csv = render_scatter_csv(records);
  b.refusals_csv = render_refusals_csv(records);
  b.linkage_json = linkage_json(records).dump(2) + "\n";
  b.statistics_json = statistics_json(records).dump(2) + "\n";
  return b;
}

inline std::vector<fs::path> write_reports(const ReportBundle& b, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<std::pair<const char*, const std::string*>> files = {
      {"comparison.md", &b.comparison_md},   {"comparison.csv", &b.comparison_csv},
      {"scatter.csv", &b.scatter_csv},       {"refusals.csv", &b.refusals_csv},
      {"linkage.json", &b.linkage_json},     {"statistics.json", &b.statistics_json}};
  std::vector<fs::path> out;
  for (const auto& [name, body] : files) {
    auto p = dir / name;
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << *body;
    if (!f) throw Error("cannot write " + p.string());
    out.push_back(p);
  }
  return out;
}

// Completed records of every log under <out>/runs, in id order.
inline std::vector<RunRecord> load_records(const fs::path& out_dir, bool include_incomplete = false) {
  std::vector<fs::path> logs;
  auto dir = out_dir / "runs";
  if (!fs::exists(dir)) return {};
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") logs.push_back(e.path());
  std::sort(logs.begin(), logs.end());
  std::vector<RunRecord> out;
  for (const auto& p : logs) {
    auto r = load_record(p);
    if (r.complete || include_incomplete) out.push_back(std::move(r));
  }
  return out;
}

}  // namespace qualcode
