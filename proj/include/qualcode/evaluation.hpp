#pragma once

// Agreement between machine codes (MC) and a human codebook (HC).
//
// A pair matches when the cosine similarity of their embeddings is strictly
// greater than the threshold (0.6 by default).
//   Percent Captured: share of formal HC codes with at least one MC match.
//   Percent Relevant: share of MC codes matching any HC code, initial or formal.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <spdlog/spdlog.h>
#include <nlohmann/json.hpp>

#include "qualcode/embeddings.hpp"
#include "qualcode/error.hpp"
#include "qualcode/generation.hpp"
#include "qualcode/topics.hpp"

namespace qualcode {

inline constexpr double kDefaultMatchThreshold = 0.6;

inline bool is_match(double similarity, double threshold) noexcept { return similarity > threshold; }

struct HumanCodebook {
  std::vector<std::string> initial_codes;
  std::vector<std::string> formal_codes;

  std::vector<std::string> all_codes() const {
    auto out = initial_codes;
    out.insert(out.end(), formal_codes.begin(), formal_codes.end());
    return out;
  }
};

// {"initial": [...], "formal": [...]}; both non-empty and unique under the
// dedupe normalization.
inline HumanCodebook parse_codebook(const nlohmann::json& j) {
  HumanCodebook cb;
  auto read = [&](const char* key, std::vector<std::string>& dst) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_array()) throw ConfigError(std::string("codebook: missing array '") + key + "'");
    std::vector<std::string> seen;
    for (const auto& v : *it) {
      if (!v.is_string()) throw ConfigError(std::string("codebook: '") + key + "' entries must be strings");
      auto s = std::string(text::trim(v.get<std::string>()));
      auto k = dedupe_key(s);
      if (std::find(seen.begin(), seen.end(), k) != seen.end())
        throw ConfigError(std::string("codebook: duplicate ") + key + " code '" + s + "'");
      seen.push_back(k);
      dst.push_back(std::move(s));
    }
    if (dst.empty()) throw ConfigError(std::string("codebook: '") + key + "' is empty");
  };
  if (!j.is_object()) throw ConfigError("codebook must be an object");
  read("initial", cb.initial_codes);
  read("formal", cb.formal_codes);
  return cb;
}

struct HcMatch {
  std::size_t best_mc = 0;
  double similarity = 0.0;
  bool matched = false;
};

struct MatchTable {
  std::vector<HcMatch> hc;       // per HC code
  std::vector<bool> mc_matched;  // per MC code
  double threshold = kDefaultMatchThreshold;
};

// All-pairs cosine over pre-embedded codes. Best match per HC code is the
// first MC code attaining the maximum similarity.
inline MatchTable match_vectors(std::span<const EmbeddingVector> mc, std::span<const EmbeddingVector> hc,
                                double threshold = kDefaultMatchThreshold) {
  if (mc.empty() || hc.empty()) throw DomainError("match_codes: both code lists must be non-empty");
  MatchTable t;
  t.threshold = threshold;
  t.hc.resize(hc.size());
  t.mc_matched.assign(mc.size(), false);
  for (std::size_t h = 0; h < hc.size(); ++h) {
    HcMatch best{0, -std::numeric_limits<double>::infinity(), false};
    for (std::size_t m = 0; m < mc.size(); ++m) {
      double s = cosine(hc[h], mc[m]);
      if (s > best.similarity) best = {m, s, false};
      if (is_match(s, threshold)) t.mc_matched[m] = true;
    }
    best.matched = is_match(best.similarity, threshold);
    t.hc[h] = best;
  }
  return t;
}

inline MatchTable match_codes(std::span<const std::string> mc, std::span<const std::string> hc,
                              const EnsembleEmbedder& embedder, double threshold = kDefaultMatchThreshold) {
  if (mc.empty() || hc.empty()) throw DomainError("match_codes: both code lists must be non-empty");
  return match_vectors(embedder.embed_batch(mc), embedder.embed_batch(hc), threshold);
}

// Percentage of `formal_hc` having some MC match. An empty MC list scores 0.
inline double percent_captured_vectors(std::span<const EmbeddingVector> formal_hc, std::span<const EmbeddingVector> mc,
                                       double threshold = kDefaultMatchThreshold) {
  if (formal_hc.empty()) throw DomainError("percent_captured: formal HC list is empty");
  if (mc.empty()) {
    spdlog::warn("percent_captured: no machine codes; scoring 0%");
    return 0.0;
  }
  std::size_t hit = 0;
  for (const auto& h : formal_hc)
    if (std::any_of(mc.begin(), mc.end(), [&](const auto& m) { return is_match(cosine(h, m), threshold); })) ++hit;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(formal_hc.size());
}

inline double percent_relevant_vectors(std::span<const EmbeddingVector> mc, std::span<const EmbeddingVector> all_hc,
                                       double threshold = kDefaultMatchThreshold) {
  if (mc.empty()) throw DomainError("percent_relevant: MC list is empty");
  std::size_t hit = 0;
  for (const auto& m : mc)
    if (std::any_of(all_hc.begin(), all_hc.end(), [&](const auto& h) { return is_match(cosine(m, h), threshold); }))
      ++hit;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(mc.size());
}

inline double percent_captured(std::span<const std::string> formal_hc, std::span<const std::string> mc,
                               const EnsembleEmbedder& embedder, double threshold = kDefaultMatchThreshold) {
  if (formal_hc.empty()) throw DomainError("percent_captured: formal HC list is empty");
  auto hv = embedder.embed_batch(formal_hc);
  if (mc.empty()) return percent_captured_vectors(hv, {}, threshold);
  return percent_captured_vectors(hv, embedder.embed_batch(mc), threshold);
}

inline double percent_relevant(std::span<const std::string> mc, std::span<const std::string> all_hc,
                               const EnsembleEmbedder& embedder, double threshold = kDefaultMatchThreshold) {
  if (mc.empty()) throw DomainError("percent_relevant: MC list is empty");
  return percent_relevant_vectors(embedder.embed_batch(mc), embedder.embed_batch(all_hc), threshold);
}

// ---------------------------------------------------------------------------
// Statistics

enum class WilcoxonMethod { Auto, Exact, Normal };

struct WilcoxonResult {
  double statistic = 0.0;  // W+, the sum of ranks of positive differences
  double p_value = 1.0;    // two-sided
  WilcoxonMethod method = WilcoxonMethod::Exact;
  std::size_t n = 0;       // pairs after dropping zero differences
};

namespace detail {

// Average ranks of |d| (1-based).
inline std::vector<double> abs_ranks(std::span<const double> d) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return std::fabs(d[a]) < std::fabs(d[b]); });
  std::vector<double> ranks(d.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && std::fabs(d[idx[j + 1]]) == std::fabs(d[idx[i]])) ++j;
    double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

// Two-sided signed-rank test. Exact for n <= 25 (distribution of W+ over all
// 2^n sign assignments, counted by dynamic programming over doubled ranks so
// tied half-ranks stay integral); normal approximation with continuity and
// tie correction above that.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           WilcoxonMethod method = WilcoxonMethod::Auto) {
  if (a.size() != b.size()) throw DomainError("wilcoxon: samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  if (d.empty()) throw DomainError("wilcoxon: all differences are zero");
  if (d.size() < 5) throw DomainError("wilcoxon: fewer than 5 non-zero differences");

  auto ranks = detail::abs_ranks(d);
  WilcoxonResult r;
  r.n = d.size();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0) r.statistic += ranks[i];
  if (method == WilcoxonMethod::Auto) method = r.n <= 25 ? WilcoxonMethod::Exact : WilcoxonMethod::Normal;
  r.method = method;

  if (method == WilcoxonMethod::Exact) {
    std::vector<std::size_t> twice(ranks.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      twice[i] = static_cast<std::size_t>(std::llround(ranks[i] * 2.0));
      total += twice[i];
    }
    std::vector<double> count(total + 1, 0.0);  // count[s] = assignments with 2*W+ == s
    count[0] = 1.0;
    for (auto t : twice)
      for (std::size_t s = total; s >= t; --s) {
        count[s] += count[s - t];
        if (s == t) break;
      }
    auto w2 = static_cast<std::size_t>(std::llround(r.statistic * 2.0));
    double lo = 0.0, hi = 0.0, all = std::ldexp(1.0, static_cast<int>(r.n));
    for (std::size_t s = 0; s <= total; ++s) {
      if (s <= w2) lo += count[s];
      if (s >= w2) hi += count[s];
    }
    r.p_value = std::min(1.0, 2.0 * std::min(lo, hi) / all);
  } else {
    double n = static_cast<double>(r.n);
    double mean = n * (n + 1.0) / 4.0;
    double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    std::vector<double> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      double t = static_cast<double>(j - i);
      var -= (t * t * t - t) / 48.0;
      i = j;
    }
    double z = std::max(0.0, std::fabs(r.statistic - mean) - 0.5) / std::sqrt(var);
    r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("pearson: samples differ in length");
  if (x.size() < 2) throw DomainError("pearson: need at least two pairs");
  double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Cluster versus semantic alignment

struct AlignmentRow {
  std::string hc_code;
  std::size_t cluster_id = 0;
  double cluster_distance = 0.0;
  std::optional<std::string> cluster_match;   // name of the assigned cluster's formal code
  std::optional<std::string> semantic_match;  // best-named formal code above threshold
  double semantic_similarity = 0.0;
};

// For each formal HC code: the formal MC code of the cluster the topic model
// assigns it to, and the formal MC code whose name is most similar to it.
// Unnamed formal codes can be assigned but never semantically matched.
inline std::vector<AlignmentRow> alignment_table(std::span<const std::string> formal_hc, const TopicModel& model,
                                                 std::span<const FormalCode> formal_mc,
                                                 const EnsembleEmbedder& embedder,
                                                 double threshold = kDefaultMatchThreshold) {
  if (formal_mc.empty()) throw DomainError("alignment_table: no formal machine codes");
  auto assignments = transform(formal_hc, model, embedder);
  std::vector<std::string> names;
  std::vector<std::size_t> named;
  for (std::size_t i = 0; i < formal_mc.size(); ++i)
    if (formal_mc[i].name) {
      names.push_back(*formal_mc[i].name);
      named.push_back(i);
    }
  auto hv = embedder.embed_batch(formal_hc);
  std::vector<EmbeddingVector> nv;
  if (!names.empty()) nv = embedder.embed_batch(names);

  std::vector<AlignmentRow> rows;
  for (std::size_t h = 0; h < formal_hc.size(); ++h) {
    AlignmentRow row;
    row.hc_code = formal_hc[h];
    row.cluster_id = assignments[h].cluster_id;
    row.cluster_distance = assignments[h].distance;
    for (const auto& fc : formal_mc)
      if (fc.cluster_id == row.cluster_id) row.cluster_match = fc.name;
    double best = -std::numeric_limits<double>::infinity();
    std::optional<std::size_t> arg;
    for (std::size_t k = 0; k < nv.size(); ++k) {
      double s = cosine(hv[h], nv[k]);
      if (s > best) {
        best = s;
        arg = k;
      }
    }
    if (arg) {
      row.semantic_similarity = best;
      if (is_match(best, threshold)) row.semantic_match = names[*arg];
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace qualcode
