#pragma once

// Keyword taxonomy for refusal justifications. Matching is case-insensitive
// and anchored on word boundaries; a text may fall under several categories.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qualcode/error.hpp"
#include "qualcode/generation.hpp"
#include "qualcode/text.hpp"

namespace qualcode {

struct RefusalCategory {
  std::string name;
  std::vector<std::string> keywords;
};

struct RefusalTaxonomy {
  std::vector<RefusalCategory> categories;  // "misc" last, no keywords

  static constexpr std::string_view kFallback = "misc";

  RefusalCategory* find(std::string_view name) {
    for (auto& c : categories)
      if (c.name == name) return &c;
    return nullptr;
  }
};

inline RefusalTaxonomy default_taxonomy() {
  return RefusalTaxonomy{{
      {"illegal", {"illegal", "criminal", "crime"}},
      {"violence", {"violent", "violence", "war", "brutality"}},
      {"guns", {"firearm", "shot", "gun", "shooting"}},
      {"explicit", {"explicit", "n-word", "profane", "profanity", "obscenity", "nigga"}},
      {"stereotypes",
       {"hate", "speech", "derogatory", "stereotype", "slur", "discriminatory", "discriminate", "stigma"}},
      {"mental_health", {"mental", "suicide", "crisis", "self-destructive"}},
      {"graphic", {"dangerous", "graphic", "disturbing", "harmful"}},
      {"sex", {"sex", "condom", "HIV", "AIDS", "std"}},
      {"drugs", {"drug", "marijuana", "substance abuse", "weed"}},
      {"gender", {"women", "gender", "man", "men", "woman", "female", "male"}},
      {"race", {"black", "African", "racial"}},
      {"minors", {"child abuse", "child", "minor", "children"}},
      {"privacy", {"identify", "personal", "individual", "medical"}},
      {"prison", {"jail", "prison", "justice system", "incarceration"}},
      {"misc", {}},
  }};
}

// Adds keywords from {"category": ["kw", ...], ...}. Categories must exist;
// the fallback category cannot take keywords.
inline void apply_taxonomy_overrides(RefusalTaxonomy& tax, const nlohmann::json& overrides) {
  if (overrides.is_null()) return;
  if (!overrides.is_object()) throw ConfigError("taxonomy overrides must be an object of category -> keywords");
  for (const auto& [name, kws] : overrides.items()) {
    if (name == RefusalTaxonomy::kFallback) throw ConfigError("the misc category cannot take keywords");
    auto* cat = tax.find(name);
    if (!cat) throw ConfigError("unknown refusal category '" + name + "'");
    if (!kws.is_array()) throw ConfigError("keywords for '" + name + "' must be an array");
    for (const auto& k : kws) {
      if (!k.is_string()) throw ConfigError("keywords for '" + name + "' must be strings");
      cat->keywords.push_back(k.get<std::string>());
    }
  }
}

// Categories in taxonomy order; {"misc"} when nothing matches.
inline std::vector<std::string> classify_refusal(std::string_view text, const RefusalTaxonomy& tax) {
  std::vector<std::string> out;
  for (const auto& cat : tax.categories) {
    for (const auto& kw : cat.keywords) {
      if (text::contains_word(text, kw)) {
        out.push_back(cat.name);
        break;
      }
    }
  }
  if (out.empty()) out.emplace_back(RefusalTaxonomy::kFallback);
  return out;
}

struct RefusalRecord {
  std::string experiment_id;
  std::string chunk_id;
  std::string text;
  std::vector<std::string> categories;

  friend bool operator==(const RefusalRecord&, const RefusalRecord&) = default;
};

// Refused requests over all requests that reached the model.
inline double percent_refused(std::span<const LlmTurnResult> results) {
  if (results.empty()) throw DomainError("percent_refused: no results");
  std::size_t refused = 0, total = 0;
  for (const auto& r : results) {
    if (r.status == ResultStatus::TransportFailed) continue;
    ++total;
    if (r.refusal) ++refused;
  }
  if (total == 0) throw DomainError("percent_refused: every request failed in transport");
  return static_cast<double>(refused) / static_cast<double>(total);
}

inline std::vector<RefusalRecord> audit_refusals(std::span<const LlmTurnResult> results,
                                                 const std::string& experiment_id, const RefusalTaxonomy& tax) {
  std::vector<RefusalRecord> out;
  for (const auto& r : results) {
    if (!r.refusal) continue;
    std::string t = r.refusal_text.value_or(r.raw_response);
    out.push_back({experiment_id, r.chunk_id, t, classify_refusal(t, tax)});
  }
  return out;
}

// Multi-label histogram in taxonomy order.
inline std::vector<std::pair<std::string, std::size_t>> refusal_distribution(std::span<const RefusalRecord> records,
                                                                             const RefusalTaxonomy& tax) {
  std::vector<std::pair<std::string, std::size_t>> hist;
  for (const auto& c : tax.categories) hist.emplace_back(c.name, 0);
  for (const auto& rec : records) {
    for (const auto& cat : rec.categories) {
      auto it = std::find_if(hist.begin(), hist.end(), [&](const auto& p) { return p.first == cat; });
      if (it == hist.end()) hist.emplace_back(cat, 1);
      else ++it->second;
    }
  }
  return hist;
}

}  // namespace qualcode
