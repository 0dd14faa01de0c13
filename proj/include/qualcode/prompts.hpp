#pragma once

// Prompt templates for initial code generation and cluster naming. The
// wording is reproduced exactly; placeholders are {IDENTITY}, {CONTEXT},
// {QUESTION} and {INTERVIEW}.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qualcode/chunking.hpp"
#include "qualcode/error.hpp"

namespace qualcode {

enum class TemplateId { BaseTheme, BaseT, CotT, BaseC, NovelCotT };

inline constexpr std::array<TemplateId, 5> kAllTemplates = {TemplateId::BaseTheme, TemplateId::BaseT, TemplateId::CotT,
                                                            TemplateId::BaseC, TemplateId::NovelCotT};

inline std::string_view template_name(TemplateId t) noexcept {
  switch (t) {
    case TemplateId::BaseTheme: return "base_theme";
    case TemplateId::BaseT: return "base_t";
    case TemplateId::CotT: return "cot_t";
    case TemplateId::BaseC: return "base_c";
    case TemplateId::NovelCotT: return "novel_cot_t";
  }
  return "?";
}

inline std::optional<TemplateId> parse_template(std::string_view s) {
  for (auto t : kAllTemplates)
    if (template_name(t) == s) return t;
  return std::nullopt;
}

// Templates whose output is expected to carry supporting quotes.
inline bool expects_quotes(TemplateId t) noexcept { return t == TemplateId::CotT || t == TemplateId::NovelCotT; }

inline const std::vector<std::string>& default_identities() {
  static const std::vector<std::string> v = {"an anthropologist", "an African American Studies anthropologist",
                                             "a Black anthropologist"};
  return v;
}

inline const std::vector<std::string>& default_contexts() {
  static const std::vector<std::string> v = {"the experiences of gun violence survivors",
                                             "the experiences of Black men as gun violence survivors"};
  return v;
}

struct PromptTemplate {
  std::optional<std::string_view> system;
  std::string_view user;
};

namespace prompts {

inline constexpr std::string_view kThemeSystem =
    "You are {IDENTITY} analyzing interviews to understand {CONTEXT}. Your response should be a numbered list "
    "with each item on a new line.";
inline constexpr std::string_view kCodeSystem =
    "You are {IDENTITY} applying inductive coding techniques to understand {CONTEXT} from interview data. Your "
    "response should be a numbered list with each item on a new line.";

inline constexpr std::string_view kNamingSystem =
    "You are an assistant that extracts high-level topics from texts. Only return the topic name.";
inline constexpr std::string_view kNamingUser =
    "This is a list of texts where each collection of texts describe a topic. After each collection of texts, the "
    "name of the topic they represent is mentioned as a short-highly-descriptive title.\n"
    "---\n"
    "Topic:\n"
    "Sample texts from this topic:\n"
    "- {DOCUMENTS}\n"
    "Keywords: {KEYWORDS}\n"
    "Topic name:";

}  // namespace prompts

// Template selected by the chunk strategy. Question chunks in the Other
// bucket have no question to quote and use the excerpt wording.
inline PromptTemplate prompt_template(TemplateId id, Strategy strategy) {
  using namespace prompts;
  switch (strategy) {
    case Strategy::Paired:
      switch (id) {
        case TemplateId::BaseTheme:
          return {std::nullopt,
                  "What themes are observed in the following interview excerpt? Your response should be a numbered "
                  "list with each item on a new line.\n{INTERVIEW}"};
        case TemplateId::BaseT: return {kThemeSystem, "List the themes observed in the following interview excerpt:\n{INTERVIEW}"};
        case TemplateId::CotT:
          return {kThemeSystem,
                  "List the themes observed in the following interview excerpt. Provide quotes from the interview "
                  "that demonstrate the themes.\n{INTERVIEW}"};
        case TemplateId::BaseC: return {kCodeSystem, "List the codes observed in the following interview excerpt:\n{INTERVIEW}"};
        case TemplateId::NovelCotT:
          return {kThemeSystem,
                  "List the novel themes observed in the following interview excerpt. Provide quotes from the "
                  "interview that demonstrate the themes.\n{INTERVIEW}"};
      }
      break;
    case Strategy::Question:
      switch (id) {
        case TemplateId::BaseTheme:
          return {std::nullopt,
                  "What themes are observed in the following interview responses to the question: {QUESTION}? Your "
                  "response should be a numbered list with each item on a new line.\n{INTERVIEW}"};
        case TemplateId::BaseT:
          return {kThemeSystem,
                  "List the key themes observed in the following interview responses to the question: "
                  "{QUESTION}:\n {INTERVIEW}"};
        case TemplateId::CotT:
          return {kThemeSystem,
                  "List the key themes observed in the following interview responses to the question: {QUESTION}. "
                  "Provide quotes from the interview that demonstrate the themes.\n{INTERVIEW}"};
        case TemplateId::BaseC:
          return {kCodeSystem,
                  "List the codes observed in the following interview responses to the question: {QUESTION}. "
                  "Responses:\n{INTERVIEW}"};
        case TemplateId::NovelCotT:
          return {kThemeSystem,
                  "List the novel themes observed in the following interview responses. Provide quotes from the "
                  "interview that demonstrate the themes.\n{INTERVIEW}"};
      }
      break;
    case Strategy::FullText:
      switch (id) {
        case TemplateId::BaseTheme:
          return {std::nullopt,
                  "What themes are observed in the following interview? Your response should be a numbered list "
                  "with each item on a new line.\n{INTERVIEW}"};
        case TemplateId::BaseT: return {kThemeSystem, "List the themes observed in the following interview:\n{INTERVIEW}"};
        case TemplateId::CotT:
          return {kThemeSystem,
                  "List the themes observed in the following interview. Provide quotes from the interview that "
                  "demonstrate the themes.\n{INTERVIEW}"};
        case TemplateId::BaseC: return {kCodeSystem, "List the codes observed in the following interview:\n{INTERVIEW}"};
        case TemplateId::NovelCotT:
          return {kThemeSystem,
                  "List the novel themes observed in the following interview. Provide quotes from the interview that "
                  "demonstrate the themes.\n{INTERVIEW}"};
      }
      break;
  }
  throw RenderError("no template for this (template, strategy) pair");
}

struct Substitution {
  std::string_view placeholder;  // without braces
  std::optional<std::string_view> value;
};

// Single left-to-right pass: substituted values are never rescanned, so an
// excerpt that happens to contain "{QUESTION}" is left alone.
inline std::string substitute(std::string_view tmpl, std::initializer_list<Substitution> subs) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto name = tmpl.substr(i + 1, close - i - 1);
        bool matched = false;
        for (const auto& s : subs) {
          if (s.placeholder != name) continue;
          if (!s.value) throw RenderError("missing value for {" + std::string(name) + "}");
          out.append(*s.value);
          matched = true;
          break;
        }
        if (matched) {
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

}  // namespace qualcode
