#pragma once

// Interview transcripts: parsing, cleaning, and serialization.
//
// Two on-disk formats are understood:
//   TurnRecords   one JSON object per line: {"interview_id", "speaker", "text"}
//   PrefixedText  one turn per line prefixed with "I:" or "S:" (any case)

#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qualcode/error.hpp"
#include "qualcode/text.hpp"

namespace qualcode {

enum class Speaker { Interviewer, Subject };

inline std::string_view speaker_name(Speaker s) noexcept {
  return s == Speaker::Interviewer ? "interviewer" : "subject";
}

inline std::optional<Speaker> parse_speaker(std::string_view label) {
  label = text::trim(label);
  if (text::iequals(label, "interviewer")) return Speaker::Interviewer;
  if (text::iequals(label, "subject")) return Speaker::Subject;
  return std::nullopt;
}

struct Turn {
  std::string interview_id;
  std::size_t index = 0;
  Speaker speaker = Speaker::Subject;
  std::string text;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Interview {
  std::string id;
  std::vector<Turn> turns;

  friend bool operator==(const Interview&, const Interview&) = default;
};

enum class TranscriptFormat { TurnRecords, PrefixedText };

struct CleanOptions {
  // Parenthesized spans are removed only when their (trimmed, case-folded)
  // content is one of these. Square-bracketed spans are always removed.
  std::vector<std::string> parenthetical_annotations = {
      "laughs",   "laughing", "laughter", "inaudible", "crosstalk", "background noise",
      "pause",    "unintelligible", "coughs", "sighs", "silence", "phone rings"};
};

namespace detail {

inline bool is_timestamp_token(std::string_view tok) {
  // HH:MM:SS or MM:SS with one or two leading digits.
  auto digits = [&](std::size_t pos, std::size_t n) {
    if (pos + n > tok.size()) return false;
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isdigit(static_cast<unsigned char>(tok[pos + i]))) return false;
    return true;
  };
  std::size_t lead = 0;
  while (lead < tok.size() && lead < 3 && std::isdigit(static_cast<unsigned char>(tok[lead]))) ++lead;
  if (lead < 1 || lead > 2) return false;
  std::size_t pos = lead;
  int groups = 0;
  while (pos < tok.size()) {
    if (tok[pos] != ':' || !digits(pos + 1, 2)) return false;
    pos += 3;
    ++groups;
  }
  return groups == 1 || groups == 2;
}

inline std::string strip_brackets(std::string_view s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '[') {
      auto close = s.find(']', i + 1);
      if (close != std::string_view::npos) {
        out.push_back(' ');
        i = close + 1;
        continue;
      }
    }
    out.push_back(s[i++]);
  }
  return out;
}

inline std::string strip_parentheticals(std::string_view s, const CleanOptions& opts) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '(') {
      auto close = s.find(')', i + 1);
      if (close != std::string_view::npos) {
        auto inner = text::collapse_whitespace(s.substr(i + 1, close - i - 1));
        bool annotation = false;
        for (const auto& a : opts.parenthetical_annotations) {
          if (text::iequals(inner, a)) {
            annotation = true;
            break;
          }
        }
        if (annotation) {
          out.push_back(' ');
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(s[i++]);
  }
  return out;
}

inline std::string clean_once(std::string_view raw, const CleanOptions& opts) {
  auto s = strip_parentheticals(strip_brackets(raw), opts);
  std::string out;
  for (auto tok : text::split_whitespace(s)) {
    if (is_timestamp_token(tok)) continue;
    if (!out.empty()) out.push_back(' ');
    out.append(tok);
  }
  return out;
}

}  // namespace detail

// Removes transcriber annotations and timestamps, then collapses whitespace.
// Applied to a fixpoint so that clean_text is idempotent even when a removal
// splices two fragments into a new annotation or timestamp.
inline std::string clean_text(std::string_view raw, const CleanOptions& opts = {}) {
  std::string cur = detail::clean_once(raw, opts);
  for (;;) {
    std::string next = detail::clean_once(cur, opts);
    if (next == cur) return cur;
    cur = std::move(next);
  }
}

struct ParseOptions {
  bool clean = true;
  CleanOptions clean_options;
  // Turns that are empty after cleaning are dropped and indices renumbered.
  bool drop_empty_turns = true;
};

namespace detail {

inline void finish_interview(Interview& iv, const ParseOptions& opts) {
  std::vector<Turn> kept;
  kept.reserve(iv.turns.size());
  for (auto& t : iv.turns) {
    if (opts.clean) t.text = clean_text(t.text, opts.clean_options);
    if (opts.drop_empty_turns && text::trim(t.text).empty()) continue;
    t.interview_id = iv.id;
    t.index = kept.size();
    kept.push_back(std::move(t));
  }
  iv.turns = std::move(kept);
}

}  // namespace detail

// Parses a TurnRecords document that may hold several interviews. Interviews
// are returned in order of first appearance.
inline std::vector<Interview> parse_turn_records(std::string_view raw, const ParseOptions& opts = {}) {
  std::vector<Interview> out;
  auto lines = text::split_lines(raw);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    auto line = text::trim(lines[ln]);
    if (line.empty()) continue;
    std::size_t lineno = ln + 1;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, std::string("malformed record: ") + e.what());
    }
    if (!rec.is_object()) throw ParseError(lineno, "record is not an object");
    auto field = [&](const char* name) -> std::string {
      auto it = rec.find(name);
      if (it == rec.end() || !it->is_string()) throw ParseError(lineno, std::string("missing field '") + name + "'");
      return it->get<std::string>();
    };
    auto id = field("interview_id");
    auto label = field("speaker");
    auto body = field("text");
    auto speaker = parse_speaker(label);
    if (!speaker) throw ParseError(lineno, "unknown speaker label '" + label + "'");
    Interview* iv = nullptr;
    for (auto& existing : out)
      if (existing.id == id) iv = &existing;
    if (!iv) {
      out.push_back(Interview{id, {}});
      iv = &out.back();
    }
    iv->turns.push_back(Turn{id, iv->turns.size(), *speaker, std::move(body)});
  }
  for (auto& iv : out) detail::finish_interview(iv, opts);
  return out;
}

// Parses a single interview. For TurnRecords every record must carry the
// same interview_id (an empty document yields an empty interview named
// `interview_id`). For PrefixedText `interview_id` is the file stem.
inline Interview parse_transcript(std::string_view raw, TranscriptFormat format, std::string interview_id,
                                  const ParseOptions& opts = {}) {
  if (format == TranscriptFormat::TurnRecords) {
    auto all = parse_turn_records(raw, opts);
    if (all.empty()) return Interview{std::move(interview_id), {}};
    if (all.size() > 1) throw ParseError(0, "document holds more than one interview_id");
    return std::move(all.front());
  }
  Interview iv{std::move(interview_id), {}};
  auto lines = text::split_lines(raw);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    auto line = text::trim(lines[ln]);
    if (line.empty()) continue;
    std::size_t lineno = ln + 1;
    if (line.size() < 2 || line[1] != ':') throw ParseError(lineno, "missing speaker prefix");
    Speaker speaker;
    switch (line[0]) {
      case 'I': case 'i': speaker = Speaker::Interviewer; break;
      case 'S': case 's': speaker = Speaker::Subject; break;
      default: throw ParseError(lineno, std::string("unknown speaker label '") + line[0] + "'");
    }
    auto body = text::trim(line.substr(2));
    if (body.empty()) throw ParseError(lineno, "missing text");
    iv.turns.push_back(Turn{iv.id, iv.turns.size(), speaker, std::string(body)});
  }
  detail::finish_interview(iv, opts);
  return iv;
}

inline std::string serialize_transcript(const Interview& iv, TranscriptFormat format) {
  std::string out;
  for (const auto& t : iv.turns) {
    if (format == TranscriptFormat::TurnRecords) {
      nlohmann::json rec = {{"interview_id", iv.id}, {"speaker", speaker_name(t.speaker)}, {"text", t.text}};
      out += rec.dump();
    } else {
      out += t.speaker == Speaker::Interviewer ? "I: " : "S: ";
      out += t.text;
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace qualcode
