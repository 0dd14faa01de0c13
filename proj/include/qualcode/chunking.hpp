#pragma once

// Prompt-ready chunks under three strategies:
//   Paired    each interviewer turn with the subject turns that follow it
//   Question  subject turns grouped by their most similar protocol question
//   FullText  the whole interview as one chunk (no budget)

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "qualcode/embeddings.hpp"
#include "qualcode/error.hpp"
#include "qualcode/text.hpp"
#include "qualcode/transcripts.hpp"

namespace qualcode {

enum class Strategy { Paired, Question, FullText };

inline std::string_view strategy_name(Strategy s) noexcept {
  switch (s) {
    case Strategy::Paired: return "paired";
    case Strategy::Question: return "question";
    case Strategy::FullText: return "full_text";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view s) {
  if (s == "paired") return Strategy::Paired;
  if (s == "question") return Strategy::Question;
  if (s == "full_text" || s == "fulltext" || s == "full") return Strategy::FullText;
  return std::nullopt;
}

class Tokenizer {
 public:
  enum class Kind { Whitespace, Backend };
  using CountFn = std::function<std::size_t(std::string_view)>;

  static Tokenizer whitespace() { return Tokenizer(Kind::Whitespace, "whitespace", nullptr); }
  static Tokenizer backend(std::string name, CountFn count) {
    if (!count) throw DomainError("backend tokenizer needs a count function");
    return Tokenizer(Kind::Backend, std::move(name), std::move(count));
  }

  Kind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }

  std::size_t count(std::string_view s) const {
    return kind_ == Kind::Whitespace ? text::count_words(s) : count_(s);
  }

 private:
  Tokenizer(Kind k, std::string name, CountFn fn) : kind_(k), name_(std::move(name)), count_(std::move(fn)) {}

  Kind kind_;
  std::string name_;
  CountFn count_;
};

// Protocol question ordinal, 1-based. Ordinal 0 is the "Other" bucket.
struct QuestionId {
  std::size_t ordinal = 0;

  static constexpr QuestionId other() noexcept { return {0}; }
  bool is_other() const noexcept { return ordinal == 0; }
  friend auto operator<=>(const QuestionId&, const QuestionId&) = default;
};

struct QuestionProtocol {
  std::vector<std::string> questions;

  std::size_t size() const noexcept { return questions.size(); }
  const std::string& text(QuestionId q) const { return questions.at(q.ordinal - 1); }
};

// One question per line; ordinal = line number. Trailing blank lines are
// ignored, interior blank lines are an error since they would shift ordinals.
inline QuestionProtocol parse_protocol(std::string_view raw) {
  auto lines = text::split_lines(raw);
  while (!lines.empty() && text::trim(lines.back()).empty()) lines.pop_back();
  QuestionProtocol p;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto q = text::trim(lines[i]);
    if (q.empty()) throw ParseError(i + 1, "blank line inside question protocol");
    p.questions.emplace_back(q);
  }
  if (p.questions.empty()) throw ParseError(1, "question protocol is empty");
  return p;
}

struct Chunk {
  std::string id;
  std::string interview_id;
  Strategy strategy = Strategy::Paired;
  std::size_t ordinal = 0;  // position within (interview, strategy)
  std::string text;
  std::size_t token_count = 0;
  std::vector<std::size_t> source_turn_indices;
  std::optional<QuestionId> question_id;

  friend bool operator==(const Chunk&, const Chunk&) = default;
};

inline std::string make_chunk_id(std::string_view interview_id, Strategy s, std::size_t ordinal) {
  return fmt::format("{}:{}:{:04}", interview_id, strategy_name(s), ordinal);
}

namespace detail {

struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline bool ends_sentence(std::string_view word) {
  while (!word.empty() && (word.back() == '"' || word.back() == '\'' || word.back() == ')' || word.back() == ']'))
    word.remove_suffix(1);
  return !word.empty() && (word.back() == '.' || word.back() == '?' || word.back() == '!');
}

// Splits `text` into byte ranges each within budget. Ranges start and end on
// word boundaries except when a single word alone exceeds the budget (only
// possible with a backend tokenizer), which is then cut between characters.
inline std::vector<ByteRange> split_ranges(std::string_view text, std::size_t max_tokens, const Tokenizer& tok) {
  std::vector<ByteRange> words;
  for (auto w : text::split_whitespace(text)) {
    auto b = static_cast<std::size_t>(w.data() - text.data());
    words.push_back({b, b + w.size()});
  }
  if (words.empty()) return {};

  auto fits = [&](std::size_t first, std::size_t last) {  // word range [first, last]
    if (tok.kind() == Tokenizer::Kind::Whitespace) return last - first + 1 <= max_tokens;
    return tok.count(text.substr(words[first].begin, words[last].end - words[first].begin)) <= max_tokens;
  };

  std::vector<ByteRange> out;
  auto emit = [&](std::size_t first, std::size_t last) { out.push_back({words[first].begin, words[last].end}); };

  // Open piece: words [cur_first, cur_last] when has_cur.
  bool has_cur = false;
  std::size_t cur_first = 0, cur_last = 0;
  std::size_t s_begin = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    bool last_word = i + 1 == words.size();
    if (!last_word && !ends_sentence(text.substr(words[i].begin, words[i].end - words[i].begin))) continue;
    std::size_t s_end = i;  // sentence = words [s_begin, s_end]
    if (has_cur && fits(cur_first, s_end)) {
      cur_last = s_end;
    } else if (fits(s_begin, s_end)) {
      if (has_cur) emit(cur_first, cur_last);
      has_cur = true;
      cur_first = s_begin;
      cur_last = s_end;
    } else {
      // The sentence needs a hard split anyway, so keep filling the open piece.
      std::size_t start = has_cur ? cur_first : s_begin;
      has_cur = false;
      for (std::size_t w = s_begin; w <= s_end; ++w) {
        if (w > start && !fits(start, w)) {
          emit(start, w - 1);
          start = w;
        }
        if (w == start && !fits(w, w)) {
          // Single oversized word: cut it by characters.
          const std::size_t e = words[w].end;
          auto next_char = [&](std::size_t p) {
            ++p;
            while (p < e && (static_cast<unsigned char>(text[p]) & 0xC0) == 0x80) ++p;
            return p;
          };
          for (std::size_t b = words[w].begin; b < e;) {
            std::size_t cut = next_char(b);
            while (cut < e) {
              std::size_t nxt = next_char(cut);
              if (tok.count(text.substr(b, nxt - b)) > max_tokens) break;
              cut = nxt;
            }
            out.push_back({b, cut});
            b = cut;
          }
          start = w + 1;
        }
      }
      if (start <= s_end) {
        has_cur = true;
        cur_first = start;
        cur_last = s_end;
      }
    }
    s_begin = i + 1;
  }
  if (has_cur) emit(cur_first, cur_last);
  return out;
}

}  // namespace detail

// Splits text so that every piece is within `max_tokens`. Text already
// within budget is returned unchanged as a single piece. Otherwise pieces are
// packed from whole sentences where possible, and each piece is a verbatim
// substring of the input starting and ending on a token.
inline std::vector<std::string> split_to_limit(std::string_view text, std::size_t max_tokens, const Tokenizer& tok) {
  if (max_tokens < 1) throw DomainError("split_to_limit: max_tokens must be >= 1");
  if (text::trim(text).empty()) return {};
  if (tok.count(text) <= max_tokens) return {std::string(text)};
  std::vector<std::string> out;
  for (auto r : detail::split_ranges(text, max_tokens, tok)) out.emplace_back(text.substr(r.begin, r.end - r.begin));
  return out;
}

inline std::string_view speaker_label(Speaker s) noexcept {
  return s == Speaker::Interviewer ? "Interviewer" : "Subject";
}

namespace detail {

struct Segment {
  std::size_t turn_index;
  ByteRange range;
};

// Splits `body` (built from `segments`) and emits chunks, attributing each
// piece to the turns whose text it overlaps.
inline void emit_chunks(std::vector<Chunk>& out, const Interview& iv, Strategy strategy,
                        std::optional<QuestionId> question, const std::string& body,
                        const std::vector<Segment>& segments, std::size_t max_tokens, const Tokenizer& tok) {
  std::vector<ByteRange> ranges;
  if (tok.count(body) <= max_tokens) {
    if (!text::trim(body).empty()) ranges.push_back({0, body.size()});
  } else {
    ranges = split_ranges(body, max_tokens, tok);
  }
  for (auto r : ranges) {
    Chunk c;
    c.interview_id = iv.id;
    c.strategy = strategy;
    c.ordinal = out.size();
    c.id = make_chunk_id(iv.id, strategy, c.ordinal);
    c.text = body.substr(r.begin, r.end - r.begin);
    c.token_count = tok.count(c.text);
    c.question_id = question;
    for (const auto& seg : segments)
      if (seg.range.begin < r.end && r.begin < seg.range.end) c.source_turn_indices.push_back(seg.turn_index);
    out.push_back(std::move(c));
  }
}

}  // namespace detail

inline std::vector<Chunk> paired_chunks(const Interview& iv, std::size_t max_tokens, const Tokenizer& tok) {
  if (max_tokens < 1) throw DomainError("paired_chunks: max_tokens must be >= 1");
  std::vector<Chunk> out;
  std::size_t i = 0;
  const auto& turns = iv.turns;
  while (i < turns.size()) {
    std::size_t j = i + 1;
    while (j < turns.size() && turns[j].speaker == Speaker::Subject) ++j;
    // Group [i, j): an interviewer turn with its answers, or leading subject turns.
    std::string body;
    std::vector<detail::Segment> segments;
    for (std::size_t k = i; k < j; ++k) {
      if (!body.empty()) body.push_back('\n');
      std::size_t b = body.size();
      body += speaker_label(turns[k].speaker);
      body += ": ";
      body += turns[k].text;
      segments.push_back({turns[k].index, {b, body.size()}});
    }
    detail::emit_chunks(out, iv, Strategy::Paired, std::nullopt, body, segments, max_tokens, tok);
    i = j;
  }
  return out;
}

// Index of the best-matching question (1-based), or Other when the best
// similarity is below the threshold. Ties go to the lowest ordinal.
inline QuestionId assign_question(std::span<const double> similarities, double threshold) {
  std::size_t best = 0;
  for (std::size_t q = 1; q < similarities.size(); ++q)
    if (similarities[q] > similarities[best]) best = q;
  if (similarities.empty() || !(similarities[best] >= threshold)) return QuestionId::other();
  return QuestionId{best + 1};
}

struct QuestionAssignment {
  std::size_t turn_index;
  QuestionId question;
  double similarity;
};

inline std::vector<QuestionAssignment> assign_subject_turns(const Interview& iv, const QuestionProtocol& protocol,
                                                            const EnsembleEmbedder& embedder, double threshold) {
  if (protocol.questions.empty()) throw DomainError("question protocol is empty");
  std::vector<std::string> texts;
  std::vector<std::size_t> idx;
  for (const auto& t : iv.turns) {
    if (t.speaker != Speaker::Subject) continue;
    texts.push_back(t.text);
    idx.push_back(t.index);
  }
  if (texts.empty()) return {};
  std::vector<EmbeddingVector> qv, tv;
  try {
    qv = embedder.embed_batch(protocol.questions);
    tv = embedder.embed_batch(texts);
  } catch (const Error& e) {
    throw BackendError("embedding subject turns of interview " + iv.id + ": " + e.what());
  }
  std::vector<QuestionAssignment> out;
  std::vector<double> sims(qv.size());
  for (std::size_t i = 0; i < tv.size(); ++i) {
    for (std::size_t q = 0; q < qv.size(); ++q) sims[q] = cosine(tv[i], qv[q]);
    auto qid = assign_question(sims, threshold);
    double best = *std::max_element(sims.begin(), sims.end());
    out.push_back({idx[i], qid, best});
  }
  return out;
}

inline std::vector<Chunk> question_chunks(const Interview& iv, const QuestionProtocol& protocol,
                                          const EnsembleEmbedder& embedder, double sim_threshold,
                                          std::size_t max_tokens, const Tokenizer& tok) {
  if (max_tokens < 1) throw DomainError("question_chunks: max_tokens must be >= 1");
  auto assignments = assign_subject_turns(iv, protocol, embedder, sim_threshold);
  std::map<std::size_t, std::vector<std::size_t>> by_question;  // ordinal -> turns
  for (const auto& a : assignments) by_question[a.question.ordinal].push_back(a.turn_index);

  std::vector<Chunk> out;
  auto emit_group = [&](std::size_t ordinal, const std::vector<std::size_t>& turn_ids) {
    std::string body;
    std::vector<detail::Segment> segments;
    for (auto ti : turn_ids) {
      if (!body.empty()) body.push_back('\n');
      std::size_t b = body.size();
      body += iv.turns[ti].text;
      segments.push_back({ti, {b, body.size()}});
    }
    detail::emit_chunks(out, iv, Strategy::Question, QuestionId{ordinal}, body, segments, max_tokens, tok);
  };
  // Protocol questions in order, then Other.
  for (const auto& [ordinal, turn_ids] : by_question)
    if (ordinal != 0) emit_group(ordinal, turn_ids);
  if (auto it = by_question.find(0); it != by_question.end()) emit_group(0, it->second);
  return out;
}

inline std::vector<Chunk> full_text(const Interview& iv, const Tokenizer& tok = Tokenizer::whitespace()) {
  if (iv.turns.empty()) return {};
  Chunk c;
  c.interview_id = iv.id;
  c.strategy = Strategy::FullText;
  c.ordinal = 0;
  c.id = make_chunk_id(iv.id, Strategy::FullText, 0);
  for (const auto& t : iv.turns) {
    if (!c.text.empty()) c.text.push_back('\n');
    c.text += speaker_label(t.speaker);
    c.text += ": ";
    c.text += t.text;
    c.source_turn_indices.push_back(t.index);
  }
  c.token_count = tok.count(c.text);
  return {std::move(c)};
}

struct ChunkSettings {
  Strategy strategy = Strategy::Paired;
  std::size_t max_tokens = 256;
  double sim_threshold = 0.20;
};

// Chunks a whole corpus; output is ordered by (interview order, ordinal).
inline std::vector<Chunk> chunk_corpus(std::span<const Interview> corpus, const ChunkSettings& settings,
                                       const Tokenizer& tok, const QuestionProtocol* protocol,
                                       const EnsembleEmbedder* embedder, std::size_t jobs = 1) {
  if (settings.strategy == Strategy::Question && (!protocol || !embedder))
    throw DomainError("question chunking needs a protocol and an embedder");
  std::vector<std::vector<Chunk>> per(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) {
    switch (settings.strategy) {
      case Strategy::Paired: per[i] = paired_chunks(corpus[i], settings.max_tokens, tok); break;
      case Strategy::Question:
        per[i] = question_chunks(corpus[i], *protocol, *embedder, settings.sim_threshold, settings.max_tokens, tok);
        break;
      case Strategy::FullText: per[i] = full_text(corpus[i], tok); break;
    }
  });
  std::vector<Chunk> out;
  for (auto& v : per)
    for (auto& c : v) out.push_back(std::move(c));
  return out;
}

}  // namespace qualcode
