#pragma once

// Initial code generation: render prompts, call a chat backend, parse the
// numbered list it returns, and flag refusals.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qualcode/chunking.hpp"
#include "qualcode/error.hpp"
#include "qualcode/parallel.hpp"
#include "qualcode/prompts.hpp"
#include "qualcode/text.hpp"

namespace qualcode {

struct PromptSpec {
  TemplateId template_id = TemplateId::BaseT;
  std::string identity;
  std::string context;
  Strategy strategy = Strategy::Paired;

  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

struct Message {
  std::string role;  // "system" | "user"
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

// True when rendering `chunk` under `spec` needs a {QUESTION} value.
inline bool requires_question(const PromptSpec& spec, const Chunk& chunk) {
  if (spec.strategy != Strategy::Question) return false;
  if (!chunk.question_id || chunk.question_id->is_other()) return false;
  return prompt_template(spec.template_id, Strategy::Question).user.find("{QUESTION}") != std::string_view::npos;
}

inline std::vector<Message> render_prompt(const PromptSpec& spec, const Chunk& chunk,
                                          const std::optional<std::string>& question = std::nullopt) {
  if (chunk.strategy != spec.strategy)
    throw RenderError("chunk " + chunk.id + " has strategy " + std::string(strategy_name(chunk.strategy)) +
                      ", prompt expects " + std::string(strategy_name(spec.strategy)));
  bool other_bucket = spec.strategy == Strategy::Question && (!chunk.question_id || chunk.question_id->is_other());
  Strategy layout = other_bucket ? Strategy::Paired : spec.strategy;
  bool needs_q = requires_question(spec, chunk);
  if (needs_q && !question) throw RenderError("missing value for {QUESTION} in chunk " + chunk.id);
  if (!needs_q && question) throw RenderError("a question was supplied for a template that does not use one");

  auto tmpl = prompt_template(spec.template_id, layout);
  auto opt = [](const std::string& s) -> std::optional<std::string_view> {
    if (s.empty()) return std::nullopt;
    return std::string_view(s);
  };
  std::optional<std::string_view> q;
  if (question) q = *question;

  std::vector<Message> msgs;
  if (tmpl.system)
    msgs.push_back({"system", substitute(*tmpl.system, {{"IDENTITY", opt(spec.identity)}, {"CONTEXT", opt(spec.context)}})});
  msgs.push_back({"user", substitute(tmpl.user, {{"QUESTION", q}, {"INTERVIEW", std::string_view(chunk.text)}})});
  return msgs;
}

struct GenerationParams {
  double temperature = 0.6;
  double top_p = 0.9;
  int max_output_tokens = 1024;
  std::string model_name = "llama-3.2-1b-instruct";

  void validate() const {
    if (!(temperature >= 0.0)) throw DomainError("temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw DomainError("top_p must be in (0, 1]");
    if (max_output_tokens < 1) throw DomainError("max_output_tokens must be >= 1");
  }
  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

struct ParsedItem {
  std::string code;
  std::optional<std::string> justification;

  friend bool operator==(const ParsedItem&, const ParsedItem&) = default;
};

namespace detail {

// "12. rest" or "12) rest" -> rest
inline std::optional<std::string_view> list_item_body(std::string_view line) {
  line = text::trim(line);
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i == 0 || i >= line.size() || (line[i] != '.' && line[i] != ')')) return std::nullopt;
  auto rest = line.substr(i + 1);
  if (!rest.empty() && !text::is_space(rest.front())) return std::nullopt;  // "3.5 apples"
  return text::trim(rest);
}

inline std::string_view strip_decoration(std::string_view s) {
  for (;;) {
    auto before = s.size();
    s = text::trim(s);
    while (!s.empty() && s.front() == '*') s.remove_prefix(1);
    while (!s.empty() && s.back() == '*') s.remove_suffix(1);
    if (s.size() == before) return s;
  }
}

inline std::string_view strip_quotes(std::string_view s) {
  static constexpr std::string_view kOpen[] = {"\"", "'", "\xE2\x80\x9C", "\xE2\x80\x98"};
  static constexpr std::string_view kClose[] = {"\"", "'", "\xE2\x80\x9D", "\xE2\x80\x99"};
  s = text::trim(s);
  for (auto o : kOpen)
    if (s.starts_with(o)) {
      s.remove_prefix(o.size());
      break;
    }
  for (auto c : kClose)
    if (s.ends_with(c)) {
      s.remove_suffix(c.size());
      break;
    }
  return text::trim(s);
}

}  // namespace detail

// Numbered-list items become codes. With `expect_quotes` each item is split
// at the first " - " (or, failing that, the first ": ") into code and
// justification, and non-item lines directly under an item are folded into
// its justification. Prose outside the list is ignored. Code texts are always
// substrings of `raw`.
inline std::vector<ParsedItem> parse_numbered_list(std::string_view raw, bool expect_quotes) {
  std::vector<ParsedItem> out;
  bool in_item = false;
  for (auto line : text::split_lines(raw)) {
    if (auto body = detail::list_item_body(line)) {
      in_item = false;
      ParsedItem item;
      std::string_view code = *body;
      std::optional<std::string_view> just;
      if (expect_quotes) {
        auto sep = code.find(" - ");
        std::size_t sep_len = 3;
        if (sep == std::string_view::npos) {
          sep = code.find(": ");
          sep_len = 2;
        }
        if (sep != std::string_view::npos) {
          just = code.substr(sep + sep_len);
          code = code.substr(0, sep);
        }
      }
      code = detail::strip_decoration(code);
      if (code.empty()) continue;
      item.code = std::string(code);
      if (just) {
        auto j = detail::strip_quotes(*just);
        if (!j.empty()) item.justification = std::string(j);
      }
      out.push_back(std::move(item));
      in_item = true;
      continue;
    }
    auto t = text::trim(line);
    if (t.empty()) {
      in_item = false;
      continue;
    }
    if (in_item && expect_quotes) {
      auto j = detail::strip_quotes(detail::strip_decoration(t));
      if (j.empty()) continue;
      auto& cur = out.back().justification;
      if (cur) *cur += " " + std::string(j);
      else cur = std::string(j);
    }
  }
  return out;
}

inline const std::vector<std::string>& default_refusal_markers() {
  static const std::vector<std::string> v = {"cannot", "can't", "unable to", "will not", "not able to",
                                             "I apologize"};
  return v;
}

struct RefusalVerdict {
  bool refusal = false;
  std::optional<std::string> refusal_text;
};

inline RefusalVerdict detect_refusal(std::string_view raw, std::size_t parsed_count,
                                     const std::vector<std::string>& markers = default_refusal_markers()) {
  if (parsed_count > 0) return {};
  for (const auto& m : markers) {
    // Curly apostrophes count as straight ones.
    if (text::icontains(raw, m)) return {true, std::string(raw)};
    if (m.find('\'') != std::string::npos) {
      std::string curly = m;
      auto p = curly.find('\'');
      curly.replace(p, 1, "\xE2\x80\x99");
      if (text::icontains(raw, curly)) return {true, std::string(raw)};
    }
  }
  return {};
}

struct InitialCode {
  std::string text;
  std::optional<std::string> justification;
  std::string chunk_id;
  std::string experiment_id;
  std::size_t item_ordinal = 0;  // 1-based position in the model's list

  friend bool operator==(const InitialCode&, const InitialCode&) = default;
};

enum class ResultStatus { Coded, Refused, Empty, TransportFailed };

inline std::string_view status_name(ResultStatus s) noexcept {
  switch (s) {
    case ResultStatus::Coded: return "coded";
    case ResultStatus::Refused: return "refused";
    case ResultStatus::Empty: return "empty";
    case ResultStatus::TransportFailed: return "transport_failed";
  }
  return "?";
}

inline std::optional<ResultStatus> parse_status(std::string_view s) {
  for (auto st : {ResultStatus::Coded, ResultStatus::Refused, ResultStatus::Empty, ResultStatus::TransportFailed})
    if (status_name(st) == s) return st;
  return std::nullopt;
}

struct LlmTurnResult {
  std::string chunk_id;
  std::string raw_response;
  std::vector<InitialCode> parsed_codes;
  bool refusal = false;
  std::optional<std::string> refusal_text;
  ResultStatus status = ResultStatus::Empty;
  std::size_t attempts = 0;
  std::string error;  // last transport error, if any

  friend bool operator==(const LlmTurnResult&, const LlmTurnResult&) = default;
};

// Builds a result from a raw model response.
inline LlmTurnResult interpret_response(const std::string& chunk_id, const std::string& experiment_id,
                                        std::string raw, bool expect_quotes,
                                        const std::vector<std::string>& markers = default_refusal_markers()) {
  LlmTurnResult r;
  r.chunk_id = chunk_id;
  auto items = parse_numbered_list(raw, expect_quotes);
  auto verdict = detect_refusal(raw, items.size(), markers);
  for (std::size_t i = 0; i < items.size(); ++i)
    r.parsed_codes.push_back({items[i].code, items[i].justification, chunk_id, experiment_id, i + 1});
  r.refusal = verdict.refusal;
  r.refusal_text = verdict.refusal_text;
  r.status = verdict.refusal ? ResultStatus::Refused : items.empty() ? ResultStatus::Empty : ResultStatus::Coded;
  r.raw_response = std::move(raw);
  return r;
}

// Uniqueness key: lowercased, whitespace collapsed, terminal punctuation
// removed.
inline std::string dedupe_key(std::string_view code) {
  auto s = text::collapse_whitespace(text::to_lower(code));
  while (!s.empty() && std::string_view(".,;:!?").find(s.back()) != std::string_view::npos) {
    s.pop_back();
    while (!s.empty() && text::is_space(s.back())) s.pop_back();
  }
  return s;
}

struct DedupeResult {
  std::vector<InitialCode> unique;
  // occurrences[i] lists every input code (first one included) that maps to unique[i].
  std::vector<std::vector<InitialCode>> occurrences;

  std::size_t multiplicity(std::size_t i) const { return occurrences.at(i).size(); }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& o : occurrences) n += o.size();
    return n;
  }
};

inline DedupeResult dedupe(std::span<const InitialCode> codes) {
  DedupeResult out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& c : codes) {
    auto key = dedupe_key(c.text);
    auto [it, inserted] = index.emplace(std::move(key), out.unique.size());
    if (inserted) {
      out.unique.push_back(c);
      out.occurrences.push_back({c});
    } else {
      out.occurrences[it->second].push_back(c);
    }
  }
  return out;
}

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string identity() const = 0;
  // Throws BackendError on transport failure.
  virtual std::string complete(const std::vector<Message>& messages, const GenerationParams& params) = 0;
};

struct MockChatOptions {
  std::uint64_t seed = 0;
  double refusal_rate = 0.0;         // fraction of coding prompts refused
  double naming_refusal_rate = 0.0;  // fraction of naming prompts refused
  std::size_t min_items = 2;
  std::size_t max_items = 5;
};

// Deterministic stand-in for a chat model. Its output depends only on the
// seed and the messages. Coding prompts get a numbered list of content words
// from the excerpt (with quotes when the prompt asks for them); naming
// prompts get the first keyword back.
class MockChatBackend final : public ChatBackend {
 public:
  explicit MockChatBackend(MockChatOptions opts = {}) : opts_(opts) {}

  std::string identity() const override { return "mock-chat:" + std::to_string(opts_.seed); }

  std::string complete(const std::vector<Message>& messages, const GenerationParams&) override {
    std::string key;
    for (const auto& m : messages) key += m.role + '\x1f' + m.content + '\x1e';
    std::uint64_t h = text::fnv1a64(key, opts_.seed);
    std::mt19937_64 rng(h);
    auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    if (!messages.empty() && messages.front().role == "system" && messages.front().content == prompts::kNamingSystem)
      return name_topic(messages.back().content, unit());

    if (unit() < opts_.refusal_rate) return std::string(kRefusals[rng() % std::size(kRefusals)]);

    const std::string& user = messages.back().content;
    auto nl = user.find('\n');
    std::string_view excerpt = nl == std::string::npos ? std::string_view{} : std::string_view(user).substr(nl + 1);
    bool quotes = user.find("Provide quotes") != std::string::npos;

    std::vector<std::string> words;
    for (auto& w : text::word_tokens(excerpt)) {
      if (w.size() < 4 || is_filler(w)) continue;
      if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(std::move(w));
    }
    if (words.empty()) return "";

    std::size_t span = opts_.max_items >= opts_.min_items ? opts_.max_items - opts_.min_items + 1 : 1;
    std::size_t n = std::min(words.size(), opts_.min_items + static_cast<std::size_t>(rng() % span));
    std::string out = "Here are the themes I observed:\n";
    for (std::size_t i = 0; i < n; ++i) {
      const auto& w = words[rng() % words.size()];
      std::string code = w;
      code[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(code[0])));
      out += std::to_string(i + 1) + ". " + code;
      if (quotes) out += " - \"" + quote_for(excerpt, w) + "\"";
      out += '\n';
    }
    return out;
  }

 private:
  static constexpr std::string_view kRefusals[] = {
      "I cannot discuss content that promotes or glorifies violence.",
      "I can't help with that request because the excerpt describes graphic firearm injuries.",
      "I apologize, but I cannot analyze text containing explicit language or racial slurs.",
      "I'm not able to summarize discussions of sexual activity or drug use.",
  };

  static bool is_filler(std::string_view w) {
    static constexpr std::string_view kFiller[] = {"interviewer", "subject", "that", "this", "with", "have", "they",
                                                   "there", "what", "when", "then", "were", "just", "like", "about",
                                                   "from", "your", "would", "could", "because", "know", "really"};
    return std::find(std::begin(kFiller), std::end(kFiller), w) != std::end(kFiller);
  }

  static std::string quote_for(std::string_view excerpt, std::string_view word) {
    auto toks = text::split_whitespace(excerpt);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (text::to_lower(toks[i]).find(word) == std::string::npos) continue;
      std::size_t b = i >= 2 ? i - 2 : 0;
      std::size_t e = std::min(toks.size(), i + 3);
      std::vector<std::string_view> win(toks.begin() + static_cast<std::ptrdiff_t>(b),
                                        toks.begin() + static_cast<std::ptrdiff_t>(e));
      std::string q = text::join(win, " ");
      q.erase(std::remove(q.begin(), q.end(), '"'), q.end());
      return q;
    }
    return std::string(word);
  }

  std::string name_topic(const std::string& user, double u) const {
    if (u < opts_.naming_refusal_rate) return "I cannot provide a topic name for this content.";
    auto pos = user.find("\nKeywords: ");
    if (pos == std::string::npos) return "";
    auto rest = std::string_view(user).substr(pos + 11);
    auto end = rest.find_first_of(",\n");
    return std::string(text::trim(rest.substr(0, end)));
  }

  MockChatOptions opts_;
};

struct GenerationOptions {
  std::string experiment_id;
  std::size_t jobs = 1;
  std::size_t max_retries = 3;
  std::chrono::milliseconds retry_delay{0};
  std::vector<std::string> refusal_markers = default_refusal_markers();
  const QuestionProtocol* protocol = nullptr;
  // Results already obtained in an earlier (interrupted) run, by chunk id.
  const std::unordered_map<std::string, LlmTurnResult>* completed = nullptr;
  // Invoked once per freshly computed result; calls are serialized.
  std::function<void(const LlmTurnResult&)> on_result;
};

// One result per chunk, ordered by (interview_id, ordinal). Transport
// failures are retried and, once exhausted, recorded as TransportFailed.
// Any other exception aborts the run.
inline std::vector<LlmTurnResult> run_generation(std::span<const Chunk> chunks, const PromptSpec& spec,
                                                 const GenerationParams& params, ChatBackend& backend,
                                                 const GenerationOptions& opts = {}) {
  params.validate();
  std::vector<std::size_t> order(chunks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(chunks[a].interview_id, chunks[a].ordinal) < std::tie(chunks[b].interview_id, chunks[b].ordinal);
  });

  std::vector<LlmTurnResult> results(chunks.size());
  std::mutex callback_mu;
  bool quotes = expects_quotes(spec.template_id);

  parallel_for(order.size(), opts.jobs, [&](std::size_t slot) {
    const Chunk& chunk = chunks[order[slot]];
    if (opts.completed) {
      if (auto it = opts.completed->find(chunk.id); it != opts.completed->end()) {
        results[slot] = it->second;
        return;
      }
    }
    std::optional<std::string> question;
    if (requires_question(spec, chunk)) {
      if (!opts.protocol) throw RenderError("question chunks need the question protocol");
      question = opts.protocol->text(*chunk.question_id);
    }
    auto messages = render_prompt(spec, chunk, question);

    LlmTurnResult r;
    std::string last_error;
    std::size_t attempts = 0;
    bool ok = false;
    std::string raw;
    while (attempts <= opts.max_retries) {
      ++attempts;
      try {
        raw = backend.complete(messages, params);
        ok = true;
        break;
      } catch (const BackendError& e) {
        last_error = e.what();
        if (attempts <= opts.max_retries && opts.retry_delay.count() > 0) std::this_thread::sleep_for(opts.retry_delay);
      }
    }
    if (ok) {
      r = interpret_response(chunk.id, opts.experiment_id, std::move(raw), quotes, opts.refusal_markers);
    } else {
      r.chunk_id = chunk.id;
      r.status = ResultStatus::TransportFailed;
      r.error = last_error;
    }
    r.attempts = attempts;
    results[slot] = r;
    if (opts.on_result) {
      std::lock_guard lock(callback_mu);
      opts.on_result(results[slot]);
    }
  });
  return results;
}

}  // namespace qualcode
