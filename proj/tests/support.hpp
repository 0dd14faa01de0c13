#pragma once

// Fixture generators shared by the test binaries.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "qualcode/transcripts.hpp"

namespace qualcode::testing {

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> v = {
      "violence", "family",  "police",   "hospital", "friends", "neighborhood", "school",  "work",
      "church",   "mother",  "brother",  "money",    "street",  "respect",      "fear",    "anger",
      "trauma",   "shot",    "injury",   "doctor",   "job",     "music",        "basketball", "jail",
      "court",    "lawyer",  "girlfriend", "kids",   "future",  "dreams",       "safety",  "gun",
      "retaliation", "beef", "hood",     "block",    "older",   "youth",        "mentor",  "coach"};
  return v;
}

inline std::string random_sentence(std::mt19937_64& rng, std::size_t min_words, std::size_t max_words) {
  std::uniform_int_distribution<std::size_t> len(min_words, max_words);
  std::uniform_int_distribution<std::size_t> pick(0, vocabulary().size() - 1);
  std::size_t n = len(rng);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += vocabulary()[pick(rng)];
  }
  static const char* kEnds[] = {".", "?", "!", ""};
  s += kEnds[rng() % 4];
  return s;
}

inline std::string random_utterance(std::mt19937_64& rng, std::size_t max_sentences, std::size_t max_words) {
  std::uniform_int_distribution<std::size_t> ns(1, max_sentences);
  std::size_t n = ns(rng);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += random_sentence(rng, 1, max_words);
  }
  return s;
}

// Interview with `turns` turns; speakers are random unless `alternate`.
inline Interview random_interview(std::mt19937_64& rng, const std::string& id, std::size_t turns, bool alternate,
                                  std::size_t max_sentences = 6, std::size_t max_words = 40) {
  Interview iv{id, {}};
  for (std::size_t t = 0; t < turns; ++t) {
    Speaker sp = alternate ? (t % 2 == 0 ? Speaker::Interviewer : Speaker::Subject)
                           : (rng() % 3 == 0 ? Speaker::Interviewer : Speaker::Subject);
    iv.turns.push_back(Turn{id, t, sp, random_utterance(rng, max_sentences, max_words)});
  }
  return iv;
}

}  // namespace qualcode::testing

#include <map>
#include <set>
#include <span>

#include "qualcode/embeddings.hpp"

namespace qualcode::testing {

// Returns fixed vectors for known texts; unknown texts raise BackendError.
class TableProvider final : public EmbeddingProvider {
 public:
  TableProvider(std::string name, std::size_t dim, std::map<std::string, std::vector<double>> table)
      : name_(std::move(name)), dim_(dim), table_(std::move(table)) {}
  std::string identity() const override { return "table:" + name_; }
  std::size_t dimension() const override { return dim_; }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override {
    std::vector<std::vector<double>> out;
    for (const auto& t : texts) {
      auto it = table_.find(t);
      if (it == table_.end()) throw BackendError("no vector for '" + t + "'");
      out.push_back(it->second);
    }
    ++calls;
    return out;
  }
  std::size_t calls = 0;

 private:
  std::string name_;
  std::size_t dim_;
  std::map<std::string, std::vector<double>> table_;
};

inline std::multiset<std::string> token_multiset(std::string_view s) {
  std::multiset<std::string> m;
  for (auto w : text::split_whitespace(s)) m.emplace(w);
  return m;
}

}  // namespace qualcode::testing
