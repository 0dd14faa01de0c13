#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "qualcode/chunking.hpp"
#include "qualcode/error.hpp"
#include "qualcode/text.hpp"
#include "qualcode/transcripts.hpp"

namespace qualcode {

enum class SdKind { Sample, Population };

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

// Sample SD uses n-1; with fewer than two values the SD is 0.
inline MeanSd mean_sd(std::span<const double> xs, SdKind kind = SdKind::Sample) {
  if (xs.empty()) return {};
  double sum = 0.0;
  for (double x : xs) sum += x;
  double mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  double denom = kind == SdKind::Sample ? static_cast<double>(xs.size()) - 1.0 : static_cast<double>(xs.size());
  double sd = denom > 0.0 ? std::sqrt(ss / denom) : 0.0;
  return {mean, sd};
}

struct CorpusStats {
  MeanSd words_per_interview;
  MeanSd words_per_response;
  MeanSd response_turns_per_interview;
  // Paired and FullText chunk counts are per interview; Question chunk
  // counts are per protocol question (Other excluded).
  std::map<Strategy, MeanSd> chunks;
  std::size_t question_count = 0;
  std::size_t interview_count = 0;
  SdKind sd_kind = SdKind::Sample;
};

inline CorpusStats corpus_stats(std::span<const Interview> corpus,
                                const std::map<Strategy, std::vector<Chunk>>& chunk_sets,
                                std::size_t question_count, SdKind kind = SdKind::Sample) {
  if (corpus.empty()) throw DomainError("corpus_stats: corpus is empty");
  CorpusStats st;
  st.sd_kind = kind;
  st.question_count = question_count;
  st.interview_count = corpus.size();

  std::vector<double> words, responses, resp_words;
  for (const auto& iv : corpus) {
    double w = 0.0, r = 0.0;
    for (const auto& t : iv.turns) {
      auto n = static_cast<double>(text::count_words(t.text));
      w += n;
      if (t.speaker == Speaker::Subject) {
        r += 1.0;
        resp_words.push_back(n);
      }
    }
    words.push_back(w);
    responses.push_back(r);
  }
  st.words_per_interview = mean_sd(words, kind);
  st.words_per_response = mean_sd(resp_words, kind);
  st.response_turns_per_interview = mean_sd(responses, kind);

  for (const auto& [strategy, chunks] : chunk_sets) {
    std::vector<double> counts;
    if (strategy == Strategy::Question) {
      counts.assign(question_count, 0.0);
      for (const auto& c : chunks)
        if (c.question_id && !c.question_id->is_other() && c.question_id->ordinal <= question_count)
          counts[c.question_id->ordinal - 1] += 1.0;
    } else {
      std::map<std::string, double> per;
      for (const auto& iv : corpus) per[iv.id] = 0.0;
      for (const auto& c : chunks) per[c.interview_id] += 1.0;
      for (const auto& [_, n] : per) counts.push_back(n);
    }
    st.chunks[strategy] = mean_sd(counts, kind);
  }
  return st;
}

// Rounds half away from zero to `decimals` places.
inline double round_half_away(double x, int decimals) {
  double scale = std::pow(10.0, decimals);
  double scaled = x * scale;
  // Absorb representation error so 0.125 style halves round as written.
  double r = std::round(scaled + std::copysign(1e-9, scaled));
  return r / scale;
}

inline std::string render_corpus_stats(const CorpusStats& st) {
  auto row = [](std::string_view label, MeanSd m) {
    return fmt::format("{}: {:.0f} (SD={:.0f})\n", label, round_half_away(m.mean, 0), round_half_away(m.sd, 0));
  };
  std::string out;
  out += row("# of words per interview", st.words_per_interview);
  out += row("# of words per response", st.words_per_response);
  out += row("# of response turns per interview", st.response_turns_per_interview);
  if (auto it = st.chunks.find(Strategy::Paired); it != st.chunks.end())
    out += row("# of paired chunks per interview", it->second);
  if (auto it = st.chunks.find(Strategy::Question); it != st.chunks.end())
    out += row("# of question chunks per question", it->second);
  if (auto it = st.chunks.find(Strategy::FullText); it != st.chunks.end())
    out += row("# of full text chunks per interview", it->second);
  out += fmt::format("Total # of questions in the protocol: {}\n", st.question_count);
  out += fmt::format("Total # of interviews: {}\n", st.interview_count);
  return out;
}

}  // namespace qualcode
