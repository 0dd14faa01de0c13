// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>

#include "pipeline_fixture.hpp"

using namespace qualcode;
using namespace qualcode::testing;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Records the first failed expectation.
struct Expect {
  Outcome& o;
  void operator()(bool ok, const std::string& what) {
    if (!ok && o.pass) {
      o.pass = false;
      o.detail = what;
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

EmbeddingVector vec(std::vector<double> v) { return EmbeddingVector{v, {v.size()}}; }

long double oracle_cos(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return dot / std::sqrt(na * nb);
}

std::vector<EmbeddingVector> random_vectors(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> nd;
  std::vector<EmbeddingVector> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(d);
    for (auto& x : v) x = nd(rng);
    out.push_back(vec(v));
  }
  return out;
}

// --- 1 ---------------------------------------------------------------------

Outcome metric_oracle() {
  Outcome o;
  Expect expect{o};
  auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  for (int f = 0; f < 200; ++f) {
    std::size_t n = 1 + rng() % 50, m = 1 + rng() % 50, d = 2 + rng() % 6;
    auto hc = random_vectors(rng, n, d);
    auto mc = random_vectors(rng, m, d);
    std::size_t captured = 0, relevant = 0;
    for (const auto& h : hc) {
      bool hit = false;
      for (const auto& x : mc) hit = hit || oracle_cos(h.values, x.values) > 0.6L;
      captured += hit;
    }
    for (const auto& x : mc) {
      bool hit = false;
      for (const auto& h : hc) hit = hit || oracle_cos(x.values, h.values) > 0.6L;
      relevant += hit;
    }
    double want_c = 100.0 * static_cast<double>(captured) / static_cast<double>(n);
    double want_r = 100.0 * static_cast<double>(relevant) / static_cast<double>(m);
    expect(percent_captured_vectors(hc, mc, 0.6) == want_c, fmt::format("fixture {}: captured differs", f));
    expect(percent_relevant_vectors(mc, hc, 0.6) == want_r, fmt::format("fixture {}: relevant differs", f));
  }
  double s = seconds_since(t0);
  expect(s < 10.0, fmt::format("took {:.2f}s", s));
  if (o.pass) o.detail = fmt::format("200 fixtures exact, {:.3f}s", s);
  return o;
}

// --- 2 ---------------------------------------------------------------------

Outcome threshold_semantics() {
  Outcome o;
  Expect expect{o};
  // (1,0) vs (3,4) has cosine exactly 3/5.
  std::vector<EmbeddingVector> hc{vec({1, 0})}, at{vec({3, 4})};
  expect(cosine(hc[0], at[0]) == 0.6, "constructed pair is not exactly 0.6");
  expect(percent_captured_vectors(hc, at, 0.6) == 0.0, "cosine 0.6 counted as a match");
  expect(percent_relevant_vectors(at, hc, 0.6) == 0.0, "cosine 0.6 counted as relevant");
  // Rotate (1,0) to angle acos(0.6 + 1e-9).
  double c = 0.6 + 1e-9, s = std::sqrt(1.0 - c * c);
  std::vector<EmbeddingVector> above{vec({c, s})};
  expect(cosine(hc[0], above[0]) > 0.6, "perturbed pair not above 0.6");
  expect(percent_captured_vectors(hc, above, 0.6) == 100.0, "cosine 0.6+1e-9 not a match");
  expect(!is_match(0.6, 0.6) && is_match(0.6 + 1e-9, 0.6), "is_match boundary");
  if (o.pass) o.detail = "0.6 rejected, 0.6+1e-9 accepted";
  return o;
}

// --- 3 ---------------------------------------------------------------------

double silhouette_direct(const Matrix& x, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  auto dist = [&](std::size_t i, std::size_t j) { return (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm(); };
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] >= 0) members[labels[i]].push_back(i);
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) continue;
    ++counted;
    const auto& own = members[labels[i]];
    if (own.size() == 1) continue;
    double a = 0;
    for (auto j : own)
      if (j != i) a += dist(i, j);
    a /= static_cast<double>(own.size() - 1);
    double b = INFINITY;
    for (const auto& [l, ms] : members) {
      if (l == labels[i]) continue;
      double sum = 0;
      for (auto j : ms) sum += dist(i, j);
      b = std::min(b, sum / static_cast<double>(ms.size()));
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(counted);
}

Outcome silhouette_check() {
  Outcome o;
  Expect expect{o};
  std::mt19937_64 rng(303);
  std::normal_distribution<double> nd;
  double worst = 0;
  for (int it = 0; it < 100; ++it) {
    std::size_t n = 4 + rng() % 57, d = 1 + rng() % 6;
    int k = 2 + static_cast<int>(rng() % 5);
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = nd(rng);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i < static_cast<std::size_t>(k) ? static_cast<int>(i) : static_cast<int>(rng() % static_cast<std::uint64_t>(k));
    double diff = std::abs(silhouette(x, labels) - silhouette_direct(x, labels));
    worst = std::max(worst, diff);
    expect(diff <= 1e-9, fmt::format("instance {} differs by {:g}", it, diff));
  }
  double lowest = 1;
  for (double ratio : {1e-4, 1e-5, 1e-7}) {
    const double D = 10.0, eps = ratio * D;
    Matrix x(4, 1);
    x << 0.0, eps, D, D + eps;
    double s = silhouette(x, std::vector<int>{0, 0, 1, 1});
    lowest = std::min(lowest, s);
    expect(s >= 0.999, fmt::format("eps/D={:g} gives {:.6f}", ratio, s));
  }
  if (o.pass) o.detail = fmt::format("max diff {:.1e} on 100 instances; eps/D construction min {:.6f}", worst, lowest);
  return o;
}

// --- 4 ---------------------------------------------------------------------

Outcome ctfidf_hand_case() {
  Outcome o;
  Expect expect{o};
  std::vector<std::vector<std::string>> clusters{{"gun gun violence"}, {"family support"}};
  auto w = ctfidf_weights(clusters);
  auto weight = [&](std::size_t c, const std::string& t) {
    for (const auto& x : w[c])
      if (x.term == t) return x.weight;
    return std::nan("");
  };
  const double gun = 2.0 * std::log(1.0 + 2.5 / 2.0), single = std::log(1.0 + 2.5 / 1.0);
  expect(std::abs(weight(0, "gun") - gun) <= 1e-12, "gun weight");
  expect(std::abs(weight(0, "violence") - single) <= 1e-12, "violence weight");
  expect(std::abs(weight(1, "family") - single) <= 1e-12, "family weight");
  expect(std::abs(weight(1, "support") - single) <= 1e-12, "support weight");
  if (o.pass) o.detail = fmt::format("gun={:.15f} violence={:.15f}", weight(0, "gun"), weight(0, "violence"));
  return o;
}

// --- 5 ---------------------------------------------------------------------

Outcome chunk_invariants() {
  Outcome o;
  Expect expect{o};
  auto t0 = Clock::now();
  auto ws = Tokenizer::whitespace();
  EnsembleEmbedder emb({std::make_shared<MockEmbeddingProvider>(5, 64)});
  QuestionProtocol proto{{"Tell me about your family.", "What happened at the hospital?",
                          "How is your neighborhood?", "What about school and work?"}};
  std::mt19937_64 rng(5005);
  std::size_t chunks = 0;
  for (int i = 0; i < 1000 && o.pass; ++i) {
    auto iv = random_interview(rng, fmt::format("r{:04}", i), rng() % 30, rng() % 2 == 0, 14, 60);
    std::multiset<std::string> subject, labeled;
    for (const auto& t : iv.turns) {
      labeled.insert(std::string(speaker_label(t.speaker)) + ":");
      for (auto w : text::split_whitespace(t.text)) {
        labeled.emplace(w);
        if (t.speaker == Speaker::Subject) subject.emplace(w);
      }
    }
    auto paired = paired_chunks(iv, 256, ws);
    auto question = question_chunks(iv, proto, emb, 0.20, 256, ws);
    std::multiset<std::string> got_paired, got_question;
    for (const auto& c : paired) {
      expect(ws.count(c.text) <= 256, fmt::format("{}: paired chunk of {} tokens", c.id, ws.count(c.text)));
      for (auto w : text::split_whitespace(c.text)) got_paired.emplace(w);
    }
    for (const auto& c : question) {
      expect(ws.count(c.text) <= 256, fmt::format("{}: question chunk of {} tokens", c.id, ws.count(c.text)));
      for (auto w : text::split_whitespace(c.text)) got_question.emplace(w);
    }
    expect(got_paired == labeled, iv.id + ": paired chunks lose or add tokens");
    expect(got_question == subject, iv.id + ": question chunks lose or add subject tokens");
    chunks += paired.size() + question.size();
  }
  expect(assign_question(std::vector<double>{0.20}, 0.20).ordinal == 1, "similarity 0.20 not assigned");
  expect(assign_question(std::vector<double>{std::nextafter(0.20, 0.0)}, 0.20).is_other(), "below 0.20 assigned");
  // Embedded boundary: (1,4,2,2) against (1,0,0,0) has cosine exactly 1/5.
  std::map<std::string, std::vector<double>> table{{"Q", {1, 0, 0, 0}}, {"edge", {1, 4, 2, 2}}};
  EnsembleEmbedder exact({std::make_shared<TableProvider>("t", 4, table)}, nullptr, EmbedOptions{.normalize = false});
  Interview edge{"e", {{"e", 0, Speaker::Subject, "edge"}}};
  auto asg = assign_subject_turns(edge, QuestionProtocol{{"Q"}}, exact, 0.20);
  expect(asg.size() == 1 && asg[0].similarity == 0.2 && asg[0].question.ordinal == 1, "embedded 0.20 boundary");
  if (o.pass) o.detail = fmt::format("1000 interviews, {} chunks, {:.2f}s", chunks, seconds_since(t0));
  return o;
}

// --- 6 ---------------------------------------------------------------------

Outcome refusal_taxonomy() {
  Outcome o;
  Expect expect{o};
  auto tax = default_taxonomy();
  using V = std::vector<std::string>;
  auto as_set = [](const V& v) { return std::set<std::string>(v.begin(), v.end()); };
  expect(as_set(classify_refusal("firearm violence", tax)) == std::set<std::string>{"guns", "violence"}, "firearm violence");
  expect(classify_refusal("I cannot discuss content that promotes or glorifies violence.", tax) == V{"violence"},
         "promotes or glorifies violence");
  expect(classify_refusal("Sorry, I can not continue with this.", tax) == V{"misc"}, "unmatched text");

  const V texts = {"I cannot discuss content that promotes or glorifies violence.",
                   "I can't help with that request because the excerpt describes graphic firearm injuries.",
                   "I apologize, but I cannot analyze text containing explicit language or racial slurs.",
                   "I'm not able to summarize discussions of sexual activity or drug use.",
                   "Sorry, I can not continue with this."};
  std::mt19937_64 rng(66);
  std::vector<RefusalRecord> records;
  std::map<std::string, std::size_t> tally;
  for (int i = 0; i < 300; ++i) {
    const auto& t = texts[rng() % texts.size()];
    auto cats = classify_refusal(t, tax);
    for (const auto& c : cats) ++tally[c];
    records.push_back({"e", fmt::format("c{}", i), t, cats});
  }
  for (const auto& [cat, n] : refusal_distribution(records, tax))
    expect(n == (tally.count(cat) ? tally[cat] : 0), "histogram differs for " + cat);
  if (o.pass) o.detail = fmt::format("3 cases, histogram of {} refusals equals tally", records.size());
  return o;
}

// --- 7 ---------------------------------------------------------------------

Outcome wilcoxon_exactness() {
  Outcome o;
  Expect expect{o};
  std::vector<double> a5{2, 3, 4, 5, 6}, z5(5, 0.0), a6{1, 2, 3, 4, 5, 6}, z6(6, 0.0);
  double p5 = wilcoxon_signed_rank(a5, z5).p_value, p6 = wilcoxon_signed_rank(a6, z6).p_value;
  expect(std::abs(p5 - 0.0625) < 1e-12, fmt::format("n=5 p={}", p5));
  expect(std::abs(p6 - 0.03125) < 1e-12, fmt::format("n=6 p={}", p6));
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd(0.3, 1.0);
  double worst = 0;
  for (int f = 0; f < 20; ++f) {
    std::vector<double> a(20), b(20, 0.0);
    for (auto& x : a) x = nd(rng);
    double e = wilcoxon_signed_rank(a, b, WilcoxonMethod::Exact).p_value;
    double n = wilcoxon_signed_rank(a, b, WilcoxonMethod::Normal).p_value;
    worst = std::max(worst, std::abs(e - n));
  }
  expect(worst <= 0.02, fmt::format("exact vs normal differ by {:.4f}", worst));
  if (o.pass) o.detail = fmt::format("p5={} p6={} max |exact-normal|={:.4f}", p5, p6, worst);
  return o;
}

// --- 8 ---------------------------------------------------------------------

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / fmt::format("qualcode-accept-{}-{}", ::getpid(), tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string run_bundle(const Corpus& corpus, const Config& cfg, std::size_t jobs, const std::string& tag) {
  TempDir t(tag);
  FixedClock clock;
  RunOptions o;
  o.out_dir = t.path;
  o.jobs = jobs;
  o.clock = &clock;
  auto specs = enumerate_grid(cfg);
  auto out = run_grid(specs, corpus, make_backends(cfg), o);
  if (!out.failures.empty()) throw Error("experiment failed: " + out.failures.front().second);
  HumanColumn hc{35.0, corpus.codebook->initial_codes.size(), corpus.codebook->formal_codes.size()};
  auto bundle = build_reports(load_records(t.path), hc);
  write_reports(bundle, t.path / "report");
  std::string bytes;
  for (const char* f : {"comparison.md", "comparison.csv", "scatter.csv", "refusals.csv", "linkage.json", "statistics.json"}) {
    std::ifstream in(t.path / "report" / f, std::ios::binary);
    bytes += std::string(std::istreambuf_iterator<char>(in), {}) + '\x1e';
  }
  return bytes;
}

Outcome determinism() {
  Outcome o;
  Expect expect{o};
  auto t0 = Clock::now();
  auto corpus = synthetic_corpus(808, 12, 16);
  auto cfg = grid_config();
  expect(enumerate_grid(cfg).size() == 16, "grid is not 2x2x2x2");
  auto a = run_bundle(corpus, cfg, 1, "a");
  auto b = run_bundle(corpus, cfg, 1, "b");
  auto c = run_bundle(corpus, cfg, 8, "c");
  expect(a == b, "two runs with --jobs 1 differ");
  expect(a == c, "--jobs 1 and --jobs 8 differ");
  double s = seconds_since(t0);
  expect(s < 120.0, fmt::format("took {:.1f}s", s));
  if (o.pass) o.detail = fmt::format("16 experiments x 3 runs, {} bytes identical, {:.2f}s", a.size(), s);
  return o;
}

// --- 9 ---------------------------------------------------------------------

// A run log holding only the statistics the comparison table reads.
fs::path store_record(const fs::path& dir, const std::string& id, double hours, std::size_t initial, std::size_t formal,
                      double silhouette, Scores init, Scores form) {
  auto path = run_log_path(dir, id);
  RunLog log(path, false);
  log.append({{"event", "experiment_start"}, {"experiment_id", id}, {"spec", nlohmann::json::object()}});
  std::vector<InitialCode> codes;
  std::vector<std::vector<std::string>> occ;
  for (std::size_t i = 0; i < initial; ++i) {
    codes.push_back({fmt::format("code {}", i), std::nullopt, "c", id, 1});
    occ.push_back({"c"});
  }
  log.append({{"event", "codes"}, {"experiment_id", id}, {"initial_count", initial}, {"unique", codes}, {"occurrences", occ}});
  TopicOutcome t;
  TopicModel m;
  m.silhouette = silhouette;
  m.centroids = Matrix::Zero(static_cast<Eigen::Index>(formal), 2);
  t.model = m;
  for (std::size_t c = 0; c < formal; ++c) t.formal_codes.push_back({c, fmt::format("topic {}", c), {}, {}, 1});
  log.append({{"event", "topics"}, {"experiment_id", id}, {"topics", t}});
  EvaluationOutcome ev;
  ev.initial = init;
  ev.formal = form;
  log.append({{"event", "evaluation"}, {"experiment_id", id}, {"evaluation", ev}});
  log.append({{"event", "experiment_complete"}, {"experiment_id", id}, {"duration_seconds", hours * 3600.0}});
  return path;
}

double pct(std::size_t k, std::size_t n) { return 100.0 * static_cast<double>(k) / static_cast<double>(n); }

Outcome report_reproduction() {
  Outcome o;
  Expect expect{o};
  TempDir t("table");
  // Best L1B: 11/11 formal HC captured by initial codes, 4/11 by formal codes;
  // 270 of 2997 initial and 16 of 57 formal codes relevant.
  auto path = store_record(t.path, "best-l1b", 1.45, 2997, 57, 0.694, Scores{pct(11, 11), pct(270, 2997)},
                           Scores{pct(4, 11), pct(16, 57)});
  auto record = load_record(path);
  auto line = column_line(comparison_column(record));
  const std::string want = "1.45 | 2997 | 57 | .694 | 100% | 36% | 9.0% | 28%";
  expect(line == want, "rendered '" + line + "'");
  auto hc = column_line(human_column(HumanColumn{35.0, 41, 11}));
  expect(hc == "35 | 41 | 11 | N/A | N/A | N/A | N/A | N/A", "HC column '" + hc + "'");
  auto md = build_reports({record}, HumanColumn{35.0, 41, 11}).comparison_md;
  expect(md.find("| # of Initial Codes | 41 | 2997 |") != std::string::npos, "markdown table row");
  if (o.pass) o.detail = "'" + line + "'";
  return o;
}

// --- 10 --------------------------------------------------------------------

Outcome paper_arithmetic() {
  Outcome o;
  Expect expect{o};
  struct Case {
    std::size_t k, n;
    const char* want;
  };
  std::string shown;
  for (auto c : {Case{4, 11, "36%"}, Case{3, 11, "27%"}, Case{7, 11, "64%"}, Case{5, 11, "45%"}, Case{16, 57, "28%"}}) {
    auto got = format_percent(pct(c.k, c.n), 0);
    expect(got == c.want, fmt::format("{}/{} -> {}", c.k, c.n, got));
    shown += fmt::format("{}{}/{}={}", shown.empty() ? "" : " ", c.k, c.n, got);
  }
  if (o.pass) o.detail = shown;
  return o;
}

// --- 11 --------------------------------------------------------------------

Outcome crash_resume() {
  Outcome o;
  Expect expect{o};
  auto corpus = synthetic_corpus(1111, 12, 16);
  auto cfg = grid_config();
  auto spec = enumerate_grid(cfg).front();
  FixedClock clock;
  RunOptions opts;
  opts.clock = &clock;

  TempDir clean("clean");
  opts.out_dir = clean.path;
  auto full_backends = make_backends(cfg);
  auto full = std::make_shared<CountingChat>(full_backends.chat);
  full_backends.chat = full;
  auto reference = run_experiment(spec, corpus, full_backends, opts);

  TempDir crashed("crashed");
  opts.out_dir = crashed.path;
  auto kill_backends = make_backends(cfg);
  const long kill_at = full->calls() / 2;
  kill_backends.chat = std::make_shared<CountingChat>(kill_backends.chat, kill_at);
  bool died = false;
  try {
    run_experiment(spec, corpus, kill_backends, opts);
  } catch (const std::exception&) {
    died = true;
  }
  expect(died, "killed run did not stop");
  // A write cut short by the kill.
  std::ofstream(run_log_path(crashed.path, spec.id), std::ios::app) << R"({"event":"chunk_result","res)";

  opts.resume = true;
  auto resume_backends = make_backends(cfg);
  auto resumed_calls = std::make_shared<CountingChat>(resume_backends.chat);
  resume_backends.chat = resumed_calls;
  auto resumed = run_experiment(spec, corpus, resume_backends, opts);
  expect(resumed.complete, "resumed run incomplete");
  expect(record_content(resumed) == record_content(reference), "resumed record differs from uninterrupted run");
  expect(resumed_calls->calls() < full->calls(), "resume redid finished chunks");
  if (o.pass)
    o.detail = fmt::format("killed after {} of {} calls; resume made {} calls; records equal", kill_at, full->calls(),
                           resumed_calls->calls());
  return o;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"metric oracle equivalence", metric_oracle},
      {"threshold semantics", threshold_semantics},
      {"silhouette correctness", silhouette_check},
      {"c-TF-IDF hand case", ctfidf_hand_case},
      {"chunk invariants", chunk_invariants},
      {"refusal taxonomy", refusal_taxonomy},
      {"Wilcoxon exactness", wilcoxon_exactness},
      {"determinism", determinism},
      {"report reproduction", report_reproduction},
      {"paper arithmetic", paper_arithmetic},
      {"crash resumability", crash_resume},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed ? 1 : 0;
}
