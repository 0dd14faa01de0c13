#pragma once

// Collapsing initial codes into formal codes.
//
// Codes are embedded, projected onto their top principal axes, and grouped by
// average-linkage agglomeration in the projected space. Merging stops at a
// linkage threshold and clusters smaller than the minimum size become noise
// (label -1). A grid search over the parameters keeps the model with the best
// silhouette. Each cluster then gets class-based TF-IDF keywords, three
// representative member codes, and a name from the chat model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "qualcode/embeddings.hpp"
#include "qualcode/error.hpp"
#include "qualcode/generation.hpp"
#include "qualcode/parallel.hpp"
#include "qualcode/stopwords.hpp"
#include "qualcode/text.hpp"

namespace qualcode {

using Matrix = Eigen::MatrixXd;  // one row per point

inline Matrix to_matrix(std::span<const EmbeddingVector> vs) {
  if (vs.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(vs.size()), static_cast<Eigen::Index>(vs.front().size()));
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (vs[i].size() != vs.front().size()) throw DomainError("embedding dimensions differ");
    for (std::size_t j = 0; j < vs[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vs[i].values[j];
  }
  return m;
}

// ---------------------------------------------------------------------------
// Reduction

struct Reducer {
  Eigen::RowVectorXd mean;
  Matrix components;  // reduced_dims x input_dims, orthonormal rows

  std::size_t input_dims() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t output_dims() const { return static_cast<std::size_t>(components.rows()); }

  // First `k` axes of this reducer.
  Reducer prefix(std::size_t k) const {
    if (k > output_dims()) throw DomainError("reducer prefix larger than fitted dimensions");
    return Reducer{mean, components.topRows(static_cast<Eigen::Index>(k))};
  }
};

// Mean-centering followed by projection onto the top `reduced_dims`
// principal axes. Axis signs are fixed so that each axis' largest-magnitude
// coordinate is positive. When the data has fewer than `reduced_dims`
// non-degenerate directions the basis is completed with standard-basis
// directions orthogonalized against it. `seed` is accepted for interface
// symmetry with stochastic reducers; this one is deterministic.
inline Reducer fit_reducer(const Matrix& vectors, std::size_t reduced_dims, std::uint64_t seed = 0) {
  (void)seed;
  const auto n = vectors.rows();
  const auto d = vectors.cols();
  if (n < 2) throw DomainError("fit_reducer needs at least two vectors");
  if (reduced_dims < 1) throw DomainError("reduced_dims must be >= 1");
  if (static_cast<Eigen::Index>(reduced_dims) > d)
    throw DomainError(fmt::format("reduced_dims {} exceeds input dimensionality {}", reduced_dims, d));

  Reducer r;
  r.mean = vectors.colwise().mean();
  Matrix centered = vectors.rowwise() - r.mean;
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  const Matrix& v = svd.matrixV();  // d x min(n, d), columns by descending singular value
  const auto& sv = svd.singularValues();
  const double tol = sv.size() > 0 ? sv(0) * 1e-10 * static_cast<double>(std::max(n, d)) : 0.0;

  r.components = Matrix::Zero(static_cast<Eigen::Index>(reduced_dims), d);
  Eigen::Index filled = 0;
  for (Eigen::Index c = 0; c < v.cols() && filled < static_cast<Eigen::Index>(reduced_dims); ++c) {
    if (sv(c) <= tol && tol > 0.0) break;
    r.components.row(filled++) = v.col(c).transpose();
  }
  // Complete the basis deterministically.
  for (Eigen::Index e = 0; e < d && filled < static_cast<Eigen::Index>(reduced_dims); ++e) {
    Eigen::RowVectorXd cand = Eigen::RowVectorXd::Zero(d);
    cand(e) = 1.0;
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index k = 0; k < filled; ++k) cand -= cand.dot(r.components.row(k)) * r.components.row(k);
    double norm = cand.norm();
    if (norm < 1e-8) continue;
    r.components.row(filled++) = cand / norm;
  }
  for (Eigen::Index k = 0; k < r.components.rows(); ++k) {
    Eigen::Index arg = 0;
    r.components.row(k).cwiseAbs().maxCoeff(&arg);
    if (r.components(k, arg) < 0) r.components.row(k) *= -1.0;
  }
  return r;
}

inline Matrix apply_reducer(const Reducer& r, const Matrix& vectors) {
  if (vectors.cols() != static_cast<Eigen::Index>(r.input_dims()))
    throw DomainError("apply_reducer: input dimensionality does not match the fitted reducer");
  return (vectors.rowwise() - r.mean) * r.components.transpose();
}

// ---------------------------------------------------------------------------
// Pairwise distances (condensed upper triangle)

class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(const Matrix& points) : n_(static_cast<std::size_t>(points.rows())) {
    d_.resize(n_ > 1 ? n_ * (n_ - 1) / 2 : 0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j)
        d_[index(i, j)] = (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
  }

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0;
    if (i > j) std::swap(i, j);
    return d_[index(i, j)];
  }
  double& at(std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return d_[index(i, j)];
  }

 private:
  std::size_t index(std::size_t i, std::size_t j) const noexcept { return i * n_ - i * (i + 1) / 2 + (j - i - 1); }

  std::size_t n_ = 0;
  std::vector<double> d_;
};

// ---------------------------------------------------------------------------
// Agglomeration

// One merge in scipy linkage layout: clusters 0..n-1 are points, merge i
// creates cluster n+i.
struct LinkageStep {
  std::size_t left = 0;
  std::size_t right = 0;
  double distance = 0.0;
  std::size_t size = 0;

  friend bool operator==(const LinkageStep&, const LinkageStep&) = default;
};

// Full average-linkage hierarchy. Each step merges the closest pair of
// clusters; ties go to the pair whose lowest member indices are
// lexicographically smallest.
inline std::vector<LinkageStep> average_linkage(const DistanceMatrix& dist) {
  const std::size_t n = dist.size();
  std::vector<LinkageStep> steps;
  if (n < 2) return steps;
  steps.reserve(n - 1);

  // A cluster lives in the slot equal to its lowest member index.
  DistanceMatrix d = dist;
  std::vector<bool> active(n, true);
  std::vector<std::size_t> size(n, 1), label(n);
  std::iota(label.begin(), label.end(), std::size_t{0});
  std::vector<std::size_t> nn(n, 0);
  std::vector<double> nnd(n, std::numeric_limits<double>::infinity());

  auto refresh = [&](std::size_t i) {
    nnd[i] = std::numeric_limits<double>::infinity();
    nn[i] = n;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i || !active[k]) continue;
      double v = d(i, k);
      if (v < nnd[i]) {  // ascending k, so ties keep the lowest slot
        nnd[i] = v;
        nn[i] = k;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) refresh(i);

  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t a = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i] || nn[i] == n) continue;
      if (a == n) {
        a = i;
        continue;
      }
      auto key_i = std::make_tuple(nnd[i], std::min(i, nn[i]), std::max(i, nn[i]));
      auto key_a = std::make_tuple(nnd[a], std::min(a, nn[a]), std::max(a, nn[a]));
      if (key_i < key_a) a = i;
    }
    std::size_t i = std::min(a, nn[a]);
    std::size_t j = std::max(a, nn[a]);
    double height = nnd[a];

    steps.push_back({std::min(label[i], label[j]), std::max(label[i], label[j]), height, size[i] + size[j]});

    const double si = static_cast<double>(size[i]);
    const double sj = static_cast<double>(size[j]);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == i || k == j) continue;
      d.at(i, k) = (si * d(i, k) + sj * d(j, k)) / (si + sj);
    }
    active[j] = false;
    size[i] += size[j];
    label[i] = n + step;

    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == i) continue;
      if (nn[k] == i || nn[k] == j) {
        refresh(k);
      } else {
        double v = d(i, k);
        if (v < nnd[k] || (v == nnd[k] && i < nn[k])) {
          nnd[k] = v;
          nn[k] = i;
        }
      }
    }
    refresh(i);
  }
  return steps;
}

inline constexpr int kNoise = -1;

// Replays merges below `threshold`, then relabels clusters smaller than
// `min_cluster_size` as noise. Labels are 0.. in order of lowest member.
inline std::vector<int> cut_linkage(std::span<const LinkageStep> steps, std::size_t n, double threshold,
                                    std::size_t min_cluster_size) {
  std::vector<std::size_t> parent(2 * n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t s = 0; s < steps.size(); ++s) {
    if (!(steps[s].distance < threshold)) break;
    parent[find(steps[s].left)] = n + s;
    parent[find(steps[s].right)] = n + s;
  }
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> ordered;
  for (auto& [_, members] : groups) ordered.push_back(std::move(members));
  std::sort(ordered.begin(), ordered.end(), [](const auto& x, const auto& y) { return x.front() < y.front(); });

  std::vector<int> labels(n, kNoise);
  int next = 0;
  for (const auto& members : ordered) {
    if (members.size() < min_cluster_size) continue;
    for (auto m : members) labels[m] = next;
    ++next;
  }
  return labels;
}

// Average-linkage clustering with a stopping threshold and noise relabeling.
inline std::vector<int> cluster(const Matrix& reduced, std::size_t min_cluster_size, double linkage_threshold) {
  if (!(linkage_threshold > 0.0)) throw DomainError("linkage threshold must be positive");
  DistanceMatrix dist(reduced);
  auto steps = average_linkage(dist);
  return cut_linkage(steps, static_cast<std::size_t>(reduced.rows()), linkage_threshold, min_cluster_size);
}

inline std::size_t cluster_count(std::span<const int> labels) {
  int mx = kNoise;
  for (int l : labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx + 1);
}

// ---------------------------------------------------------------------------
// Silhouette

// Mean silhouette over non-noise points; singleton clusters contribute 0.
inline double silhouette(const DistanceMatrix& dist, std::span<const int> labels) {
  const std::size_t n = labels.size();
  if (dist.size() != n) throw DomainError("silhouette: label count does not match point count");
  std::size_t k = cluster_count(labels);
  std::vector<std::size_t> sizes(k, 0);
  for (int l : labels)
    if (l != kNoise) ++sizes[static_cast<std::size_t>(l)];
  std::size_t populated = static_cast<std::size_t>(std::count_if(sizes.begin(), sizes.end(), [](auto s) { return s > 0; }));
  if (populated < 2) throw DomainError("silhouette is undefined for fewer than two clusters");

  double total = 0.0;
  std::size_t counted = 0;
  std::vector<double> sum(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kNoise) continue;
    auto own = static_cast<std::size_t>(labels[i]);
    ++counted;
    if (sizes[own] == 1) continue;
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || labels[j] == kNoise) continue;
      sum[static_cast<std::size_t>(labels[j])] += dist(i, j);
    }
    double a = sum[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != own && sizes[c] > 0) b = std::min(b, sum[c] / static_cast<double>(sizes[c]));
    double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(counted);
}

inline double silhouette(const Matrix& reduced, std::span<const int> labels) {
  return silhouette(DistanceMatrix(reduced), labels);
}

// ---------------------------------------------------------------------------
// Keywords

struct KeywordOptions {
  std::size_t top_k = 10;
  bool remove_stop_words = true;
  const std::unordered_set<std::string>* stop_words = nullptr;  // defaults to English
};

struct WeightedTerm {
  std::string term;
  double weight = 0.0;

  friend bool operator==(const WeightedTerm&, const WeightedTerm&) = default;
};

// Class-based TF-IDF. Each cluster's documents are concatenated into one
// class document; weight(t, c) = tf(t, c) * log(1 + A / f(t)) where f(t) is
// the count of t over all classes and A is the mean token count per class.
inline std::vector<std::vector<WeightedTerm>> ctfidf_weights(std::span<const std::vector<std::string>> clusters,
                                                             const KeywordOptions& opts = {}) {
  if (clusters.empty()) throw DomainError("ctfidf: no clusters");
  const auto& stops = opts.stop_words ? *opts.stop_words : english_stop_words();
  std::vector<std::map<std::string, double>> tf(clusters.size());
  std::unordered_map<std::string, double> f;
  double tokens = 0.0;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (const auto& doc : clusters[c]) {
      for (auto& w : text::word_tokens(doc)) {
        if (opts.remove_stop_words && stops.count(w)) continue;
        tf[c][w] += 1.0;
        f[w] += 1.0;
        tokens += 1.0;
      }
    }
  }
  const double avg = tokens / static_cast<double>(clusters.size());
  std::vector<std::vector<WeightedTerm>> out(clusters.size());
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (const auto& [term, count] : tf[c]) out[c].push_back({term, count * std::log(1.0 + avg / f[term])});
    std::sort(out[c].begin(), out[c].end(), [](const WeightedTerm& x, const WeightedTerm& y) {
      if (x.weight != y.weight) return x.weight > y.weight;
      return x.term < y.term;
    });
  }
  return out;
}

inline std::vector<std::vector<std::string>> ctfidf_keywords(std::span<const std::vector<std::string>> clusters,
                                                             const KeywordOptions& opts = {}) {
  auto weights = ctfidf_weights(clusters, opts);
  std::vector<std::vector<std::string>> out(weights.size());
  for (std::size_t c = 0; c < weights.size(); ++c)
    for (std::size_t i = 0; i < weights[c].size() && i < opts.top_k; ++i) out[c].push_back(weights[c][i].term);
  return out;
}

// ---------------------------------------------------------------------------
// Representatives

// The `k` members closest to the cluster centroid (ties by lowest index).
inline std::vector<std::size_t> representative_codes(std::span<const std::size_t> members, const Matrix& reduced,
                                                     std::size_t k = 3) {
  if (members.empty()) throw DomainError("representative_codes: empty cluster");
  Eigen::RowVectorXd centroid = Eigen::RowVectorXd::Zero(reduced.cols());
  for (auto m : members) centroid += reduced.row(static_cast<Eigen::Index>(m));
  centroid /= static_cast<double>(members.size());
  std::vector<std::pair<double, std::size_t>> ranked;
  for (auto m : members) ranked.emplace_back((reduced.row(static_cast<Eigen::Index>(m)) - centroid).norm(), m);
  std::sort(ranked.begin(), ranked.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) out.push_back(ranked[i].second);
  return out;
}

// ---------------------------------------------------------------------------
// Model and grid search

struct TopicParams {
  std::size_t neighborhood_size = 15;  // kept for interface parity; unused by the PCA reducer
  std::size_t reduced_dims = 5;
  std::size_t min_cluster_size = 15;
  double linkage_threshold = 1.0;
  std::uint64_t random_seed = 42;

  void validate() const {
    if (reduced_dims < 1) throw DomainError("reduced_dims must be >= 1");
    if (min_cluster_size < 2) throw DomainError("min_cluster_size must be >= 2");
    if (neighborhood_size < 2) throw DomainError("neighborhood_size must be >= 2");
    if (!(linkage_threshold > 0.0)) throw DomainError("linkage_threshold must be positive");
  }
  auto order_key() const { return std::tie(neighborhood_size, reduced_dims, min_cluster_size, linkage_threshold); }
  friend bool operator==(const TopicParams&, const TopicParams&) = default;
};

struct TopicGrid {
  std::vector<std::size_t> neighborhood_sizes = {5, 10, 15, 20};
  std::vector<std::size_t> reduced_dims = {2, 5, 10};
  std::vector<std::size_t> min_cluster_sizes = {5, 15, 25, 40};
  std::vector<double> linkage_thresholds = {0.5, 1.0, 2.0};
  std::uint64_t random_seed = 42;

  std::vector<TopicParams> cells() const {
    std::vector<TopicParams> out;
    for (auto nb : neighborhood_sizes)
      for (auto rd : reduced_dims)
        for (auto mc : min_cluster_sizes)
          for (auto lt : linkage_thresholds) out.push_back({nb, rd, mc, lt, random_seed});
    return out;
  }
};

struct TopicModel {
  TopicParams params;
  Reducer reducer;
  std::vector<int> labels;  // per input code; -1 = noise
  Matrix centroids;         // one row per cluster, reduced space
  double silhouette = 0.0;
  std::vector<std::vector<std::string>> keywords;         // per cluster
  std::vector<std::vector<std::size_t>> representatives;  // per cluster, code indices
  std::vector<LinkageStep> linkage;

  std::size_t cluster_count() const { return static_cast<std::size_t>(centroids.rows()); }
  std::vector<std::size_t> members(std::size_t cluster) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == static_cast<int>(cluster)) out.push_back(i);
    return out;
  }
};

struct GridCellOutcome {
  TopicParams params;
  std::optional<double> silhouette;
  std::size_t clusters = 0;
  std::size_t noise = 0;
  std::string skip_reason;
};

struct GridSearchOptions {
  std::size_t jobs = 1;
  std::size_t representatives = 3;
  KeywordOptions keywords;
};

struct GridSearchResult {
  TopicModel model;
  std::vector<GridCellOutcome> cells;
};

namespace detail {

inline bool better_cell(const GridCellOutcome& x, const GridCellOutcome& y) {
  if (*x.silhouette != *y.silhouette) return *x.silhouette > *y.silhouette;
  if (x.clusters != y.clusters) return x.clusters < y.clusters;
  return x.params.order_key() < y.params.order_key();
}

}  // namespace detail

// Builds the cluster-level parts of a model from fitted labels.
inline void finish_model(TopicModel& m, const Matrix& reduced, std::span<const std::string> documents,
                         const GridSearchOptions& opts) {
  std::size_t k = cluster_count(m.labels);
  m.centroids = Matrix::Zero(static_cast<Eigen::Index>(k), reduced.cols());
  std::vector<std::vector<std::string>> docs(k);
  m.representatives.assign(k, {});
  for (std::size_t c = 0; c < k; ++c) {
    auto mem = m.members(c);
    for (auto i : mem) {
      m.centroids.row(static_cast<Eigen::Index>(c)) += reduced.row(static_cast<Eigen::Index>(i));
      docs[c].push_back(documents[i]);
    }
    m.centroids.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(mem.size());
    m.representatives[c] = representative_codes(mem, reduced, opts.representatives);
  }
  m.keywords = k > 0 ? ctfidf_keywords(docs, opts.keywords) : std::vector<std::vector<std::string>>{};
}

// Fits every grid cell on the embedded `documents` and keeps the one with
// the highest silhouette (ties: fewer clusters, then smaller parameters).
// Cells that cannot be fitted or yield fewer than two clusters are skipped.
inline GridSearchResult grid_search_vectors(const Matrix& vectors, std::span<const std::string> documents,
                                            const std::vector<TopicParams>& grid, const GridSearchOptions& opts = {}) {
  if (grid.empty()) throw DomainError("grid_search: empty grid");
  const std::size_t n = static_cast<std::size_t>(vectors.rows());
  if (documents.size() != n) throw DomainError("grid_search: document count does not match vectors");
  std::size_t min_size = std::numeric_limits<std::size_t>::max();
  for (const auto& p : grid) {
    p.validate();
    min_size = std::min(min_size, p.min_cluster_size);
  }
  if (n < 2 * min_size)
    throw DomainError(fmt::format("grid_search: {} codes is fewer than twice the smallest min_cluster_size ({})", n,
                                  min_size));

  std::size_t max_dims = 0;
  for (const auto& p : grid)
    if (p.reduced_dims <= static_cast<std::size_t>(vectors.cols())) max_dims = std::max(max_dims, p.reduced_dims);

  struct Space {
    Matrix reduced;
    DistanceMatrix dist;
    std::vector<LinkageStep> steps;
  };
  std::map<std::size_t, Space> spaces;
  Reducer full;
  if (max_dims > 0) {
    full = fit_reducer(vectors, max_dims, grid.front().random_seed);
    std::vector<std::size_t> dims;
    for (const auto& p : grid)
      if (p.reduced_dims <= max_dims && !spaces.count(p.reduced_dims)) {
        spaces[p.reduced_dims];
        dims.push_back(p.reduced_dims);
      }
    parallel_for(dims.size(), opts.jobs, [&](std::size_t i) {
      auto& s = spaces.at(dims[i]);
      s.reduced = apply_reducer(full.prefix(dims[i]), vectors);
      s.dist = DistanceMatrix(s.reduced);
      s.steps = average_linkage(s.dist);
    });
  }

  std::vector<GridCellOutcome> cells(grid.size());
  std::vector<std::vector<int>> labels(grid.size());
  parallel_for(grid.size(), opts.jobs, [&](std::size_t c) {
    const auto& p = grid[c];
    cells[c].params = p;
    auto it = spaces.find(p.reduced_dims);
    if (it == spaces.end()) {
      cells[c].skip_reason = fmt::format("reduced_dims {} exceeds input dimensionality {}", p.reduced_dims, vectors.cols());
      return;
    }
    labels[c] = cut_linkage(it->second.steps, n, p.linkage_threshold, p.min_cluster_size);
    cells[c].clusters = cluster_count(labels[c]);
    cells[c].noise = static_cast<std::size_t>(std::count(labels[c].begin(), labels[c].end(), kNoise));
    if (cells[c].clusters < 2) {
      cells[c].skip_reason = fmt::format("{} cluster(s) after clustering", cells[c].clusters);
      return;
    }
    cells[c].silhouette = silhouette(it->second.dist, labels[c]);
  });

  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (!cells[c].silhouette) continue;
    if (!best || detail::better_cell(cells[c], cells[*best])) best = c;
  }
  if (!best) {
    std::string reasons;
    for (const auto& cell : cells)
      reasons += fmt::format("\n  nb={} dims={} min={} thr={}: {}", cell.params.neighborhood_size,
                             cell.params.reduced_dims, cell.params.min_cluster_size, cell.params.linkage_threshold,
                             cell.skip_reason);
    throw DomainError("grid_search: every cell was degenerate:" + reasons);
  }

  GridSearchResult out;
  const auto& p = grid[*best];
  const auto& space = spaces.at(p.reduced_dims);
  out.model.params = p;
  out.model.reducer = full.prefix(p.reduced_dims);
  out.model.labels = labels[*best];
  out.model.silhouette = *cells[*best].silhouette;
  out.model.linkage = space.steps;
  finish_model(out.model, space.reduced, documents, opts);
  out.cells = std::move(cells);
  return out;
}

inline GridSearchResult grid_search(std::span<const std::string> codes, const EnsembleEmbedder& embedder,
                                    const std::vector<TopicParams>& grid, const GridSearchOptions& opts = {}) {
  if (grid.empty()) throw DomainError("grid_search: empty grid");
  auto vecs = embedder.embed_batch(codes);
  return grid_search_vectors(to_matrix(vecs), codes, grid, opts);
}

// ---------------------------------------------------------------------------
// Naming

struct FormalCode {
  std::size_t cluster_id = 0;
  std::optional<std::string> name;
  std::vector<std::string> keywords;
  std::vector<std::size_t> representative_codes;
  std::size_t member_count = 0;

  friend bool operator==(const FormalCode&, const FormalCode&) = default;
};

struct NamingResult {
  std::optional<std::string> name;
  std::string raw_response;
  bool refused = false;
  bool transport_failed = false;
};

// Representative document as shown to the model: the code, plus its
// justification when there is one.
inline std::string naming_document(const InitialCode& code) {
  if (code.justification) return code.text + ": " + *code.justification;
  return code.text;
}

inline std::vector<Message> render_naming_prompt(std::span<const std::string> documents,
                                                 std::span<const std::string> keywords) {
  std::string docs = text::join(documents, "\n- ");
  std::string kws = text::join(keywords, ", ");
  return {{"system", std::string(prompts::kNamingSystem)},
          {"user", substitute(prompts::kNamingUser, {{"DOCUMENTS", std::string_view(docs)},
                                                     {"KEYWORDS", std::string_view(kws)}})}};
}

inline std::optional<std::string> clean_topic_name(std::string_view raw) {
  for (auto line : text::split_lines(raw)) {
    auto t = text::trim(line);
    if (t.empty()) continue;
    if (t.size() >= 11 && text::iequals(t.substr(0, 11), "topic name:")) t = text::trim(t.substr(11));
    t = detail::strip_quotes(detail::strip_decoration(t));
    if (t.empty()) continue;
    return std::string(t);
  }
  return std::nullopt;
}

inline NamingResult name_topic(std::span<const std::string> documents, std::span<const std::string> keywords,
                               ChatBackend& backend, const GenerationParams& params, std::size_t max_retries = 3,
                               const std::vector<std::string>& markers = default_refusal_markers()) {
  auto messages = render_naming_prompt(documents, keywords);
  NamingResult r;
  for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
    try {
      r.raw_response = backend.complete(messages, params);
      r.transport_failed = false;
      break;
    } catch (const BackendError&) {
      r.transport_failed = true;
    }
  }
  if (r.transport_failed) return r;
  if (detect_refusal(r.raw_response, 0, markers).refusal) {
    r.refused = true;
    return r;
  }
  r.name = clean_topic_name(r.raw_response);
  return r;
}

struct NamingOutcome {
  std::vector<FormalCode> formal_codes;
  std::vector<NamingResult> results;  // per cluster
};

// Names every cluster of `model`. `codes` are the unique initial codes the
// model was fitted on.
inline NamingOutcome name_topics(const TopicModel& model, std::span<const InitialCode> codes, ChatBackend& backend,
                                 const GenerationParams& params, std::size_t jobs = 1, std::size_t max_retries = 3) {
  NamingOutcome out;
  const std::size_t k = model.cluster_count();
  out.formal_codes.resize(k);
  out.results.resize(k);
  parallel_for(k, jobs, [&](std::size_t c) {
    std::vector<std::string> docs;
    for (auto i : model.representatives[c]) docs.push_back(naming_document(codes[i]));
    auto r = name_topic(docs, model.keywords[c], backend, params, max_retries);
    FormalCode& fc = out.formal_codes[c];
    fc.cluster_id = c;
    fc.name = r.name;
    fc.keywords = model.keywords[c];
    fc.representative_codes = model.representatives[c];
    fc.member_count = model.members(c).size();
    out.results[c] = std::move(r);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Transform

struct TopicAssignment {
  std::size_t cluster_id = 0;
  double distance = 0.0;
};

inline std::vector<TopicAssignment> transform_vectors(const Matrix& vectors, const TopicModel& model) {
  if (model.cluster_count() == 0) throw DomainError("transform: model has no clusters");
  Matrix reduced = apply_reducer(model.reducer, vectors);
  std::vector<TopicAssignment> out;
  for (Eigen::Index i = 0; i < reduced.rows(); ++i) {
    TopicAssignment best{0, std::numeric_limits<double>::infinity()};
    for (Eigen::Index c = 0; c < model.centroids.rows(); ++c) {
      double d = (reduced.row(i) - model.centroids.row(c)).norm();
      if (d < best.distance) best = {static_cast<std::size_t>(c), d};
    }
    out.push_back(best);
  }
  return out;
}

inline std::vector<TopicAssignment> transform(std::span<const std::string> texts, const TopicModel& model,
                                              const EnsembleEmbedder& embedder) {
  if (model.cluster_count() == 0) throw DomainError("transform: model has no clusters");
  if (texts.empty()) return {};
  return transform_vectors(to_matrix(embedder.embed_batch(texts)), model);
}

}  // namespace qualcode
