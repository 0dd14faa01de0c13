#pragma once

// Text embeddings. An EnsembleEmbedder asks each provider for a vector,
// L2-normalizes each one, and concatenates them in provider order. Raw
// provider outputs are cached by (provider identity, text digest).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <memory>
#include <optional>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "qualcode/error.hpp"
#include "qualcode/parallel.hpp"
#include "qualcode/text.hpp"

namespace qualcode {

struct EmbeddingVector {
  std::vector<double> values;
  std::vector<std::size_t> provider_dims;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  // Stable name used as the cache namespace; two providers with the same
  // identity must produce the same vectors.
  virtual std::string identity() const = 0;
  virtual std::size_t dimension() const = 0;
  // One raw vector per input text, in input order.
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) = 0;
};

// Hashed bag-of-words plus a whole-text component. Texts sharing words land
// near each other, so mock runs still produce meaningful clusters, and the
// whole-text term keeps distinct texts from colliding.
class MockEmbeddingProvider final : public EmbeddingProvider {
 public:
  MockEmbeddingProvider(std::uint64_t seed, std::size_t dimension, double text_weight = 0.25)
      : seed_(seed), dim_(dimension), text_weight_(text_weight) {
    if (dim_ == 0) throw DomainError("mock embedding dimension must be positive");
  }

  std::string identity() const override {
    return "mock:" + std::to_string(seed_) + ":" + std::to_string(dim_);
  }
  std::size_t dimension() const override { return dim_; }

  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
  }

  std::vector<double> embed_one(std::string_view t) const {
    std::vector<double> v(dim_, 0.0);
    for (const auto& w : text::word_tokens(t)) accumulate(v, text::fnv1a64(w, seed_), 1.0);
    accumulate(v, text::fnv1a64(t, seed_ ^ 0x5bd1e995ULL) ^ 0xA5A5A5A5ULL, text_weight_);
    return v;
  }

 private:
  void accumulate(std::vector<double>& v, std::uint64_t key, double weight) const {
    std::mt19937_64 rng(key);
    constexpr double kScale = 1.0 / static_cast<double>(std::mt19937_64::max());
    for (auto& x : v) x += weight * (2.0 * static_cast<double>(rng()) * kScale - 1.0);
  }

  std::uint64_t seed_;
  std::size_t dim_;
  double text_weight_;
};

class EmbeddingCache {
 public:
  std::optional<std::vector<double>> get(const std::string& key) const {
    std::shared_lock lock(mu_);
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }
  void put(const std::string& key, std::vector<double> v) {
    std::unique_lock lock(mu_);
    map_.emplace(key, std::move(v));
  }
  std::size_t size() const {
    std::shared_lock lock(mu_);
    return map_.size();
  }
  static std::string key(const EmbeddingProvider& p, std::string_view text) {
    return p.identity() + '\n' + text::sha256_hex(text);
  }

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::vector<double>> map_;
};

struct EmbedOptions {
  bool normalize = true;
  bool use_cache = true;
  std::size_t batch_size = 64;
  std::size_t max_in_flight = 4;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DomainError("cosine: length mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine: zero-norm vector");
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) { return cosine(a.values, b.values); }

class EnsembleEmbedder {
 public:
  explicit EnsembleEmbedder(std::vector<std::shared_ptr<EmbeddingProvider>> providers,
                            std::shared_ptr<EmbeddingCache> cache = std::make_shared<EmbeddingCache>(),
                            EmbedOptions options = {})
      : providers_(std::move(providers)), cache_(std::move(cache)), options_(options) {
    if (providers_.empty()) throw DomainError("embedder needs at least one provider");
    for (const auto& p : providers_)
      if (!p) throw DomainError("null embedding provider");
    if (!cache_) cache_ = std::make_shared<EmbeddingCache>();
  }

  std::size_t dimension() const {
    std::size_t d = 0;
    for (const auto& p : providers_) d += p->dimension();
    return d;
  }

  const std::vector<std::shared_ptr<EmbeddingProvider>>& providers() const noexcept { return providers_; }
  const EmbedOptions& options() const noexcept { return options_; }

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const {
    std::vector<EmbeddingVector> out(texts.size());
    for (auto& v : out) v.values.reserve(dimension());
    for (const auto& provider : providers_) {
      auto raw = provider_vectors(*provider, texts);
      for (std::size_t i = 0; i < texts.size(); ++i) {
        auto& vec = raw[i];
        if (options_.normalize) {
          double n = l2_norm(vec);
          if (n == 0.0)
            throw DomainError("provider " + provider->identity() + " returned a zero vector for text #" +
                              std::to_string(i));
          for (auto& x : vec) x /= n;
        }
        out[i].values.insert(out[i].values.end(), vec.begin(), vec.end());
        out[i].provider_dims.push_back(vec.size());
      }
    }
    return out;
  }

  EmbeddingVector embed(const std::string& text) const {
    return std::move(embed_batch(std::span<const std::string>(&text, 1)).front());
  }

 private:
  std::vector<std::vector<double>> provider_vectors(EmbeddingProvider& provider,
                                                    std::span<const std::string> texts) const {
    std::vector<std::vector<double>> result(texts.size());
    std::vector<std::string> pending;
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (options_.use_cache) {
        if (auto hit = cache_->get(EmbeddingCache::key(provider, texts[i]))) {
          result[i] = std::move(*hit);
          continue;
        }
      }
      if (seen.insert(texts[i]).second) pending.push_back(texts[i]);
    }

    std::unordered_map<std::string, std::vector<double>> fresh;
    if (!pending.empty()) {
      std::size_t bs = std::max<std::size_t>(1, options_.batch_size);
      std::size_t nbatches = (pending.size() + bs - 1) / bs;
      std::vector<std::vector<std::vector<double>>> batches(nbatches);
      parallel_for(nbatches, options_.max_in_flight, [&](std::size_t b) {
        auto first = pending.begin() + static_cast<std::ptrdiff_t>(b * bs);
        auto last = pending.begin() + static_cast<std::ptrdiff_t>(std::min(pending.size(), (b + 1) * bs));
        std::span<const std::string> chunk(&*first, static_cast<std::size_t>(last - first));
        auto vecs = provider.embed(chunk);
        if (vecs.size() != chunk.size())
          throw BackendError("provider " + provider.identity() + " returned " + std::to_string(vecs.size()) +
                             " vectors for " + std::to_string(chunk.size()) + " texts");
        for (const auto& v : vecs) {
          if (v.size() != provider.dimension())
            throw BackendError("provider " + provider.identity() + " returned dimension " +
                               std::to_string(v.size()) + ", expected " + std::to_string(provider.dimension()));
          for (double x : v)
            if (!std::isfinite(x)) throw BackendError("provider " + provider.identity() + " returned non-finite value");
        }
        batches[b] = std::move(vecs);
      });
      for (std::size_t b = 0; b < nbatches; ++b) {
        for (std::size_t j = 0; j < batches[b].size(); ++j) {
          const auto& text = pending[b * bs + j];
          if (options_.use_cache) cache_->put(EmbeddingCache::key(provider, text), batches[b][j]);
          fresh.emplace(text, std::move(batches[b][j]));
        }
      }
    }
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (!result[i].empty()) continue;
      result[i] = fresh.at(texts[i]);
    }
    return result;
  }

  std::vector<std::shared_ptr<EmbeddingProvider>> providers_;
  std::shared_ptr<EmbeddingCache> cache_;
  EmbedOptions options_;
};

}  // namespace qualcode
