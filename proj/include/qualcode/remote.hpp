#pragma once

// HTTP chat and embedding backends (cpp-httplib). Link qualcode::remote.
//
//   chat:       POST {"model", "messages", "temperature", "top_p", "max_tokens"}
//               -> {"choices": [{"message": {"content": ...}}]}
//   embeddings: POST {"texts": [...]} -> {"vectors": [[...], ...]}
//
// Bearer tokens come from LLM_API_KEY / EMBED_API_KEY; endpoints from the
// config or LLM_API_URL / EMBED_API_URL.

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "qualcode/config.hpp"
#include "qualcode/embeddings.hpp"
#include "qualcode/error.hpp"
#include "qualcode/generation.hpp"
#include "qualcode/pipeline.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

namespace qualcode {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;  // starts with '/'
};

inline Endpoint parse_endpoint(std::string_view url) {
  auto scheme = url.find("://");
  if (scheme == std::string_view::npos) throw ConfigError("endpoint '" + std::string(url) + "' has no scheme");
  auto slash = url.find('/', scheme + 3);
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

inline std::string env_or(const char* name, const std::string& fallback = {}) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

namespace detail {

// Caps concurrent requests.
class InFlight {
 public:
  explicit InFlight(std::size_t limit) : free_(std::max<std::size_t>(1, limit)) {}
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t free_;
};

struct Slot {
  explicit Slot(InFlight& f) : f_(f) { f_.acquire(); }
  ~Slot() { f_.release(); }
  Slot(const Slot&) = delete;
  Slot& operator=(const Slot&) = delete;
  InFlight& f_;
};

// One POST; BackendError on transport failure, non-2xx status or a body that
// is not JSON.
inline nlohmann::json post_json(const Endpoint& ep, const std::string& token, const nlohmann::json& body,
                                double timeout_seconds) {
  httplib::Client cli(ep.base);
  auto to = std::chrono::duration<double>(timeout_seconds);
  cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(to));
  cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(to));
  cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(to));
  httplib::Headers headers;
  if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
  auto res = cli.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) throw BackendError(ep.base + ep.path + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw BackendError(fmt::format("{}{}: HTTP {}", ep.base, ep.path, res->status));
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw BackendError(ep.base + ep.path + ": response is not JSON");
  }
}

}  // namespace detail

class HttpChatBackend final : public ChatBackend {
 public:
  HttpChatBackend(std::string url, std::string token, double timeout_seconds = 120.0, std::size_t in_flight = 4)
      : url_(url), ep_(parse_endpoint(url)), token_(std::move(token)), timeout_(timeout_seconds), gate_(in_flight) {}

  std::string identity() const override { return "http-chat:" + url_; }

  std::string complete(const std::vector<Message>& messages, const GenerationParams& params) override {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    nlohmann::json body = {{"model", params.model_name},
                           {"messages", msgs},
                           {"temperature", params.temperature},
                           {"top_p", params.top_p},
                           {"max_tokens", params.max_output_tokens}};
    detail::Slot slot(gate_);
    auto j = detail::post_json(ep_, token_, body, timeout_);
    try {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw BackendError(url_ + ": response has no choices[0].message.content");
    }
  }

 private:
  std::string url_;
  Endpoint ep_;
  std::string token_;
  double timeout_;
  detail::InFlight gate_;
};

class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(std::string url, std::string token, std::size_t dimension, std::string model = {},
                        std::size_t max_retries = 3, double timeout_seconds = 120.0)
      : url_(url),
        ep_(parse_endpoint(url)),
        token_(std::move(token)),
        dim_(dimension),
        model_(std::move(model)),
        max_retries_(max_retries),
        timeout_(timeout_seconds) {}

  std::string identity() const override { return "http-embed:" + url_ + (model_.empty() ? "" : ":" + model_); }
  std::size_t dimension() const override { return dim_; }

  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override {
    nlohmann::json body = {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
    if (!model_.empty()) body["model"] = model_;
    std::string last;
    for (std::size_t attempt = 0; attempt <= max_retries_; ++attempt) {
      try {
        auto j = detail::post_json(ep_, token_, body, timeout_);
        auto vecs = j.at("vectors").get<std::vector<std::vector<double>>>();
        if (vecs.size() != texts.size())
          throw BackendError(fmt::format("{}: {} vectors for {} texts", url_, vecs.size(), texts.size()));
        for (const auto& v : vecs)
          if (v.size() != dim_) throw BackendError(fmt::format("{}: vector of length {}, expected {}", url_, v.size(), dim_));
        return vecs;
      } catch (const BackendError& e) {
        last = e.what();
      } catch (const nlohmann::json::exception&) {
        last = url_ + ": response has no vectors array";
      }
    }
    throw BackendError(last);
  }

 private:
  std::string url_;
  Endpoint ep_;
  std::string token_;
  std::size_t dim_;
  std::string model_;
  std::size_t max_retries_;
  double timeout_;
};

inline RemoteFactory remote_factory(std::size_t max_retries = 3) {
  RemoteFactory f;
  f.chat = [](const BackendConfig& b) -> std::shared_ptr<ChatBackend> {
    auto url = b.url.empty() ? env_or("LLM_API_URL") : b.url;
    if (url.empty()) throw ConfigError("no chat endpoint: set [backend] url, --backend or LLM_API_URL");
    return std::make_shared<HttpChatBackend>(url, env_or("LLM_API_KEY"), b.timeout_seconds, b.in_flight);
  };
  f.embedder = [max_retries](const ProviderConfig& p) -> std::shared_ptr<EmbeddingProvider> {
    auto url = p.url.empty() ? env_or("EMBED_API_URL") : p.url;
    if (url.empty()) throw ConfigError("no embedding endpoint: set a provider url or EMBED_API_URL");
    return std::make_shared<HttpEmbeddingProvider>(url, env_or("EMBED_API_KEY"), p.dim, p.model, max_retries);
  };
  return f;
}

}  // namespace qualcode
