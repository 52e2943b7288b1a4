#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kclab/util/retry.hpp"

namespace kclab::llm {

enum class Role { system, user, assistant };

std::string to_string(Role role);
Role parse_role(std::string_view text);

struct Message {
  Role role = Role::user;
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

inline constexpr int kDefaultMaxTokens = 2048;

/// Chat-completion request. Defaults give greedy decoding.
struct ChatRequest {
  std::string model;
  std::vector<Message> messages;
  double temperature = 0.0;
  double top_p = 1.0;
  int max_tokens = kDefaultMaxTokens;

  /// Throws PreconditionError on empty messages, a leading assistant
  /// message, temperature < 0, top_p outside (0, 1] or max_tokens < 1.
  void validate() const;
  nlohmann::json to_json() const;
};

struct ChatResponse {
  std::string content;
  std::string provider_id;
  bool cached = false;
};

/// Canonical byte serialization the cache key is computed over.
std::string canonical_serialization(const ChatRequest& request);

/// SHA-256 hex digest of canonical_serialization(request).
std::string cache_key(const ChatRequest& request);

/// A chat-completion backend. Implementations throw TransientError for
/// retryable failures and other GatewayError subclasses otherwise.
class Provider {
public:
  virtual ~Provider() = default;
  virtual std::string id() const = 0;
  virtual std::string complete(const ChatRequest& request) = 0;
};

struct HttpProviderConfig {
  std::string endpoint;  // base URL, e.g. https://api.openai.com/v1
  std::string api_key;
  std::chrono::seconds timeout{120};
};

/// OpenAI-style POST {endpoint}/chat/completions.
class HttpChatProvider : public Provider {
public:
  explicit HttpChatProvider(HttpProviderConfig config);
  std::string id() const override;
  std::string complete(const ChatRequest& request) override;

private:
  HttpProviderConfig config_;
};

/// Offline provider scripted by a digest -> response fixture.
class MockProvider : public Provider {
public:
  explicit MockProvider(std::map<std::string, std::string> responses);
  static std::unique_ptr<MockProvider> from_file(const std::filesystem::path& fixture);

  std::string id() const override { return "mock"; }
  std::string complete(const ChatRequest& request) override;
  long calls() const { return calls_.load(); }

private:
  std::map<std::string, std::string> responses_;
  std::atomic<long> calls_{0};
};

/// Provider backed by a callable; used for programmatic test oracles.
class ScriptedProvider : public Provider {
public:
  using Handler = std::function<std::string(const ChatRequest&)>;
  explicit ScriptedProvider(Handler handler, std::string id = "scripted");

  std::string id() const override { return id_; }
  std::string complete(const ChatRequest& request) override;
  long calls() const { return calls_.load(); }

private:
  Handler handler_;
  std::string id_;
  std::atomic<long> calls_{0};
};

/// One JSON file per key under a directory; entries are written once via
/// write-then-rename and never modified.
class ResponseCache {
public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<ChatResponse> get(const std::string& key) const;
  void put(const std::string& key, const ChatRequest& request, const ChatResponse& response) const;
  std::filesystem::path path_for(const std::string& key) const;

private:
  std::filesystem::path dir_;
};

struct GatewayOptions {
  RetryPolicy retry;
  int concurrency = 4;
  std::optional<std::filesystem::path> cache_dir;
};

struct GatewayStats {
  long requests = 0;
  long cache_hits = 0;
  long provider_attempts = 0;
  long provider_successes = 0;

  double cache_hit_ratio() const {
    return requests == 0 ? 0.0 : static_cast<double>(cache_hits) / static_cast<double>(requests);
  }
};

/// Cache-first, retrying, concurrency-bounded access to a Provider.
/// complete() is safe to call from many threads.
class Gateway {
public:
  Gateway(std::shared_ptr<Provider> provider, GatewayOptions options);

  ChatResponse complete(const ChatRequest& request);

  GatewayStats stats() const;
  const GatewayOptions& options() const { return options_; }

private:
  std::shared_ptr<Provider> provider_;
  GatewayOptions options_;
  std::optional<ResponseCache> cache_;
  std::counting_semaphore<> in_flight_;
  std::atomic<long> requests_{0};
  std::atomic<long> cache_hits_{0};
  std::atomic<long> attempts_{0};
  std::atomic<long> successes_{0};
};

}  // namespace kclab::llm
