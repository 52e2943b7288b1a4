#include "kclab/llm/gateway.hpp"

#include "kclab/error.hpp"
#include "kclab/util/files.hpp"
#include "kclab/util/format.hpp"
#include "kclab/util/hash.hpp"
#include "kclab/util/http.hpp"

using nlohmann::json;

namespace kclab::llm {

std::string to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view text) {
  if (text == "system") return Role::system;
  if (text == "user") return Role::user;
  if (text == "assistant") return Role::assistant;
  throw ParseError("unknown chat role '" + std::string(text) + "'");
}

void ChatRequest::validate() const {
  if (messages.empty()) throw PreconditionError("chat request has no messages");
  if (messages.front().role == Role::assistant) {
    throw PreconditionError("first chat message must be system or user");
  }
  if (!(temperature >= 0.0)) throw PreconditionError("temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw PreconditionError("top_p must lie in (0, 1]");
  if (max_tokens < 1) throw PreconditionError("max_tokens must be positive");
}

json ChatRequest::to_json() const {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return {{"model", model},
          {"messages", msgs},
          {"temperature", temperature},
          {"top_p", top_p},
          {"max_tokens", max_tokens}};
}

std::string canonical_serialization(const ChatRequest& request) {
  // Numbers are rendered as shortest round-trip strings so the bytes do not
  // depend on any JSON library's float printer.
  json msgs = json::array();
  for (const auto& m : request.messages) msgs.push_back(json::array({to_string(m.role), m.content}));
  const json doc = {{"v", 1},
                    {"model", request.model},
                    {"messages", msgs},
                    {"temperature", format_double(request.temperature)},
                    {"top_p", format_double(request.top_p)},
                    {"max_tokens", request.max_tokens}};
  return doc.dump(-1, ' ', false, json::error_handler_t::strict);
}

std::string cache_key(const ChatRequest& request) { return sha256_hex(canonical_serialization(request)); }

// ---------------------------------------------------------------------------

HttpChatProvider::HttpChatProvider(HttpProviderConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw PreconditionError("HTTP provider needs an endpoint URL");
  while (!config_.endpoint.empty() && config_.endpoint.back() == '/') config_.endpoint.pop_back();
}

std::string HttpChatProvider::id() const { return "http:" + config_.endpoint; }

std::string HttpChatProvider::complete(const ChatRequest& request) {
  const auto res = http_post_json(config_.endpoint + "/chat/completions", request.to_json().dump(),
                                  config_.api_key, config_.timeout);
  if (res.status < 200 || res.status >= 300) throw_for_status(res, "chat completion");
  json doc;
  try {
    doc = json::parse(res.body);
  } catch (const json::parse_error& e) {
    throw MalformedPayloadError(std::string("chat completion: response is not JSON: ") + e.what());
  }
  const json* content = nullptr;
  if (doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty()) {
    const auto& choice = doc["choices"][0];
    if (choice.contains("message") && choice["message"].contains("content")) {
      content = &choice["message"]["content"];
    }
  }
  if (!content || !content->is_string()) {
    throw MalformedPayloadError("chat completion: missing choices[0].message.content in " +
                                res.body.substr(0, 500));
  }
  return content->get<std::string>();
}

// ---------------------------------------------------------------------------

MockProvider::MockProvider(std::map<std::string, std::string> responses)
    : responses_(std::move(responses)) {}

std::unique_ptr<MockProvider> MockProvider::from_file(const std::filesystem::path& fixture) {
  json doc;
  try {
    doc = json::parse(read_text_file(fixture));
  } catch (const json::parse_error& e) {
    throw ParseError(fixture.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError(fixture.string() + ": mock fixture must map digest -> text");
  std::map<std::string, std::string> responses;
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_string()) throw ParseError(fixture.string() + ": value for " + key + " is not a string");
    responses.emplace(key, value.get<std::string>());
  }
  return std::make_unique<MockProvider>(std::move(responses));
}

std::string MockProvider::complete(const ChatRequest& request) {
  calls_.fetch_add(1);
  const auto key = cache_key(request);
  const auto it = responses_.find(key);
  if (it == responses_.end()) throw ProviderError("mock provider has no scripted response for digest " + key);
  return it->second;
}

ScriptedProvider::ScriptedProvider(Handler handler, std::string id)
    : handler_(std::move(handler)), id_(std::move(id)) {}

std::string ScriptedProvider::complete(const ChatRequest& request) {
  calls_.fetch_add(1);
  return handler_(request);
}

// ---------------------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const { return dir_ / (key + ".json"); }

std::optional<ChatResponse> ResponseCache::get(const std::string& key) const {
  const auto path = path_for(key);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  try {
    const json doc = json::parse(read_text_file(path));
    const auto& resp = doc.at("response");
    return ChatResponse{resp.at("content").get<std::string>(), resp.at("provider_id").get<std::string>(), true};
  } catch (const std::exception&) {
    return std::nullopt;  // unreadable entry: recompute and overwrite
  }
}

void ResponseCache::put(const std::string& key, const ChatRequest& request, const ChatResponse& response) const {
  const json doc = {{"key", key},
                    {"request", request.to_json()},
                    {"response", {{"content", response.content}, {"provider_id", response.provider_id}}}};
  write_file_atomic(path_for(key), doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Provider> provider, GatewayOptions options)
    : provider_(std::move(provider)),
      options_(std::move(options)),
      in_flight_(std::max(1, options_.concurrency)) {
  if (!provider_) throw PreconditionError("gateway needs a provider");
  if (options_.cache_dir) cache_.emplace(*options_.cache_dir);
}

ChatResponse Gateway::complete(const ChatRequest& request) {
  request.validate();
  requests_.fetch_add(1);
  const auto key = cache_key(request);
  if (cache_) {
    if (auto hit = cache_->get(key)) {
      cache_hits_.fetch_add(1);
      return *hit;
    }
  }
  in_flight_.acquire();
  std::string content;
  try {
    content = with_retries(options_.retry, attempts_, [&] { return provider_->complete(request); });
  } catch (...) {
    in_flight_.release();
    throw;
  }
  in_flight_.release();
  if (content.empty()) throw MalformedPayloadError("provider returned empty content");
  successes_.fetch_add(1);
  ChatResponse response{std::move(content), provider_->id(), false};
  if (cache_) cache_->put(key, request, response);
  return response;
}

GatewayStats Gateway::stats() const {
  return {requests_.load(), cache_hits_.load(), attempts_.load(), successes_.load()};
}

}  // namespace kclab::llm
