#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "kclab/error.hpp"
#include "kclab/llm/gateway.hpp"

namespace kclab {

class PromptLibrary;

namespace llm {

/// Everything a stage needs to issue prompts: the gateway, the templates and
/// the model settings that go into every request.
struct LlmContext {
  Gateway& gateway;
  const PromptLibrary& prompts;
  std::string model;
  int max_tokens = kDefaultMaxTokens;

  ChatRequest request(std::vector<Message> messages) const;
};

struct ExtractedJson {
  nlohmann::json value;
  std::string prefix;  // text before the block, trimmed
};

enum class JsonShape { array, object };

/// Finds the structured answer in free text: the last ```json (or bare ```)
/// fence whose body parses to the wanted shape, else the last balanced
/// top-level [...] / {...} span that does.
std::optional<ExtractedJson> extract_json(std::string_view text, JsonShape shape);

/// Sends `request`; if `parse` throws ParseError, sends one follow-up that
/// appends the bad answer and `reminder` (with {error} filled in) and parses
/// again. A second failure propagates as ParseError.
template <class T>
T complete_structured(const LlmContext& ctx, ChatRequest request, const std::string& reminder,
                      const std::function<T(const std::string&)>& parse);

std::string render_reminder(const std::string& reminder, const std::string& error);

template <class T>
T complete_structured(const LlmContext& ctx, ChatRequest request, const std::string& reminder,
                      const std::function<T(const std::string&)>& parse) {
  const auto first = ctx.gateway.complete(request);
  try {
    return parse(first.content);
  } catch (const ParseError& e) {
    request.messages.push_back({Role::assistant, first.content});
    request.messages.push_back({Role::user, render_reminder(reminder, e.what())});
  }
  const auto second = ctx.gateway.complete(request);
  try {
    return parse(second.content);
  } catch (const ParseError& e) {
    throw ParseError(std::string("unparseable response after retry: ") + e.what());
  }
}

}  // namespace llm
}  // namespace kclab
