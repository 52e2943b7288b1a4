#include "kclab/llm/structured.hpp"

#include "kclab/prompts.hpp"
#include "kclab/util/format.hpp"

using nlohmann::json;

namespace kclab::llm {

ChatRequest LlmContext::request(std::vector<Message> messages) const {
  ChatRequest r;
  r.model = model;
  r.messages = std::move(messages);
  r.max_tokens = max_tokens;
  return r;
}

namespace {

bool shape_matches(const json& j, JsonShape shape) {
  return shape == JsonShape::array ? j.is_array() : j.is_object();
}

std::optional<json> try_parse(std::string_view body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error&) {
    return std::nullopt;
  }
}

// End index (exclusive) of the balanced bracket span starting at `open`,
// honoring JSON string literals. npos when unbalanced.
std::size_t balanced_end(std::string_view text, std::size_t open) {
  const char o = text[open];
  const char c = o == '[' ? ']' : '}';
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_string) {
      if (ch == '\\') ++i;
      else if (ch == '"') in_string = false;
      continue;
    }
    if (ch == '"') in_string = true;
    else if (ch == o) ++depth;
    else if (ch == c && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

}  // namespace

std::optional<ExtractedJson> extract_json(std::string_view text, JsonShape shape) {
  // Fenced blocks, last one wins.
  std::optional<ExtractedJson> found;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("```", pos);
    if (open == std::string_view::npos) break;
    const auto line_end = text.find('\n', open);
    if (line_end == std::string_view::npos) break;
    const auto close = text.find("```", line_end + 1);
    if (close == std::string_view::npos) break;
    const auto body = text.substr(line_end + 1, close - line_end - 1);
    if (auto j = try_parse(body); j && shape_matches(*j, shape)) {
      found = ExtractedJson{std::move(*j), trim(text.substr(0, open))};
    }
    pos = close + 3;
  }
  if (found) return found;

  const char opener = shape == JsonShape::array ? '[' : '{';
  for (std::size_t i = text.size(); i-- > 0;) {
    if (text[i] != opener) continue;
    const auto end = balanced_end(text, i);
    if (end == std::string_view::npos) continue;
    if (auto j = try_parse(text.substr(i, end - i)); j && shape_matches(*j, shape)) {
      // Prefer the outermost span that parses: keep scanning left for an
      // enclosing bracket that also ends past this one.
      ExtractedJson best{std::move(*j), trim(text.substr(0, i))};
      for (std::size_t k = i; k-- > 0;) {
        if (text[k] != opener) continue;
        const auto e2 = balanced_end(text, k);
        if (e2 == std::string_view::npos || e2 < end) continue;
        if (auto j2 = try_parse(text.substr(k, e2 - k)); j2 && shape_matches(*j2, shape)) {
          best = ExtractedJson{std::move(*j2), trim(text.substr(0, k))};
        }
      }
      return best;
    }
  }
  return std::nullopt;
}

std::string render_reminder(const std::string& reminder, const std::string& error) {
  return render_template(reminder, {{"error", error}});
}

}  // namespace kclab::llm
