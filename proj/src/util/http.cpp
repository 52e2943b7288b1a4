#include "kclab/util/http.hpp"

#include <httplib.h>

#include <regex>

#include "kclab/error.hpp"

namespace kclab {

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw PreconditionError("invalid endpoint URL '" + url + "'");
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

}  // namespace

HttpResponse http_post_json(const std::string& url, const std::string& body,
                            const std::string& bearer_token, std::chrono::seconds timeout) {
  const auto parsed = split_url(url);
  httplib::Client client(parsed.origin);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);
  auto res = client.Post(parsed.path, headers, body, "application/json");
  if (!res) {
    throw TransientError("POST " + url + " failed: " + httplib::to_string(res.error()));
  }
  return {res->status, res->body};
}

void throw_for_status(const HttpResponse& response, const std::string& what) {
  const std::string msg = what + ": HTTP " + std::to_string(response.status) + ": " + response.body;
  if (response.status == 401 || response.status == 403) throw AuthenticationError(msg);
  if (response.status == 408 || response.status == 429 || response.status >= 500) throw TransientError(msg);
  throw ProviderError(msg);
}

}  // namespace kclab
