#pragma once

#include <chrono>
#include <string>

namespace kclab {

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// POSTs a JSON body to an absolute http(s) URL. Connection-level failures
/// raise TransientError; any HTTP status is returned to the caller.
HttpResponse http_post_json(const std::string& url, const std::string& body,
                            const std::string& bearer_token, std::chrono::seconds timeout);

/// Maps a non-2xx status onto the gateway error hierarchy and throws:
/// 401/403 -> AuthenticationError, 408/429/5xx -> TransientError,
/// anything else -> ProviderError carrying the body verbatim.
[[noreturn]] void throw_for_status(const HttpResponse& response, const std::string& what);

}  // namespace kclab
