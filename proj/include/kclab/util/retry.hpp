#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <string>
#include <thread>

#include "kclab/error.hpp"

namespace kclab {

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds backoff_base{500};
};

/// Runs `fn` up to 1 + max_retries times, retrying only on TransientError,
/// sleeping backoff_base * 2^k between attempts. `attempts` counts every call.
template <class Fn>
auto with_retries(const RetryPolicy& policy, std::atomic<long>& attempts, Fn&& fn) -> decltype(fn()) {
  std::string last_error;
  for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
    if (attempt > 0 && policy.backoff_base.count() > 0) {
      std::this_thread::sleep_for(policy.backoff_base * (1LL << std::min(attempt - 1, 16)));
    }
    attempts.fetch_add(1);
    try {
      return fn();
    } catch (const TransientError& e) {
      last_error = e.what();
    }
  }
  throw RetriesExhaustedError("provider failed after " + std::to_string(policy.max_retries + 1) +
                              " attempt(s): " + last_error);
}

}  // namespace kclab
