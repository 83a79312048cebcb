#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rot/errors.hpp"

namespace rot::http {

/// Connection settings for an OpenAI-compatible service.
struct Endpoint {
  /// Scheme, host, optional port and path prefix, e.g. `http://127.0.0.1:8000/v1`.
  std::string base_url;
  std::string api_key;
  double connect_timeout_s = 10.0;
  double read_timeout_s = 600.0;
  int max_attempts = 3;
  double backoff_initial_s = 0.5;
  double backoff_factor = 2.0;
};

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash, may be empty
};

inline SplitUrl split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw ConfigError("endpoint URL needs a scheme: " + std::string(url));
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = std::string(url.substr(0, path_start));
  if (path_start != std::string_view::npos) {
    out.prefix = std::string(url.substr(path_start));
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  }
  return out;
}

inline std::string excerpt(std::string_view body, std::size_t limit = 300) {
  return std::string(body.substr(0, limit)) + (body.size() > limit ? "..." : "");
}

/// Runs `attempt(n)` until it returns without TransportError, sleeping with
/// exponential backoff between tries. Other exceptions propagate immediately.
template <typename Fn>
auto with_retry(const Endpoint& ep, Fn&& attempt) -> decltype(attempt(1)) {
  const int attempts = ep.max_attempts < 1 ? 1 : ep.max_attempts;
  double delay = ep.backoff_initial_s;
  for (int n = 1;; ++n) {
    try {
      return attempt(n);
    } catch (const TransportError&) {
      if (n >= attempts) throw;
    }
    if (delay > 0) std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    delay *= ep.backoff_factor;
  }
}

/// Single POST of a JSON body. `on_chunk`, when set, receives the response body
/// incrementally (return false to abort). Throws TransportError on network
/// failure and HttpStatusError on a non-2xx status.
inline std::string post_json_once(const Endpoint& ep, std::string_view path, const nlohmann::json& body,
                                  const std::function<bool(std::string_view)>& on_chunk = {}) {
  const auto url = split_url(ep.base_url);
  httplib::Client client(url.origin);
  if (!client.is_valid()) throw ConfigError("unsupported endpoint URL: " + ep.base_url);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(ep.connect_timeout_s)));
  client.set_read_timeout(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(ep.read_timeout_s)));
  client.set_write_timeout(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(ep.read_timeout_s)));

  httplib::Request req;
  req.method = "POST";
  req.path = url.prefix + std::string(path);
  req.body = body.dump();
  req.set_header("Content-Type", "application/json");
  if (!ep.api_key.empty()) req.set_header("Authorization", "Bearer " + ep.api_key);

  std::string collected;
  int status = 0;
  req.response_handler = [&](const httplib::Response& res) {
    status = res.status;
    return true;
  };
  req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
    std::string_view chunk(data, len);
    if (status >= 200 && status < 300 && on_chunk) return on_chunk(chunk);
    collected.append(chunk);
    return true;
  };

  auto result = client.send(req);
  if (!result) {
    if (result.error() == httplib::Error::Canceled && status >= 200 && status < 300) return collected;
    throw TransportError("POST " + ep.base_url + std::string(path) + ": " + httplib::to_string(result.error()));
  }
  if (status == 0) status = result->status;
  if (status < 200 || status >= 300) throw HttpStatusError(status, excerpt(collected));
  return collected;
}

inline std::string post_json(const Endpoint& ep, std::string_view path, const nlohmann::json& body) {
  return with_retry(ep, [&](int) { return post_json_once(ep, path, body); });
}

}  // namespace rot::http
