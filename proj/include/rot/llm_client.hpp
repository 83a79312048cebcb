#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "rot/answer.hpp"
#include "rot/errors.hpp"
#include "rot/http.hpp"
#include "rot/prompt.hpp"

namespace rot {

/// Seconds since an arbitrary origin.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now_s() = 0;
};

class SteadyClock final : public Clock {
 public:
  double now_s() override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  }
};

/// Advances by a fixed step on every read. Makes latencies reproducible in tests.
class SteppingClock final : public Clock {
 public:
  explicit SteppingClock(double step_s = 0.001) : step_ns_(static_cast<std::int64_t>(std::llround(step_s * 1e9))) {}
  double now_s() override { return static_cast<double>(ticks_.fetch_add(step_ns_) + step_ns_) / 1e9; }

 private:
  std::int64_t step_ns_;
  std::atomic<std::int64_t> ticks_{0};
};

struct LatencyBreakdown {
  double retrieval_s = 0.0;
  double prefill_s = 0.0;
  double decode_s = 0.0;
  double total_s = 0.0;
  bool operator==(const LatencyBreakdown&) const = default;
};

inline void to_json(nlohmann::json& j, const LatencyBreakdown& l) {
  j = {{"retrieval_s", l.retrieval_s}, {"prefill_s", l.prefill_s}, {"decode_s", l.decode_s}, {"total_s", l.total_s}};
}
inline void from_json(const nlohmann::json& j, LatencyBreakdown& l) {
  l.retrieval_s = j.at("retrieval_s").get<double>();
  l.prefill_s = j.at("prefill_s").get<double>();
  l.decode_s = j.at("decode_s").get<double>();
  l.total_s = j.at("total_s").get<double>();
}

/// How the RoT_TI partial assistant turn is sent.
enum class PrefillStyle {
  /// vLLM chat extension: continue_final_message=true, add_generation_prompt=false.
  Vllm,
  /// Trailing assistant message only, for servers that continue it implicitly.
  Plain,
};

struct ChatConfig {
  http::Endpoint endpoint;
  std::string model;
  double temperature = 0.0;
  std::uint64_t max_tokens = 16384;
  std::optional<std::uint64_t> seed;
  /// Stream the completion so time-to-first-token splits prefill from decode.
  bool stream = true;
  PrefillStyle prefill_style = PrefillStyle::Vllm;
};

/// Endpoint URL and key from ROT_LLM_BASE_URL / ROT_LLM_API_KEY (OPENAI_* as fallback).
inline http::Endpoint endpoint_from_env(http::Endpoint ep = {}) {
  auto get = [](const char* a, const char* b) -> const char* {
    if (const char* v = std::getenv(a); v && *v) return v;
    if (const char* v = std::getenv(b); v && *v) return v;
    return nullptr;
  };
  if (const char* v = get("ROT_LLM_BASE_URL", "OPENAI_BASE_URL")) ep.base_url = v;
  if (const char* v = get("ROT_LLM_API_KEY", "OPENAI_API_KEY")) ep.api_key = v;
  return ep;
}

struct LlmResponse {
  std::string text;
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;
  /// Counts came from the chars/4 estimate because the server sent no usage.
  bool tokens_estimated = false;
  LatencyBreakdown latency;
  std::string model_id;
  std::string finish_reason;
  bool oot = false;
  int attempts = 0;
};

/// Rough token count used only when the server reports no usage: ceil(bytes / 4).
inline std::uint64_t estimate_tokens(std::string_view s) { return (s.size() + 3) / 4; }

inline nlohmann::json chat_request_body(const PromptBundle& bundle, const ChatConfig& cfg) {
  nlohmann::json messages = nlohmann::json::array();
  messages.push_back({{"role", "user"}, {"content", bundle.user_text}});
  nlohmann::json body = {{"model", cfg.model},
                         {"temperature", cfg.temperature},
                         {"max_tokens", cfg.max_tokens},
                         {"stream", cfg.stream}};
  if (bundle.think_prefix) {
    messages.push_back({{"role", "assistant"}, {"content", bundle.assistant_prefill()}});
    if (cfg.prefill_style == PrefillStyle::Vllm) {
      body["continue_final_message"] = true;
      body["add_generation_prompt"] = false;
    }
  }
  body["messages"] = std::move(messages);
  if (cfg.stream) body["stream_options"] = {{"include_usage", true}};
  if (cfg.seed) body["seed"] = *cfg.seed;
  return body;
}

namespace detail {

struct ChatAccumulator {
  std::string text;
  std::string finish_reason;
  std::string model;
  std::optional<std::uint64_t> prompt_tokens;
  std::optional<std::uint64_t> completion_tokens;

  void absorb_usage(const nlohmann::json& j) {
    if (!j.contains("usage") || !j["usage"].is_object()) return;
    const auto& u = j["usage"];
    if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number_unsigned())
      prompt_tokens = u["prompt_tokens"].get<std::uint64_t>();
    if (u.contains("completion_tokens") && u["completion_tokens"].is_number_unsigned())
      completion_tokens = u["completion_tokens"].get<std::uint64_t>();
  }

  // reasoning_content comes from servers that split the think span out of content
  void absorb_message(const nlohmann::json& m) {
    for (const char* key : {"reasoning_content", "content"})
      if (m.contains(key) && m[key].is_string()) text += m[key].get<std::string>();
  }

  void absorb_choice(const nlohmann::json& c, const char* message_key) {
    if (c.contains(message_key) && c[message_key].is_object()) absorb_message(c[message_key]);
    if (c.contains("finish_reason") && c["finish_reason"].is_string())
      finish_reason = c["finish_reason"].get<std::string>();
  }

  void absorb(const nlohmann::json& j, const char* message_key) {
    if (j.contains("model") && j["model"].is_string()) model = j["model"].get<std::string>();
    if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty())
      absorb_choice(j["choices"][0], message_key);
    absorb_usage(j);
  }
};

}  // namespace detail

/// One chat completion. TransportError is retried with backoff; after the last
/// attempt it propagates, as does HttpStatusError. Latency is measured on `clock`.
inline LlmResponse complete(const PromptBundle& bundle, const ChatConfig& cfg, Clock& clock) {
  if (cfg.model.empty()) throw ConfigError("chat model id not configured");
  if (cfg.max_tokens == 0) throw ConfigError("max_tokens must be positive");
  const nlohmann::json body = chat_request_body(bundle, cfg);

  LlmResponse out;
  detail::ChatAccumulator acc;
  // total covers every attempt; prefill/decode split comes from the last one
  double start = 0, attempt_start = 0, first_token = 0;
  http::with_retry(cfg.endpoint, [&](int attempt) {
    out.attempts = attempt;
    acc = {};
    attempt_start = clock.now_s();
    if (attempt == 1) start = attempt_start;
    first_token = -1;
    if (!cfg.stream) {
      const std::string raw = http::post_json_once(cfg.endpoint, "/chat/completions", body);
      try {
        acc.absorb(nlohmann::json::parse(raw), "message");
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("chat response is not JSON: ") + e.what() + "; body: " + http::excerpt(raw));
      }
      return 0;
    }
    std::string pending;
    std::optional<std::string> bad_event;
    http::post_json_once(cfg.endpoint, "/chat/completions", body, [&](std::string_view chunk) {
      if (first_token < 0) first_token = clock.now_s();
      pending.append(chunk);
      for (std::size_t nl; (nl = pending.find('\n')) != std::string::npos;) {
        std::string line = pending.substr(0, nl);
        pending.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.starts_with("data:")) continue;
        std::string_view payload = text::trim(std::string_view(line).substr(5));
        if (payload == "[DONE]") return false;
        try {
          acc.absorb(nlohmann::json::parse(payload), "delta");
        } catch (const nlohmann::json::exception& e) {
          bad_event = e.what();  // not thrown through the HTTP library
          return false;
        }
      }
      return true;
    });
    if (bad_event) throw ParseError("bad stream event: " + *bad_event);
    return 0;
  });
  const double end = clock.now_s();

  out.text = std::move(acc.text);
  out.finish_reason = acc.finish_reason;
  out.model_id = acc.model.empty() ? cfg.model : acc.model;
  if (acc.prompt_tokens && acc.completion_tokens) {
    out.input_tokens = *acc.prompt_tokens;
    out.output_tokens = *acc.completion_tokens;
  } else {
    out.input_tokens = estimate_tokens(bundle.user_text) + estimate_tokens(bundle.assistant_prefill());
    out.output_tokens = estimate_tokens(out.text);
    out.tokens_estimated = true;
  }
  out.oot = out.finish_reason == "length" && !extract_answer(out.text);
  // non-streaming requests cannot separate prefill, so it is all decode
  out.latency.prefill_s = first_token >= 0 ? first_token - attempt_start : 0.0;
  out.latency.decode_s = end - attempt_start - out.latency.prefill_s;
  out.latency.total_s = end - start;
  return out;
}

inline LlmResponse complete(const PromptBundle& bundle, const ChatConfig& cfg) {
  SteadyClock clock;
  return complete(bundle, cfg, clock);
}

}  // namespace rot
