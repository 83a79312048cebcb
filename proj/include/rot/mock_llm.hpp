#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rot/embedding.hpp"
#include "rot/errors.hpp"
#include "rot/llm_client.hpp"
#include "rot/prompt.hpp"

namespace rot::mock {

/// One scripted reply. Match fields are AND-ed; the first matching rule wins.
struct Rule {
  std::optional<PromptMode> mode;
  /// Substring of the user turn.
  std::optional<std::string> contains;

  std::string text;
  std::string finish_reason = "stop";
  /// Absent counts are filled with the chars/4 estimate unless omit_usage is set.
  std::optional<std::uint64_t> prompt_tokens;
  std::optional<std::uint64_t> completion_tokens;
  bool omit_usage = false;
  int status = 200;
  /// Sleep before the first byte of the body.
  int delay_ms = 0;
  /// The first `stall_times` matching requests sleep `stall_ms` before answering.
  int stall_times = 0;
  int stall_ms = 0;
};

struct Script {
  std::vector<Rule> rules;
  std::size_t embedding_dim = 64;
  std::uint64_t embedding_seed = 0;
  std::size_t chunk_chars = 64;
};

inline Rule rule_from_json(const nlohmann::json& j) {
  Rule r;
  if (j.contains("mode")) r.mode = prompt_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("contains")) r.contains = j.at("contains").get<std::string>();
  r.text = j.value("text", std::string());
  r.finish_reason = j.value("finish_reason", r.finish_reason);
  if (j.contains("prompt_tokens")) r.prompt_tokens = j.at("prompt_tokens").get<std::uint64_t>();
  if (j.contains("completion_tokens")) r.completion_tokens = j.at("completion_tokens").get<std::uint64_t>();
  r.omit_usage = j.value("omit_usage", false);
  r.status = j.value("status", 200);
  r.delay_ms = j.value("delay_ms", 0);
  r.stall_times = j.value("stall_times", 0);
  r.stall_ms = j.value("stall_ms", 0);
  return r;
}

/// JSON script: {"rules": [...], "embedding": {"dim", "seed"}, "chunk_chars"}.
/// A rule may name a `text_file`, resolved relative to `base_dir`.
inline Script script_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  Script s;
  for (const auto& rj : j.at("rules")) {
    Rule r = rule_from_json(rj);
    if (rj.contains("text_file")) {
      const auto path = base_dir / rj.at("text_file").get<std::string>();
      std::ifstream in(path, std::ios::binary);
      if (!in) throw Error("mock script: cannot open " + path.string());
      r.text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    s.rules.push_back(std::move(r));
  }
  if (j.contains("embedding")) {
    s.embedding_dim = j["embedding"].value("dim", s.embedding_dim);
    s.embedding_seed = j["embedding"].value("seed", s.embedding_seed);
  }
  s.chunk_chars = j.value("chunk_chars", s.chunk_chars);
  if (s.chunk_chars == 0) throw ConfigError("mock script: chunk_chars must be positive");
  return s;
}

inline Script load_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return script_from_json(nlohmann::json::parse(in), path.parent_path());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Mode implied by a chat request body.
inline PromptMode infer_mode(const nlohmann::json& body) {
  const auto& msgs = body.at("messages");
  if (!msgs.empty() && msgs.back().value("role", "") == "assistant") return PromptMode::RoT_TI;
  for (const auto& m : msgs)
    if (m.value("role", "") == "user" && m.value("content", "").starts_with(prompts::kTemplateInstruction))
      return PromptMode::RoT;
  return PromptMode::CoT;
}

/// OpenAI-compatible stand-in on 127.0.0.1 with an ephemeral port.
class Server {
 public:
  /// Port 0 picks a free ephemeral port.
  explicit Server(Script script, int port = 0)
      : script_(std::move(script)),
        stall_counts_(script_.rules.size()),
        embedder_(script_.embedding_dim, script_.embedding_seed) {
    for (auto& c : stall_counts_) c = 0;
    server_.Post("/v1/chat/completions",
                 [this](const httplib::Request& req, httplib::Response& res) { chat(req, res); });
    server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) { embeddings(req, res); });
    if (port > 0)
      port_ = server_.bind_to_port("127.0.0.1", port) ? port : -1;
    else
      port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw TransportError("mock server: cannot bind 127.0.0.1" + (port > 0 ? ":" + std::to_string(port) : ""));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  ~Server() { stop(); }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  /// Parsed bodies of every chat request received, in arrival order.
  std::vector<nlohmann::json> chat_requests() const {
    std::lock_guard lock(mutex_);
    return chat_requests_;
  }
  std::size_t chat_request_count() const {
    std::lock_guard lock(mutex_);
    return chat_requests_.size();
  }

 private:
  static void sleep_ms(int ms) {
    if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  }

  static void error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", {{"message", message}}}}.dump(), "application/json");
  }

  void chat(const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
      body.at("messages");
    } catch (const nlohmann::json::exception& e) {
      return error(res, 400, std::string("bad request: ") + e.what());
    }
    {
      std::lock_guard lock(mutex_);
      chat_requests_.push_back(body);
    }
    const PromptMode mode = infer_mode(body);
    std::string user, prompt_text;
    for (const auto& m : body["messages"]) {
      const std::string c = m.value("content", "");
      prompt_text += c;
      if (m.value("role", "") == "user") user += c;
    }

    const Rule* rule = nullptr;
    std::size_t rule_index = 0;
    for (std::size_t i = 0; i < script_.rules.size() && !rule; ++i) {
      const Rule& r = script_.rules[i];
      if (r.mode && *r.mode != mode) continue;
      if (r.contains && user.find(*r.contains) == std::string::npos) continue;
      rule = &r;
      rule_index = i;
    }
    if (!rule) return error(res, 404, std::string("no scripted reply for mode ") + to_string(mode));
    if (stall_counts_[rule_index].fetch_add(1) < rule->stall_times) sleep_ms(rule->stall_ms);
    if (rule->status < 200 || rule->status >= 300) return error(res, rule->status, "scripted failure");

    const std::string model = body.value("model", "mock");
    nlohmann::json usage = nullptr;
    if (!rule->omit_usage) {
      const auto in = rule->prompt_tokens.value_or(estimate_tokens(prompt_text));
      const auto out = rule->completion_tokens.value_or(estimate_tokens(rule->text));
      usage = {{"prompt_tokens", in}, {"completion_tokens", out}, {"total_tokens", in + out}};
    }

    if (!body.value("stream", false)) {
      sleep_ms(rule->delay_ms);
      nlohmann::json reply = {
          {"id", "mock-1"},
          {"object", "chat.completion"},
          {"model", model},
          {"choices",
           {{{"index", 0},
             {"message", {{"role", "assistant"}, {"content", rule->text}}},
             {"finish_reason", rule->finish_reason}}}}};
      if (!usage.is_null()) reply["usage"] = usage;
      res.set_content(reply.dump(), "application/json");
      return;
    }

    std::string events;
    auto event = [&](const nlohmann::json& j) { events += "data: " + j.dump() + "\n\n"; };
    for (std::size_t off = 0; off < rule->text.size(); off += script_.chunk_chars)
      event({{"model", model},
             {"choices",
              {{{"index", 0}, {"delta", {{"content", rule->text.substr(off, script_.chunk_chars)}}},
                {"finish_reason", nullptr}}}}});
    event({{"model", model}, {"choices", {{{"index", 0}, {"delta", nlohmann::json::object()},
                                            {"finish_reason", rule->finish_reason}}}}});
    if (!usage.is_null()) event({{"model", model}, {"choices", nlohmann::json::array()}, {"usage", usage}});
    events += "data: [DONE]\n\n";
    const int delay = rule->delay_ms;
    res.set_chunked_content_provider("text/event-stream",
                                     [events = std::move(events), delay](std::size_t, httplib::DataSink& sink) {
                                       sleep_ms(delay);
                                       sink.write(events.data(), events.size());
                                       sink.done();
                                       return true;
                                     });
  }

  void embeddings(const httplib::Request& req, httplib::Response& res) {
    std::vector<std::string> inputs;
    std::string model;
    try {
      const auto body = nlohmann::json::parse(req.body);
      model = body.value("model", "mock-embed");
      const auto& in = body.at("input");
      if (in.is_string())
        inputs.push_back(in.get<std::string>());
      else
        inputs = in.get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      return error(res, 400, std::string("bad request: ") + e.what());
    }
    nlohmann::json data = nlohmann::json::array();
    // reversed on purpose so clients must honour the index field
    for (std::size_t i = inputs.size(); i-- > 0;)
      data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", embedder_.raw(inputs[i])}});
    res.set_content(nlohmann::json{{"object", "list"}, {"model", model}, {"data", data}}.dump(), "application/json");
  }

  Script script_;
  std::vector<std::atomic<int>> stall_counts_;
  HashEmbedder embedder_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  mutable std::mutex mutex_;
  std::vector<nlohmann::json> chat_requests_;
};

}  // namespace rot::mock
