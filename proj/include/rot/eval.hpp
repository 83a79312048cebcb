#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "rot/answer.hpp"
#include "rot/corpus.hpp"
#include "rot/embedding.hpp"
#include "rot/errors.hpp"
#include "rot/graph.hpp"
#include "rot/hash.hpp"
#include "rot/llm_client.hpp"
#include "rot/log.hpp"
#include "rot/prompt.hpp"
#include "rot/retrieval.hpp"

namespace rot {

/// One (problem, mode) sample. Prompt and response text are kept so the scored
/// fields can be recomputed offline.
struct RunRecord {
  std::string problem_id;
  std::string dataset;
  PromptMode mode = PromptMode::CoT;
  std::string model_id;
  std::string gold_answer;
  std::string prompt;
  std::optional<std::string> think_prefix;
  std::size_t prompt_chars = 0;
  std::string response_text;
  std::string finish_reason;
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;
  bool tokens_estimated = false;
  double cost_usd = 0.0;
  LatencyBreakdown latency;
  std::optional<std::string> extracted_answer;
  bool correct = false;
  bool oot = false;
  bool failed = false;
  /// The failure was network-level; such samples are retried on resume.
  bool transport_failure = false;
  /// A RoT mode ran as CoT because retrieval found no template.
  bool fallback = false;
  std::string error;
  std::size_t path_switches = 0;
  std::optional<std::vector<NodeId>> template_path;
  std::optional<std::string> termination_reason;

  bool operator==(const RunRecord&) const = default;
};

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json path = nullptr;
  if (r.template_path) {
    path = nlohmann::json::array();
    for (const auto& id : *r.template_path) path.push_back(to_json(id));
  }
  return nlohmann::json{
      {"problem_id", r.problem_id},
      {"dataset", r.dataset},
      {"mode", to_string(r.mode)},
      {"model_id", r.model_id},
      {"gold_answer", r.gold_answer},
      {"prompt", r.prompt},
      {"think_prefix", r.think_prefix ? nlohmann::json(*r.think_prefix) : nlohmann::json(nullptr)},
      {"prompt_chars", r.prompt_chars},
      {"response_text", r.response_text},
      {"finish_reason", r.finish_reason},
      {"input_tokens", r.input_tokens},
      {"output_tokens", r.output_tokens},
      {"tokens_estimated", r.tokens_estimated},
      {"cost_usd", r.cost_usd},
      {"latency", r.latency},
      {"extracted_answer", r.extracted_answer ? nlohmann::json(*r.extracted_answer) : nlohmann::json(nullptr)},
      {"correct", r.correct},
      {"oot", r.oot},
      {"failed", r.failed},
      {"transport_failure", r.transport_failure},
      {"fallback", r.fallback},
      {"error", r.error},
      {"path_switches", r.path_switches},
      {"template_path", std::move(path)},
      {"termination_reason",
       r.termination_reason ? nlohmann::json(*r.termination_reason) : nlohmann::json(nullptr)},
  };
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  auto opt_string = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<std::string>();
  };
  RunRecord r;
  r.problem_id = j.at("problem_id").get<std::string>();
  r.dataset = j.value("dataset", "");
  r.mode = prompt_mode_from_string(j.at("mode").get<std::string>());
  r.model_id = j.at("model_id").get<std::string>();
  r.gold_answer = j.value("gold_answer", "");
  r.prompt = j.value("prompt", "");
  r.think_prefix = opt_string("think_prefix");
  r.prompt_chars = j.at("prompt_chars").get<std::size_t>();
  r.response_text = j.value("response_text", "");
  r.finish_reason = j.value("finish_reason", "");
  r.input_tokens = j.at("input_tokens").get<std::uint64_t>();
  r.output_tokens = j.at("output_tokens").get<std::uint64_t>();
  r.tokens_estimated = j.value("tokens_estimated", false);
  r.cost_usd = j.at("cost_usd").get<double>();
  r.latency = j.at("latency").get<LatencyBreakdown>();
  r.extracted_answer = opt_string("extracted_answer");
  r.correct = j.at("correct").get<bool>();
  r.oot = j.at("oot").get<bool>();
  r.failed = j.value("failed", false);
  r.transport_failure = j.value("transport_failure", false);
  r.fallback = j.value("fallback", false);
  r.error = j.value("error", "");
  r.path_switches = j.at("path_switches").get<std::size_t>();
  if (j.contains("template_path") && !j["template_path"].is_null()) {
    std::vector<NodeId> path;
    for (const auto& n : j["template_path"]) path.push_back(node_id_from_json(n));
    r.template_path = std::move(path);
  }
  r.termination_reason = opt_string("termination_reason");
  return r;
}

inline std::vector<RunRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<RunRecord> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(run_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), n);
    } catch (const ConfigError& e) {
      throw ParseError(path.string() + ": " + e.what(), n);
    }
  }
  return out;
}

inline void save_records(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

/// Fills the fields derived from the response: extracted answer, correctness,
/// OOT, path switches and cost. Failed samples get zero tokens and cost.
inline void score_record(RunRecord& r, const PriceTable& prices,
                         const std::vector<std::string>& markers = default_switch_markers()) {
  if (r.failed) {
    r.input_tokens = r.output_tokens = 0;
    r.cost_usd = 0.0;
    r.extracted_answer.reset();
    r.correct = r.oot = false;
    r.path_switches = 0;
    return;
  }
  r.extracted_answer = extract_answer(r.response_text);
  r.oot = r.finish_reason == "length" && !r.extracted_answer;
  r.correct = !r.oot && r.extracted_answer && answers_match(*r.extracted_answer, r.gold_answer);
  r.path_switches = count_path_switches(r.response_text, markers);
  r.cost_usd = cost_usd(r.input_tokens, r.output_tokens, r.model_id, prices);
}

/// Re-derives the scored fields from the persisted prompt and response.
inline RunRecord replay_record(RunRecord r, const PriceTable& prices,
                               const std::vector<std::string>& markers = default_switch_markers()) {
  r.prompt_chars = r.prompt.size() + (r.think_prefix ? r.think_prefix->size() + kThinkOpen.size() + 1 : 0);
  score_record(r, prices, markers);
  return r;
}

struct EvalConfig {
  std::vector<PromptMode> modes{PromptMode::CoT, PromptMode::RoT, PromptMode::RoT_TI};
  ChatConfig chat;
  RetrievalConfig retrieval;
  PriceTable prices = default_price_table();
  std::vector<std::string> switch_markers = default_switch_markers();
  std::size_t concurrency = 4;
  /// When set, each sample is timed on its own SteppingClock with this step,
  /// so latencies (and hence records) are reproducible.
  std::optional<double> synthetic_clock_step;
  /// records.jsonl and manifest.json go here; empty keeps everything in memory.
  std::filesystem::path out_dir;
  bool resume = false;
  std::size_t max_consecutive_transport_failures = 5;
};

/// Hash of every setting that changes record content.
inline std::string eval_config_hash(const EvalConfig& cfg) {
  nlohmann::json modes = nlohmann::json::array();
  for (auto m : cfg.modes) modes.push_back(to_string(m));
  const nlohmann::json j = {
      {"modes", modes},
      {"model", cfg.chat.model},
      {"temperature", cfg.chat.temperature},
      {"max_tokens", cfg.chat.max_tokens},
      {"seed", cfg.chat.seed ? nlohmann::json(*cfg.chat.seed) : nlohmann::json(nullptr)},
      {"stream", cfg.chat.stream},
      {"prefill_style", cfg.chat.prefill_style == PrefillStyle::Vllm ? "vllm" : "plain"},
      {"alpha", cfg.retrieval.alpha},
      {"tau_edge", cfg.retrieval.tau_edge},
      {"tau_term", cfg.retrieval.tau_term},
      {"l_max", cfg.retrieval.l_max},
      {"semantic_weight", cfg.retrieval.semantic_weight},
      {"flow_weight", cfg.retrieval.flow_weight},
      {"markers", cfg.switch_markers},
      {"synthetic_clock_step",
       cfg.synthetic_clock_step ? nlohmann::json(*cfg.synthetic_clock_step) : nlohmann::json(nullptr)},
  };
  return to_hex(fnv1a64(j.dump()));
}

struct EvalInputs {
  std::span<const EvalProblem> problems;
  /// Needed when any RoT mode is requested.
  const ThoughtGraph* graph = nullptr;
  /// Embeds problem statements; must match the graph's provider.
  EmbeddingProvider* query_embedder = nullptr;
  EmbeddingCache* query_cache = nullptr;
};

namespace detail {

inline std::string record_key(const std::string& problem_id, PromptMode mode) {
  return problem_id + '\x1f' + to_string(mode);
}

inline nlohmann::json build_manifest(const EvalInputs& in, const EvalConfig& cfg) {
  nlohmann::json modes = nlohmann::json::array();
  for (auto m : cfg.modes) modes.push_back(to_string(m));
  return {{"format", "rot-run-manifest"},
          {"version", 1},
          {"config_hash", eval_config_hash(cfg)},
          {"graph_fingerprint", in.graph ? nlohmann::json(to_hex(in.graph->fingerprint())) : nlohmann::json(nullptr)},
          {"price_table_hash", cfg.prices.digest()},
          {"model", cfg.chat.model},
          {"modes", modes},
          {"problems", in.problems.size()}};
}

}  // namespace detail

/// Runs every problem in every mode: retrieval (timed), prompt, completion,
/// scoring. RoT modes fall back to CoT when no template is found. Records are
/// written in task order through a single appender. Throws RunAborted after
/// too many consecutive transport failures; committed records stay on disk.
inline std::vector<RunRecord> run_eval(const EvalInputs& in, const EvalConfig& cfg) {
  if (cfg.modes.empty()) throw ConfigError("no prompt modes requested");
  (void)cfg.prices.at(cfg.chat.model);
  cfg.retrieval.validate();
  const bool needs_graph = std::any_of(cfg.modes.begin(), cfg.modes.end(), [](auto m) { return m != PromptMode::CoT; });
  if (needs_graph && (!in.graph || !in.query_embedder || !in.query_cache))
    throw ConfigError("RoT modes need a graph and a query embedder");

  // query embeddings up front; a problem that cannot be embedded falls back to CoT
  std::vector<std::optional<UnitVector>> queries(in.problems.size());
  if (needs_graph) {
    std::vector<std::string> statements;
    for (const auto& p : in.problems) statements.push_back(p.statement);
    try {
      auto vecs = embed(statements, *in.query_embedder, *in.query_cache);
      for (std::size_t i = 0; i < vecs.size(); ++i) queries[i] = std::move(vecs[i]);
    } catch (const EmbeddingError& e) {
      log::warn(std::string("query embedding failed, affected problems run as CoT: ") + e.what());
      for (std::size_t i = 0; i < statements.size(); ++i)
        if (auto v = in.query_cache->find_text(statements[i])) queries[i] = std::move(*v);
    }
  }

  std::vector<RunRecord> kept;
  std::set<std::string> done;
  std::filesystem::path records_path, manifest_path;
  std::ofstream appender;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    records_path = cfg.out_dir / "records.jsonl";
    manifest_path = cfg.out_dir / "manifest.json";
    const auto manifest = detail::build_manifest(in, cfg);
    if (cfg.resume && std::filesystem::exists(records_path)) {
      if (std::filesystem::exists(manifest_path)) {
        std::ifstream m(manifest_path);
        const auto old = nlohmann::json::parse(m);
        if (old.value("config_hash", "") != manifest["config_hash"] ||
            old.value("graph_fingerprint", nlohmann::json()) != manifest["graph_fingerprint"])
          throw ConfigError("cannot resume " + cfg.out_dir.string() + ": configuration or graph changed");
      }
      for (auto& r : load_records(records_path))
        if (!r.transport_failure) {
          done.insert(detail::record_key(r.problem_id, r.mode));
          kept.push_back(std::move(r));
        }
      save_records(kept, records_path);  // drop samples that will be retried
    } else {
      save_records({}, records_path);
    }
    std::ofstream(manifest_path, std::ios::trunc) << manifest.dump(2) << '\n';
    appender.open(records_path, std::ios::binary | std::ios::app);
    if (!appender) throw Error("cannot append to " + records_path.string());
  }

  struct Task {
    std::size_t problem;
    PromptMode mode;
  };
  std::vector<Task> tasks;
  for (std::size_t p = 0; p < in.problems.size(); ++p)
    for (auto m : cfg.modes)
      if (!done.count(detail::record_key(in.problems[p].problem_id, m))) tasks.push_back({p, m});

  auto run_task = [&](const Task& t) {
    const EvalProblem& problem = in.problems[t.problem];
    std::unique_ptr<Clock> clock;
    if (cfg.synthetic_clock_step)
      clock = std::make_unique<SteppingClock>(*cfg.synthetic_clock_step);
    else
      clock = std::make_unique<SteadyClock>();

    RunRecord r;
    r.problem_id = problem.problem_id;
    r.dataset = problem.dataset;
    r.mode = t.mode;
    r.model_id = cfg.chat.model;
    r.gold_answer = problem.gold_answer;

    const double t0 = clock->now_s();
    std::optional<AssembledTemplate> assembled;
    if (t.mode != PromptMode::CoT) {
      try {
        if (!queries[t.problem]) throw NoTemplateFound("problem " + problem.problem_id + ": no query embedding");
        assembled = retrieve(*in.graph, problem, *queries[t.problem], cfg.retrieval);
        r.template_path = assembled->path;
        r.termination_reason = to_string(assembled->termination_reason);
      } catch (const NoTemplateFound& e) {
        r.fallback = true;
        r.error = e.what();
      }
    }
    const double t1 = clock->now_s();
    r.latency.retrieval_s = t1 - t0;

    const PromptBundle bundle = render_prompt(problem, assembled, r.fallback ? PromptMode::CoT : t.mode);
    r.prompt = bundle.user_text;
    r.think_prefix = bundle.think_prefix;
    r.prompt_chars = bundle.user_text.size() + bundle.assistant_prefill().size();
    try {
      const LlmResponse resp = complete(bundle, cfg.chat, *clock);
      r.response_text = resp.text;
      r.finish_reason = resp.finish_reason;
      r.input_tokens = resp.input_tokens;
      r.output_tokens = resp.output_tokens;
      r.tokens_estimated = resp.tokens_estimated;
      r.latency.prefill_s = resp.latency.prefill_s;
      r.latency.decode_s = resp.latency.decode_s;
    } catch (const TransportError& e) {
      r.failed = r.transport_failure = true;
      r.error = e.what();
    } catch (const Error& e) {
      r.failed = true;
      r.error = e.what();
    }
    r.latency.total_s = clock->now_s() - t0;
    score_record(r, cfg.prices, cfg.switch_markers);
    return r;
  };

  std::vector<std::optional<RunRecord>> results(tasks.size());
  std::mutex commit_mutex;
  std::size_t commit_pos = 0;
  std::size_t streak = 0;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::optional<std::string> write_error;

  auto worker = [&] {
    while (!abort.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      RunRecord r = run_task(tasks[i]);
      std::lock_guard lock(commit_mutex);
      results[i] = std::move(r);
      while (commit_pos < tasks.size() && results[commit_pos]) {
        const RunRecord& c = *results[commit_pos];
        if (appender.is_open()) {
          appender << to_json(c).dump() << '\n';
          appender.flush();
          if (!appender && !write_error) {
            write_error = "write failed: " + records_path.string();
            abort = true;
          }
        }
        streak = c.transport_failure ? streak + 1 : 0;
        if (cfg.max_consecutive_transport_failures > 0 && streak >= cfg.max_consecutive_transport_failures)
          abort = true;
        ++commit_pos;
      }
    }
  };

  const std::size_t n_workers = std::max<std::size_t>(1, std::min(cfg.concurrency, tasks.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (write_error) throw Error(*write_error);

  if (abort) {
    throw RunAborted("endpoint unreachable: " + std::to_string(streak) +
                     " consecutive transport failures; " + std::to_string(commit_pos) + " of " +
                     std::to_string(tasks.size()) + " samples recorded" +
                     (records_path.empty() ? std::string() : ", resume from " + cfg.out_dir.string()));
  }

  // kept records first come from an earlier run; merge into task order
  std::map<std::string, RunRecord> by_key;
  for (auto& r : kept) by_key.emplace(detail::record_key(r.problem_id, r.mode), std::move(r));
  for (auto& r : results) by_key.emplace(detail::record_key(r->problem_id, r->mode), std::move(*r));
  std::vector<RunRecord> out;
  for (const auto& p : in.problems)
    for (auto m : cfg.modes)
      if (auto it = by_key.find(detail::record_key(p.problem_id, m)); it != by_key.end())
        out.push_back(std::move(it->second));
  return out;
}

struct GroupStats {
  std::string mode;
  std::string model_id;
  std::string dataset;
  std::size_t count = 0;
  std::size_t correct = 0;
  std::size_t oot = 0;
  std::size_t failed = 0;
  std::size_t fallback = 0;
  std::size_t tokens_estimated = 0;
  double accuracy_pct = 0.0;
  double mean_input_tokens = 0.0;
  double mean_output_tokens = 0.0;
  double mean_cost_usd = 0.0;
  double total_cost_usd = 0.0;
  double mean_latency_s = 0.0;
  double mean_retrieval_s = 0.0;
  double mean_prefill_s = 0.0;
  double mean_decode_s = 0.0;
  double mean_path_switches = 0.0;
};

/// RoT_TI relative to CoT for one (model, dataset), in percent.
struct ModeDelta {
  std::string model_id;
  std::string dataset;
  double input_tokens_pct = 0.0;
  double output_tokens_pct = 0.0;
  double cost_pct = 0.0;
  double latency_pct = 0.0;
  double path_switches_pct = 0.0;
  /// Accuracy difference in percentage points.
  double accuracy_pts = 0.0;
};

struct RunSummary {
  std::vector<GroupStats> groups;
  std::vector<ModeDelta> deltas;
};

inline double percent_delta(double base, double value) {
  if (base == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (value - base) / base * 100.0;
}

/// Grouped by (mode, model, dataset). Records are sorted inside each group
/// before summing, so the result does not depend on input order.
inline RunSummary summarize(std::span<const RunRecord> records) {
  if (records.empty()) throw ValidationError("summarize: no records");
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) groups[{to_string(r.mode), r.model_id, r.dataset}].push_back(&r);

  RunSummary s;
  for (auto& [key, members] : groups) {
    std::vector<std::pair<std::string, const RunRecord*>> sorted;
    for (const auto* r : members) sorted.emplace_back(to_json(*r).dump(), r);
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    GroupStats g;
    std::tie(g.mode, g.model_id, g.dataset) = key;
    g.count = sorted.size();
    for (const auto& [_, r] : sorted) {
      g.correct += r->correct;
      g.oot += r->oot;
      g.failed += r->failed;
      g.fallback += r->fallback;
      g.tokens_estimated += r->tokens_estimated;
      g.mean_input_tokens += static_cast<double>(r->input_tokens);
      g.mean_output_tokens += static_cast<double>(r->output_tokens);
      g.total_cost_usd += r->cost_usd;
      g.mean_latency_s += r->latency.total_s;
      g.mean_retrieval_s += r->latency.retrieval_s;
      g.mean_prefill_s += r->latency.prefill_s;
      g.mean_decode_s += r->latency.decode_s;
      g.mean_path_switches += static_cast<double>(r->path_switches);
    }
    const double n = static_cast<double>(g.count);
    g.accuracy_pct = static_cast<double>(g.correct) / n * 100.0;
    g.mean_input_tokens /= n;
    g.mean_output_tokens /= n;
    g.mean_cost_usd = g.total_cost_usd / n;
    g.mean_latency_s /= n;
    g.mean_retrieval_s /= n;
    g.mean_prefill_s /= n;
    g.mean_decode_s /= n;
    g.mean_path_switches /= n;
    s.groups.push_back(std::move(g));
  }

  std::map<std::pair<std::string, std::string>, std::pair<const GroupStats*, const GroupStats*>> pairs;
  for (const auto& g : s.groups) {
    auto& slot = pairs[{g.model_id, g.dataset}];
    if (g.mode == to_string(PromptMode::CoT)) slot.first = &g;
    if (g.mode == to_string(PromptMode::RoT_TI)) slot.second = &g;
  }
  for (const auto& [key, pr] : pairs) {
    if (!pr.first || !pr.second) continue;
    const GroupStats& cot = *pr.first;
    const GroupStats& ti = *pr.second;
    s.deltas.push_back(ModeDelta{key.first, key.second,
                                 percent_delta(cot.mean_input_tokens, ti.mean_input_tokens),
                                 percent_delta(cot.mean_output_tokens, ti.mean_output_tokens),
                                 percent_delta(cot.mean_cost_usd, ti.mean_cost_usd),
                                 percent_delta(cot.mean_latency_s, ti.mean_latency_s),
                                 percent_delta(cot.mean_path_switches, ti.mean_path_switches),
                                 ti.accuracy_pct - cot.accuracy_pct});
  }
  return s;
}

namespace detail {
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace detail

inline nlohmann::json to_json(const RunSummary& s) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : s.groups)
    groups.push_back({{"mode", g.mode},
                      {"model_id", g.model_id},
                      {"dataset", g.dataset},
                      {"count", g.count},
                      {"correct", g.correct},
                      {"oot", g.oot},
                      {"failed", g.failed},
                      {"fallback", g.fallback},
                      {"tokens_estimated", g.tokens_estimated},
                      {"accuracy_pct", g.accuracy_pct},
                      {"mean_input_tokens", g.mean_input_tokens},
                      {"mean_output_tokens", g.mean_output_tokens},
                      {"mean_cost_usd", g.mean_cost_usd},
                      {"total_cost_usd", g.total_cost_usd},
                      {"mean_latency_s", g.mean_latency_s},
                      {"mean_retrieval_s", g.mean_retrieval_s},
                      {"mean_prefill_s", g.mean_prefill_s},
                      {"mean_decode_s", g.mean_decode_s},
                      {"mean_path_switches", g.mean_path_switches}});
  nlohmann::json deltas = nlohmann::json::array();
  for (const auto& d : s.deltas)
    deltas.push_back({{"model_id", d.model_id},
                      {"dataset", d.dataset},
                      {"input_tokens_pct", detail::finite_or_null(d.input_tokens_pct)},
                      {"output_tokens_pct", detail::finite_or_null(d.output_tokens_pct)},
                      {"cost_pct", detail::finite_or_null(d.cost_pct)},
                      {"latency_pct", detail::finite_or_null(d.latency_pct)},
                      {"path_switches_pct", detail::finite_or_null(d.path_switches_pct)},
                      {"accuracy_pts", d.accuracy_pts}});
  return {{"groups", groups}, {"rot_ti_vs_cot", deltas}};
}

struct SimilarityHistogram {
  /// Ascending bin edges; bin k is [edges[k], edges[k+1]), the last one closed.
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  /// Best-match normalized similarity per step.
  std::vector<double> best;
  /// Top-k matches per step, best first.
  std::vector<std::vector<std::pair<NodeId, double>>> top;
};

inline std::vector<double> default_histogram_edges() { return {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}; }

/// Scores every step against all graph nodes (no filtering).
inline SimilarityHistogram similarity_histogram(std::span<const UnitVector> steps, const ThoughtGraph& graph,
                                                std::vector<double> edges = default_histogram_edges(),
                                                std::size_t top_k = 10) {
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()) ||
      std::adjacent_find(edges.begin(), edges.end()) != edges.end())
    throw ConfigError("histogram edges must be strictly increasing, at least two");
  SimilarityHistogram h;
  h.edges = std::move(edges);
  h.counts.assign(h.edges.size() - 1, 0);
  std::vector<std::pair<double, std::uint32_t>> scored(graph.node_count());
  for (const auto& q : steps) {
    if (q.dim() != graph.dim())
      throw ConfigError("step embedding dim " + std::to_string(q.dim()) + " != graph dim " +
                        std::to_string(graph.dim()));
    for (std::uint32_t i = 0; i < graph.node_count(); ++i)
      scored[i] = {normalized_similarity(q.values(), graph.embedding(i)), i};
    const std::size_t k = std::min(top_k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                      [&](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return graph.node(a.second).id < graph.node(b.second).id;
                      });
    std::vector<std::pair<NodeId, double>> top;
    for (std::size_t j = 0; j < k; ++j) top.emplace_back(graph.node(scored[j].second).id, scored[j].first);
    const double best = k ? scored[0].first : std::numeric_limits<double>::quiet_NaN();
    h.best.push_back(best);
    h.top.push_back(std::move(top));
    if (!std::isfinite(best) || best < h.edges.front() || best > h.edges.back()) continue;
    auto it = std::upper_bound(h.edges.begin(), h.edges.end(), best);
    std::size_t bin = static_cast<std::size_t>(it - h.edges.begin());
    bin = bin == 0 ? 0 : bin - 1;
    h.counts[std::min(bin, h.counts.size() - 1)]++;
  }
  return h;
}

inline SimilarityHistogram similarity_histogram(const std::vector<std::string>& step_texts, const ThoughtGraph& graph,
                                                EmbeddingProvider& provider, EmbeddingCache& cache,
                                                std::vector<double> edges = default_histogram_edges(),
                                                std::size_t top_k = 10) {
  if (step_texts.empty()) throw ConfigError("similarity_histogram: no steps");
  const auto vecs = embed(step_texts, provider, cache);
  return similarity_histogram(vecs, graph, std::move(edges), top_k);
}

inline nlohmann::json to_json(const SimilarityHistogram& h) {
  nlohmann::json bins = nlohmann::json::array();
  for (std::size_t k = 0; k < h.counts.size(); ++k)
    bins.push_back({{"lo", h.edges[k]}, {"hi", h.edges[k + 1]}, {"count", h.counts[k]}});
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t s = 0; s < h.best.size(); ++s) {
    nlohmann::json top = nlohmann::json::array();
    for (const auto& [id, score] : h.top[s]) top.push_back({{"node", to_string(id)}, {"similarity", score}});
    steps.push_back({{"best", detail::finite_or_null(h.best[s])}, {"top", top}});
  }
  return {{"bins", bins}, {"steps", steps}};
}

struct LatencyStats {
  std::size_t samples = 0;
  std::size_t no_template = 0;
  double mean_s = 0.0;
  double p50_s = 0.0;
  double p95_s = 0.0;
  double min_s = 0.0;
  double max_s = 0.0;
};

/// Nearest-rank percentile of sorted values.
inline double percentile(std::span<const double> sorted, double p) {
  if (sorted.empty()) return 0.0;
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

/// Wall clock of filter + entry selection + traversal per query, nothing else.
inline LatencyStats bench_retrieval(const ThoughtGraph& graph, std::span<const RetrievalQuery> queries,
                                    std::size_t repetitions, const RetrievalConfig& cfg = {}) {
  LatencyStats st;
  std::vector<double> times;
  times.reserve(queries.size() * repetitions);
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (const auto& q : queries) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto t = retrieve(graph, q.problem, q.embedding, cfg);
        (void)t;
      } catch (const NoTemplateFound&) {
        ++st.no_template;
      }
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
  }
  if (times.empty()) return st;
  st.samples = times.size();
  double sum = 0.0;
  for (double t : times) sum += t;
  st.mean_s = sum / static_cast<double>(times.size());
  std::sort(times.begin(), times.end());
  st.p50_s = percentile(times, 50);
  st.p95_s = percentile(times, 95);
  st.min_s = times.front();
  st.max_s = times.back();
  return st;
}

inline nlohmann::json to_json(const LatencyStats& s) {
  return {{"samples", s.samples}, {"no_template", s.no_template}, {"mean_s", s.mean_s}, {"p50_s", s.p50_s},
          {"p95_s", s.p95_s},     {"min_s", s.min_s},              {"max_s", s.max_s}};
}

}  // namespace rot
