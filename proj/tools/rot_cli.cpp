// `rot` command line: graph building and inspection, retrieval, evaluation runs,
// summaries, benchmarks and sweeps. Flags may also come from --config (TOML/INI);
// flags given on the command line win.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "rot/rot.hpp"

using namespace rot;
namespace fs = std::filesystem;

namespace {

// ---- shared option blocks ------------------------------------------------------

struct EmbedderOpts {
  std::string kind = "hash";
  std::size_t dim = 256;
  std::uint64_t seed = 0;
  std::string url;
  std::string model;
  std::string api_key;
  fs::path cache;

  void add(CLI::App* app) {
    app->add_option("--embedder", kind, "hash | http | precomputed")
        ->check(CLI::IsMember({"hash", "http", "precomputed"}))
        ->capture_default_str();
    app->add_option("--dim", dim, "Embedding dimension (hash and http)")->capture_default_str();
    app->add_option("--embed-seed", seed, "Seed of the hash embedder")->capture_default_str();
    app->add_option("--embed-url", url, "Base URL of an OpenAI-compatible embeddings API")->envname("ROT_EMBED_BASE_URL");
    app->add_option("--embed-model", model, "Embedding model name")->envname("ROT_EMBED_MODEL");
    app->add_option("--embed-key", api_key, "Embeddings API key")->envname("ROT_EMBED_API_KEY");
    app->add_option("--embed-cache", cache, "Embedding cache (JSONL); read if present, updated after use");
  }

  std::unique_ptr<EmbeddingProvider> provider() const {
    if (kind == "hash") return std::make_unique<HashEmbedder>(dim, seed);
    if (kind == "http") {
      if (url.empty() || model.empty()) throw ConfigError("--embed-url and --embed-model are required for http");
      http::Endpoint ep;
      ep.base_url = url;
      ep.api_key = api_key;
      return std::make_unique<HttpEmbedder>(ep, model, dim);
    }
    if (cache.empty() || !fs::exists(cache)) throw ConfigError("--embed-cache must name an existing file for precomputed");
    return std::make_unique<PrecomputedEmbedder>(std::make_shared<EmbeddingCache>(EmbeddingCache::load(cache)));
  }

  EmbeddingCache open_cache(const EmbeddingProvider& p) const {
    if (!cache.empty() && fs::exists(cache)) {
      auto c = EmbeddingCache::load(cache);
      if (c.provider_id() == p.id() && c.dim() == p.dim()) return c;
      log::warn("embedding cache " + cache.string() + " belongs to " + c.provider_id() + "; starting a fresh one");
    }
    return EmbeddingCache(p.id(), p.dim());
  }

  void save_cache(const EmbeddingCache& c) const {
    if (!cache.empty() && kind != "precomputed") c.save(cache);
  }
};

struct RetrievalOpts {
  RetrievalConfig cfg;
  void add(CLI::App* app) {
    app->add_option("--alpha", cfg.alpha, "Query similarity weight of the entry reward")->capture_default_str();
    app->add_option("--tau-term", cfg.tau_term, "Traversal stops below this reward")->capture_default_str();
    app->add_option("--l-max", cfg.l_max, "Maximum template length")->capture_default_str();
    app->add_option("--semantic-weight", cfg.semantic_weight)->capture_default_str();
    app->add_option("--flow-weight", cfg.flow_weight)->capture_default_str();
  }
};

void check_provider(const ThoughtGraph& g, const EmbeddingProvider& p) {
  if (g.params().provider_id != p.id() || g.dim() != p.dim())
    throw ConfigError("graph was built with " + g.params().provider_id + " (dim " + std::to_string(g.dim()) +
                      "), query embedder is " + p.id() + " (dim " + std::to_string(p.dim()) + ")");
}

void write_json(const nlohmann::json& j, const fs::path& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw Error("cannot write " + out.string());
  f << j.dump(2) << '\n';
}

std::vector<RetrievalQuery> embed_queries(const std::vector<EvalProblem>& problems, EmbeddingProvider& p,
                                          EmbeddingCache& cache) {
  std::vector<std::string> texts;
  for (const auto& pr : problems) texts.push_back(pr.statement);
  const auto vecs = embed(texts, p, cache);
  std::vector<RetrievalQuery> out;
  for (std::size_t i = 0; i < problems.size(); ++i) out.push_back({problems[i], vecs[i]});
  return out;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (text::trim(item).empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("not a number: '" + item + "'");
    }
  }
  return out;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-of-Thought: thought-graph retrieval and evaluation"};
  app.set_config("--config", "", "Read options from a TOML/INI file");
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");

  // build-graph
  auto* build = app.add_subcommand("build-graph", "Embed a template corpus and build the thought graph");
  fs::path b_templates;
  std::vector<fs::path> b_out;
  double b_tau = 0.85;
  std::size_t b_subsample = 0;
  std::uint64_t b_subsample_seed = 0;
  EmbedderOpts b_emb;
  build->add_option("--templates", b_templates, "Templates JSONL")->required()->check(CLI::ExistingFile);
  build->add_option("--out", b_out, "Output graph file(s); .xml for XML, anything else binary")->required();
  build->add_option("--tau-edge", b_tau, "Semantic edge threshold")->capture_default_str();
  build->add_option("--subsample", b_subsample, "Keep this many randomly chosen templates");
  build->add_option("--subsample-seed", b_subsample_seed)->capture_default_str();
  b_emb.add(build);

  // inspect-graph
  auto* inspect = app.add_subcommand("inspect-graph", "Print graph statistics");
  fs::path i_graph;
  std::string i_taus;
  inspect->add_option("--graph", i_graph)->required()->check(CLI::ExistingFile);
  inspect->add_option("--degree-taus", i_taus, "Comma-separated thresholds for the degree profile");

  // retrieve
  auto* ret = app.add_subcommand("retrieve", "Assemble a template for one problem");
  fs::path r_graph, r_problems;
  std::string r_id, r_text, r_type;
  std::vector<std::string> r_tags;
  bool r_json = false;
  EmbedderOpts r_emb;
  RetrievalOpts r_ret;
  ret->add_option("--graph", r_graph)->required()->check(CLI::ExistingFile);
  auto* r_pf = ret->add_option("--problem-file", r_problems, "Problems JSONL")->check(CLI::ExistingFile);
  ret->add_option("--problem-id", r_id, "Problem to use from --problem-file (default: first)");
  auto* r_pt = ret->add_option("--problem-text", r_text, "Ad-hoc problem statement");
  ret->add_option("--type", r_type, "Template type of the ad-hoc problem");
  ret->add_option("--tags", r_tags, "Knowledge tags of the ad-hoc problem");
  ret->add_flag("--json", r_json, "Emit JSON");
  r_pf->excludes(r_pt);
  r_emb.add(ret);
  r_ret.add(ret);

  // run-eval
  auto* run = app.add_subcommand("run-eval", "Run problems x modes against a chat endpoint");
  fs::path e_graph, e_problems, e_out, e_prices;
  std::vector<std::string> e_modes{"CoT", "RoT", "RoT_TI"};
  std::string e_model, e_base, e_key, e_prefill = "vllm";
  std::uint64_t e_max_tokens = 16384;
  double e_temperature = 0.0;
  std::optional<std::uint64_t> e_seed;
  std::size_t e_concurrency = 4, e_attempts = 3, e_abort_after = 5;
  double e_timeout = 600.0;
  std::optional<double> e_clock;
  bool e_resume = false, e_no_stream = false;
  EmbedderOpts e_emb;
  RetrievalOpts e_ret;
  run->add_option("--problems", e_problems)->required()->check(CLI::ExistingFile);
  run->add_option("--graph", e_graph, "Needed for RoT modes")->check(CLI::ExistingFile);
  run->add_option("--modes", e_modes, "CoT, RoT, RoT_TI")->capture_default_str();
  run->add_option("--model", e_model, "Chat model id (also the price-table key)")->required()->envname("ROT_LLM_MODEL");
  run->add_option("--base-url", e_base, "Chat API base URL")->envname("ROT_LLM_BASE_URL");
  run->add_option("--api-key", e_key, "Chat API key")->envname("ROT_LLM_API_KEY");
  run->add_option("--out", e_out, "Run directory for records.jsonl and manifest.json")->required();
  run->add_option("--prices", e_prices, "Price table JSON")->check(CLI::ExistingFile);
  run->add_option("--max-tokens", e_max_tokens)->capture_default_str();
  run->add_option("--temperature", e_temperature)->capture_default_str();
  run->add_option("--seed", e_seed, "Sampling seed passed to the server");
  run->add_option("--prefill-style", e_prefill, "vllm | plain")
      ->check(CLI::IsMember({"vllm", "plain"}))
      ->capture_default_str();
  run->add_option("--concurrency", e_concurrency)->capture_default_str();
  run->add_option("--attempts", e_attempts, "Attempts per request on transport errors")->capture_default_str();
  run->add_option("--timeout", e_timeout, "Read timeout in seconds")->capture_default_str();
  run->add_option("--abort-after", e_abort_after, "Consecutive transport failures before aborting")
      ->capture_default_str();
  run->add_option("--synthetic-clock", e_clock, "Time samples on a stepping clock with this step (seconds)");
  run->add_flag("--resume", e_resume, "Continue a previous run in --out");
  run->add_flag("--no-stream", e_no_stream, "Disable streaming (no prefill/decode split)");
  e_emb.add(run);
  e_ret.add(run);

  // summarize
  auto* summ = app.add_subcommand("summarize", "Aggregate records.jsonl");
  std::vector<fs::path> s_records;
  fs::path s_out;
  summ->add_option("--records", s_records, "records.jsonl file(s)")->required()->check(CLI::ExistingFile);
  summ->add_option("--out", s_out, "Write summary.json here instead of stdout");

  // bench-retrieval
  auto* bench = app.add_subcommand("bench-retrieval", "Time filter + entry selection + traversal");
  fs::path br_graph, br_problems;
  std::size_t br_reps = 3;
  EmbedderOpts br_emb;
  RetrievalOpts br_ret;
  bench->add_option("--graph", br_graph)->required()->check(CLI::ExistingFile);
  bench->add_option("--problems", br_problems)->required()->check(CLI::ExistingFile);
  bench->add_option("--reps", br_reps)->capture_default_str();
  br_emb.add(bench);
  br_ret.add(bench);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Alpha sweep of entry selection or tau sweep of semantic degree");
  std::string sw_kind, sw_values;
  fs::path sw_graph, sw_problems;
  EmbedderOpts sw_emb;
  sweep->add_option("kind", sw_kind, "alpha | tau")->required()->check(CLI::IsMember({"alpha", "tau"}));
  sweep->add_option("--graph", sw_graph)->required()->check(CLI::ExistingFile);
  sweep->add_option("--problems", sw_problems, "Problems JSONL (alpha sweep)")->check(CLI::ExistingFile);
  sweep->add_option("--values", sw_values, "Comma-separated values (default 0,0.2,...,1 or 0.80,0.81,...,0.95)");
  sw_emb.add(sweep);

  // sim-hist
  auto* hist = app.add_subcommand("sim-hist", "Best-match similarity of solution steps against the graph");
  fs::path h_graph, h_steps;
  std::string h_bins;
  std::size_t h_top = 10;
  EmbedderOpts h_emb;
  hist->add_option("--graph", h_graph)->required()->check(CLI::ExistingFile);
  hist->add_option("--steps", h_steps, "Text file, one solution step per line")->required()->check(CLI::ExistingFile);
  hist->add_option("--bins", h_bins, "Comma-separated bin edges (default 0,0.2,0.4,0.6,0.8,1)");
  hist->add_option("--top", h_top)->capture_default_str();
  h_emb.add(hist);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic clustered corpus with precomputed embeddings");
  fs::path y_out;
  synthetic::Spec y_spec;
  bool y_full = false;
  synth->add_option("--out-dir", y_out)->required();
  synth->add_flag("--full-scale", y_full, "3340 templates, dim 512, 8 types");
  synth->add_option("--templates", y_spec.n_templates)->capture_default_str();
  synth->add_option("--dim", y_spec.dim)->capture_default_str();
  synth->add_option("--types", y_spec.n_types)->capture_default_str();
  synth->add_option("--problems", y_spec.n_problems)->capture_default_str();
  synth->add_option("--seed", y_spec.seed)->capture_default_str();

  // mock-llm
  auto* mockc = app.add_subcommand("mock-llm", "Serve scripted chat and embedding replies on 127.0.0.1");
  fs::path m_script;
  int m_port = 0;
  mockc->add_option("--script", m_script)->required()->check(CLI::ExistingFile);
  mockc->add_option("--port", m_port, "0 picks a free port")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  if (quiet) log::set_sink([](log::Level level, std::string_view msg) {
    if (level != log::Level::Warn) std::cerr << "[info] " << msg << '\n';
  });

  try {
    if (*build) {
      const auto corpus = load_templates(b_templates);
      auto provider = b_emb.provider();
      auto cache = b_emb.open_cache(*provider);
      BuildOptions opts;
      opts.cache = &cache;
      auto g = build_graph(corpus, *provider, b_tau, opts);
      b_emb.save_cache(cache);
      if (b_subsample) g = subsample_graph(g, b_subsample, b_subsample_seed);
      for (const auto& out : b_out) save_graph(g, out);
      std::cerr << "graph: " << g.template_count() << " templates, " << g.node_count() << " nodes, "
                << g.edge_count(EdgeKind::Sequential) << " sequential and " << g.edge_count(EdgeKind::Semantic)
                << " semantic arcs\n";
      return 0;
    }

    if (*inspect) {
      const auto g = load_graph(i_graph);
      nlohmann::json j = {{"templates", g.template_count()},
                          {"nodes", g.node_count()},
                          {"sequential_arcs", g.edge_count(EdgeKind::Sequential)},
                          {"semantic_arcs", g.edge_count(EdgeKind::Semantic)},
                          {"tau_edge", g.params().tau_edge},
                          {"provider_id", g.params().provider_id},
                          {"dim", g.dim()},
                          {"fingerprint", to_hex(g.fingerprint())}};
      if (!i_taus.empty()) {
        const auto taus = parse_list(i_taus);
        nlohmann::json prof = nlohmann::json::array();
        for (const auto& [tau, deg] : semantic_degree_profile(g, taus))
          prof.push_back({{"tau", tau}, {"mean_semantic_degree", deg}});
        j["degree_profile"] = prof;
      }
      write_json(j, {});
      return 0;
    }

    if (*ret) {
      const auto g = load_graph(r_graph);
      EvalProblem problem;
      if (!r_problems.empty()) {
        const auto problems = load_problems(r_problems);
        if (problems.empty()) throw ConfigError("no problems in " + r_problems.string());
        auto it = r_id.empty() ? problems.begin()
                               : std::find_if(problems.begin(), problems.end(),
                                              [&](const EvalProblem& p) { return p.problem_id == r_id; });
        if (it == problems.end()) throw NotFoundError("problem " + r_id + " not in " + r_problems.string());
        problem = *it;
      } else if (!r_text.empty()) {
        problem = EvalProblem{"ad-hoc", r_text, "", r_type, TagSet(r_tags.begin(), r_tags.end()), "ad-hoc"};
      } else {
        throw ConfigError("give --problem-file or --problem-text");
      }
      auto provider = r_emb.provider();
      check_provider(g, *provider);
      auto cache = r_emb.open_cache(*provider);
      const auto q = embed_one(problem.statement, *provider, cache);
      r_emb.save_cache(cache);
      const auto t = retrieve(g, problem, q, r_ret.cfg);
      if (r_json) {
        auto j = to_json(t);
        j["problem_id"] = problem.problem_id;
        write_json(j, {});
      } else {
        for (std::size_t k = 0; k < t.path.size(); ++k)
          std::printf("Step %zu [%s, R=%.4f]: %s\n", k + 1, to_string(t.path[k]).c_str(), t.per_step[k].total,
                      t.step_texts[k].c_str());
        std::printf("(%s)\n", to_string(t.termination_reason));
      }
      return 0;
    }

    if (*run) {
      const auto problems = load_problems(e_problems);
      EvalConfig cfg;
      cfg.modes.clear();
      for (const auto& m : e_modes) cfg.modes.push_back(prompt_mode_from_string(m));
      cfg.chat.endpoint = endpoint_from_env();
      if (!e_base.empty()) cfg.chat.endpoint.base_url = e_base;
      if (!e_key.empty()) cfg.chat.endpoint.api_key = e_key;
      if (cfg.chat.endpoint.base_url.empty()) throw ConfigError("chat endpoint not configured (--base-url)");
      cfg.chat.endpoint.max_attempts = static_cast<int>(e_attempts);
      cfg.chat.endpoint.read_timeout_s = e_timeout;
      cfg.chat.model = e_model;
      cfg.chat.max_tokens = e_max_tokens;
      cfg.chat.temperature = e_temperature;
      cfg.chat.seed = e_seed;
      cfg.chat.stream = !e_no_stream;
      cfg.chat.prefill_style = e_prefill == "plain" ? PrefillStyle::Plain : PrefillStyle::Vllm;
      cfg.retrieval = e_ret.cfg;
      if (!e_prices.empty()) cfg.prices = PriceTable::load(e_prices);
      cfg.concurrency = e_concurrency;
      cfg.synthetic_clock_step = e_clock;
      cfg.out_dir = e_out;
      cfg.resume = e_resume;
      cfg.max_consecutive_transport_failures = e_abort_after;

      std::optional<ThoughtGraph> graph;
      std::unique_ptr<EmbeddingProvider> provider;
      std::optional<EmbeddingCache> cache;
      if (!e_graph.empty()) {
        graph = load_graph(e_graph);
        provider = e_emb.provider();
        check_provider(*graph, *provider);
        cache.emplace(e_emb.open_cache(*provider));
        cfg.retrieval.tau_edge = graph->params().tau_edge;
      }
      EvalInputs in{problems, graph ? &*graph : nullptr, provider.get(), cache ? &*cache : nullptr};
      const auto records = run_eval(in, cfg);
      if (cache) e_emb.save_cache(*cache);
      write_json(to_json(summarize(records)), e_out / "summary.json");
      std::size_t failed = 0;
      for (const auto& r : records) failed += r.failed;
      std::cerr << records.size() << " records (" << failed << " failed) in " << e_out.string() << '\n';
      return 0;
    }

    if (*summ) {
      std::vector<RunRecord> all;
      for (const auto& f : s_records) {
        auto rs = load_records(f);
        all.insert(all.end(), rs.begin(), rs.end());
      }
      write_json(to_json(summarize(all)), s_out);
      return 0;
    }

    if (*bench) {
      const auto g = load_graph(br_graph);
      auto provider = br_emb.provider();
      check_provider(g, *provider);
      auto cache = br_emb.open_cache(*provider);
      const auto queries = embed_queries(load_problems(br_problems), *provider, cache);
      br_emb.save_cache(cache);
      br_ret.cfg.tau_edge = g.params().tau_edge;
      auto j = to_json(bench_retrieval(g, queries, br_reps, br_ret.cfg));
      j["nodes"] = g.node_count();
      j["queries"] = queries.size();
      write_json(j, {});
      return 0;
    }

    if (*sweep) {
      const auto g = load_graph(sw_graph);
      nlohmann::json out = nlohmann::json::array();
      if (sw_kind == "tau") {
        const auto taus = sw_values.empty() ? parse_list("0.80,0.81,0.82,0.83,0.84,0.85,0.86,0.87,0.88,0.89,0.90,"
                                                         "0.91,0.92,0.93,0.94,0.95")
                                            : parse_list(sw_values);
        for (const auto& [tau, deg] : semantic_degree_profile(g, taus))
          out.push_back({{"tau", tau}, {"mean_semantic_degree", deg}});
      } else {
        if (sw_problems.empty()) throw ConfigError("alpha sweep needs --problems");
        const auto alphas = sw_values.empty() ? parse_list("0,0.2,0.4,0.6,0.8,1") : parse_list(sw_values);
        auto provider = sw_emb.provider();
        check_provider(g, *provider);
        auto cache = sw_emb.open_cache(*provider);
        const auto queries = embed_queries(load_problems(sw_problems), *provider, cache);
        sw_emb.save_cache(cache);
        for (const auto& p : alpha_sweep(g, queries, alphas))
          out.push_back({{"alpha", p.alpha},
                         {"p_step0", p.p_step0},
                         {"mean_similarity", p.mean_similarity},
                         {"evaluated", p.evaluated}});
      }
      write_json(out, {});
      return 0;
    }

    if (*hist) {
      const auto g = load_graph(h_graph);
      std::vector<std::string> steps;
      std::ifstream in(h_steps);
      for (std::string line; std::getline(in, line);)
        if (!text::trim(line).empty()) steps.push_back(line);
      auto provider = h_emb.provider();
      check_provider(g, *provider);
      auto cache = h_emb.open_cache(*provider);
      const auto h = similarity_histogram(steps, g, *provider, cache,
                                          h_bins.empty() ? default_histogram_edges() : parse_list(h_bins), h_top);
      h_emb.save_cache(cache);
      write_json(to_json(h), {});
      return 0;
    }

    if (*synth) {
      auto spec = y_full ? synthetic::full_scale_spec(y_spec.seed) : y_spec;
      const auto corpus = synthetic::generate(spec);
      fs::create_directories(y_out);
      save_templates(corpus.templates, y_out / "templates.jsonl");
      save_problems(corpus.problems, y_out / "problems.jsonl");
      corpus.cache.save(y_out / "embeddings.jsonl");
      std::cerr << corpus.templates.size() << " templates, " << total_steps(corpus.templates) << " steps, "
                << corpus.problems.size() << " problems; use --embedder precomputed --embed-cache "
                << (y_out / "embeddings.jsonl").string() << '\n';
      return 0;
    }

    if (*mockc) {
      mock::Server server(mock::load_script(m_script), m_port);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << server.base_url() << std::endl;
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      return 0;
    }
  } catch (const RunAborted& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
