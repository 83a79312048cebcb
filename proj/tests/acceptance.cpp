// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "rot/mock_llm.hpp"
#include "support.hpp"

using namespace rot;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// collects the first few failures of a criterion
struct Check {
  Outcome out;
  int reported = 0;
  void fail(const std::string& why) {
    out.pass = false;
    if (reported++ < 3) out.detail += (out.detail.empty() ? "" : "; ") + why;
  }
  void expect(bool ok, const std::string& why) {
    if (!ok) fail(why);
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---- 1 -----------------------------------------------------------------------

Outcome graph_oracle() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(1001);
  std::size_t edges = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const auto corpus = rot_test::random_corpus(gen, 200, 6, 3);
    HashEmbedder e(2 + gen() % 7, gen());
    const double tau = 0.55 + 0.44 * static_cast<double>(gen() % 10000) / 10000.0;
    BuildOptions opts;
    opts.block_rows = 1 + gen() % 64;
    const auto g = build_graph(corpus, e, tau, opts);
    const auto got = rot_test::graph_semantic_edges(g);
    c.expect(got == rot_test::brute_force_semantic_edges(corpus, e, tau), "edge set differs, instance " + std::to_string(inst));
    std::map<std::pair<NodeId, NodeId>, double> sem;
    for (const auto& edge : g.edges()) {
      if (edge.kind != EdgeKind::Semantic) continue;
      sem[{edge.from, edge.to}] = edge.weight;
      c.expect(edge.weight >= tau, "edge below tau, instance " + std::to_string(inst));
    }
    for (const auto& [k, w] : sem) {
      auto it = sem.find({k.second, k.first});
      c.expect(it != sem.end() && it->second == w, "unmirrored edge, instance " + std::to_string(inst));
    }
    edges += got.size();
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "took " + fmt(secs) + " s");
  c.out.detail = "1000 corpora, " + std::to_string(edges) + " edge pairs" + (c.out.detail.empty() ? "" : "; " + c.out.detail);
  return c.out;
}

// ---- 2 -----------------------------------------------------------------------

Outcome traversal_oracle() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(2002);
  std::size_t reasons[3] = {0, 0, 0};
  std::size_t longest = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const auto corpus = rot_test::random_corpus(gen, 20, 10, 2);
    HashEmbedder e(2 + gen() % 3, gen());
    const auto g = build_graph(corpus, e, 0.6 + 0.3 * static_cast<double>(gen() % 1000) / 1000.0);
    RetrievalConfig cfg;  // defaults: l_max 8, tau_term 0.85
    if (gen() % 2) cfg.tau_term = 0.3 + static_cast<double>(gen() % 1000) / 1000.0;
    const auto raw = e.raw("acceptance query " + std::to_string(inst));
    const auto q = UnitVector::normalize(raw);
    const auto& start = g.node(gen() % g.node_count()).id;
    const auto got = traverse(g, start, q, cfg);
    const auto want = rot_test::reference_traverse(g, start, rot_test::ref_normalize(raw), cfg);
    c.expect(got.path == want.path, "path differs, instance " + std::to_string(inst));
    c.expect(got.termination_reason == want.reason, "reason differs, instance " + std::to_string(inst));
    c.expect(got.path.size() <= 8, "path longer than 8, instance " + std::to_string(inst));
    longest = std::max(longest, got.path.size());
    ++reasons[static_cast<int>(got.termination_reason)];
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 30.0, "took " + fmt(secs) + " s");
  c.expect(reasons[0] && reasons[1] && reasons[2], "not every termination reason exercised");
  c.out.detail = "1000 graphs, longest path " + std::to_string(longest) + ", BelowThreshold/MaxLength/NoCandidates = " +
                 std::to_string(reasons[0]) + "/" + std::to_string(reasons[1]) + "/" + std::to_string(reasons[2]) +
                 (c.out.detail.empty() ? "" : "; " + c.out.detail);
  return c.out;
}

// ---- 3 -----------------------------------------------------------------------

Outcome entry_bound() {
  // Candidate S is a step-0 node with similarity r0, candidate L a step-1 node
  // with similarity r1. The query is (1,0) and node vectors are placed at the
  // angle whose normalized similarity is the requested value.
  Check c;
  const double alpha = 0.8;
  std::size_t checked = 0, skipped = 0;
  auto at = [](double r) {
    const double cs = 2.0 * r - 1.0;
    return std::vector<double>{cs, std::sqrt(std::max(0.0, 1.0 - cs * cs))};
  };
  const int steps = 100;
  for (int a = 0; a <= steps; ++a)
    for (int b = 0; b <= steps; ++b) {
      const double r0 = static_cast<double>(a) / steps, r1 = static_cast<double>(b) / steps;
      auto cache = std::make_shared<EmbeddingCache>("grid", 2);
      cache->insert_text("s", UnitVector::normalize(at(r0)));
      cache->insert_text("l-prefix", UnitVector::normalize({-1.0, 0.0}));
      cache->insert_text("l", UnitVector::normalize(at(r1)));
      PrecomputedEmbedder pre(cache);
      const auto g = build_graph({Template{"S", "t", {}, {"s"}}, Template{"L", "t", {}, {"l-prefix", "l"}}}, pre, 0.999);
      const std::vector<std::uint32_t> pool{*g.index_of({"S", 0}), *g.index_of({"L", 1})};
      RetrievalConfig cfg;
      cfg.alpha = alpha;
      const auto pick = select_initial_node(g, pool, UnitVector::normalize({1.0, 0.0}), cfg);
      const double rq0 = normalized_similarity(UnitVector::normalize({1.0, 0.0}).values(), g.embedding(pool[0]));
      const double rq1 = normalized_similarity(UnitVector::normalize({1.0, 0.0}).values(), g.embedding(pool[1]));
      c.expect(std::abs(rq0 - r0) < 1e-9 && std::abs(rq1 - r1) < 1e-9, "grid placement off at " + fmt(r0) + "," + fmt(r1));
      const double deficit = rq1 - rq0;
      const double bound = (1.0 - alpha) / alpha;
      if (std::abs(deficit - bound) < 1e-9) {
        ++skipped;  // exact tie, decided by node order
        continue;
      }
      const bool step0_should_win = deficit < bound;
      c.expect((pick.node.step_index == 0) == step0_should_win,
               "wrong winner at r0=" + fmt(r0) + " r1=" + fmt(r1));
      const double expected = step0_should_win ? alpha * rq0 + (1 - alpha) : alpha * rq1;
      c.expect(std::abs(pick.total - expected) < 1e-9, "reward mismatch at r0=" + fmt(r0) + " r1=" + fmt(r1));
      ++checked;
    }
  c.out.detail = std::to_string(checked) + " grid pairs, " + std::to_string(skipped) + " exact ties skipped" +
                 (c.out.detail.empty() ? "" : "; " + c.out.detail);
  return c.out;
}

// ---- 4 -----------------------------------------------------------------------

Outcome monotone_sweeps() {
  Check c;
  synthetic::Spec spec;
  spec.n_templates = 1000;
  spec.dim = 128;
  spec.n_problems = 200;
  spec.seed = 4;
  const auto corpus = synthetic::generate(spec);
  PrecomputedEmbedder pre(std::make_shared<EmbeddingCache>(corpus.cache));
  const auto g = build_graph(corpus.templates, pre, 0.80);

  std::vector<double> taus;
  for (int k = 0; k <= 15; ++k) taus.push_back(0.80 + 0.01 * k);
  const auto prof = semantic_degree_profile(g, taus);
  std::string prof_s;
  for (std::size_t k = 0; k < prof.size(); ++k) {
    if (k > 0) c.expect(prof[k].second <= prof[k - 1].second, "degree rises at tau " + fmt(prof[k].first));
    if (k % 5 == 0) prof_s += (prof_s.empty() ? "" : " ") + fmt(prof[k].first, 3) + ":" + fmt(prof[k].second, 3);
  }
  c.expect(prof.front().second > prof.back().second, "degree profile is flat");

  std::vector<RetrievalQuery> queries;
  for (const auto& p : corpus.problems) queries.push_back({p, *corpus.cache.find_text(p.statement)});
  const std::vector<double> alphas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  const auto sweep = alpha_sweep(g, queries, alphas);
  std::string sweep_s;
  for (std::size_t k = 0; k < sweep.size(); ++k) {
    if (k > 0) {
      c.expect(sweep[k].p_step0 <= sweep[k - 1].p_step0, "p_step0 rises at alpha " + fmt(sweep[k].alpha));
      c.expect(sweep[k].mean_similarity >= sweep[k - 1].mean_similarity - 1e-12,
               "mean similarity falls at alpha " + fmt(sweep[k].alpha));
    }
    sweep_s += (sweep_s.empty() ? "" : " ") + fmt(sweep[k].alpha, 2) + ":" + fmt(sweep[k].p_step0, 3) + "/" +
               fmt(sweep[k].mean_similarity, 3);
  }
  c.expect(sweep.front().p_step0 > sweep.back().p_step0, "p_step0 does not move with alpha");
  c.out.detail = "degree " + prof_s + "; alpha p_step0/sim " + sweep_s + (c.out.detail.empty() ? "" : "; " + c.out.detail);
  return c.out;
}

// ---- 5 and 9 share the full-scale graph ----------------------------------------------

struct FullScale {
  synthetic::Corpus corpus;
  ThoughtGraph graph;
  double build_s = 0.0;
};

FullScale& full_scale() {
  static FullScale ps = [] {
    FullScale p{synthetic::generate(synthetic::full_scale_spec()), {}, 0.0};
    PrecomputedEmbedder pre(std::make_shared<EmbeddingCache>(p.corpus.cache));
    const auto t0 = std::chrono::steady_clock::now();
    p.graph = build_graph(p.corpus.templates, pre, 0.85);
    p.build_s = seconds_since(t0);
    return p;
  }();
  return ps;
}

Outcome full_scale_latency() {
  Check c;
  auto& ps = full_scale();
  std::vector<RetrievalQuery> queries;
  for (const auto& p : ps.corpus.problems) queries.push_back({p, *ps.corpus.cache.find_text(p.statement)});
  (void)bench_retrieval(ps.graph, queries, 1);  // warm-up
  const auto st = bench_retrieval(ps.graph, queries, 1);
  c.expect(st.samples == 100, "expected 100 samples");
  c.expect(st.no_template == 0, std::to_string(st.no_template) + " queries found no template");
  c.expect(st.mean_s <= 0.05, "mean " + fmt(st.mean_s) + " s above 0.05 s");
  c.out.detail = std::to_string(ps.graph.template_count()) + " templates, " + std::to_string(ps.graph.node_count()) +
                 " nodes, dim " + std::to_string(ps.graph.dim()) + ", " +
                 std::to_string(ps.graph.edge_count(EdgeKind::Semantic)) + " semantic arcs (build " +
                 fmt(ps.build_s, 3) + " s); mean " + fmt(st.mean_s * 1e3, 3) + " ms, p50 " + fmt(st.p50_s * 1e3, 3) +
                 " ms, p95 " + fmt(st.p95_s * 1e3, 3) + " ms" + (c.out.detail.empty() ? "" : "; " + c.out.detail);
  return c.out;
}

Outcome full_scale_round_trip() {
  Check c;
  auto& ps = full_scale();
  rot_test::TempDir dir("acc9");
  const auto t0 = std::chrono::steady_clock::now();
  save_graph(ps.graph, dir / "graph.bin");
  save_graph(ps.graph, dir / "graph.xml");
  const auto bin = load_graph(dir / "graph.bin");
  const auto xml = load_graph(dir / "graph.xml");
  const double secs = seconds_since(t0);
  c.expect(bin.equivalent(ps.graph, 0.0), "binary round trip differs");
  c.expect(xml.equivalent(ps.graph, 0.0), "XML round trip differs");
  c.expect(bin.fingerprint() == ps.graph.fingerprint() && xml.fingerprint() == ps.graph.fingerprint(),
           "fingerprint changed");
  bool reserved = false;
  for (const auto& n : ps.graph.nodes()) reserved |= n.text.find_first_of("<>&\"") != std::string::npos;
  c.expect(reserved, "step texts carry no reserved characters");
  const std::string cmd = "python3 -c \"import sys, xml.etree.ElementTree as E; E.parse(sys.argv[1])\" '" +
                          (dir / "graph.xml").string() + "'";
  c.expect(std::system(cmd.c_str()) == 0, "python ElementTree rejected graph.xml");
  c.out.detail = "bin " + fmt(static_cast<double>(std::filesystem::file_size(dir / "graph.bin")) / 1e6, 3) + " MB, xml " +
                 fmt(static_cast<double>(std::filesystem::file_size(dir / "graph.xml")) / 1e6, 3) + " MB, save+load " +
                 fmt(secs, 3) + " s" + (c.out.detail.empty() ? "" : "; " + c.out.detail);
  return c.out;
}

// ---- 6 -----------------------------------------------------------------------

Outcome cost_accounting() {
  Check c;
  const std::map<std::string, std::pair<double, double>> table{
      {"Qwen3-0.6B", {0.11, 1.26}}, {"Qwen3-1.7B", {0.11, 1.26}}, {"Qwen3-4B", {0.11, 1.26}},
      {"Qwen3-8B", {0.18, 2.10}},   {"Qwen3-14B", {0.35, 4.20}},  {"Qwen3-32B", {0.70, 8.40}}};
  const auto prices = default_price_table();
  for (const auto& [model, p] : table) {
    c.expect(cost_usd(1'000'000, 0, model, prices) == p.first, model + " input price");
    c.expect(cost_usd(0, 1'000'000, model, prices) == p.second, model + " output price");
    c.expect(cost_usd(0, 0, model, prices) == 0.0, model + " zero cost");
  }
  c.expect(prices.model_ids().size() == table.size(), "price table has extra models");
  std::mt19937_64 gen(6);
  for (int n = 0; n < 10000; ++n) {
    const std::uint64_t a = gen() % 10'000'000, b = gen() % 10'000'000, x = gen() % 10'000'000;
    for (const auto& [model, _] : table) {
      const double lhs_in = cost_usd(a + b, x, model, prices);
      const double rhs_in = cost_usd(a, x, model, prices) + cost_usd(b, 0, model, prices);
      const double lhs_out = cost_usd(x, a + b, model, prices);
      const double rhs_out = cost_usd(x, a, model, prices) + cost_usd(0, b, model, prices);
      c.expect(std::abs(lhs_in - rhs_in) <= 1e-9 * std::max(1.0, lhs_in), "input not linear for " + model);
      c.expect(std::abs(lhs_out - rhs_out) <= 1e-9 * std::max(1.0, lhs_out), "output not linear for " + model);
    }
  }
  c.out.detail = "6 models exact at 1M tokens, 60000 linearity checks" + (c.out.detail.empty() ? "" : "; " + c.out.detail);
  return c.out;
}

// ---- 7 -----------------------------------------------------------------------

Outcome path_switches() {
  Check c;
  const auto cot = count_path_switches(rot_test::slurp(rot_test::fixture("transcripts/cot_output.txt")));
  const auto ti = count_path_switches(rot_test::slurp(rot_test::fixture("transcripts/rot_ti_output.txt")));
  c.expect(cot > ti, "CoT transcript " + std::to_string(cot) + " not above RoT_TI " + std::to_string(ti));

  // 1000 samples per mode with means 29.116 and 5.295
  std::vector<RunRecord> rs;
  auto add = [&](PromptMode m, std::size_t switches, int i) {
    RunRecord r;
    r.problem_id = "q" + std::to_string(i);
    r.dataset = "table";
    r.mode = m;
    r.model_id = "Qwen3-0.6B";
    r.path_switches = switches;
    rs.push_back(r);
  };
  for (int i = 0; i < 1000; ++i) add(PromptMode::CoT, i < 116 ? 30 : 29, i);
  for (int i = 0; i < 1000; ++i) add(PromptMode::RoT_TI, i < 295 ? 6 : 5, i);
  const auto s = summarize(rs);
  double delta = std::numeric_limits<double>::quiet_NaN();
  if (s.deltas.size() == 1) delta = s.deltas[0].path_switches_pct;
  c.expect(std::abs(delta - (-81.8)) <= 0.1, "delta " + fmt(delta));
  c.out.detail = "transcripts CoT " + std::to_string(cot) + " vs RoT_TI " + std::to_string(ti) + "; delta " +
                 fmt(delta, 5) + "%" + (c.out.detail.empty() ? "" : "; " + c.out.detail);
  return c.out;
}

// ---- 8 -----------------------------------------------------------------------

Outcome offline_smoke() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  mock::Server server(mock::load_script(rot_test::fixture("mock_script.json")));
  rot_test::TempDir a("acc8a"), b("acc8b");
  rot_test::FixtureRun fx(server.base_url());
  fx.cfg.out_dir = a.path;
  const auto records = fx.run();
  c.expect(records.size() == 9, std::to_string(records.size()) + " records");
  bool got25 = false;
  for (const auto& r : records) {
    c.expect(!r.failed && !r.fallback && r.correct, r.problem_id + "/" + to_string(r.mode) + " not a clean correct sample");
    c.expect(!r.prompt.empty() && !r.response_text.empty() && r.input_tokens > 0 && r.output_tokens > 0 && r.cost_usd > 0,
             r.problem_id + "/" + to_string(r.mode) + " has empty fields");
    c.expect(r.mode == PromptMode::CoT || (r.template_path && !r.template_path->empty()),
             r.problem_id + "/" + to_string(r.mode) + " lacks a template path");
    got25 |= r.problem_id == "aime2024-q2" && r.extracted_answer == "25";
  }
  c.expect(got25, "did not extract 25");
  const auto stored = load_records(a / "records.jsonl");
  c.expect(stored.size() == 9, "records.jsonl does not hold 9 records");
  for (const auto& r : stored)
    c.expect(to_json(replay_record(r, fx.cfg.prices)).dump() == to_json(r).dump(), "replay differs for " + r.problem_id);
  fx.cfg.out_dir = b.path;
  fx.run();
  c.expect(rot_test::slurp(a / "records.jsonl") == rot_test::slurp(b / "records.jsonl"), "rerun not byte-identical");
  const double secs = seconds_since(t0);
  c.expect(secs < 10.0, "took " + fmt(secs) + " s");
  c.out.detail = "9 records, rerun and replay byte-identical, " + fmt(secs, 3) + " s" +
                 (c.out.detail.empty() ? "" : "; " + c.out.detail);
  return c.out;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"graph construction matches all-pairs oracle", graph_oracle},
      {"traversal matches exhaustive reference", traversal_oracle},
      {"entry reward step-0 bound (1-alpha)/alpha", entry_bound},
      {"degree profile and alpha sweep monotone", monotone_sweeps},
      {"retrieval latency at 3340 templates", full_scale_latency},
      {"cost accounting", cost_accounting},
      {"path-switch metric", path_switches},
      {"offline end-to-end smoke", offline_smoke},
      {"graph serialization round trip at scale", full_scale_round_trip},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %zu: %s  %s (%.2f s)  %s\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
