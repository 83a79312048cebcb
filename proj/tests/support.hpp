#pragma once

// Test-only helpers: seeded random corpora and brute-force references that do
// not go through the library's CSR adjacency or its blocked similarity screen.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "rot/rot.hpp"

namespace rot_test {

inline std::filesystem::path fixture(const std::string& rel) { return std::filesystem::path(ROT_FIXTURE_DIR) / rel; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 gen{std::random_device{}()};
    path = std::filesystem::temp_directory_path() / ("rot-" + tag + "-" + std::to_string(gen()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

/// Corpus of up to `max_nodes` steps with short templates and a couple of types.
/// Step texts carry the seed so different instances never share cache keys.
inline std::vector<rot::Template> random_corpus(std::mt19937_64& gen, std::size_t max_nodes, std::size_t max_steps = 4,
                                                std::size_t n_types = 2) {
  std::uniform_int_distribution<std::size_t> total_dist(1, max_nodes);
  const std::size_t total = total_dist(gen);
  const std::uint64_t salt = gen();
  std::vector<rot::Template> out;
  std::size_t used = 0;
  for (std::size_t t = 0; used < total; ++t) {
    rot::Template tpl;
    tpl.template_id = "t" + std::to_string(t);
    tpl.template_type = "type" + std::to_string(gen() % n_types);
    tpl.knowledge_tags = {"tag" + std::to_string(gen() % 3)};
    if (gen() % 2) tpl.knowledge_tags.insert("tag" + std::to_string(gen() % 3));
    const std::size_t steps = std::min<std::size_t>(1 + gen() % max_steps, total - used);
    for (std::size_t s = 0; s < steps; ++s)
      tpl.steps.push_back("step " + std::to_string(s) + " of " + tpl.template_id + " salt " + std::to_string(salt));
    used += steps;
    out.push_back(std::move(tpl));
  }
  return out;
}

// ---- independent reference arithmetic -------------------------------------

inline std::vector<double> ref_normalize(std::vector<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::sqrt(sq);
  if (n != 1.0)
    for (double& x : v) x /= n;
  return v;
}

inline double ref_similarity(const std::vector<double>& a, std::span<const double> b) {
  double c = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) c += a[k] * b[k];
  return (c + 1.0) / 2.0;
}

inline double ref_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  return ref_similarity(a, std::span<const double>(b));
}

struct RefEdge {
  std::string a_tid;
  std::size_t a_step;
  std::string b_tid;
  std::size_t b_step;
  double weight;
  auto operator<=>(const RefEdge&) const = default;
  friend std::ostream& operator<<(std::ostream& os, const RefEdge& e) {
    return os << e.a_tid << "#" << e.a_step << "-" << e.b_tid << "#" << e.b_step << ":" << e.weight;
  }
};

/// All-pairs semantic edges (a < b by NodeId) with weight >= tau, from raw
/// provider output normalized here.
inline std::set<RefEdge> brute_force_semantic_edges(const std::vector<rot::Template>& corpus,
                                                    const rot::HashEmbedder& embedder, double tau) {
  struct N {
    std::string tid;
    std::size_t step;
    std::vector<double> v;
  };
  std::vector<N> nodes;
  for (const auto& t : corpus)
    for (std::size_t s = 0; s < t.steps.size(); ++s) nodes.push_back({t.template_id, s, ref_normalize(embedder.raw(t.steps[s]))});
  std::set<RefEdge> out;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      const double w = ref_similarity(nodes[i].v, nodes[j].v);
      if (w < tau) continue;
      // canonical orientation: smaller (template_id, step) first
      const auto& [lo, hi] = std::tie(nodes[i].tid, nodes[i].step) < std::tie(nodes[j].tid, nodes[j].step)
                                 ? std::pair<const N&, const N&>{nodes[i], nodes[j]}
                                 : std::pair<const N&, const N&>{nodes[j], nodes[i]};
      out.insert({lo.tid, lo.step, hi.tid, hi.step, w});
    }
  return out;
}

/// Semantic edges of a built graph in the same canonical (from < to) form.
inline std::set<RefEdge> graph_semantic_edges(const rot::ThoughtGraph& g) {
  std::set<RefEdge> out;
  for (const auto& e : g.edges())
    if (e.kind == rot::EdgeKind::Semantic && e.from < e.to)
      out.insert({e.from.template_id, e.from.step_index, e.to.template_id, e.to.step_index, e.weight});
  return out;
}

// ---- exhaustive traversal reference -----------------------------------------

struct RefTraversal {
  std::vector<rot::NodeId> path;
  rot::TerminationReason reason;
};

/// Re-derives the greedy walk by scanning every node of the graph at every step
/// and asking the flat edge list whether it is reachable from the current node.
inline RefTraversal reference_traverse(const rot::ThoughtGraph& g, const rot::NodeId& start,
                                       const std::vector<double>& query, const rot::RetrievalConfig& cfg) {
  const auto edges = g.edges();
  auto has = [&](const rot::NodeId& a, const rot::NodeId& b, rot::EdgeKind k) {
    return std::any_of(edges.begin(), edges.end(),
                       [&](const rot::Edge& e) { return e.from == a && e.to == b && e.kind == k; });
  };
  RefTraversal out{{start}, rot::TerminationReason::NoCandidates};
  while (true) {
    if (out.path.size() >= cfg.l_max) {
      out.reason = rot::TerminationReason::MaxLength;
      return out;
    }
    const rot::NodeId cur = out.path.back();
    std::vector<std::pair<double, rot::NodeId>> cands;
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      const auto& id = g.node(i).id;
      if (std::find(out.path.begin(), out.path.end(), id) != out.path.end()) continue;
      const bool seq = has(cur, id, rot::EdgeKind::Sequential);
      const bool sem = has(cur, id, rot::EdgeKind::Semantic);
      if (!seq && !sem) continue;
      const double r = cfg.semantic_weight * ref_similarity(query, g.embedding(i)) + cfg.flow_weight * (seq ? 1.0 : 0.0);
      cands.emplace_back(r, id);
    }
    if (cands.empty()) {
      out.reason = rot::TerminationReason::NoCandidates;
      return out;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : cands) best = std::max(best, c.first);
    std::optional<rot::NodeId> pick;
    for (const auto& c : cands)
      if (c.first >= best - 1e-12 && (!pick || c.second < *pick)) pick = c.second;
    if (best < cfg.tau_term) {
      out.reason = rot::TerminationReason::BelowThreshold;
      return out;
    }
    out.path.push_back(*pick);
  }
}

/// Entry node by scanning every node: type match, tag intersection (with
/// fallback to type-only), blended reward, same tie rule.
inline std::optional<rot::NodeId> reference_entry(const rot::ThoughtGraph& g, const rot::EvalProblem& p,
                                                  const std::vector<double>& query, double alpha) {
  auto fold = [](std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  std::vector<std::size_t> typed, tagged;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (fold(g.node(i).template_type) != fold(p.template_type)) continue;
    typed.push_back(i);
    bool hit = false;
    for (const auto& a : g.node(i).knowledge_tags)
      for (const auto& b : p.knowledge_tags) hit |= fold(a) == fold(b);
    if (hit) tagged.push_back(i);
  }
  const auto& pool = (p.knowledge_tags.empty() || tagged.empty()) ? typed : tagged;
  if (pool.empty()) return std::nullopt;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> score(pool.size());
  for (std::size_t k = 0; k < pool.size(); ++k) {
    const double rq = ref_similarity(query, g.embedding(pool[k]));
    const double rs = g.node(pool[k]).id.step_index == 0 ? 1.0 : 0.0;
    score[k] = alpha * rq + (1.0 - alpha) * rs;
    best = std::max(best, score[k]);
  }
  std::optional<rot::NodeId> pick;
  for (std::size_t k = 0; k < pool.size(); ++k)
    if (score[k] >= best - 1e-12 && (!pick || g.node(pool[k]).id < *pick)) pick = g.node(pool[k]).id;
  return pick;
}


// ---- offline end-to-end fixture ---------------------------------------------

/// Fixture templates and problems, a graph over the mock server's embedder, and
/// an EvalConfig pointing at `base_url` with a stepping clock.
struct FixtureRun {
  std::vector<rot::Template> corpus = rot::load_templates(fixture("templates.jsonl"));
  std::vector<rot::EvalProblem> problems = rot::load_problems(fixture("problems.jsonl"));
  rot::HashEmbedder embedder{64, 3};
  rot::EmbeddingCache cache{embedder.id(), embedder.dim()};
  rot::ThoughtGraph graph;
  rot::EvalConfig cfg;

  explicit FixtureRun(const std::string& base_url) {
    rot::BuildOptions opts;
    opts.cache = &cache;
    graph = rot::build_graph(corpus, embedder, 0.85, opts);
    cfg.chat.endpoint.base_url = base_url;
    cfg.chat.endpoint.backoff_initial_s = 0.0;
    cfg.chat.endpoint.max_attempts = 2;
    cfg.chat.endpoint.read_timeout_s = 5.0;
    cfg.chat.model = "Qwen3-0.6B";
    cfg.synthetic_clock_step = 0.001;
  }

  rot::EvalInputs inputs() { return rot::EvalInputs{problems, &graph, &embedder, &cache}; }
  std::vector<rot::RunRecord> run() { return rot::run_eval(inputs(), cfg); }
};

inline std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace rot_test
