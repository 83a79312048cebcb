#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rot/corpus.hpp"
#include "rot/embedding.hpp"
#include "rot/errors.hpp"
#include "rot/graph.hpp"
#include "rot/log.hpp"
#include "rot/text.hpp"

namespace rot {

/// Retrieval tunables. Defaults: alpha 0.8, tau 0.85, l_max 8, equal reward weights.
struct RetrievalConfig {
  /// Weight of query similarity against the step-0 prior when picking the entry node.
  double alpha = 0.8;
  /// Semantic-edge threshold used when building the graph.
  double tau_edge = 0.85;
  /// Traversal stops once the best candidate reward falls below this.
  double tau_term = 0.85;
  std::size_t l_max = 8;
  double semantic_weight = 1.0;
  double flow_weight = 1.0;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]");
    if (!(tau_edge > 0.0 && tau_edge < 1.0)) throw ConfigError("tau_edge must lie in (0,1)");
    if (l_max < 1) throw ConfigError("l_max must be positive");
    if (!std::isfinite(tau_term) || !std::isfinite(semantic_weight) || !std::isfinite(flow_weight))
      throw ConfigError("retrieval weights must be finite");
  }
};

/// Scores closer than this are ties, broken by the smaller (template_id, step_index).
inline constexpr double kScoreTieEpsilon = 1e-12;

struct ScoredCandidate {
  NodeId node;
  std::uint32_t index = 0;
  double r_q = 0.0;  // normalized query similarity
  int r_s = 0;       // 1 iff step 0 (entry phase)
  int r_f = 0;       // 1 iff reached over a sequential edge (traversal phase)
  double total = 0.0;
};

enum class TerminationReason { BelowThreshold, MaxLength, NoCandidates };

inline const char* to_string(TerminationReason r) noexcept {
  switch (r) {
    case TerminationReason::BelowThreshold: return "BelowThreshold";
    case TerminationReason::MaxLength: return "MaxLength";
    case TerminationReason::NoCandidates: return "NoCandidates";
  }
  return "?";
}

struct AssembledTemplate {
  std::vector<NodeId> path;
  std::vector<std::string> step_texts;
  /// per_step[0] is the entry node; later entries are traversal picks.
  std::vector<ScoredCandidate> per_step;
  /// Candidate-set size evaluated at each expansion attempt.
  std::vector<std::size_t> candidate_counts;
  TerminationReason termination_reason = TerminationReason::NoCandidates;
};

/// Problem text plus its embedding, as consumed by sweeps and benchmarks.
struct RetrievalQuery {
  EvalProblem problem;
  UnitVector embedding;
};

namespace detail {

inline void require_query_dim(const ThoughtGraph& graph, const UnitVector& q) {
  if (q.dim() != graph.dim())
    throw ConfigError("query embedding has dimension " + std::to_string(q.dim()) + ", graph has " +
                      std::to_string(graph.dim()));
}

/// Max score, then the smallest NodeId among scores within kScoreTieEpsilon of it.
inline std::size_t best_candidate(std::span<const ScoredCandidate> scored) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : scored) best = std::max(best, c.total);
  std::size_t pick = scored.size();
  for (std::size_t k = 0; k < scored.size(); ++k) {
    if (scored[k].total < best - kScoreTieEpsilon) continue;
    if (pick == scored.size() || scored[k].node < scored[pick].node) pick = k;
  }
  return pick;
}

inline bool tags_intersect(const TagSet& node_tags, const TagSet& problem_tags) {
  for (const auto& p : problem_tags)
    for (const auto& n : node_tags)
      if (text::iequals(p, n)) return true;
  return false;
}

}  // namespace detail

/// Nodes whose template type matches the problem's (case-folded) and whose tags
/// share at least one tag with the problem's, when it has any. If the tag step
/// empties the set, the type-matched set is returned with a warning.
inline std::vector<std::uint32_t> filter_candidates(const ThoughtGraph& graph, const EvalProblem& problem) {
  std::vector<std::uint32_t> typed;
  for (std::uint32_t i = 0; i < graph.node_count(); ++i)
    if (text::iequals(graph.node(i).template_type, problem.template_type) && graph.embedding(i).size() == graph.dim())
      typed.push_back(i);
  if (problem.knowledge_tags.empty() || typed.empty()) return typed;
  std::vector<std::uint32_t> tagged;
  for (auto i : typed)
    if (detail::tags_intersect(graph.node(i).knowledge_tags, problem.knowledge_tags)) tagged.push_back(i);
  if (tagged.empty()) {
    log::warn("problem " + problem.problem_id + ": knowledge-tag filter matched nothing; using type matches only");
    return typed;
  }
  return tagged;
}

/// Entry-node reward alpha * r_q + (1 - alpha) * r_s.
constexpr double initial_reward(double r_q, bool step0, double alpha) noexcept {
  return alpha * r_q + (1.0 - alpha) * (step0 ? 1.0 : 0.0);
}

/// Argmax of the entry reward over `candidates`. Throws NoTemplateFound when empty.
inline ScoredCandidate select_initial_node(const ThoughtGraph& graph, std::span<const std::uint32_t> candidates,
                                           const UnitVector& query, const RetrievalConfig& cfg) {
  if (candidates.empty()) throw NoTemplateFound("no candidate nodes after filtering");
  detail::require_query_dim(graph, query);
  std::vector<ScoredCandidate> scored;
  scored.reserve(candidates.size());
  for (auto i : candidates) {
    const double r_q = normalized_similarity(query.values(), graph.embedding(i));
    const bool step0 = graph.node(i).id.step_index == 0;
    scored.push_back(ScoredCandidate{graph.node(i).id, i, r_q, step0 ? 1 : 0, 0, initial_reward(r_q, step0, cfg.alpha)});
  }
  return scored[detail::best_candidate(scored)];
}

inline ScoredCandidate select_initial_node(const ThoughtGraph& graph, const EvalProblem& problem,
                                           const UnitVector& query, const RetrievalConfig& cfg) {
  const auto candidates = filter_candidates(graph, problem);
  if (candidates.empty()) throw NoTemplateFound("problem " + problem.problem_id + ": no candidate nodes after filtering");
  return select_initial_node(graph, candidates, query, cfg);
}

namespace detail {

inline AssembledTemplate expand(const ThoughtGraph& graph, ScoredCandidate entry, const UnitVector& query,
                                const RetrievalConfig& cfg) {
  AssembledTemplate out;
  std::vector<std::uint32_t> path{entry.index};
  out.per_step.push_back(std::move(entry));
  std::vector<ScoredCandidate> scored;
  while (true) {
    if (path.size() >= cfg.l_max) {
      out.termination_reason = TerminationReason::MaxLength;
      break;
    }
    const auto current = path.back();
    scored.clear();
    for (const auto& arc : graph.out_arcs(current)) {
      if (std::find(path.begin(), path.end(), arc.target) != path.end()) continue;
      // Arcs are sorted by (target, kind); a pair joined by both kinds yields one candidate with r_f = 1.
      if (!scored.empty() && scored.back().index == arc.target) {
        if (arc.kind == EdgeKind::Sequential) scored.back().r_f = 1;
        continue;
      }
      ScoredCandidate c;
      c.node = graph.node(arc.target).id;
      c.index = arc.target;
      c.r_q = normalized_similarity(query.values(), graph.embedding(arc.target));
      c.r_f = arc.kind == EdgeKind::Sequential ? 1 : 0;
      scored.push_back(std::move(c));
    }
    out.candidate_counts.push_back(scored.size());
    if (scored.empty()) {
      out.termination_reason = TerminationReason::NoCandidates;
      break;
    }
    for (auto& c : scored) c.total = cfg.semantic_weight * c.r_q + cfg.flow_weight * c.r_f;
    const auto pick = best_candidate(scored);
    if (scored[pick].total < cfg.tau_term) {
      out.termination_reason = TerminationReason::BelowThreshold;
      break;
    }
    path.push_back(scored[pick].index);
    out.per_step.push_back(scored[pick]);
  }
  for (auto i : path) {
    out.path.push_back(graph.node(i).id);
    out.step_texts.push_back(graph.node(i).text);
  }
  return out;
}

}  // namespace detail

/// Greedy expansion from `start`: candidates are unvisited out-neighbors of the
/// current node, scored semantic_weight * r_q + flow_weight * r_f. Stops at
/// l_max nodes, when no candidate remains, or when the best reward is below tau_term.
inline AssembledTemplate traverse(const ThoughtGraph& graph, const NodeId& start, const UnitVector& query,
                                  const RetrievalConfig& cfg) {
  cfg.validate();
  detail::require_query_dim(graph, query);
  const auto idx = graph.index_of(start);
  if (!idx) throw NotFoundError("node " + to_string(start) + " is not in the graph");
  ScoredCandidate entry;
  entry.node = start;
  entry.index = *idx;
  entry.r_q = normalized_similarity(query.values(), graph.embedding(*idx));
  entry.r_s = start.step_index == 0 ? 1 : 0;
  entry.total = initial_reward(entry.r_q, start.step_index == 0, cfg.alpha);
  return detail::expand(graph, std::move(entry), query, cfg);
}

/// Filter, entry selection and traversal for one problem. Throws NoTemplateFound
/// when filtering leaves nothing.
inline AssembledTemplate retrieve(const ThoughtGraph& graph, const EvalProblem& problem, const UnitVector& query,
                                  const RetrievalConfig& cfg) {
  cfg.validate();
  auto entry = select_initial_node(graph, problem, query, cfg);
  return detail::expand(graph, std::move(entry), query, cfg);
}

struct AlphaSweepPoint {
  double alpha = 0.0;
  double p_step0 = 0.0;
  double mean_similarity = 0.0;
  /// Problems with a non-empty candidate set.
  std::size_t evaluated = 0;
};

/// For each alpha: share of problems whose entry node is a step-0 node, and the mean
/// query similarity of the chosen entries. Problems with no candidates are skipped.
inline std::vector<AlphaSweepPoint> alpha_sweep(const ThoughtGraph& graph, std::span<const RetrievalQuery> queries,
                                                std::span<const double> alphas) {
  std::vector<std::vector<std::uint32_t>> candidates;
  candidates.reserve(queries.size());
  for (const auto& q : queries) candidates.push_back(filter_candidates(graph, q.problem));
  std::vector<AlphaSweepPoint> out;
  for (double alpha : alphas) {
    RetrievalConfig cfg;
    cfg.alpha = alpha;
    cfg.validate();
    AlphaSweepPoint point{alpha, 0.0, 0.0, 0};
    double step0 = 0.0;
    double sim = 0.0;
    for (std::size_t k = 0; k < queries.size(); ++k) {
      if (candidates[k].empty()) continue;
      const auto pick = select_initial_node(graph, candidates[k], queries[k].embedding, cfg);
      step0 += pick.r_s;
      sim += pick.r_q;
      ++point.evaluated;
    }
    if (point.evaluated > 0) {
      point.p_step0 = step0 / static_cast<double>(point.evaluated);
      point.mean_similarity = sim / static_cast<double>(point.evaluated);
    }
    out.push_back(point);
  }
  return out;
}

inline nlohmann::json to_json(const NodeId& id) {
  return nlohmann::json{{"template_id", id.template_id}, {"step_index", id.step_index}};
}

inline NodeId node_id_from_json(const nlohmann::json& j) {
  return NodeId{j.at("template_id").get<std::string>(), j.at("step_index").get<std::size_t>()};
}

inline nlohmann::json to_json(const ScoredCandidate& c) {
  return nlohmann::json{{"node", to_json(c.node)}, {"r_q", c.r_q}, {"r_s", c.r_s}, {"r_f", c.r_f}, {"total", c.total}};
}

inline nlohmann::json to_json(const AssembledTemplate& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t k = 0; k < t.path.size(); ++k) {
    auto s = to_json(t.per_step[k]);
    s["text"] = t.step_texts[k];
    steps.push_back(std::move(s));
  }
  return nlohmann::json{{"steps", std::move(steps)},
                        {"candidate_counts", t.candidate_counts},
                        {"termination_reason", to_string(t.termination_reason)}};
}

}  // namespace rot
