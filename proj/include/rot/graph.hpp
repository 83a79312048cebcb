#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <cblas.h>

#include "rot/corpus.hpp"
#include "rot/embedding.hpp"
#include "rot/errors.hpp"
#include "rot/hash.hpp"
#include "rot/text.hpp"

namespace rot {

/// Step `step_index` of template `template_id`.
struct NodeId {
  std::string template_id;
  std::size_t step_index = 0;

  auto operator<=>(const NodeId&) const = default;
  bool operator==(const NodeId&) const = default;
};

inline std::string to_string(const NodeId& id) { return id.template_id + "#" + std::to_string(id.step_index); }

enum class EdgeKind : std::uint8_t { Sequential = 0, Semantic = 1 };

inline const char* to_string(EdgeKind k) noexcept { return k == EdgeKind::Sequential ? "sequential" : "semantic"; }

inline EdgeKind edge_kind_from_string(std::string_view s) {
  if (s == "sequential") return EdgeKind::Sequential;
  if (s == "semantic") return EdgeKind::Semantic;
  throw ParseError("unknown edge kind '" + std::string(s) + "'");
}

struct Edge {
  NodeId from;
  NodeId to;
  EdgeKind kind = EdgeKind::Sequential;
  double weight = 0.0;

  bool operator==(const Edge&) const = default;
};

/// Outgoing half-edge stored in the adjacency arrays.
struct Arc {
  std::uint32_t target = 0;
  EdgeKind kind = EdgeKind::Sequential;
  double weight = 0.0;

  bool operator==(const Arc&) const = default;
};

struct NodeInfo {
  NodeId id;
  std::string text;
  std::string template_type;
  TagSet knowledge_tags;

  bool operator==(const NodeInfo&) const = default;
};

struct BuildParams {
  double tau_edge = 0.85;
  std::string provider_id;
  std::size_t dim = 0;

  bool operator==(const BuildParams&) const = default;
};

/// Immutable directed weighted multi-graph of reasoning steps. Nodes of one
/// template are contiguous and ordered by step index; every node carries one
/// unit embedding. Safe to share across threads.
class ThoughtGraph {
 public:
  ThoughtGraph() = default;

  /// Builds a graph from raw parts and checks every invariant.
  /// `embeddings` is row-major, `nodes.size() * params.dim` values.
  static ThoughtGraph assemble(std::vector<NodeInfo> nodes, std::vector<double> embeddings,
                               std::vector<std::vector<Arc>> adjacency, BuildParams params,
                               std::uint64_t corpus_fingerprint) {
    if (adjacency.size() != nodes.size()) throw ValidationError("adjacency size does not match node count");
    ThoughtGraph g;
    g.nodes_ = std::move(nodes);
    g.embeddings_ = std::move(embeddings);
    g.params_ = std::move(params);
    g.corpus_fingerprint_ = corpus_fingerprint;
    g.offsets_.reserve(g.nodes_.size() + 1);
    g.offsets_.push_back(0);
    for (auto& arcs : adjacency) {
      std::sort(arcs.begin(), arcs.end(), [](const Arc& a, const Arc& b) {
        return std::tie(a.target, a.kind) < std::tie(b.target, b.kind);
      });
      g.arcs_.insert(g.arcs_.end(), arcs.begin(), arcs.end());
      g.offsets_.push_back(g.arcs_.size());
    }
    for (std::uint32_t i = 0; i < g.nodes_.size(); ++i) {
      if (!g.index_.emplace(g.nodes_[i].id, i).second)
        throw ValidationError("duplicate node " + to_string(g.nodes_[i].id));
    }
    g.validate();
    return g;
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t dim() const noexcept { return params_.dim; }
  const BuildParams& params() const noexcept { return params_; }
  std::uint64_t corpus_fingerprint() const noexcept { return corpus_fingerprint_; }

  const NodeInfo& node(std::size_t i) const { return nodes_.at(i); }
  std::span<const NodeInfo> nodes() const noexcept { return nodes_; }

  std::span<const double> embedding(std::size_t i) const {
    return std::span<const double>(embeddings_).subspan(i * params_.dim, params_.dim);
  }
  std::span<const double> embedding_matrix() const noexcept { return embeddings_; }

  std::span<const Arc> out_arcs(std::size_t i) const {
    return std::span<const Arc>(arcs_).subspan(offsets_.at(i), offsets_.at(i + 1) - offsets_.at(i));
  }

  std::optional<std::uint32_t> index_of(const NodeId& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t edge_count(EdgeKind kind) const noexcept {
    return static_cast<std::size_t>(
        std::count_if(arcs_.begin(), arcs_.end(), [kind](const Arc& a) { return a.kind == kind; }));
  }

  std::size_t template_count() const noexcept {
    std::size_t n = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) n += nodes_[i].id.step_index == 0;
    return n;
  }

  /// Flattened edge list in node order.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(arcs_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (const auto& a : out_arcs(i)) out.push_back(Edge{nodes_[i].id, nodes_[a.target].id, a.kind, a.weight});
    return out;
  }

  /// Recovers the corpus the graph was built from, in node order.
  std::vector<Template> templates() const {
    std::vector<Template> out;
    for (const auto& n : nodes_) {
      if (n.id.step_index == 0) out.push_back(Template{n.id.template_id, n.template_type, n.knowledge_tags, {}});
      out.back().steps.push_back(n.text);
    }
    return out;
  }

  /// Digest over parameters, nodes, embeddings and edges.
  std::uint64_t fingerprint() const {
    Fnv1a64 h;
    h.update_u64(std::bit_cast<std::uint64_t>(params_.tau_edge)).field(params_.provider_id).update_u64(params_.dim);
    h.update_u64(corpus_fingerprint_).update_u64(nodes_.size());
    for (const auto& n : nodes_) {
      h.field(n.id.template_id).update_u64(n.id.step_index).field(n.text).field(n.template_type);
      for (const auto& t : n.knowledge_tags) h.field(t);
    }
    h.update(std::string_view(reinterpret_cast<const char*>(embeddings_.data()), embeddings_.size() * sizeof(double)));
    for (const auto& a : arcs_)
      h.update_u64(a.target).update_u64(static_cast<std::uint64_t>(a.kind)).update_u64(std::bit_cast<std::uint64_t>(a.weight));
    for (auto o : offsets_) h.update_u64(o);
    return h.digest();
  }

  /// Throws ValidationError describing the first violated invariant.
  void validate() const {
    const std::size_t n = nodes_.size();
    if (n == 0) throw ValidationError("graph has no nodes");
    if (!(params_.tau_edge > 0.0 && params_.tau_edge < 1.0)) throw ValidationError("tau_edge outside (0,1)");
    if (params_.dim == 0 || embeddings_.size() != n * params_.dim)
      throw ValidationError("embedding matrix does not match node count and dimension");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& node = nodes_[i];
      const bool starts = node.id.step_index == 0;
      if (!starts && (i == 0 || nodes_[i - 1].id.template_id != node.id.template_id ||
                      nodes_[i - 1].id.step_index + 1 != node.id.step_index))
        throw ValidationError("template steps are not contiguous at " + to_string(node.id));
      if (!starts && (nodes_[i - 1].template_type != node.template_type ||
                      nodes_[i - 1].knowledge_tags != node.knowledge_tags))
        throw ValidationError("template metadata differs across steps at " + to_string(node.id));
      if (text::trim(node.text).empty()) throw ValidationError("empty step text at " + to_string(node.id));
      if (!text::is_xml_safe(node.text) || !text::is_xml_safe(node.id.template_id) ||
          !text::is_xml_safe(node.template_type))
        throw ValidationError("unsanitized text at " + to_string(node.id));
      const double norm = std::sqrt(dot(embedding(i), embedding(i)));
      if (std::abs(norm - 1.0) > kUnitNormTolerance)
        throw ValidationError("embedding of " + to_string(node.id) + " is not unit length");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const bool is_final = i + 1 == n || nodes_[i + 1].id.step_index == 0;
      std::size_t sequential = 0;
      auto arcs = out_arcs(i);
      for (std::size_t k = 0; k < arcs.size(); ++k) {
        const Arc& a = arcs[k];
        if (a.target >= n) throw ValidationError("arc target out of range at " + to_string(nodes_[i].id));
        if (k > 0 && arcs[k - 1].target == a.target && arcs[k - 1].kind == a.kind)
          throw ValidationError("parallel arcs of one kind at " + to_string(nodes_[i].id));
        if (a.kind == EdgeKind::Sequential) {
          ++sequential;
          if (a.target != i + 1 || is_final || a.weight != 1.0)
            throw ValidationError("bad sequential edge from " + to_string(nodes_[i].id));
        } else {
          if (a.target == i) throw ValidationError("semantic self-loop at " + to_string(nodes_[i].id));
          if (a.weight < params_.tau_edge)
            throw ValidationError("semantic edge below threshold at " + to_string(nodes_[i].id));
          if (std::abs(a.weight - normalized_similarity(embedding(i), embedding(a.target))) > 1e-9)
            throw ValidationError("semantic weight disagrees with embeddings at " + to_string(nodes_[i].id));
          auto back = out_arcs(a.target);
          auto it = std::lower_bound(back.begin(), back.end(), Arc{static_cast<std::uint32_t>(i), EdgeKind::Semantic, 0},
                                     [](const Arc& x, const Arc& y) {
                                       return std::tie(x.target, x.kind) < std::tie(y.target, y.kind);
                                     });
          if (it == back.end() || it->target != i || it->kind != EdgeKind::Semantic || it->weight != a.weight)
            throw ValidationError("semantic edge lacks its mirror at " + to_string(nodes_[i].id));
        }
      }
      if (sequential != (is_final ? 0u : 1u))
        throw ValidationError("sequential chain broken at " + to_string(nodes_[i].id));
    }
  }

  /// Structural equality with weights compared at `tolerance`.
  bool equivalent(const ThoughtGraph& other, double tolerance = 1e-9) const {
    if (nodes_ != other.nodes_ || params_ != other.params_ || corpus_fingerprint_ != other.corpus_fingerprint_ ||
        offsets_ != other.offsets_ || embeddings_ != other.embeddings_ || arcs_.size() != other.arcs_.size())
      return false;
    for (std::size_t k = 0; k < arcs_.size(); ++k) {
      const Arc& a = arcs_[k];
      const Arc& b = other.arcs_[k];
      if (a.target != b.target || a.kind != b.kind || std::abs(a.weight - b.weight) > tolerance) return false;
    }
    return true;
  }

 private:
  std::vector<NodeInfo> nodes_;
  std::vector<double> embeddings_;
  std::vector<std::size_t> offsets_;
  std::vector<Arc> arcs_;
  std::map<NodeId, std::uint32_t> index_;
  BuildParams params_;
  std::uint64_t corpus_fingerprint_ = 0;
};

struct BuildOptions {
  /// Embedding cache to read from and write through; a private one is used when null.
  EmbeddingCache* cache = nullptr;
  EmbedOptions embed;
  /// Rows per GEMM block in the all-pairs similarity pass.
  std::size_t block_rows = 512;
};

namespace detail {

/// Adds mirrored semantic arcs for every pair i < j with normalized similarity >= tau.
/// A BLAS product screens candidates with a small margin; the kept weight is always
/// the scalar `normalized_similarity` so it is reproducible outside the GEMM.
inline void add_semantic_arcs(std::span<const double> emb, std::size_t n, std::size_t dim, double tau,
                              std::size_t block_rows, std::vector<std::vector<Arc>>& adjacency) {
  constexpr double kScreenMargin = 1e-9;
  const double cos_cut = 2.0 * tau - 1.0 - kScreenMargin;
  block_rows = std::max<std::size_t>(1, block_rows);
  std::vector<double> block;
  for (std::size_t r0 = 0; r0 < n; r0 += block_rows) {
    const std::size_t rows = std::min(block_rows, n - r0);
    const std::size_t cols = n - r0;
    block.assign(rows * cols, 0.0);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(rows), static_cast<int>(cols),
                static_cast<int>(dim), 1.0, emb.data() + r0 * dim, static_cast<int>(dim), emb.data() + r0 * dim,
                static_cast<int>(dim), 0.0, block.data(), static_cast<int>(cols));
    for (std::size_t bi = 0; bi < rows; ++bi) {
      const std::size_t i = r0 + bi;
      const double* row = block.data() + bi * cols;
      for (std::size_t bj = bi + 1; bj < cols; ++bj) {
        if (row[bj] < cos_cut) continue;
        const std::size_t j = r0 + bj;
        const double w = normalized_similarity(emb.subspan(i * dim, dim), emb.subspan(j * dim, dim));
        if (w >= tau) {
          adjacency[i].push_back(Arc{static_cast<std::uint32_t>(j), EdgeKind::Semantic, w});
          adjacency[j].push_back(Arc{static_cast<std::uint32_t>(i), EdgeKind::Semantic, w});
        }
      }
    }
  }
}

inline std::vector<std::vector<Arc>> sequential_arcs(const std::vector<NodeInfo>& nodes) {
  std::vector<std::vector<Arc>> adjacency(nodes.size());
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
    if (nodes[i + 1].id.step_index != 0)
      adjacency[i].push_back(Arc{static_cast<std::uint32_t>(i + 1), EdgeKind::Sequential, 1.0});
  return adjacency;
}

}  // namespace detail

/// Embeds every step of `corpus` and connects consecutive steps (weight 1) plus
/// every distinct pair whose normalized similarity is at least `tau_edge`
/// (mirrored, weight = similarity). Deterministic for a fixed corpus order and provider.
inline ThoughtGraph build_graph(const std::vector<Template>& corpus, EmbeddingProvider& provider, double tau_edge,
                                const BuildOptions& opts = {}) {
  if (!(tau_edge > 0.0 && tau_edge < 1.0))
    throw ConfigError("tau_edge must lie in (0,1), got " + std::to_string(tau_edge));
  if (corpus.empty()) throw ConfigError("cannot build a graph from an empty corpus");

  std::vector<NodeInfo> nodes;
  std::vector<std::string> texts;
  nodes.reserve(total_steps(corpus));
  for (const auto& t : corpus) {
    if (t.steps.empty()) throw ValidationError("template " + t.template_id + ": empty steps");
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      nodes.push_back(NodeInfo{NodeId{text::sanitize(t.template_id), i}, text::sanitize(t.steps[i]),
                               text::sanitize(t.template_type), t.knowledge_tags});
      texts.push_back(nodes.back().text);
    }
  }

  std::optional<EmbeddingCache> local_cache;
  EmbeddingCache* cache = opts.cache;
  if (!cache) cache = &local_cache.emplace(provider.id(), provider.dim());
  std::vector<UnitVector> vectors;
  try {
    vectors = embed(texts, provider, *cache, opts.embed);
  } catch (const EmbeddingError& e) {
    std::string listed;
    for (std::size_t k = 0; k < e.failed_indices().size() && k < 20; ++k)
      listed += (k ? ", " : "") + to_string(nodes[e.failed_indices()[k]].id);
    if (e.failed_indices().size() > 20) listed += ", ...";
    throw EmbeddingError("graph build aborted; failed nodes: " + listed + " (" + e.what() + ")", e.failed_indices(),
                         e.retryable());
  }

  const std::size_t dim = provider.dim();
  std::vector<double> emb;
  emb.reserve(nodes.size() * dim);
  for (const auto& v : vectors) emb.insert(emb.end(), v.values().begin(), v.values().end());

  auto adjacency = detail::sequential_arcs(nodes);
  detail::add_semantic_arcs(emb, nodes.size(), dim, tau_edge, opts.block_rows, adjacency);
  return ThoughtGraph::assemble(std::move(nodes), std::move(emb), std::move(adjacency),
                                BuildParams{tau_edge, provider.id(), dim}, corpus_fingerprint(corpus));
}

/// Mean number of semantic neighbors per node with weight >= tau, for each tau.
/// Thresholds below the graph's build threshold are rejected (those edges were never stored).
inline std::vector<std::pair<double, double>> semantic_degree_profile(const ThoughtGraph& graph,
                                                                      std::span<const double> thresholds) {
  std::vector<std::pair<double, double>> out;
  for (double tau : thresholds) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("threshold outside (0,1): " + std::to_string(tau));
    if (tau < graph.params().tau_edge)
      throw ConfigError("threshold " + std::to_string(tau) + " is below the build threshold " +
                        std::to_string(graph.params().tau_edge));
    std::size_t count = 0;
    for (std::size_t i = 0; i < graph.node_count(); ++i)
      for (const auto& a : graph.out_arcs(i)) count += a.kind == EdgeKind::Semantic && a.weight >= tau;
    out.emplace_back(tau, static_cast<double>(count) / static_cast<double>(graph.node_count()));
  }
  return out;
}

namespace detail {

/// Unbiased draw from [0, bound) using rejection on mt19937_64 (portable, unlike
/// std::uniform_int_distribution).
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = gen();
  } while (x >= limit);
  return x % bound;
}

}  // namespace detail

/// Keeps `n_templates` whole templates chosen uniformly with `seed`, in their original
/// order, with every edge between retained nodes.
inline ThoughtGraph subsample_graph(const ThoughtGraph& graph, std::size_t n_templates, std::uint64_t seed) {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < graph.node_count(); ++i)
    if (graph.node(i).id.step_index == 0) starts.push_back(i);
  if (n_templates < 1 || n_templates > starts.size())
    throw ConfigError("n_templates must be in [1, " + std::to_string(starts.size()) + "], got " +
                      std::to_string(n_templates));

  std::vector<std::size_t> order(starts.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::mt19937_64 gen(seed);
  for (std::size_t k = 0; k < n_templates; ++k) {
    const auto pick = k + detail::uniform_below(gen, order.size() - k);
    std::swap(order[k], order[pick]);
  }
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_templates));
  std::sort(chosen.begin(), chosen.end());

  constexpr auto kDropped = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> remap(graph.node_count(), kDropped);
  std::vector<NodeInfo> nodes;
  std::vector<double> emb;
  for (std::size_t t : chosen) {
    for (std::size_t i = starts[t]; i < graph.node_count() && (i == starts[t] || graph.node(i).id.step_index != 0); ++i) {
      remap[i] = static_cast<std::uint32_t>(nodes.size());
      nodes.push_back(graph.node(i));
      auto e = graph.embedding(i);
      emb.insert(emb.end(), e.begin(), e.end());
    }
  }
  std::vector<std::vector<Arc>> adjacency(nodes.size());
  for (std::size_t i = 0; i < graph.node_count(); ++i) {
    if (remap[i] == kDropped) continue;
    for (const auto& a : graph.out_arcs(i))
      if (remap[a.target] != kDropped) adjacency[remap[i]].push_back(Arc{remap[a.target], a.kind, a.weight});
  }
  std::vector<Template> kept;
  {
    for (const auto& n : nodes) {
      if (n.id.step_index == 0) kept.push_back(Template{n.id.template_id, n.template_type, n.knowledge_tags, {}});
      kept.back().steps.push_back(n.text);
    }
  }
  return ThoughtGraph::assemble(std::move(nodes), std::move(emb), std::move(adjacency), graph.params(),
                                corpus_fingerprint(kept));
}

}  // namespace rot
