#pragma once

#include <cmath>
#include <numbers>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rot/corpus.hpp"
#include "rot/embedding.hpp"
#include "rot/errors.hpp"
#include "rot/graph.hpp"

namespace rot::synthetic {

/// Clustered corpus: every (type, step position) slot owns a few motif centres;
/// a step embedding is its motif centre plus isotropic noise of norm `noise`,
/// with `noise` drawn per step from [noise_min, noise_max]. Two members of one
/// motif then have cosine about 1 / sqrt((1 + s1^2)(1 + s2^2)).
struct Spec {
  std::size_t n_templates = 200;
  std::size_t min_steps = 3;
  std::size_t max_steps = 7;
  std::size_t dim = 64;
  std::size_t n_types = 4;
  std::size_t tags_per_type = 3;
  /// Templates sharing one motif centre, on average.
  double motif_size = 8.0;
  double noise_min = 0.3;
  double noise_max = 0.9;
  std::size_t n_problems = 100;
  /// Noise norm added to a problem's query vector.
  double query_noise = 0.6;
  std::uint64_t seed = 1;
};

struct Corpus {
  std::vector<Template> templates;
  std::vector<EvalProblem> problems;
  EmbeddingCache cache;
};

inline std::string provider_id(const Spec& s) {
  return "synthetic-clustered-v1:seed=" + std::to_string(s.seed) + ":dim=" + std::to_string(s.dim);
}

namespace detail {

// Box-Muller on raw 53-bit uniforms; std::normal_distribution differs between standard libraries.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double operator()() {
    if (spare_) {
      spare_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    cached_ = r * std::sin(2.0 * std::numbers::pi * u2);
    spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t below(std::uint64_t bound) { return rot::detail::uniform_below(gen_, bound); }

 private:
  std::mt19937_64 gen_;
  bool spare_ = false;
  double cached_ = 0.0;
};

inline std::vector<double> unit_random(Gaussian& g, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) x = g();
  const auto u = UnitVector::normalize(std::move(v));
  return {u.values().begin(), u.values().end()};
}

// centre + noise of norm s (centre is unit length)
inline std::vector<double> perturb(Gaussian& g, const std::vector<double>& centre, double s) {
  auto dir = unit_random(g, centre.size());
  std::vector<double> v(centre.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = centre[k] + s * dir[k];
  return v;
}

}  // namespace detail

inline Corpus generate(const Spec& spec) {
  if (spec.n_templates == 0 || spec.n_types == 0 || spec.dim == 0 || spec.min_steps == 0 ||
      spec.max_steps < spec.min_steps || spec.tags_per_type == 0 || !(spec.motif_size > 0) ||
      spec.noise_min < 0 || spec.noise_max < spec.noise_min)
    throw ConfigError("invalid synthetic corpus spec");

  detail::Gaussian g(spec.seed);
  Corpus out{{}, {}, EmbeddingCache(provider_id(spec), spec.dim)};

  const double per_type = static_cast<double>(spec.n_templates) / static_cast<double>(spec.n_types);
  const auto motifs_per_slot = static_cast<std::size_t>(std::max(1.0, std::round(per_type / spec.motif_size)));
  // centres[type][position][motif]
  std::vector<std::vector<std::vector<std::vector<double>>>> centres(spec.n_types);
  for (auto& by_pos : centres) {
    by_pos.resize(spec.max_steps);
    for (auto& slot : by_pos)
      for (std::size_t m = 0; m < motifs_per_slot; ++m) slot.push_back(detail::unit_random(g, spec.dim));
  }

  std::vector<std::vector<UnitVector>> step_vectors;
  for (std::size_t t = 0; t < spec.n_templates; ++t) {
    Template tpl;
    tpl.template_id = "syn-" + std::to_string(t);
    const std::size_t type = t % spec.n_types;
    tpl.template_type = "type-" + std::to_string(type);
    const std::size_t n_tags = 1 + g.below(std::min<std::size_t>(2, spec.tags_per_type));
    while (tpl.knowledge_tags.size() < n_tags)
      tpl.knowledge_tags.insert("tag-" + std::to_string(type) + "-" + std::to_string(g.below(spec.tags_per_type)));
    const std::size_t n_steps = spec.min_steps + g.below(spec.max_steps - spec.min_steps + 1);
    std::vector<UnitVector> vecs;
    for (std::size_t p = 0; p < n_steps; ++p) {
      const std::size_t motif = g.below(motifs_per_slot);
      const double s = spec.noise_min + (spec.noise_max - spec.noise_min) * g.uniform();
      // markup-like characters on purpose, so exports exercise escaping
      tpl.steps.push_back(tpl.template_type + " step " + std::to_string(p) + ": apply <motif " + std::to_string(motif) +
                          "> & check \"" + tpl.template_id + "\"");
      auto v = UnitVector::normalize(detail::perturb(g, centres[type][p][motif], s));
      out.cache.insert_text(tpl.steps.back(), v);
      vecs.push_back(std::move(v));
    }
    out.templates.push_back(std::move(tpl));
    step_vectors.push_back(std::move(vecs));
  }

  // each problem leans towards one step of a source template, any position
  for (std::size_t k = 0; k < spec.n_problems; ++k) {
    const std::size_t src = g.below(spec.n_templates);
    const Template& tpl = out.templates[src];
    const std::size_t step = g.below(tpl.steps.size());
    EvalProblem p;
    p.problem_id = "synp-" + std::to_string(k);
    p.statement = "Synthetic problem " + std::to_string(k) + " drawn near " + tpl.template_id + " step " +
                  std::to_string(step);
    p.gold_answer = std::to_string(k);
    p.template_type = tpl.template_type;
    auto tag = tpl.knowledge_tags.begin();
    std::advance(tag, static_cast<std::ptrdiff_t>(g.below(tpl.knowledge_tags.size())));
    p.knowledge_tags = {*tag};
    p.dataset = "synthetic";
    const auto& base = step_vectors[src][step].values();
    out.cache.insert_text(p.statement, UnitVector::normalize(detail::perturb(
                                           g, std::vector<double>(base.begin(), base.end()), spec.query_noise)));
    out.problems.push_back(std::move(p));
  }
  return out;
}

/// Spec sized like the 3,340-template production corpus (about 17k steps).
inline Spec full_scale_spec(std::uint64_t seed = 7) {
  Spec s;
  s.n_templates = 3340;
  s.min_steps = 3;
  s.max_steps = 7;
  s.dim = 512;
  s.n_types = 8;
  s.n_problems = 100;
  s.seed = seed;
  return s;
}

}  // namespace rot::synthetic
