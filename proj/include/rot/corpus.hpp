#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rot/errors.hpp"
#include "rot/hash.hpp"
#include "rot/log.hpp"
#include "rot/text.hpp"

namespace rot {

using TagSet = std::set<std::string>;

/// One problem-solving template: an ordered list of atomic reasoning steps.
struct Template {
  std::string template_id;
  std::string template_type;
  TagSet knowledge_tags;
  std::vector<std::string> steps;

  bool operator==(const Template&) const = default;
};

struct EvalProblem {
  std::string problem_id;
  std::string statement;
  std::string gold_answer;
  std::string template_type;
  TagSet knowledge_tags;
  /// Benchmark name (file stem by default); groups summaries.
  std::string dataset;

  bool operator==(const EvalProblem&) const = default;
};

namespace detail {

inline std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) throw ParseError(std::string("missing field '") + key + "'", line);
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' must be a string", line);
  return text::sanitize(it->get<std::string>());
}

inline TagSet parse_tags(const nlohmann::json& obj, std::size_t line, bool& present) {
  TagSet tags;
  auto it = obj.find("knowledge_tags");
  present = it != obj.end() && !it->is_null();
  if (!present) return tags;
  if (!it->is_array()) throw ParseError("field 'knowledge_tags' must be an array of strings", line);
  for (const auto& tag : *it) {
    if (!tag.is_string()) throw ParseError("field 'knowledge_tags' must be an array of strings", line);
    auto clean = std::string(text::trim(text::sanitize(tag.get<std::string>())));
    if (clean.empty()) throw ParseError("empty knowledge tag", line);
    tags.insert(std::move(clean));
  }
  return tags;
}

inline nlohmann::json parse_line(std::string_view raw, std::size_t line) {
  try {
    auto j = nlohmann::json::parse(raw);
    if (!j.is_object()) throw ParseError("expected a JSON object", line);
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line);
  }
}

template <typename Fn>
void for_each_jsonl_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (text::trim(raw).empty()) continue;
    fn(raw, line);
  }
}

}  // namespace detail

/// Parses one template object. `line` is used only for error messages.
inline Template template_from_json(const nlohmann::json& j, std::size_t line = 0) {
  Template t;
  t.template_id = detail::required_string(j, "template_id", line);
  if (text::trim(t.template_id).empty()) throw ParseError("empty template_id", line);
  t.template_type = detail::required_string(j, "template_type", line);
  bool tags_present = false;
  t.knowledge_tags = detail::parse_tags(j, line, tags_present);
  auto steps = j.find("steps");
  if (steps == j.end() || !steps->is_array()) throw ParseError("field 'steps' must be an array", line);
  for (const auto& s : *steps) {
    if (!s.is_string()) throw ParseError("template " + t.template_id + ": step must be a string", line);
    auto clean = text::sanitize(s.get<std::string>());
    if (text::trim(clean).empty())
      throw ValidationError("line " + std::to_string(line) + ": template " + t.template_id + ": empty step text");
    t.steps.push_back(std::move(clean));
  }
  if (t.steps.empty())
    throw ValidationError("line " + std::to_string(line) + ": template " + t.template_id + ": empty steps");
  return t;
}

inline nlohmann::json to_json(const Template& t) {
  return nlohmann::json{{"template_id", t.template_id},
                        {"template_type", t.template_type},
                        {"knowledge_tags", t.knowledge_tags},
                        {"steps", t.steps}};
}

/// Loads a templates.jsonl corpus in file order.
inline std::vector<Template> load_templates(const std::filesystem::path& path) {
  std::vector<Template> out;
  std::map<std::string, std::size_t> first_line;
  detail::for_each_jsonl_line(path, [&](std::string_view raw, std::size_t line) {
    auto t = template_from_json(detail::parse_line(raw, line), line);
    auto [it, inserted] = first_line.emplace(t.template_id, line);
    if (!inserted)
      throw ValidationError("duplicate template_id '" + t.template_id + "' on lines " + std::to_string(it->second) +
                            " and " + std::to_string(line));
    out.push_back(std::move(t));
  });
  log::info("loaded " + std::to_string(out.size()) + " templates from " + path.string());
  return out;
}

inline void save_templates(const std::vector<Template>& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& t : corpus) out << to_json(t).dump() << '\n';
}

inline EvalProblem problem_from_json(const nlohmann::json& j, std::size_t line = 0) {
  EvalProblem p;
  auto id = j.find("problem_id");
  if (id == j.end() || !id->is_string() || text::trim(id->get<std::string>()).empty())
    throw ParseError("missing problem_id", line);
  p.problem_id = text::sanitize(id->get<std::string>());
  auto require = [&](const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null())
      throw ValidationError("problem " + p.problem_id + ": missing " + key);
    std::string v = it->is_string() ? it->get<std::string>() : it->dump();
    v = text::sanitize(v);
    if (text::trim(v).empty()) throw ValidationError("problem " + p.problem_id + ": empty " + key);
    return v;
  };
  p.statement = require("statement");
  p.gold_answer = std::string(text::trim(require("gold_answer")));
  if (auto it = j.find("template_type"); it != j.end() && it->is_string()) {
    p.template_type = text::sanitize(it->get<std::string>());
  } else {
    log::warn("problem " + p.problem_id + ": no template_type; type filtering will match nothing");
  }
  bool tags_present = false;
  p.knowledge_tags = detail::parse_tags(j, line, tags_present);
  if (!tags_present) log::warn("problem " + p.problem_id + ": no knowledge_tags, defaulting to empty set");
  if (auto it = j.find("dataset"); it != j.end() && it->is_string()) p.dataset = it->get<std::string>();
  return p;
}

inline nlohmann::json to_json(const EvalProblem& p) {
  nlohmann::json j{{"problem_id", p.problem_id},
                   {"statement", p.statement},
                   {"gold_answer", p.gold_answer},
                   {"template_type", p.template_type},
                   {"knowledge_tags", p.knowledge_tags}};
  if (!p.dataset.empty()) j["dataset"] = p.dataset;
  return j;
}

/// Loads problems.jsonl. Problems without a `dataset` field take the file stem.
inline std::vector<EvalProblem> load_problems(const std::filesystem::path& path) {
  std::vector<EvalProblem> out;
  std::map<std::string, std::size_t> first_line;
  const std::string stem = path.stem().string();
  detail::for_each_jsonl_line(path, [&](std::string_view raw, std::size_t line) {
    auto p = problem_from_json(detail::parse_line(raw, line), line);
    if (p.dataset.empty()) p.dataset = stem;
    auto [it, inserted] = first_line.emplace(p.problem_id, line);
    if (!inserted)
      throw ValidationError("duplicate problem_id '" + p.problem_id + "' on lines " + std::to_string(it->second) +
                            " and " + std::to_string(line));
    out.push_back(std::move(p));
  });
  return out;
}

inline void save_problems(const std::vector<EvalProblem>& problems, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& p : problems) out << to_json(p).dump() << '\n';
}

inline std::size_t total_steps(const std::vector<Template>& corpus) {
  std::size_t n = 0;
  for (const auto& t : corpus) n += t.steps.size();
  return n;
}

/// Order-sensitive digest of every field of every template.
inline std::uint64_t corpus_fingerprint(const std::vector<Template>& corpus) {
  Fnv1a64 h;
  h.update_u64(corpus.size());
  for (const auto& t : corpus) {
    h.field(t.template_id).field(t.template_type);
    h.update_u64(t.knowledge_tags.size());
    for (const auto& tag : t.knowledge_tags) h.field(tag);
    h.update_u64(t.steps.size());
    for (const auto& s : t.steps) h.field(s);
  }
  return h.digest();
}

}  // namespace rot
