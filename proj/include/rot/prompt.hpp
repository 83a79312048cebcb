#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rot/corpus.hpp"
#include "rot/errors.hpp"
#include "rot/hash.hpp"
#include "rot/retrieval.hpp"
#include "rot/text.hpp"

namespace rot {

enum class PromptMode { CoT, RoT, RoT_TI };

inline const char* to_string(PromptMode m) noexcept {
  switch (m) {
    case PromptMode::CoT: return "CoT";
    case PromptMode::RoT: return "RoT";
    case PromptMode::RoT_TI: return "RoT_TI";
  }
  return "?";
}

inline PromptMode prompt_mode_from_string(std::string_view s) {
  if (text::iequals(s, "CoT")) return PromptMode::CoT;
  if (text::iequals(s, "RoT")) return PromptMode::RoT;
  if (text::iequals(s, "RoT_TI") || text::iequals(s, "RoT+TI") || text::iequals(s, "RoT-TI")) return PromptMode::RoT_TI;
  throw ConfigError("unknown prompt mode '" + std::string(s) + "' (expected CoT, RoT or RoT_TI)");
}

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";

struct PromptBundle {
  PromptMode mode = PromptMode::CoT;
  std::string problem_id;
  /// User-turn text.
  std::string user_text;
  /// RoT_TI only: text placed right after the assistant's opening think tag.
  std::optional<std::string> think_prefix;

  /// Partial assistant turn sent for RoT_TI, empty otherwise.
  std::string assistant_prefill() const {
    return think_prefix ? std::string(kThinkOpen) + "\n" + *think_prefix : std::string();
  }

  bool operator==(const PromptBundle&) const = default;
};

namespace prompts {

inline constexpr std::string_view kCotScaffold =
    "Solve the following math problem efficiently and clearly. Present the solution steps logically.\n"
    "\n"
    "- For complex problems (3 steps or more):\n"
    "Use this step-by-step format:\n"
    "\n"
    "Step 1: [Concise description]\n"
    "[Brief explanation and calculations]\n"
    "\n"
    "Step 2: [Concise description]\n"
    "[Brief explanation and calculations]\n"
    "\n"
    "...\n"
    "\n"
    "Regardless of the approach, always conclude with:\n"
    "\n"
    "Therefore, the final answer is: $\\boxed{answer}$.\n"
    "\n"
    "Where [answer] is just the final numerical answer that solves the problem. Ensure the number is clearly "
    "identifiable within the box.\n"
    "\n";

inline constexpr std::string_view kCotClosing = "\n\nLet's solve this step-by-step";

inline constexpr std::string_view kTemplateInstruction =
    "You are given a template to solve the problem. Use the given steps if applicable otherwise use them to guide "
    "your reasoning and present the solution steps logically to solve this problem: \n";

inline constexpr std::string_view kInterventionOpening =
    "I need to follow the given steps to guide me in reasoning to solve the problem. I will follow each step and "
    "modify the steps to make them match the problem and then solve the problem accordingly. The template is. ";

inline constexpr std::string_view kInterventionClosing =
    " Strictly following the given steps for guidance, I will now solve the problem starting from the step 1. "
    "Using step 1";

}  // namespace prompts

/// "Step 1: ...", "Step 2: ..." joined by `separator`.
inline std::string numbered_steps(const std::vector<std::string>& steps, std::string_view separator) {
  std::string out;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (k) out += separator;
    out += "Step " + std::to_string(k + 1) + ": " + steps[k];
  }
  return out;
}

/// Renders the prompt for one mode. RoT puts the numbered steps in the user turn;
/// RoT_TI keeps the user turn step-free and moves the steps into the think prefix.
inline PromptBundle render_prompt(const EvalProblem& problem, const AssembledTemplate* assembled, PromptMode mode) {
  PromptBundle b;
  b.mode = mode;
  b.problem_id = problem.problem_id;
  if (mode == PromptMode::CoT) {
    b.user_text = std::string(prompts::kCotScaffold) + "Problem: " + problem.statement + std::string(prompts::kCotClosing);
    return b;
  }
  if (!assembled || assembled->step_texts.empty())
    throw ConfigError(std::string(to_string(mode)) + " prompt for " + problem.problem_id +
                      " needs a retrieved template; fall back to CoT");
  if (mode == PromptMode::RoT) {
    b.user_text = std::string(prompts::kTemplateInstruction) + numbered_steps(assembled->step_texts, "\n") +
                  "\nProblem: " + problem.statement;
  } else {
    b.user_text = std::string(prompts::kTemplateInstruction) + "\nProblem: " + problem.statement;
    b.think_prefix = std::string(prompts::kInterventionOpening) + numbered_steps(assembled->step_texts, " ") +
                     std::string(prompts::kInterventionClosing);
  }
  return b;
}

inline PromptBundle render_prompt(const EvalProblem& problem, const std::optional<AssembledTemplate>& assembled,
                                  PromptMode mode) {
  return render_prompt(problem, assembled ? &*assembled : nullptr, mode);
}

/// USD per million tokens.
struct Price {
  double input_per_million = 0.0;
  double output_per_million = 0.0;
  bool operator==(const Price&) const = default;
};

/// Model id -> price. Lookup is case-insensitive.
class PriceTable {
 public:
  PriceTable() = default;

  void set(const std::string& model_id, Price p) {
    if (!(p.input_per_million > 0.0) || !(p.output_per_million > 0.0))
      throw ValidationError("prices for " + model_id + " must be positive");
    prices_[text::casefold(model_id)] = Entry{model_id, p};
  }

  const Price& at(std::string_view model_id) const {
    auto it = prices_.find(text::casefold(model_id));
    if (it == prices_.end()) {
      std::string known;
      for (const auto& [_, e] : prices_) known += (known.empty() ? "" : ", ") + e.display_id;
      throw NotFoundError("no price for model '" + std::string(model_id) + "'; known: " + known);
    }
    return it->second.price;
  }

  bool contains(std::string_view model_id) const { return prices_.count(text::casefold(model_id)) > 0; }

  std::vector<std::string> model_ids() const {
    std::vector<std::string> out;
    for (const auto& [_, e] : prices_) out.push_back(e.display_id);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [_, e] : prices_)
      j[e.display_id] = {{"input_per_million", e.price.input_per_million},
                         {"output_per_million", e.price.output_per_million}};
    return j;
  }

  static PriceTable from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("price table must be a JSON object");
    PriceTable t;
    for (const auto& [model, p] : j.items())
      t.set(model, Price{p.at("input_per_million").get<double>(), p.at("output_per_million").get<double>()});
    return t;
  }

  static PriceTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }

  std::string digest() const { return to_hex(fnv1a64(to_json().dump())); }

 private:
  struct Entry {
    std::string display_id;
    Price price;
  };
  std::map<std::string, Entry> prices_;
};

/// Qwen3 API prices (USD per million tokens) used for cost reporting.
inline PriceTable default_price_table() {
  PriceTable t;
  t.set("Qwen3-0.6B", {0.11, 1.26});
  t.set("Qwen3-1.7B", {0.11, 1.26});
  t.set("Qwen3-4B", {0.11, 1.26});
  t.set("Qwen3-8B", {0.18, 2.10});
  t.set("Qwen3-14B", {0.35, 4.20});
  t.set("Qwen3-32B", {0.70, 8.40});
  return t;
}

inline double cost_usd(std::uint64_t input_tokens, std::uint64_t output_tokens, std::string_view model_id,
                       const PriceTable& table) {
  const auto& p = table.at(model_id);
  return static_cast<double>(input_tokens) / 1e6 * p.input_per_million +
         static_cast<double>(output_tokens) / 1e6 * p.output_per_million;
}

inline const std::vector<std::string>& default_switch_markers() {
  static const std::vector<std::string> markers{"however", "alternatively", "instead"};
  return markers;
}

/// Case-insensitive, whole-word occurrences of any marker.
inline std::size_t count_path_switches(std::string_view completion,
                                       const std::vector<std::string>& markers = default_switch_markers()) {
  const std::string folded = text::casefold(completion);
  std::size_t count = 0;
  for (const auto& m : markers) {
    const std::string needle = text::casefold(m);
    if (needle.empty()) continue;
    for (std::size_t pos = folded.find(needle); pos != std::string::npos; pos = folded.find(needle, pos + 1)) {
      const bool left = pos == 0 || !text::is_word_char(folded[pos - 1]);
      const std::size_t end = pos + needle.size();
      const bool right = end == folded.size() || !text::is_word_char(folded[end]);
      count += left && right;
    }
  }
  return count;
}

}  // namespace rot
