#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "rot/text.hpp"

namespace rot {

namespace detail {

inline std::string strip_math_delimiters(std::string s) {
  for (bool changed = true; changed;) {
    changed = false;
    s = std::string(text::trim(s));
    auto strip = [&](std::string_view open, std::string_view close) {
      if (s.size() >= open.size() + close.size() && s.starts_with(open) && s.ends_with(close)) {
        s = s.substr(open.size(), s.size() - open.size() - close.size());
        changed = true;
      }
    };
    strip("$$", "$$");
    if (!changed) strip("$", "$");
    if (!changed) strip("\\(", "\\)");
    if (!changed) strip("\\[", "\\]");
  }
  return s;
}

}  // namespace detail

/// Content of the last \boxed{...} (braces balanced), trimmed, outer math delimiters removed.
inline std::optional<std::string> extract_answer(std::string_view completion) {
  static constexpr std::string_view kBoxed = "\\boxed";
  std::optional<std::string> last;
  for (std::size_t pos = completion.find(kBoxed); pos != std::string_view::npos;
       pos = completion.find(kBoxed, pos + 1)) {
    std::size_t i = pos + kBoxed.size();
    while (i < completion.size() && text::is_space(completion[i])) ++i;
    if (i >= completion.size() || completion[i] != '{') continue;
    int depth = 0;
    std::size_t close = std::string_view::npos;
    for (std::size_t j = i; j < completion.size(); ++j) {
      if (completion[j] == '\\' && j + 1 < completion.size()) {
        ++j;  // skip escaped brace
        continue;
      }
      if (completion[j] == '{') ++depth;
      if (completion[j] == '}' && --depth == 0) {
        close = j;
        break;
      }
    }
    if (close == std::string_view::npos) continue;  // unterminated, e.g. truncated output
    last = detail::strip_math_delimiters(std::string(completion.substr(i + 1, close - i - 1)));
  }
  return last;
}

inline bool is_plain_integer(std::string_view s) {
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) s.remove_prefix(1);
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

/// Trimmed, delimiters stripped; pure integers lose sign noise and leading zeros.
inline std::string canonicalize_answer(std::string_view raw) {
  std::string s = detail::strip_math_delimiters(std::string(raw));
  std::string compact;
  for (char c : s)
    if (!text::is_space(c)) compact += c;
  if (is_plain_integer(compact)) {
    bool neg = compact[0] == '-';
    std::size_t start = (compact[0] == '-' || compact[0] == '+') ? 1 : 0;
    while (start + 1 < compact.size() && compact[start] == '0') ++start;
    std::string digits = compact.substr(start);
    if (digits == "0") neg = false;
    return (neg ? "-" : "") + digits;
  }
  return compact;
}

inline bool answers_match(std::string_view extracted, std::string_view gold) {
  return canonicalize_answer(extracted) == canonicalize_answer(gold);
}

}  // namespace rot
