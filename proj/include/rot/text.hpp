#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace rot::text {

namespace detail {

/// Decodes one UTF-8 scalar value at `pos`. Returns the code point and byte length,
/// or nullopt for overlong, surrogate, out-of-range, or truncated sequences.
inline std::optional<std::pair<char32_t, std::size_t>> decode_utf8(std::string_view s, std::size_t pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) return std::pair{static_cast<char32_t>(b0), std::size_t{1}};
  std::size_t len;
  char32_t cp;
  char32_t min;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2, cp = b0 & 0x1F, min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3, cp = b0 & 0x0F, min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4, cp = b0 & 0x07, min = 0x10000;
  } else {
    return std::nullopt;
  }
  if (pos + len > s.size()) return std::nullopt;
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[pos + k]);
    if ((b & 0xC0) != 0x80) return std::nullopt;
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return std::nullopt;
  return std::pair{cp, len};
}

/// XML 1.0 Char production.
constexpr bool xml_char_allowed(char32_t cp) noexcept {
  return cp == 0x9 || cp == 0xA || cp == 0xD || (cp >= 0x20 && cp <= 0xD7FF) || (cp >= 0xE000 && cp <= 0xFFFD) ||
         (cp >= 0x10000 && cp <= 0x10FFFF);
}

}  // namespace detail

/// Removes invalid UTF-8 bytes and code points that XML 1.0 cannot carry (C0 controls
/// other than tab/LF/CR, U+FFFE/U+FFFF, lone surrogates). Reserved characters such as
/// `<` and `&` are kept; they are escaped at serialization time. Never lengthens the
/// input and is idempotent.
inline std::string sanitize(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  std::size_t pos = 0;
  while (pos < raw.size()) {
    auto decoded = detail::decode_utf8(raw, pos);
    if (!decoded) {
      ++pos;
      continue;
    }
    auto [cp, len] = *decoded;
    if (detail::xml_char_allowed(cp)) out.append(raw.substr(pos, len));
    pos += len;
  }
  return out;
}

/// True when `s` is valid UTF-8 containing only XML-legal characters.
inline bool is_xml_safe(std::string_view s) {
  std::size_t pos = 0;
  while (pos < s.size()) {
    auto decoded = detail::decode_utf8(s, pos);
    if (!decoded || !detail::xml_char_allowed(decoded->first)) return false;
    pos += decoded->second;
  }
  return true;
}

/// Escapes the five reserved characters plus CR (which XML parsers would otherwise
/// normalize away). Input must already be sanitized.
inline std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size() + s.size() / 8);
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      case '\r': out += "&#13;"; break;
      default: out += c;
    }
  }
  return out;
}

inline constexpr bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) noexcept {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

/// ASCII case folding. Non-ASCII bytes pass through unchanged.
inline std::string casefold(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline bool iequals(std::string_view a, std::string_view b) noexcept {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

inline bool is_word_char(char c) noexcept {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '_' || u >= 0x80;
}

}  // namespace rot::text
