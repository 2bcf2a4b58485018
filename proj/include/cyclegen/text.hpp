#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace cyclegen::text {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string collapse_spaces(std::string_view s) { return join(split_whitespace(s)); }

// ASCII-only; non-ASCII bytes pass through untouched.
inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

inline bool is_split_punct(char c) {
  switch (c) {
    case '.': case ',': case ';': case ':': case '!': case '?':
    case '(': case ')': case '"':
      return true;
    default:
      return false;
  }
}

inline bool is_bracket_token(std::string_view w) {
  return w.size() >= 3 && w.front() == '[' && w.back() == ']';
}

/// Whitespace tokenizer that also peels leading/trailing punctuation off each
/// word. Bracketed tokens such as "[S]" and inner punctuation ("17068.8",
/// "O'Hara") survive intact. Shared by the models and the metrics so that
/// token boundaries agree everywhere.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  for (const std::string& word : split_whitespace(s)) {
    if (is_bracket_token(word)) {
      out.push_back(word);
      continue;
    }
    std::size_t b = 0, e = word.size();
    while (b < e && is_split_punct(word[b])) {
      out.emplace_back(1, word[b]);
      ++b;
    }
    std::vector<std::string> tail;
    while (e > b && is_split_punct(word[e - 1])) {
      tail.emplace_back(1, word[e - 1]);
      --e;
    }
    if (e > b) out.push_back(word.substr(b, e - b));
    out.insert(out.end(), tail.rbegin(), tail.rend());
  }
  return out;
}

inline std::vector<std::string> tokenize_lower(std::string_view s) { return tokenize(to_lower(s)); }

}  // namespace cyclegen::text
