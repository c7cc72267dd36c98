#include "worldscale/parse.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <vector>

#include <fmt/core.h>

#include "worldscale/errors.hpp"

namespace worldscale {
namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

bool starts_with_ci(std::string_view text, std::size_t pos, std::string_view word) {
  if (pos + word.size() > text.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (lower(text[pos + i]) != word[i]) return false;
  }
  return true;
}

bool ends_with_ci(std::string_view text, std::string_view word) {
  if (text.size() < word.size()) return false;
  if (!starts_with_ci(text, text.size() - word.size(), word)) return false;
  return text.size() == word.size() || !is_alpha(text[text.size() - word.size() - 1]);
}

struct NumberToken {
  std::size_t begin = 0;
  std::size_t num_end = 0;  // end of the digits
  std::size_t end = 0;      // end including a percent marker
  double value = 0.0;
  bool has_decimal = false;
  bool percent = false;
  bool cued = false;  // bare number after an answer cue
};

std::string_view trim_right(std::string_view s, std::string_view chars) {
  while (!s.empty() && chars.find(s.back()) != std::string_view::npos) s.remove_suffix(1);
  return s;
}

bool follows_answer_cue(std::string_view before) {
  constexpr std::string_view kStrip = " \t\r\n*_:=";
  before = trim_right(before, kStrip);
  if (ends_with_ci(before, "is")) before = trim_right(before.substr(0, before.size() - 2), kStrip);
  for (std::string_view cue : {"answer", "estimate", "probability"}) {
    if (ends_with_ci(before, cue)) return true;
  }
  return false;
}

// Length of a percent marker starting at `pos` (after optional spaces), or 0.
std::size_t percent_marker(std::string_view text, std::size_t pos) {
  std::size_t k = pos;
  while (k < text.size() && (text[k] == ' ' || text[k] == '\t')) ++k;
  if (k < text.size() && text[k] == '%') return k + 1 - pos;
  for (std::string_view word : {"percent", "per cent"}) {
    if (starts_with_ci(text, k, word)) {
      std::size_t e = k + word.size();
      if (e == text.size() || !is_alpha(text[e])) return e - pos;
    }
  }
  return 0;
}

std::vector<NumberToken> scan_numbers(std::string_view text) {
  std::vector<NumberToken> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_digit(text[i]) || (i > 0 && (is_alpha(text[i - 1]) || text[i - 1] == '_'))) {
      ++i;
      continue;
    }
    NumberToken t;
    t.begin = i;
    bool negative = false;
    if (i > 0 && text[i - 1] == '-' && (i == 1 || is_space(text[i - 2]) || text[i - 2] == '(' ||
                                        text[i - 2] == ':' || text[i - 2] == '=')) {
      negative = true;
      t.begin = i - 1;
    }
    std::string digits;
    std::size_t j = i;
    while (j < text.size() && is_digit(text[j])) digits.push_back(text[j++]);
    // Thousands separators: 1,234,567
    while (j + 3 < text.size() && text[j] == ',' && is_digit(text[j + 1]) && is_digit(text[j + 2]) &&
           is_digit(text[j + 3]) && (j + 4 >= text.size() || !is_digit(text[j + 4]))) {
      digits.append(text.substr(j + 1, 3));
      j += 4;
    }
    if (j + 1 < text.size() && text[j] == '.' && is_digit(text[j + 1])) {
      t.has_decimal = true;
      digits.push_back('.');
      ++j;
      while (j < text.size() && is_digit(text[j])) digits.push_back(text[j++]);
    }
    t.num_end = j;
    t.end = j;
    double v = 0.0;
    std::from_chars(digits.data(), digits.data() + digits.size(), v);
    t.value = negative ? -v : v;

    if (std::size_t m = percent_marker(text, j); m > 0) {
      t.percent = true;
      t.end = j + m;
    } else if (j < text.size() && is_alpha(text[j])) {
      i = j;  // attached to a word ("2nd", "15years"): not a number token
      continue;
    } else {
      t.cued = follows_answer_cue(text.substr(0, t.begin));
    }
    tokens.push_back(t);
    i = t.end;
  }

  // "5-8%", "5 - 8%", "5 to 8%": the lower end is a percentage too.
  for (std::size_t k = 0; k + 1 < tokens.size(); ++k) {
    auto& a = tokens[k];
    const auto& b = tokens[k + 1];
    if (a.percent || !b.percent) continue;
    std::string_view gap = text.substr(a.num_end, b.begin - a.num_end);
    while (!gap.empty() && is_space(gap.front())) gap.remove_prefix(1);
    while (!gap.empty() && is_space(gap.back())) gap.remove_suffix(1);
    if (gap == "-" || gap == "\xE2\x80\x93" || gap == "to") {
      a.percent = true;
      a.cued = false;
    }
  }

  std::erase_if(tokens, [](const NumberToken& t) { return !t.percent && !t.cued; });
  return tokens;
}

bool is_sentence_end(std::string_view text, std::size_t i) {
  if (text[i] == '\n') return true;
  if (text[i] == '.' || text[i] == '!' || text[i] == '?') {
    return i + 1 == text.size() || is_space(text[i + 1]);
  }
  return false;
}

std::size_t sentence_begin(std::string_view text, std::size_t pos) {
  std::size_t start = 0;
  for (std::size_t b = pos; b-- > 0;) {
    if (is_sentence_end(text, b)) {
      start = b + 1;
      break;
    }
  }
  while (start < pos && is_space(text[start])) ++start;
  return start;
}

std::size_t sentence_end(std::string_view text, std::size_t pos) {
  for (std::size_t e = pos; e < text.size(); ++e) {
    if (is_sentence_end(text, e)) return e;
  }
  return text.size();
}

// Value on the percent scale, for comparing candidates.
double percent_scale(const NumberToken& t) {
  if (t.percent) return t.value;
  if (t.has_decimal && t.value >= 0.0 && t.value <= 1.0) return t.value * 100.0;
  return t.value;
}

}  // namespace

std::string_view to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::OK: return "OK";
    case ParseStatus::NO_NUMBER: return "NO_NUMBER";
    case ParseStatus::OUT_OF_RANGE: return "OUT_OF_RANGE";
    case ParseStatus::AMBIGUOUS: return "AMBIGUOUS";
  }
  return "NO_NUMBER";
}

ParseStatus parse_parse_status(std::string_view text) {
  for (auto s : {ParseStatus::OK, ParseStatus::NO_NUMBER, ParseStatus::OUT_OF_RANGE, ParseStatus::AMBIGUOUS}) {
    if (to_string(s) == text) return s;
  }
  throw DataError(fmt::format("unknown parse status '{}'", text));
}

ParsedAnswer extract_percentage(std::string_view text) {
  ParsedAnswer out;
  const auto tokens = scan_numbers(text);
  if (tokens.empty()) return out;

  std::size_t last = text.size();
  while (last > 0 && is_space(text[last - 1])) --last;
  const std::size_t final_sentence = sentence_begin(text, last > 0 ? last - 1 : 0);
  const std::size_t region = std::min(last * 3 / 4, final_sentence);

  const NumberToken& pick = tokens.back();
  if (pick.begin < region) return out;

  out.matched = true;
  out.match_begin = pick.begin;
  out.match_end = pick.end;
  out.sentence_begin = sentence_begin(text, pick.begin);

  const double v = pick.value;
  if (pick.percent) {
    if (v < 0.0 || v > 100.0) {
      out.status = ParseStatus::OUT_OF_RANGE;
      return out;
    }
    out.candidate = v / 100.0;
  } else {
    if (v < 0.0 || v > 100.0) {
      out.status = ParseStatus::OUT_OF_RANGE;
      return out;
    }
    if (pick.has_decimal && v <= 1.0) {
      out.candidate = v;
    } else if (!pick.has_decimal && (v == 0.0 || v == 1.0)) {
      out.status = ParseStatus::AMBIGUOUS;
      return out;
    } else {
      out.candidate = v / 100.0;
    }
  }

  const std::size_t end = sentence_end(text, pick.end);
  const double mine = percent_scale(pick);
  for (const auto& t : tokens) {
    if (&t == &pick || t.begin < out.sentence_begin || t.begin >= end) continue;
    const double other = percent_scale(t);
    if (std::abs(other - mine) > 1e-9 * std::max(1.0, std::abs(mine))) {
      out.status = ParseStatus::AMBIGUOUS;
      return out;
    }
  }
  out.status = ParseStatus::OK;
  out.probability = out.candidate;
  return out;
}

RationaleSplit split_rationale(std::string_view text) {
  const auto parsed = extract_percentage(text);
  if (!parsed.matched) return {std::string(text), "", ""};
  std::size_t cut = parsed.sentence_begin;
  std::size_t r_end = cut;
  while (r_end > 0 && is_space(text[r_end - 1])) --r_end;
  return {std::string(text.substr(0, r_end)), std::string(text.substr(r_end, cut - r_end)),
          std::string(text.substr(cut))};
}

std::string render_percentage(double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError(fmt::format("probability {} outside [0, 1]", q));
  const double pct = q * 100.0;
  if (pct == 0.0) return "0.0%";
  const int first = std::max(1, 2 - static_cast<int>(std::floor(std::log10(pct))));
  std::string s;
  for (int d = first; d <= 20; ++d) {
    s = fmt::format("{:.{}f}", pct, d);
    double back = 0.0;
    std::from_chars(s.data(), s.data() + s.size(), back);
    if (std::abs(back - pct) <= 1e-12 * pct) break;
  }
  return s + "%";
}

}  // namespace worldscale
