#pragma once

// Terminal-percentage extraction from free-text model responses.
//
// Candidates are percentages ("12%", "12.5 %", "12 percent", "12 per cent",
// the upper end of "5-8%") and bare numbers following an answer cue
// ("answer: 12", "final answer is 0.12", "estimate = 12"). The last
// candidate is taken if it lies in the terminal region, which starts at
// 75% of the text or at the start of the final sentence, whichever comes
// first.
//
// Bare numbers: (1, 100] are percentages; [0, 1] are probabilities only
// with a decimal point; bare 0 and 1 are AMBIGUOUS.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace worldscale {

enum class ParseStatus { OK, NO_NUMBER, OUT_OF_RANGE, AMBIGUOUS };

std::string_view to_string(ParseStatus s);
ParseStatus parse_parse_status(std::string_view text);

struct ParsedAnswer {
  ParseStatus status = ParseStatus::NO_NUMBER;
  std::optional<double> probability;  // present iff status == OK
  // The selected value as a probability when it is convertible, also for
  // AMBIGUOUS results ("between 5% and 8%" keeps 0.08 here).
  std::optional<double> candidate;
  // Byte offsets of the selected match and of the sentence holding it;
  // only meaningful when a candidate was selected.
  std::size_t match_begin = 0;
  std::size_t match_end = 0;
  std::size_t sentence_begin = 0;
  bool matched = false;
};

ParsedAnswer extract_percentage(std::string_view text);

struct RationaleSplit {
  std::string rationale;  // text before the answer clause, trailing space removed
  std::string separator;  // the whitespace between rationale and clause
  std::string clause;     // sentence holding the answer, through the end of text
};

/// rationale + separator + clause == text. Without a selected match the
/// whole text is the rationale.
RationaleSplit split_rationale(std::string_view text);

/// Percentage rendering used by the oracle provider: enough decimals (at
/// least one, and at least three significant digits) that the relative
/// error is at most 1e-12. 0.42 renders as "42.0%".
std::string render_percentage(double q);

struct ExtrapolationResult {
  std::string task_id;
  int variant_id = 0;
  std::string model_name;
  std::optional<double> predicted_p;  // present iff status == OK
  std::string rationale;
  ParseStatus status = ParseStatus::NO_NUMBER;
};

}  // namespace worldscale
