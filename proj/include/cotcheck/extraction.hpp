#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "cotcheck/answer.hpp"
#include "cotcheck/numeric.hpp"

namespace cotcheck {

enum class ExtractMode { strict, magnitude_corrected };

std::string_view extract_mode_name(ExtractMode mode);
std::optional<ExtractMode> extract_mode_from_name(std::string_view name);

struct ExtractionPolicy {
    ExtractMode mode = ExtractMode::strict;
    AnswerKind answer_kind = AnswerKind::numeric;
};

enum class ExtractionSource { leading_integer_line, answer_phrase, arithmetic_eval, text_match, none };

std::string_view extraction_source_name(ExtractionSource source);
std::optional<ExtractionSource> extraction_source_from_name(std::string_view name);

struct Extraction {
    std::optional<Answer> value;
    ExtractionSource source = ExtractionSource::none;
    std::string raw_span;
};

struct ExtractOptions {
    // "clean leading integer line": first such line by default; last-line
    // selection exists for robustness studies.
    bool first_bare_number_line = true;
};

// Priority: (1) a line that is exactly one signed number, (2) the last
// "answer is X" phrase or \boxed{X}, (3) the last standalone arithmetic
// expression, evaluated exactly. Absence is encoded as source none.
Extraction extract_numeric_answer(std::string_view completion, const ExtractOptions& options = {});

// Kind-dispatching wrapper: numeric runs extract_numeric_answer, text takes
// the last "answer is X" phrase normalized as text.
Extraction extract_answer(std::string_view completion, const ExtractionPolicy& policy,
                          const ExtractOptions& options = {});

// Exact evaluation of + - x / (ASCII and unicode forms) with parentheses and
// standard precedence. Throws ParseError on bad syntax, DomainError on
// division by zero or a value with no finite decimal expansion.
Rational eval_arithmetic(std::string_view expr);

// strict: canonical equality. magnitude_corrected: |a| == |b| for numeric
// values (sign-inversion artifacts). Text compares normalized forms.
bool compare_answers(const Answer& extracted, const Answer& gold, const ExtractionPolicy& policy);

}  // namespace cotcheck
