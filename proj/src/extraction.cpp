#include "cotcheck/extraction.hpp"

#include <algorithm>
#include <cctype>
#include <vector>

#include "cotcheck/errors.hpp"

namespace cotcheck {

std::string_view extract_mode_name(ExtractMode mode) {
    return mode == ExtractMode::strict ? "strict" : "magnitude_corrected";
}

std::optional<ExtractMode> extract_mode_from_name(std::string_view name) {
    if (name == "strict") return ExtractMode::strict;
    if (name == "magnitude_corrected" || name == "magnitude") return ExtractMode::magnitude_corrected;
    return std::nullopt;
}

std::string_view extraction_source_name(ExtractionSource source) {
    switch (source) {
        case ExtractionSource::leading_integer_line: return "leading_integer_line";
        case ExtractionSource::answer_phrase: return "answer_phrase";
        case ExtractionSource::arithmetic_eval: return "arithmetic_eval";
        case ExtractionSource::text_match: return "text_match";
        default: return "none";
    }
}

std::optional<ExtractionSource> extraction_source_from_name(std::string_view name) {
    for (ExtractionSource source :
         {ExtractionSource::leading_integer_line, ExtractionSource::answer_phrase,
          ExtractionSource::arithmetic_eval, ExtractionSource::text_match,
          ExtractionSource::none}) {
        if (extraction_source_name(source) == name) return source;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// arithmetic evaluator: recursive descent over exact rationals

namespace {

class ExpressionParser {
 public:
    explicit ExpressionParser(std::string_view text) : text_(text) {}

    Rational parse() {
        Rational value = expression();
        skip_spaces();
        if (pos_ != text_.size())
            throw ParseError("trailing input in expression at offset " + std::to_string(pos_));
        return value;
    }

 private:
    Rational expression() {
        Rational value = term();
        for (;;) {
            skip_spaces();
            if (consume_any({"+"})) {
                value += term();
            } else if (consume_any({"-", "−"})) {
                value -= term();
            } else {
                return value;
            }
        }
    }

    Rational term() {
        Rational value = factor();
        for (;;) {
            skip_spaces();
            if (consume_any({"*", "×", "x"})) {
                value *= factor();
            } else if (consume_any({"/", "÷"})) {
                Rational divisor = factor();
                if (divisor == 0) throw DomainError("division by zero");
                value /= divisor;
            } else {
                return value;
            }
        }
    }

    Rational factor() {
        skip_spaces();
        if (consume_any({"-", "−"})) return -factor();
        if (consume_any({"+"})) return factor();
        if (consume_any({"("})) {
            Rational value = expression();
            skip_spaces();
            if (!consume_any({")"})) throw ParseError("missing closing parenthesis");
            return value;
        }
        return number();
    }

    Rational number() {
        skip_spaces();
        std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == ','))
            ++pos_;
        if (pos_ + 1 < text_.size() && text_[pos_] == '.' &&
            std::isdigit(static_cast<unsigned char>(text_[pos_ + 1]))) {
            ++pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
                ++pos_;
        }
        if (pos_ == start) throw ParseError("expected a number at offset " + std::to_string(start));
        auto canon = canonicalize_decimal(text_.substr(start, pos_ - start));
        if (!canon) throw ParseError("malformed number at offset " + std::to_string(start));
        return rational_from_decimal(*canon);
    }

    bool consume_any(std::initializer_list<std::string_view> tokens) {
        for (std::string_view token : tokens) {
            if (text_.compare(pos_, token.size(), token) == 0) {
                // bare 'x' as multiplication only between spaces ("3 x 4")
                if (token == "x" &&
                    !(pos_ > 0 && text_[pos_ - 1] == ' ' && pos_ + 1 < text_.size() &&
                      text_[pos_ + 1] == ' '))
                    continue;
                pos_ += token.size();
                return true;
            }
        }
        return false;
    }

    void skip_spaces() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

}  // namespace

Rational eval_arithmetic(std::string_view expr) {
    Rational value = ExpressionParser(expr).parse();
    if (!decimal_from_rational(value))
        throw DomainError("expression value has no finite decimal form");
    return value;
}

// ---------------------------------------------------------------------------
// completion parsing

namespace {

std::vector<std::string_view> completion_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        std::string_view line = nl == std::string_view::npos
                                    ? text.substr(start)
                                    : text.substr(start, nl - start);
        lines.push_back(line);
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return lines;
}

std::string_view trim_view(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// A line that is exactly one signed integer/decimal, optional terminal '.'.
std::optional<Answer> bare_number_line(std::string_view line) {
    std::string_view v = trim_view(line);
    if (v.empty()) return std::nullopt;
    std::size_t digits = 0;
    for (char c : v)
        if (std::isdigit(static_cast<unsigned char>(c))) ++digits;
    if (digits == 0) return std::nullopt;
    for (char c : v) {
        if (!std::isdigit(static_cast<unsigned char>(c)) && c != '+' && c != '-' && c != '.' &&
            c != ',' && c != '$')
            return std::nullopt;
    }
    return Answer::numeric(v);
}

// The numeric token immediately after an "answer is" phrase; tolerates
// currency marks and trailing prose ("the answer is 24 apples").
std::optional<std::pair<Answer, std::string>> phrase_numeric_value(std::string_view rest) {
    std::size_t i = 0;
    while (i < rest.size() && (rest[i] == ' ' || rest[i] == ':')) ++i;
    std::size_t begin = i;
    if (i < rest.size() && (rest[i] == '$')) ++i;
    if (i < rest.size() && (rest[i] == '+' || rest[i] == '-')) ++i;
    std::size_t digit_start = i;
    while (i < rest.size() &&
           (std::isdigit(static_cast<unsigned char>(rest[i])) || rest[i] == ','))
        ++i;
    if (i + 1 < rest.size() && rest[i] == '.' &&
        std::isdigit(static_cast<unsigned char>(rest[i + 1]))) {
        ++i;
        while (i < rest.size() && std::isdigit(static_cast<unsigned char>(rest[i]))) ++i;
    }
    if (i == digit_start) return std::nullopt;
    std::string raw{rest.substr(begin, i - begin)};
    auto value = Answer::numeric(raw);
    if (!value) return std::nullopt;
    return std::make_pair(*value, raw);
}

bool ieq_at(std::string_view text, std::size_t pos, std::string_view needle) {
    if (pos + needle.size() > text.size()) return false;
    for (std::size_t i = 0; i < needle.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(text[pos + i])) != needle[i]) return false;
    return true;
}

struct PhraseHit {
    Answer value;
    std::string raw;
};

// Last "answer is X" phrase or \boxed{X} in the completion.
std::optional<PhraseHit> last_phrase_value(std::string_view text, AnswerKind kind) {
    std::optional<PhraseHit> hit;
    constexpr std::string_view kPhrase = "answer is";
    for (std::size_t i = 0; i + kPhrase.size() <= text.size(); ++i) {
        if (!ieq_at(text, i, kPhrase)) continue;
        if (i > 0 && std::isalpha(static_cast<unsigned char>(text[i - 1]))) continue;
        std::string_view rest = text.substr(i + kPhrase.size());
        if (kind == AnswerKind::numeric) {
            if (auto value = phrase_numeric_value(rest)) hit = PhraseHit{value->first, value->second};
        } else {
            std::size_t end = rest.find_first_of(".!?\n");
            std::string raw{trim_view(rest.substr(0, end))};
            if (auto value = Answer::text(raw)) hit = PhraseHit{*value, raw};
        }
    }
    constexpr std::string_view kBoxed = "\\boxed{";
    for (std::size_t i = 0; i + kBoxed.size() <= text.size(); ++i) {
        if (text.compare(i, kBoxed.size(), kBoxed) != 0) continue;
        int depth = 1;
        std::size_t j = i + kBoxed.size();
        for (; j < text.size() && depth > 0; ++j) {
            if (text[j] == '{') ++depth;
            if (text[j] == '}') --depth;
        }
        if (depth != 0) continue;
        std::string raw{text.substr(i + kBoxed.size(), j - 1 - (i + kBoxed.size()))};
        if (auto value = Answer::parse(kind, raw)) hit = PhraseHit{*value, raw};
    }
    return hit;
}

bool has_binary_operator(std::string_view candidate) {
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        char c = candidate[i];
        if (c == '*' || c == '/') return true;
        if ((c == '+' || c == '-') && i > 0) return true;
        if (candidate.compare(i, 2, "×") == 0 || candidate.compare(i, 2, "÷") == 0)
            return true;
        if (candidate.compare(i, 3, "−") == 0 && i > 0) return true;
    }
    return false;
}

}  // namespace

Extraction extract_numeric_answer(std::string_view completion, const ExtractOptions& options) {
    auto lines = completion_lines(completion);

    // (1) clean bare-number line
    std::optional<Extraction> bare;
    for (std::string_view line : lines) {
        if (auto value = bare_number_line(line)) {
            bare = Extraction{value, ExtractionSource::leading_integer_line,
                              std::string(trim_view(line))};
            if (options.first_bare_number_line) break;
        }
    }
    if (bare) return *bare;

    // (2) last "answer is X" / \boxed{X}
    if (auto hit = last_phrase_value(completion, AnswerKind::numeric))
        return Extraction{hit->value, ExtractionSource::answer_phrase, hit->raw};

    // (3) last standalone arithmetic expression
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        std::string_view line = trim_view(*it);
        if (line.empty()) continue;
        std::size_t eq = line.rfind('=');
        std::string_view candidate = eq == std::string_view::npos ? line : line.substr(eq + 1);
        candidate = trim_view(candidate);
        if (!candidate.empty() && candidate.back() == '.') candidate.remove_suffix(1);
        if (candidate.empty() || !has_binary_operator(candidate)) continue;
        try {
            Rational value = eval_arithmetic(candidate);
            auto decimal = decimal_from_rational(value);
            return Extraction{Answer::numeric(*decimal), ExtractionSource::arithmetic_eval,
                              std::string(candidate)};
        } catch (const ParseError&) {
        } catch (const DomainError&) {
        }
    }
    return Extraction{std::nullopt, ExtractionSource::none, ""};
}

Extraction extract_answer(std::string_view completion, const ExtractionPolicy& policy,
                          const ExtractOptions& options) {
    if (policy.answer_kind == AnswerKind::numeric)
        return extract_numeric_answer(completion, options);
    if (auto hit = last_phrase_value(completion, AnswerKind::text))
        return Extraction{hit->value, ExtractionSource::text_match, hit->raw};
    return Extraction{std::nullopt, ExtractionSource::none, ""};
}

bool compare_answers(const Answer& extracted, const Answer& gold, const ExtractionPolicy& policy) {
    if (extracted.kind() != gold.kind())
        throw ValidationError("compare_answers: answer kinds differ");
    if (gold.kind() == AnswerKind::text) return extracted.value() == gold.value();
    if (policy.mode == ExtractMode::magnitude_corrected)
        return extracted.magnitude() == gold.magnitude();
    return extracted.value() == gold.value();
}

}  // namespace cotcheck
