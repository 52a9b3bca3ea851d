#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace cotcheck {

enum class AnswerKind { numeric, text };

std::string_view answer_kind_name(AnswerKind kind);
std::optional<AnswerKind> answer_kind_from_name(std::string_view name);

// Lowercase, trim, collapse internal whitespace, strip terminal punctuation
// and one leading article (a/an/the).
std::string normalize_text_answer(std::string_view s);

// A final answer in canonical form. Numeric values hold a canonical decimal
// string ("24", "-260", "0.5"); text values hold normalized lowercase text.
// Exactly one representation exists per value, so equality is string equality.
class Answer {
 public:
    Answer() : kind_(AnswerKind::numeric), value_("0") {}

    static std::optional<Answer> numeric(std::string_view raw);
    static std::optional<Answer> text(std::string_view raw);
    // Parses per the requested kind; nullopt when raw does not canonicalize.
    static std::optional<Answer> parse(AnswerKind kind, std::string_view raw);

    AnswerKind kind() const { return kind_; }
    const std::string& value() const { return value_; }
    bool is_numeric() const { return kind_ == AnswerKind::numeric; }

    // Canonical value with any leading '-' removed (numeric only).
    std::string magnitude() const;

    // How the answer renders inside chain text and completions.
    const std::string& display() const { return value_; }

    bool operator==(const Answer&) const = default;
    bool operator<(const Answer& other) const {
        return value_ < other.value_;
    }

 private:
    Answer(AnswerKind kind, std::string value) : kind_(kind), value_(std::move(value)) {}
    AnswerKind kind_;
    std::string value_;
};

}  // namespace cotcheck
