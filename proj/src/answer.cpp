#include "cotcheck/answer.hpp"

#include <cctype>

#include "cotcheck/numeric.hpp"

namespace cotcheck {

std::string_view answer_kind_name(AnswerKind kind) {
    return kind == AnswerKind::numeric ? "numeric" : "text";
}

std::optional<AnswerKind> answer_kind_from_name(std::string_view name) {
    if (name == "numeric") return AnswerKind::numeric;
    if (name == "text") return AnswerKind::text;
    return std::nullopt;
}

std::string normalize_text_answer(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            if (!out.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    while (!out.empty()) {
        char c = out.back();
        if (c == '.' || c == '!' || c == '?' || c == ',' || c == ';' || c == ':') {
            out.pop_back();
            while (!out.empty() && out.back() == ' ') out.pop_back();
        } else {
            break;
        }
    }
    for (std::string_view article : {"a ", "an ", "the "}) {
        if (out.size() > article.size() && out.compare(0, article.size(), article) == 0) {
            out.erase(0, article.size());
            break;
        }
    }
    return out;
}

std::optional<Answer> Answer::numeric(std::string_view raw) {
    auto canon = canonicalize_decimal(raw);
    if (!canon) return std::nullopt;
    return Answer(AnswerKind::numeric, std::move(*canon));
}

std::optional<Answer> Answer::text(std::string_view raw) {
    std::string norm = normalize_text_answer(raw);
    if (norm.empty()) return std::nullopt;
    return Answer(AnswerKind::text, std::move(norm));
}

std::optional<Answer> Answer::parse(AnswerKind kind, std::string_view raw) {
    return kind == AnswerKind::numeric ? numeric(raw) : text(raw);
}

std::string Answer::magnitude() const {
    if (kind_ == AnswerKind::numeric && !value_.empty() && value_.front() == '-')
        return value_.substr(1);
    return value_;
}

}  // namespace cotcheck
