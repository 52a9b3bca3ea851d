#include "cotcheck/prompt.hpp"

#include <sstream>

#include "cotcheck/errors.hpp"

namespace cotcheck {

std::string build_prompt(const PromptSpec& spec) {
    std::string out;
    if (spec.context_line) {
        out += *spec.context_line;
        out += "\n\n";
    }
    out += kQuestionMarker;
    out += spec.question;
    out += '\n';
    if (!spec.steps.empty()) {
        out += kReasoningMarker;
        out += '\n';
        for (const std::string& step : spec.steps) {
            out += step;
            out += '\n';
        }
    }
    out += '\n';
    out += spec.generation_request ? kGenerateInstruction : kAnswerInstruction;
    out += '\n';
    out += kTrailerPrefix;
    out += spec.example_id;
    out += kTrailerSuffix;
    out += '\n';
    return out;
}

namespace {

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) lines.emplace_back(text.substr(start));
            break;
        }
        lines.emplace_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

bool is_trailer(std::string_view line) {
    return line.size() >= kTrailerPrefix.size() + kTrailerSuffix.size() &&
           line.substr(0, kTrailerPrefix.size()) == kTrailerPrefix &&
           line.substr(line.size() - kTrailerSuffix.size()) == kTrailerSuffix;
}

}  // namespace

std::string strip_trailer(std::string_view prompt) {
    auto lines = split_lines(prompt);
    std::string out;
    for (const std::string& line : lines) {
        if (is_trailer(line)) continue;
        out += line;
        out += '\n';
    }
    return out;
}

PromptView parse_prompt(std::string_view prompt) {
    PromptView view;
    auto lines = split_lines(prompt);
    std::size_t i = 0;
    bool saw_question = false;
    bool saw_instruction = false;
    bool in_reasoning = false;
    for (; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (is_trailer(line)) {
            view.example_id =
                line.substr(kTrailerPrefix.size(),
                            line.size() - kTrailerPrefix.size() - kTrailerSuffix.size());
            continue;
        }
        if (line == kAnswerInstruction || line == kGenerateInstruction) {
            saw_instruction = true;
            in_reasoning = false;
            view.generation_request = line == kGenerateInstruction;
            continue;
        }
        if (!saw_question && line.rfind(kContextMarker, 0) == 0) {
            view.context_line = line;
            continue;
        }
        if (line.rfind(kQuestionMarker, 0) == 0 && !saw_question) {
            saw_question = true;
            view.question = line.substr(kQuestionMarker.size());
            continue;
        }
        if (line == kReasoningMarker && saw_question) {
            in_reasoning = true;
            continue;
        }
        if (in_reasoning) {
            if (line.empty()) {
                in_reasoning = false;
            } else {
                view.reasoning_lines.push_back(line);
            }
            continue;
        }
        if (saw_question && !line.empty() && !saw_instruction) {
            // multi-line question text
            view.question += '\n';
            view.question += line;
        }
    }
    if (!saw_question || !saw_instruction)
        throw ParseError("prompt text was not produced by this harness");
    return view;
}

}  // namespace cotcheck
