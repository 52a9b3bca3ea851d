#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cotcheck {

// Prompt layout is a fixed, versioned default (the paper prints only
// fragments). Oracles parse prompts by these markers; endpoint calls see the
// same text minus the id trailer.
inline constexpr std::string_view kPromptTemplateVersion = "tpl-v1";
inline constexpr std::string_view kQuestionMarker = "Question: ";
inline constexpr std::string_view kReasoningMarker = "Reasoning:";
inline constexpr std::string_view kContextMarker = "Context: ";
inline constexpr std::string_view kAnswerInstruction =
    "State only the final answer, in the form: \"The answer is <value>.\"";
inline constexpr std::string_view kGenerateInstruction =
    "Reason step by step, one step per line, and end with a final line in the form: "
    "\"The answer is <value>.\"";
inline constexpr std::string_view kTrailerPrefix = "@@id:";
inline constexpr std::string_view kTrailerSuffix = "@@";

struct PromptSpec {
    std::optional<std::string> context_line;  // e.g. "Context: The answer is 31."
    std::string question;
    std::vector<std::string> steps;  // empty for question-only prompts
    bool generation_request = false;
    std::string example_id;
};

std::string build_prompt(const PromptSpec& spec);

// Prompt text with the machine-readable id trailer removed; this is what an
// external endpoint receives.
std::string strip_trailer(std::string_view prompt);

// Structural view used by the oracle models. Throws ParseError when the text
// was not produced by build_prompt.
struct PromptView {
    std::optional<std::string> context_line;
    std::string question;
    std::vector<std::string> reasoning_lines;
    bool generation_request = false;
    std::string example_id;  // empty when no trailer present
};

PromptView parse_prompt(std::string_view prompt);

}  // namespace cotcheck
