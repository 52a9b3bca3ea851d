#include "cotcheck/transforms.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "cotcheck/errors.hpp"
#include "cotcheck/numeric.hpp"
#include "cotcheck/prompt.hpp"
#include "cotcheck/rng.hpp"

namespace cotcheck {
namespace {

struct PhrasePair {
    std::string_view from;
    std::string_view to;
};

// Swap table for the three word families; both directions listed.
constexpr PhrasePair kPhraseSwaps[] = {
    {"plus", "minus"},         {"minus", "plus"},
    {"more", "fewer"},         {"fewer", "more"},
    {"add", "subtract"},       {"subtract", "add"},
    {"adds", "subtracts"},     {"subtracts", "adds"},
    {"added", "subtracted"},   {"subtracted", "added"},
    {"adding", "subtracting"}, {"subtracting", "adding"},
};

bool is_word_char(unsigned char c) { return std::isalpha(c) != 0; }

bool flank_ok(std::string_view text, std::size_t begin, std::size_t end) {
    // Operators count only between digits, spaces or parentheses, so
    // hyphenated words and slashes in prose stay untouched.
    auto cls = [](char c) {
        return std::isdigit(static_cast<unsigned char>(c)) || c == ' ' || c == '(' || c == ')' ||
               c == '=';
    };
    if (begin == 0 || end >= text.size()) return false;
    return cls(text[begin - 1]) && cls(text[end]);
}

struct OperatorSwap {
    std::string_view from;
    std::string_view to;
};

constexpr OperatorSwap kOperatorSwaps[] = {
    {"+", "-"}, {"-", "+"},
    {"*", "/"}, {"/", "*"},
    {"×", "÷"},  // multiplication sign <-> division sign
    {"÷", "×"},
    {"−", "+"},  // unicode minus
};

// Matches a decimal literal at `pos`: digits, optional 3-digit comma groups,
// optional fraction. Returns length or 0.
std::size_t match_number(std::string_view text, std::size_t pos, bool& grouped) {
    grouped = false;
    if (pos >= text.size() || !std::isdigit(static_cast<unsigned char>(text[pos]))) return 0;
    if (pos > 0 && (std::isdigit(static_cast<unsigned char>(text[pos - 1])) ||
                    is_word_char(static_cast<unsigned char>(text[pos - 1]))))
        return 0;  // inside a word or number
    std::size_t i = pos;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
    // comma groups of exactly three digits
    while (i + 3 < text.size() && text[i] == ',' &&
           std::isdigit(static_cast<unsigned char>(text[i + 1])) &&
           std::isdigit(static_cast<unsigned char>(text[i + 2])) &&
           std::isdigit(static_cast<unsigned char>(text[i + 3])) &&
           (i + 4 >= text.size() || !std::isdigit(static_cast<unsigned char>(text[i + 4])))) {
        grouped = true;
        i += 4;
    }
    if (i + 1 < text.size() && text[i] == '.' &&
        std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
        ++i;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
    }
    return i - pos;
}

std::string regroup_commas(std::string_view digits) {
    std::string out;
    std::size_t n = digits.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && (n - i) % 3 == 0) out.push_back(',');
        out.push_back(digits[i]);
    }
    return out;
}

std::string increment_literal(std::string_view literal, bool grouped) {
    std::string plain;
    for (char c : literal)
        if (c != ',') plain.push_back(c);
    std::string incremented = increment_decimal_magnitude(plain);
    if (!grouped) return incremented;
    std::size_t dot = incremented.find('.');
    std::string int_part = dot == std::string::npos ? incremented : incremented.substr(0, dot);
    std::string rest = dot == std::string::npos ? "" : incremented.substr(dot);
    return regroup_commas(int_part) + rest;
}

std::size_t match_phrase(std::string_view text, std::size_t pos, std::string_view& replacement) {
    if (pos > 0 && is_word_char(static_cast<unsigned char>(text[pos - 1]))) return 0;
    for (const PhrasePair& pair : kPhraseSwaps) {
        if (pos + pair.from.size() > text.size()) continue;
        bool match = true;
        for (std::size_t i = 0; i < pair.from.size(); ++i) {
            if (std::tolower(static_cast<unsigned char>(text[pos + i])) != pair.from[i]) {
                match = false;
                break;
            }
        }
        if (!match) continue;
        std::size_t end = pos + pair.from.size();
        if (end < text.size() && is_word_char(static_cast<unsigned char>(text[end]))) continue;
        replacement = pair.to;
        return pair.from.size();
    }
    return 0;
}

}  // namespace

CorruptStepResult corrupt_step(std::string_view step, std::uint64_t /*seed*/) {
    // Every eligible token is rewritten left to right; the seed is reserved
    // for fractional corruption.
    std::string out;
    out.reserve(step.size() + 8);
    bool changed = false;
    std::size_t i = 0;
    while (i < step.size()) {
        bool grouped = false;
        if (std::size_t len = match_number(step, i, grouped); len > 0) {
            out += increment_literal(step.substr(i, len), grouped);
            i += len;
            changed = true;
            continue;
        }
        bool op_done = false;
        for (const OperatorSwap& swap : kOperatorSwaps) {
            if (step.compare(i, swap.from.size(), swap.from) == 0 &&
                flank_ok(step, i, i + swap.from.size())) {
                out += swap.to;
                i += swap.from.size();
                changed = true;
                op_done = true;
                break;
            }
        }
        if (op_done) continue;
        std::string_view replacement;
        if (std::size_t len = match_phrase(step, i, replacement); len > 0) {
            std::string word{replacement};
            if (std::isupper(static_cast<unsigned char>(step[i])))
                word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
            out += word;
            i += len;
            changed = true;
            continue;
        }
        out.push_back(step[i]);
        ++i;
    }
    if (!changed) return {std::string(step), false};
    return {std::move(out), true};
}

CorruptRegionResult corrupt_region(const Chain& chain, const CorruptionSpec& spec) {
    if (spec.fraction <= 0.0 || spec.fraction > 1.0)
        throw ValidationError("corruption fraction must be in (0, 1]");
    Segmentation segmentation = segment_thirds(chain);
    const PositionSpan& span = segmentation.span(spec.region);
    if (span.empty())
        throw ValidationError(std::string("empty ") + std::string(region_name(spec.region)) +
                              " span");

    auto answer_scan = detect_answer_line(chain);
    std::vector<int> eligible;  // 1-based step indices
    std::vector<CorruptStepResult> rewrites(chain.steps.size());
    for (int index = span.start; index <= span.end; ++index) {
        if (!spec.include_answer_line && answer_scan.line &&
            answer_scan.line->step_index == index)
            continue;
        auto rewrite = corrupt_step(chain.steps[static_cast<std::size_t>(index - 1)], spec.seed);
        if (rewrite.eligible) {
            rewrites[static_cast<std::size_t>(index - 1)] = rewrite;
            eligible.push_back(index);
        }
    }

    CorruptRegionResult result{chain, static_cast<int>(eligible.size()), 0, false};
    if (eligible.empty()) {
        result.unchanged = true;
        return result;
    }

    std::vector<int> chosen = eligible;
    if (spec.fraction < 1.0) {
        std::size_t want = static_cast<std::size_t>(
            std::max<double>(1.0, std::ceil(spec.fraction * eligible.size())));
        // seeded partial Fisher-Yates, then restore positional order
        SplitMix64 rng = substream(spec.seed, 0x66726163 /* "frac" */);
        for (std::size_t j = 0; j < want && j + 1 < chosen.size(); ++j) {
            std::size_t pick = j + bounded_index(rng.next(), chosen.size() - j);
            std::swap(chosen[j], chosen[pick]);
        }
        chosen.resize(std::min(want, chosen.size()));
        std::sort(chosen.begin(), chosen.end());
    }
    for (int index : chosen) {
        result.chain.steps[static_cast<std::size_t>(index - 1)] =
            rewrites[static_cast<std::size_t>(index - 1)].text;
        ++result.corrupted_steps;
    }
    return result;
}

namespace {

// Replace [begin, end) of the answer-line step with `replacement`;
// an empty replacement deletes the sentence (and the step when nothing
// else remains).
Chain splice_answer_sentence(const Chain& chain, std::string_view replacement) {
    auto scan = detect_answer_line(chain);
    if (!scan.line) throw ValidationError("nothing to strip: chain has no answer line");
    const AnswerLine& line = *scan.line;
    Chain out = chain;
    std::string& step = out.steps[static_cast<std::size_t>(line.step_index - 1)];
    std::string before = step.substr(0, line.sentence_begin);
    std::string after = step.substr(line.sentence_end);
    while (!before.empty() && before.back() == ' ' && replacement.empty()) before.pop_back();
    while (!after.empty() && after.front() == ' ' &&
           (replacement.empty() || before.empty()))
        after.erase(after.begin());
    std::string spliced = before + std::string(replacement) + after;
    // tidy the join on deletion
    if (replacement.empty() && !before.empty() && !after.empty())
        spliced = before + " " + after;
    if (spliced.empty()) {
        out.steps.erase(out.steps.begin() + (line.step_index - 1));
    } else {
        step = spliced;
    }
    return out;
}

}  // namespace

Chain strip_answer_line(const Chain& chain) { return splice_answer_sentence(chain, ""); }

Chain neutral_strip(const Chain& chain, std::string_view placeholder) {
    if (placeholder.empty()) throw ValidationError("placeholder must be non-empty");
    return splice_answer_sentence(chain, placeholder);
}

Answer derive_wrong_answer(const Answer& gold, std::uint64_t seed) {
    if (!gold.is_numeric())
        throw ValidationError(
            "derive_wrong_answer needs a numeric gold answer; text slices must supply "
            "wrong answers in the dataset");
    const std::string& canon = gold.value();
    Rational value = rational_from_decimal(canon);

    std::string_view digits{canon};
    if (!digits.empty() && digits.front() == '-') digits.remove_prefix(1);
    std::size_t int_digits = digits.find('.');
    if (int_digits == std::string_view::npos) int_digits = digits.size();
    bool below_one = digits.substr(0, int_digits) == "0";
    // 10^(floor(log10 |gold|) - 1), clamped to >= 1
    long scale_exp = below_one ? 0 : std::max<long>(0, static_cast<long>(int_digits) - 2);
    BigInt scale = 1;
    for (long i = 0; i < scale_exp; ++i) scale *= 10;

    SplitMix64 rng(mix64(seed ^ fnv1a64(canon)));
    std::size_t index = bounded_index(rng.next(), 18);
    for (int attempt = 0; attempt < 18; ++attempt, index = (index + 1) % 18) {
        int magnitude = static_cast<int>(index % 9) + 1;
        int sign = index < 9 ? 1 : -1;
        Rational candidate = value + Rational(sign * magnitude * scale);
        if (candidate == value) continue;
        if (boost::multiprecision::abs(candidate) == boost::multiprecision::abs(value))
            continue;  // keeps strict/magnitude comparisons mutually exclusive
        auto decimal = decimal_from_rational(candidate);
        return *Answer::numeric(*decimal);
    }
    throw DomainError("derive_wrong_answer: no admissible perturbation");  // unreachable
}

std::string conflict_sentence(const Answer& answer, ConflictTemplate tpl) {
    if (tpl == ConflictTemplate::strong)
        return "Actually, the correct final answer is " + answer.display() +
               ". The answer is " + answer.display() + ".";
    return "The answer is " + answer.display() + ".";
}

Chain make_conflicting(const Chain& chain, const Answer& wrong, ConflictTemplate tpl) {
    auto scan = detect_answer_line(chain);
    if (!scan.line)
        throw ValidationError("make_conflicting: chain has no answer line; use "
                              "insert_answer_suffix for suffix-free formats");
    if (scan.line->value == wrong)
        throw ValidationError("make_conflicting: replacement answer equals the detected value");
    return splice_answer_sentence(chain, conflict_sentence(wrong, tpl));
}

Chain insert_answer_suffix(const Chain& chain, const Answer& answer) {
    if (detect_answer_line(chain).line)
        throw ValidationError("insert_answer_suffix: chain already has an answer line");
    Chain out = chain;
    out.steps.push_back("Therefore, the answer is " + answer.display() + ".");
    return out;
}

std::string_view placement_name(Placement placement) {
    switch (placement) {
        case Placement::context_header: return "context_header";
        case Placement::prefix_step: return "prefix_step";
        case Placement::middle_step: return "middle_step";
        default: return "suffix_step";
    }
}

std::string place_answer(const Example& example, const PlacementSpec& spec) {
    Chain body = example.chain();
    if (detect_answer_line(body).line) body = strip_answer_line(body);

    PromptSpec prompt{.context_line = std::nullopt,
                      .question = example.question,
                      .steps = body.steps,
                      .generation_request = false,
                      .example_id = example.id};
    std::string sentence = "The answer is " + spec.answer.display() + ".";
    switch (spec.placement) {
        case Placement::context_header:
            prompt.context_line = "Context: " + sentence;
            break;
        case Placement::suffix_step:
            prompt.steps.push_back(sentence);
            break;
        case Placement::prefix_step:
        case Placement::middle_step: {
            Segmentation segmentation = segment_thirds(body);  // throws for K < 3
            Region region =
                spec.placement == Placement::prefix_step ? Region::prefix : Region::middle;
            int at = segmentation.span(region).start;
            prompt.steps.insert(prompt.steps.begin() + (at - 1), sentence);
            break;
        }
    }
    return build_prompt(prompt);
}

std::string_view factorial_cell_name(FactorialCell cell) {
    switch (cell) {
        case FactorialCell::A: return "A";
        case FactorialCell::B: return "B";
        case FactorialCell::C: return "C";
        default: return "D";
    }
}

Chain build_factorial_cell(const Example& example, FactorialCell cell, std::uint64_t seed) {
    Chain chain = example.chain();
    auto scan = detect_answer_line(chain);
    if (!scan.line)
        throw ValidationError("factorial cells require a chain with an answer line (id \"" +
                              example.id + "\")");
    bool wrong_line = cell == FactorialCell::B || cell == FactorialCell::D;
    bool corrupt_reasoning = cell == FactorialCell::C || cell == FactorialCell::D;
    if (wrong_line && !example.wrong_answer)
        throw ValidationError("factorial cell " + std::string(factorial_cell_name(cell)) +
                              " requires wrong_answer (id \"" + example.id + "\")");

    Chain out = chain;
    if (corrupt_reasoning) {
        for (int index = 1; index <= chain.length(); ++index) {
            if (index == scan.line->step_index) continue;  // never the answer sentence
            out.steps[static_cast<std::size_t>(index - 1)] =
                corrupt_step(chain.steps[static_cast<std::size_t>(index - 1)], seed).text;
        }
    }
    if (wrong_line) out = make_conflicting(out, *example.wrong_answer);
    return out;
}

void attach_provenance(Example& example, std::string_view transform,
                       std::string_view params_json, std::uint64_t seed,
                       std::string_view source_id) {
    example.meta["transform"] = std::string(transform);
    example.meta["transform_params"] = std::string(params_json);
    example.meta["transform_seed"] = std::to_string(seed);
    example.meta["source_id"] = std::string(source_id);
}

}  // namespace cotcheck
