#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "cotcheck/corpus.hpp"
#include "cotcheck/example.hpp"

namespace cotcheck {

// Replacement sentences for answer-line ablations.
inline constexpr std::string_view kNeutralPlaceholder =
    "The calculation above gives the result.";
inline constexpr std::string_view kVerifyPlaceholder =
    "Therefore. Let me verify this computation.";
inline constexpr std::array<std::string_view, 3> kFillerVariants = {
    "The calculation above gives the result.",
    "The computation above confirms the reasoning.",
    "The steps above complete the solution.",
};

enum class ConflictTemplate { standard, strong };

struct CorruptionSpec {
    Region region = Region::suffix;
    double fraction = 1.0;  // of eligible steps in the region, (0, 1]
    std::uint64_t seed = 0;
    // The terminal answer line counts as an eligible step by default; clear
    // this to confine corruption to reasoning text.
    bool include_answer_line = true;
};

struct CorruptStepResult {
    std::string text;
    bool eligible;  // false: no operator, numeral or swap phrase present
};

// Deterministic semantic corruption of one step: operator swap (+<->-,
// x<->/, ASCII and unicode), every decimal literal's magnitude incremented
// by one, and phrase swaps (plus<->minus, more<->fewer, add<->subtract).
// The rewrite keeps the step's length and syntax close to the original.
CorruptStepResult corrupt_step(std::string_view step, std::uint64_t seed);

struct CorruptRegionResult {
    Chain chain;
    int eligible_steps = 0;
    int corrupted_steps = 0;
    bool unchanged = false;  // warning: the span held no eligible step
};

CorruptRegionResult corrupt_region(const Chain& chain, const CorruptionSpec& spec);

// Deletes the matched answer statement sentence; the step disappears when
// the sentence was its entire text.
Chain strip_answer_line(const Chain& chain);

// Replaces the answer statement with a content-free placeholder sentence.
Chain neutral_strip(const Chain& chain, std::string_view placeholder = kNeutralPlaceholder);

// gold + delta, delta drawn from {±1..±9} scaled by the answer's order of
// magnitude (clamped to >= 1); never returns gold or -gold.
Answer derive_wrong_answer(const Answer& gold, std::uint64_t seed);

std::string conflict_sentence(const Answer& answer, ConflictTemplate tpl);

// Replaces the answer statement with "The answer is <wrong>." leaving every
// reasoning byte intact.
Chain make_conflicting(const Chain& chain, const Answer& wrong,
                       ConflictTemplate tpl = ConflictTemplate::standard);

// Appends "Therefore, the answer is <a>." to a suffix-free chain.
Chain insert_answer_suffix(const Chain& chain, const Answer& answer);

enum class Placement { context_header, prefix_step, middle_step, suffix_step };

std::string_view placement_name(Placement placement);

struct PlacementSpec {
    Placement placement;
    Answer answer;
};

// Relocation / counterbalanced-placement prompt. The reasoning body is the
// chain with its original answer line removed; step placements insert the
// answer sentence at the first step of the target region (suffix appends).
std::string place_answer(const Example& example, const PlacementSpec& spec);

enum class FactorialCell { A, B, C, D };

std::string_view factorial_cell_name(FactorialCell cell);

// A: untouched chain. B: wrong answer line, correct steps. C: corrupted
// steps, original (correct) answer line. D: corrupted steps, wrong line.
Chain build_factorial_cell(const Example& example, FactorialCell cell, std::uint64_t seed);

// Audit trail attached to rows of derived datasets (flattened into meta).
void attach_provenance(Example& example, std::string_view transform,
                       std::string_view params_json, std::uint64_t seed,
                       std::string_view source_id);

}  // namespace cotcheck
