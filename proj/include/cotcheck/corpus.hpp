#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cotcheck/example.hpp"

namespace cotcheck {

// Thirds segmentation: prefix = 1..ceil(K/3), middle = ..ceil(2K/3),
// suffix = ..K. Prefix and middle absorb remainder steps first. Chains
// shorter than three steps have no defined thirds and are rejected.
Segmentation segment_thirds(int num_steps);
inline Segmentation segment_thirds(const Chain& chain) { return segment_thirds(chain.length()); }

struct AnswerLine {
    int step_index = 0;          // 1-based
    Answer value;                // canonicalized
    std::string pattern;         // "answer_is" or "boxed"
    std::size_t sentence_begin;  // byte range of the matched sentence within the step
    std::size_t sentence_end;
};

struct AnswerLineScan {
    std::optional<AnswerLine> line;
    // A pattern matched somewhere but its value failed canonicalization and
    // no later step produced a usable match.
    bool malformed_match = false;
};

// Last step whose text states the final answer ("The answer is X.",
// "Therefore, the answer is X.", \boxed{X}). Within a step the last
// statement wins.
AnswerLineScan detect_answer_line(const Chain& chain);

struct FormatProfile {
    int n_examples = 0;
    double answer_line_rate = 0.0;
    std::map<Region, int> position_histogram;
    std::optional<std::string> dominant_pattern;
    bool fixed_position_flag = false;
};

// Prerequisite 2: where does this corpus put its explicit answers?
// fixed_position_flag is set when at least `fixed_position_threshold` of the
// detected lines land in a single region.
FormatProfile characterize_format(std::span<const Example> slice,
                                  double fixed_position_threshold = 0.9);

// JSONL ingestion. One object per line:
//   {"id","question","steps":[...],"gold_answer","wrong_answer"?,
//    "answer_kind","domain_tag","meta"?}
// Also accepts a slice-manifest JSON file {"name","version","files":[...]}.
// Order preserved; duplicate ids and invariant violations are errors.
std::vector<Example> load_slice(const std::filesystem::path& path);

// Canonical serialization (sorted keys, LF endings); load(save(x)) == x and
// saving a loaded canonical file reproduces it byte for byte.
void save_slice(const std::filesystem::path& path, std::span<const Example> slice);

std::string example_to_jsonl_line(const Example& example);
Example example_from_json_text(std::string_view text);

// K >= 3 is required before any positional protocol touches a slice.
void require_positional_slice(std::span<const Example> slice);

}  // namespace cotcheck
