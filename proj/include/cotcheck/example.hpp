#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cotcheck/answer.hpp"

namespace cotcheck {

// Chain region labels. Step indices are 1-based throughout.
enum class Region { prefix, middle, suffix };

std::string_view region_name(Region region);
std::optional<Region> region_from_name(std::string_view name);

struct PositionSpan {
    Region region;
    int start = 1;  // inclusive
    int end = 0;    // inclusive; start > end means empty

    bool empty() const { return start > end; }
    bool contains(int index) const { return index >= start && index <= end; }
    int size() const { return empty() ? 0 : end - start + 1; }
};

struct Segmentation {
    PositionSpan prefix;
    PositionSpan middle;
    PositionSpan suffix;

    const PositionSpan& span(Region region) const {
        switch (region) {
            case Region::prefix: return prefix;
            case Region::middle: return middle;
            default: return suffix;
        }
    }
    Region region_of(int index) const {
        if (prefix.contains(index)) return Region::prefix;
        if (middle.contains(index)) return Region::middle;
        return Region::suffix;
    }
};

// A chain of reasoning steps. Answer-line detection and segmentation are
// computed on demand (corpus.hpp) so a Chain can never carry stale state.
struct Chain {
    std::vector<std::string> steps;

    int length() const { return static_cast<int>(steps.size()); }
};

// One task item of a slice.
struct Example {
    std::string id;
    std::string question;
    std::vector<std::string> steps;
    Answer gold_answer;
    std::optional<Answer> wrong_answer;
    AnswerKind answer_kind = AnswerKind::numeric;
    std::string domain_tag;
    std::map<std::string, std::string> meta;

    Chain chain() const { return Chain{steps}; }
};

}  // namespace cotcheck
