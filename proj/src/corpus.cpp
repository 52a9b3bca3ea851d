#include "cotcheck/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "cotcheck/errors.hpp"
#include "json.hpp"

namespace cotcheck {

using nlohmann::json;

std::string_view region_name(Region region) {
    switch (region) {
        case Region::prefix: return "prefix";
        case Region::middle: return "middle";
        default: return "suffix";
    }
}

std::optional<Region> region_from_name(std::string_view name) {
    if (name == "prefix") return Region::prefix;
    if (name == "middle") return Region::middle;
    if (name == "suffix") return Region::suffix;
    return std::nullopt;
}

Segmentation segment_thirds(int num_steps) {
    if (num_steps < 3)
        throw ValidationError("segment_thirds: chains with fewer than 3 steps have no thirds (K=" +
                              std::to_string(num_steps) + ")");
    int first = (num_steps + 2) / 3;        // ceil(K/3)
    int second = (2 * num_steps + 2) / 3;   // ceil(2K/3)
    return Segmentation{
        PositionSpan{Region::prefix, 1, first},
        PositionSpan{Region::middle, first + 1, second},
        PositionSpan{Region::suffix, second + 1, num_steps},
    };
}

namespace {

bool is_sentence_terminator(std::string_view text, std::size_t pos) {
    char c = text[pos];
    if (c == '!' || c == '?') return true;
    if (c != '.') return false;
    // A period inside a decimal literal does not end a sentence.
    if (pos + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[pos + 1])))
        return false;
    return true;
}

// [begin, end) byte range of the sentence containing `pos`, end past the
// terminator when one exists.
std::pair<std::size_t, std::size_t> sentence_bounds(std::string_view text, std::size_t pos) {
    std::size_t begin = 0;
    for (std::size_t i = 0; i < pos; ++i) {
        if (is_sentence_terminator(text, i)) begin = i + 1;
    }
    while (begin < text.size() && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
    std::size_t end = text.size();
    for (std::size_t i = pos; i < text.size(); ++i) {
        if (is_sentence_terminator(text, i)) {
            end = i + 1;
            break;
        }
    }
    return {begin, end};
}

bool ieq_at(std::string_view text, std::size_t pos, std::string_view needle) {
    if (pos + needle.size() > text.size()) return false;
    for (std::size_t i = 0; i < needle.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(text[pos + i])) != needle[i]) return false;
    }
    return true;
}

std::optional<Answer> parse_statement_value(std::string_view raw) {
    if (auto numeric = Answer::numeric(raw)) return numeric;
    return Answer::text(raw);
}

struct StatementMatch {
    Answer value;
    std::string pattern;
    std::size_t match_pos;
    std::size_t sentence_begin;
    std::size_t sentence_end;
};

// All valid answer statements in one step, in text order; sets
// `saw_malformed` when a pattern matched but its value did not canonicalize.
std::vector<StatementMatch> scan_step(std::string_view text, bool& saw_malformed) {
    static constexpr std::string_view kPhrase = "answer is";
    static constexpr std::string_view kBoxed = "\\boxed{";
    std::vector<StatementMatch> out;

    for (std::size_t i = 0; i + kPhrase.size() <= text.size(); ++i) {
        if (!ieq_at(text, i, kPhrase)) continue;
        if (i > 0 && std::isalpha(static_cast<unsigned char>(text[i - 1]))) continue;
        std::size_t value_begin = i + kPhrase.size();
        while (value_begin < text.size() &&
               std::isspace(static_cast<unsigned char>(text[value_begin])))
            ++value_begin;
        auto [sent_begin, sent_end] = sentence_bounds(text, i);
        std::size_t value_end = std::max(sent_end, value_begin);
        std::string_view raw = text.substr(value_begin, value_end - value_begin);
        if (auto value = parse_statement_value(raw)) {
            out.push_back({std::move(*value), "answer_is", i, sent_begin, sent_end});
        } else {
            saw_malformed = true;
        }
    }

    for (std::size_t i = 0; i + kBoxed.size() <= text.size(); ++i) {
        if (text.compare(i, kBoxed.size(), kBoxed) != 0) continue;
        // outermost balanced group
        int depth = 1;
        std::size_t j = i + kBoxed.size();
        for (; j < text.size() && depth > 0; ++j) {
            if (text[j] == '{') ++depth;
            if (text[j] == '}') --depth;
        }
        if (depth != 0) {
            saw_malformed = true;
            continue;
        }
        std::string_view raw = text.substr(i + kBoxed.size(), j - 1 - (i + kBoxed.size()));
        auto [sent_begin, sent_end] = sentence_bounds(text, i);
        if (auto value = parse_statement_value(raw)) {
            out.push_back({std::move(*value), "boxed", i, sent_begin, sent_end});
        } else {
            saw_malformed = true;
        }
    }

    std::stable_sort(out.begin(), out.end(), [](const StatementMatch& a, const StatementMatch& b) {
        return a.match_pos < b.match_pos;
    });
    return out;
}

}  // namespace

AnswerLineScan detect_answer_line(const Chain& chain) {
    AnswerLineScan scan;
    for (int index = 1; index <= chain.length(); ++index) {
        bool malformed = false;
        auto matches = scan_step(chain.steps[static_cast<std::size_t>(index - 1)], malformed);
        if (!matches.empty()) {
            const StatementMatch& last = matches.back();
            scan.line = AnswerLine{index, last.value, last.pattern, last.sentence_begin,
                                   last.sentence_end};
            scan.malformed_match = false;
        } else if (malformed && !scan.line) {
            scan.malformed_match = true;
        }
    }
    return scan;
}

FormatProfile characterize_format(std::span<const Example> slice,
                                  double fixed_position_threshold) {
    if (slice.empty()) throw ValidationError("characterize_format: empty slice");
    FormatProfile profile;
    profile.n_examples = static_cast<int>(slice.size());
    profile.position_histogram = {
        {Region::prefix, 0}, {Region::middle, 0}, {Region::suffix, 0}};
    std::map<std::string, int> pattern_counts;
    int detected = 0;
    for (const Example& example : slice) {
        auto scan = detect_answer_line(example.chain());
        if (!scan.line) continue;
        ++detected;
        int k = static_cast<int>(example.steps.size());
        Region region;
        if (k >= 3) {
            region = segment_thirds(k).region_of(scan.line->step_index);
        } else {
            // degenerate chains: last step reads as suffix, otherwise prefix
            region = scan.line->step_index == k ? Region::suffix : Region::prefix;
        }
        ++profile.position_histogram[region];
        ++pattern_counts[scan.line->pattern];
    }
    profile.answer_line_rate = static_cast<double>(detected) / profile.n_examples;
    if (!pattern_counts.empty()) {
        auto best = std::max_element(
            pattern_counts.begin(), pattern_counts.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
        profile.dominant_pattern = best->first;
    }
    if (detected > 0) {
        int max_region = 0;
        for (const auto& [region, count] : profile.position_histogram)
            max_region = std::max(max_region, count);
        profile.fixed_position_flag =
            static_cast<double>(max_region) >= fixed_position_threshold * detected;
    }
    return profile;
}

namespace {

const json& require_field(const json& record, const char* name) {
    auto it = record.find(name);
    if (it == record.end())
        throw ValidationError(std::string("missing required field \"") + name + "\"");
    return *it;
}

std::string answer_field_as_string(const json& value, const char* name) {
    if (value.is_string()) return value.get<std::string>();
    if (value.is_number_integer() || value.is_number_unsigned() || value.is_number_float())
        return value.dump();
    throw ValidationError(std::string("field \"") + name + "\" must be a string or number");
}

Answer parse_answer_field(const json& value, AnswerKind kind, const char* name) {
    std::string raw = answer_field_as_string(value, name);
    auto answer = Answer::parse(kind, raw);
    if (!answer)
        throw ValidationError(std::string("field \"") + name + "\" does not canonicalize as " +
                              std::string(answer_kind_name(kind)) + ": \"" + raw + "\"");
    return *answer;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {"id",          "question",   "steps",
                                               "gold_answer", "wrong_answer", "answer_kind",
                                               "domain_tag",  "meta"};
    return keys;
}

}  // namespace

Example example_from_json_text(std::string_view text) {
    json record;
    try {
        record = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what());
    }
    if (!record.is_object()) throw ParseError("record is not a JSON object");
    for (const auto& [key, _] : record.items()) {
        if (!known_keys().count(key))
            throw ValidationError("unknown field \"" + key + "\"");
    }

    auto kind = answer_kind_from_name(require_field(record, "answer_kind").get<std::string>());
    if (!kind) throw ValidationError("field \"answer_kind\" must be \"numeric\" or \"text\"");

    Example example{
        .id = require_field(record, "id").get<std::string>(),
        .question = require_field(record, "question").get<std::string>(),
        .steps = {},
        .gold_answer = parse_answer_field(require_field(record, "gold_answer"), *kind,
                                          "gold_answer"),
        .wrong_answer = std::nullopt,
        .answer_kind = *kind,
        .domain_tag = require_field(record, "domain_tag").get<std::string>(),
        .meta = {},
    };
    if (example.id.empty()) throw ValidationError("field \"id\" must be non-empty");

    const json& steps = require_field(record, "steps");
    if (!steps.is_array() || steps.empty())
        throw ValidationError("field \"steps\" must be a non-empty array");
    for (const json& step : steps) {
        if (!step.is_string()) throw ValidationError("field \"steps\" must contain strings");
        example.steps.push_back(step.get<std::string>());
    }

    if (auto it = record.find("wrong_answer"); it != record.end() && !it->is_null()) {
        example.wrong_answer = parse_answer_field(*it, *kind, "wrong_answer");
        if (*example.wrong_answer == example.gold_answer)
            throw ValidationError("wrong_answer equals gold_answer for id \"" + example.id + "\"");
    }
    if (auto it = record.find("meta"); it != record.end()) {
        if (!it->is_object()) throw ValidationError("field \"meta\" must be an object");
        for (const auto& [key, value] : it->items()) {
            if (!value.is_string())
                throw ValidationError("meta values must be strings (key \"" + key + "\")");
            example.meta[key] = value.get<std::string>();
        }
    }
    return example;
}

std::string example_to_jsonl_line(const Example& example) {
    json record;
    record["id"] = example.id;
    record["question"] = example.question;
    record["steps"] = example.steps;
    record["gold_answer"] = example.gold_answer.value();
    if (example.wrong_answer) record["wrong_answer"] = example.wrong_answer->value();
    record["answer_kind"] = std::string(answer_kind_name(example.answer_kind));
    record["domain_tag"] = example.domain_tag;
    if (!example.meta.empty()) record["meta"] = example.meta;
    return record.dump();
}

namespace {

std::vector<Example> load_jsonl(const std::filesystem::path& path,
                                std::set<std::string>& seen_ids) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open slice file: " + path.string());
    std::vector<Example> out;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        try {
            Example example = example_from_json_text(line);
            if (!seen_ids.insert(example.id).second)
                throw ValidationError("duplicate id \"" + example.id + "\"");
            out.push_back(std::move(example));
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_number) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_number) + ": " +
                                  e.what());
        }
    }
    return out;
}

}  // namespace

std::vector<Example> load_slice(const std::filesystem::path& path) {
    std::set<std::string> seen_ids;
    if (path.extension() == ".json") {
        // slice manifest: {"name","version","files":[...]}
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open slice manifest: " + path.string());
        json manifest;
        try {
            manifest = json::parse(in);
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ": malformed manifest: " + e.what());
        }
        if (!manifest.is_object() || !manifest.contains("files") ||
            !manifest["files"].is_array())
            throw ValidationError(path.string() + ": manifest must list member \"files\"");
        std::vector<Example> out;
        for (const json& entry : manifest["files"]) {
            std::filesystem::path member = path.parent_path() / entry.get<std::string>();
            auto part = load_jsonl(member, seen_ids);
            out.insert(out.end(), std::make_move_iterator(part.begin()),
                       std::make_move_iterator(part.end()));
        }
        return out;
    }
    return load_jsonl(path, seen_ids);
}

void save_slice(const std::filesystem::path& path, std::span<const Example> slice) {
    std::ofstream out(path, std::ios::binary);  // LF endings everywhere
    if (!out) throw ValidationError("cannot open output file: " + path.string());
    for (const Example& example : slice) out << example_to_jsonl_line(example) << '\n';
}

void require_positional_slice(std::span<const Example> slice) {
    std::string offenders;
    int count = 0;
    for (const Example& example : slice) {
        if (example.steps.size() < 3) {
            if (count < 5) offenders += (count ? ", " : "") + example.id;
            ++count;
        }
    }
    if (count > 0)
        throw ValidationError("positional protocols require K >= 3 steps; " +
                              std::to_string(count) + " offending example(s): " + offenders);
}

}  // namespace cotcheck
