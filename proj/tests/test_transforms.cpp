#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "cotcheck/corpus.hpp"
#include "cotcheck/errors.hpp"
#include "cotcheck/extraction.hpp"
#include "cotcheck/prompt.hpp"
#include "cotcheck/transforms.hpp"

using namespace cotcheck;

namespace {

Example arith_example(const std::string& id = "ex1") {
    Example example;
    example.id = id;
    example.question = "A question about apples.";
    example.steps = {
        "Start with 5 apples.",
        "Then 5 + 3 = 8.",
        "So 8 x 3 = 24 in total.",
        "The answer is 24.",
    };
    example.gold_answer = *Answer::numeric("24");
    example.wrong_answer = Answer::numeric("31");
    example.answer_kind = AnswerKind::numeric;
    example.domain_tag = "synthetic";
    return example;
}

}  // namespace

TEST_CASE("corrupt_step swaps operators and increments numbers") {
    auto result = corrupt_step("Then 5 + 3 = 8.", 0);
    CHECK(result.eligible);
    CHECK(result.text == "Then 6 - 4 = 9.");
}

TEST_CASE("corrupt_step leaves ineligible text unchanged and flags it") {
    auto result = corrupt_step("She thinks carefully.", 0);
    CHECK_FALSE(result.eligible);
    CHECK(result.text == "She thinks carefully.");
}

TEST_CASE("corrupt_step rewrites phrases and unicode operators") {
    auto result = corrupt_step("He adds 10 × 2 = 20 apples", 0);
    CHECK(result.eligible);
    CHECK(result.text == "He subtracts 11 ÷ 3 = 21 apples");
}

TEST_CASE("corrupt_step makes embedded equations false") {
    // semantic-incorrectness proxy: the corrupted equation no longer holds
    auto result = corrupt_step("Then 5 + 3 = 8.", 0);
    auto eq = result.text.find('=');
    REQUIRE(eq != std::string::npos);
    std::string lhs = result.text.substr(5, eq - 6);   // "6 - 4"
    std::string rhs = result.text.substr(eq + 1);      // " 9."
    rhs.pop_back();                                    // drop period
    CHECK(eval_arithmetic(lhs) != eval_arithmetic(rhs));
}

TEST_CASE("corrupt_step is deterministic and preserves hyphenated words") {
    auto first = corrupt_step("A well-known trick: 12 / 4 = 3.", 99);
    auto second = corrupt_step("A well-known trick: 12 / 4 = 3.", 99);
    CHECK(first.text == second.text);
    CHECK(first.text.find("well-known") != std::string::npos);
    CHECK(first.text.find("13 * 5 = 4") != std::string::npos);
}

TEST_CASE("corrupt_step keeps comma grouping") {
    auto result = corrupt_step("That makes 1,999 total.", 0);
    CHECK(result.text == "That makes 2,000 total.");
}

TEST_CASE("corrupt_step stays near the original length") {
    // steps without word swaps stay within 10%; add->subtract costs five
    // extra characters, so swap-bearing steps get the same slack
    for (const char* step : {"Then 5 + 3 = 8 apples in the basket.",
                             "So the sum is 120 more than before.",
                             "Now 12 / 4 = 3 boxes remain on the truck."}) {
        auto result = corrupt_step(step, 1);
        double ratio = static_cast<double>(result.text.size()) / std::string(step).size();
        CHECK(ratio >= 0.9);
        CHECK(ratio <= 1.1);
    }
    auto swapped = corrupt_step("He adds 10 x 2 = 20 apples to the pile.", 1);
    double ratio = static_cast<double>(swapped.text.size()) /
                   std::string("He adds 10 x 2 = 20 apples to the pile.").size();
    CHECK(ratio <= 1.15);
}

TEST_CASE("corrupt_region rewrites only the target span") {
    Example example = arith_example();
    Chain chain{{"Step one has 2 items.", "Step two has 3 items.", "Step three has 4 items.",
                 "Step four has 5 items.", "Then 5 + 3 = 8.", "The answer is 8."}};
    CorruptionSpec spec{Region::suffix, 1.0, 7, true};
    auto result = corrupt_region(chain, spec);
    CHECK(result.corrupted_steps == 2);
    for (int i = 0; i < 4; ++i) CHECK(result.chain.steps[i] == chain.steps[i]);
    CHECK(result.chain.steps[4] == "Then 6 - 4 = 9.");
    CHECK(result.chain.steps[5] == "The answer is 9.");
}

TEST_CASE("suffix corruption increments the terminal answer value") {
    Example example = arith_example();
    CorruptionSpec spec{Region::suffix, 1.0, 7, true};
    auto result = corrupt_region(example.chain(), spec);
    auto scan = detect_answer_line(result.chain);
    REQUIRE(scan.line);
    CHECK(scan.line->value.value() == "25");
}

TEST_CASE("excluding the answer line can leave the span untouched") {
    Example example = arith_example();  // K=4, suffix span is the answer line only
    CorruptionSpec spec{Region::suffix, 1.0, 7, false};
    auto result = corrupt_region(example.chain(), spec);
    CHECK(result.unchanged);
    CHECK(result.chain.steps == example.steps);
}

TEST_CASE("corrupting an already-corrupted region changes it again") {
    Example example = arith_example();
    CorruptionSpec spec{Region::middle, 1.0, 7, true};
    auto once = corrupt_region(example.chain(), spec);
    auto twice = corrupt_region(once.chain, spec);
    CHECK(once.chain.steps != example.steps);
    CHECK(twice.chain.steps != once.chain.steps);
}

TEST_CASE("strip_answer_line deletes exactly the answer sentence") {
    Chain chain{{"Work it out.", "So 8 x 3 = 24.", "The answer is 24."}};
    Chain stripped = strip_answer_line(chain);
    REQUIRE(stripped.steps.size() == 2);
    CHECK(stripped.steps[0] == "Work it out.");
    CHECK(stripped.steps[1] == "So 8 x 3 = 24.");
    CHECK_FALSE(detect_answer_line(stripped).line);
}

TEST_CASE("strip keeps the rest of a shared step") {
    Chain chain{{"Work.", "More work.", "The answer is 24. Check it twice."}};
    Chain stripped = strip_answer_line(chain);
    REQUIRE(stripped.steps.size() == 3);
    CHECK(stripped.steps[2] == "Check it twice.");
}

TEST_CASE("re-stripping a stripped chain errors") {
    Chain chain{{"Work.", "So much work.", "The answer is 24."}};
    Chain stripped = strip_answer_line(chain);
    CHECK_THROWS_AS(strip_answer_line(stripped), ValidationError);
}

TEST_CASE("neutral_strip substitutes the default placeholder") {
    Example example = arith_example();
    Chain replaced = neutral_strip(example.chain());
    CHECK(replaced.steps.back() == std::string(kNeutralPlaceholder));
    CHECK(replaced.steps.size() == example.steps.size());
}

TEST_CASE("neutral_strip with the original sentence is the identity") {
    Chain chain{{"Work.", "So 8 x 3 = 24.", "The answer is 24."}};
    Chain replaced = neutral_strip(chain, "The answer is 24.");
    CHECK(replaced.steps == chain.steps);
}

TEST_CASE("filler variants differ only in the last step") {
    Example example = arith_example();
    Chain f1 = neutral_strip(example.chain(), kFillerVariants[0]);
    Chain f2 = neutral_strip(example.chain(), kFillerVariants[1]);
    REQUIRE(f1.steps.size() == f2.steps.size());
    for (std::size_t i = 0; i + 1 < f1.steps.size(); ++i) CHECK(f1.steps[i] == f2.steps[i]);
    CHECK(f1.steps.back() != f2.steps.back());
    CHECK_THROWS_AS(neutral_strip(example.chain(), ""), ValidationError);
}

TEST_CASE("derive_wrong_answer stays within the digit-scaled band") {
    Answer gold = *Answer::numeric("24");
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        Answer wrong = derive_wrong_answer(gold, seed);
        double value = std::stod(wrong.value());
        CHECK(value >= 15);
        CHECK(value <= 33);
        CHECK(wrong != gold);
        seen.insert(wrong.value());
    }
    CHECK(seen.size() > 4);  // the seed actually moves the draw
}

TEST_CASE("derive_wrong_answer on zero gives a small nonzero value") {
    Answer gold = *Answer::numeric("0");
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
        Answer wrong = derive_wrong_answer(gold, seed);
        double value = std::stod(wrong.value());
        CHECK(value != 0);
        CHECK(std::fabs(value) >= 1);
        CHECK(std::fabs(value) <= 9);
    }
}

TEST_CASE("derive_wrong_answer is deterministic and never matches magnitudes") {
    Answer gold = *Answer::numeric("24");
    CHECK(derive_wrong_answer(gold, 5) == derive_wrong_answer(gold, 5));
    Answer negative = *Answer::numeric("-2");
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        Answer wrong = derive_wrong_answer(negative, seed);
        CHECK(wrong.magnitude() != negative.magnitude());
    }
    CHECK_THROWS_AS(derive_wrong_answer(*Answer::text("grateful"), 1), ValidationError);
}

TEST_CASE("make_conflicting replaces only the final sentence") {
    Example example = arith_example();
    Chain conflicted = make_conflicting(example.chain(), *example.wrong_answer);
    REQUIRE(conflicted.steps.size() == example.steps.size());
    for (std::size_t i = 0; i + 1 < example.steps.size(); ++i)
        CHECK(conflicted.steps[i] == example.steps[i]);
    CHECK(conflicted.steps.back() == "The answer is 31.");
}

TEST_CASE("re-conflicting changes only the final sentence again") {
    Example example = arith_example();
    Chain first = make_conflicting(example.chain(), *Answer::numeric("31"));
    Chain second = make_conflicting(first, *Answer::numeric("77"));
    for (std::size_t i = 0; i + 1 < first.steps.size(); ++i)
        CHECK(second.steps[i] == first.steps[i]);
    CHECK(second.steps.back() == "The answer is 77.");
}

TEST_CASE("make_conflicting rejects an equal value or a missing line") {
    Example example = arith_example();
    CHECK_THROWS_AS(make_conflicting(example.chain(), example.gold_answer), ValidationError);
    Chain stripped = strip_answer_line(example.chain());
    CHECK_THROWS_AS(make_conflicting(stripped, *example.wrong_answer), ValidationError);
}

TEST_CASE("conflicting output round-trips through detection") {
    // answer-consistency: detection recovers the exact planted value
    Example example = arith_example();
    for (const char* value : {"31", "-260", "0.5"}) {
        Chain conflicted = make_conflicting(example.chain(), *Answer::numeric(value));
        auto scan = detect_answer_line(conflicted);
        REQUIRE(scan.line);
        CHECK(scan.line->value.value() == value);
    }
}

TEST_CASE("insert_answer_suffix appends a therefore-statement") {
    Chain suffix_free{{"Let A = 4.", "Let B = A + 2.", "Compare A and B."}};
    Chain sc = insert_answer_suffix(suffix_free, *Answer::numeric("6"));
    CHECK(sc.steps.size() == 4);
    CHECK(sc.steps.back() == "Therefore, the answer is 6.");
    auto scan = detect_answer_line(sc);
    REQUIRE(scan.line);
    CHECK(scan.line->value.value() == "6");
    CHECK_THROWS_AS(insert_answer_suffix(sc, *Answer::numeric("7")), ValidationError);
}

TEST_CASE("strong conflict template still detects as the wrong value") {
    Example example = arith_example();
    Chain conflicted =
        make_conflicting(example.chain(), *example.wrong_answer, ConflictTemplate::strong);
    auto scan = detect_answer_line(conflicted);
    REQUIRE(scan.line);
    CHECK(scan.line->value.value() == "31");
}

TEST_CASE("place_answer builds a context-header prompt") {
    Example example = arith_example();
    std::string prompt = place_answer(example, {Placement::context_header, *example.wrong_answer});
    CHECK(prompt.rfind("Context: The answer is 31.", 0) == 0);
    // identical reasoning body: the original answer line is gone
    CHECK(prompt.find("The answer is 24.") == std::string::npos);
    CHECK(prompt.find("So 8 x 3 = 24 in total.") != std::string::npos);
}

TEST_CASE("suffix placement matches make_conflicting steps") {
    Example example = arith_example();
    std::string placed = place_answer(example, {Placement::suffix_step, *example.wrong_answer});
    Chain conflicted = make_conflicting(example.chain(), *example.wrong_answer);
    PromptView view = parse_prompt(placed);
    CHECK(view.reasoning_lines == conflicted.steps);
}

TEST_CASE("middle placement inserts at the first middle step") {
    Example example = arith_example();
    example.steps = {"s1 has 1.", "s2 has 2.", "s3 has 3.", "s4 has 4.", "s5 has 5.",
                     "s6 has 6.", "The answer is 24."};  // body K=6 after strip
    std::string placed = place_answer(example, {Placement::middle_step, *example.wrong_answer});
    PromptView view = parse_prompt(placed);
    REQUIRE(view.reasoning_lines.size() == 7);
    CHECK(view.reasoning_lines[2] == "The answer is 31.");  // middle span of 6 starts at step 3
}

TEST_CASE("factorial cells compose corruption and answer lines") {
    Example example = arith_example();
    Chain a = build_factorial_cell(example, FactorialCell::A, 7);
    Chain b = build_factorial_cell(example, FactorialCell::B, 7);
    Chain c = build_factorial_cell(example, FactorialCell::C, 7);
    Chain d = build_factorial_cell(example, FactorialCell::D, 7);

    CHECK(a.steps == example.steps);  // identity
    // B: reasoning identical to A, wrong line
    for (std::size_t i = 0; i + 1 < a.steps.size(); ++i) CHECK(b.steps[i] == a.steps[i]);
    CHECK(detect_answer_line(b).line->value.value() == "31");
    // C: every eligible reasoning step rewritten, gold line untouched
    for (std::size_t i = 0; i + 1 < example.steps.size(); ++i)
        CHECK(c.steps[i] != example.steps[i]);
    CHECK(c.steps.back() == "The answer is 24.");
    CHECK(detect_answer_line(c).line->value.value() == "24");
    // D: reasoning matches C, line matches B
    for (std::size_t i = 0; i + 1 < c.steps.size(); ++i) CHECK(d.steps[i] == c.steps[i]);
    CHECK(detect_answer_line(d).line->value.value() == "31");
}

TEST_CASE("factorial cells require a wrong answer for B and D") {
    Example example = arith_example();
    example.wrong_answer.reset();
    CHECK_NOTHROW(build_factorial_cell(example, FactorialCell::A, 7));
    CHECK_NOTHROW(build_factorial_cell(example, FactorialCell::C, 7));
    CHECK_THROWS_AS(build_factorial_cell(example, FactorialCell::B, 7), ValidationError);
    CHECK_THROWS_AS(build_factorial_cell(example, FactorialCell::D, 7), ValidationError);
}

TEST_CASE("provenance lands in meta") {
    Example example = arith_example();
    attach_provenance(example, "strip", "{}", 42, "ex1");
    CHECK(example.meta.at("transform") == "strip");
    CHECK(example.meta.at("transform_seed") == "42");
    CHECK(example.meta.at("source_id") == "ex1");
}
