#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cotcheck/corpus.hpp"
#include "cotcheck/errors.hpp"
#include "cotcheck/modelio.hpp"
#include "cotcheck/prompt.hpp"
#include "cotcheck/protocols.hpp"
#include "cotcheck/rng.hpp"
#include "cotcheck/transforms.hpp"

using namespace cotcheck;
namespace fs = std::filesystem;

namespace {

Example make_example(const std::string& id, int a, int b) {
    int c = a + b;
    Example example;
    example.id = id;
    example.question = "There are " + std::to_string(a) + " apples and " + std::to_string(b) +
                       " more arrive. How many now?";
    example.steps = {
        "Start with " + std::to_string(a) + " apples.",
        "Then " + std::to_string(b) + " arrive, so " + std::to_string(a) + " + " +
            std::to_string(b) + " = " + std::to_string(c) + ".",
        "So the total is " + std::to_string(c) + ".",
        "The answer is " + std::to_string(c) + ".",
    };
    example.gold_answer = *Answer::numeric(std::to_string(c));
    example.answer_kind = AnswerKind::numeric;
    example.domain_tag = "synthetic/arith";
    return example;
}

std::vector<Example> make_slice(int n) {
    SplitMix64 rng(404);
    std::vector<Example> slice;
    for (int i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "ex%04d", i);
        slice.push_back(make_example(id, 2 + static_cast<int>(bounded_index(rng.next(), 40)),
                                     3 + static_cast<int>(bounded_index(rng.next(), 40))));
    }
    return slice;
}

CompletionClient oracle_client(const std::string& spec) {
    return CompletionClient(ModelSpec::parse(spec), DecodeParams{}, ClientOptions{});
}

RunConfig quick_config() {
    RunConfig config;
    config.resamples = 200;  // plenty for unit checks
    config.concurrency = 4;
    return config;
}

Trial make_trial(const std::string& id, Condition condition, bool correct,
                 std::optional<bool> followed = std::nullopt) {
    Trial trial;
    trial.example_id = id;
    trial.condition = condition;
    trial.correct = correct;
    trial.followed_wrong = followed;
    trial.policy = ExtractionPolicy{ExtractMode::strict, AnswerKind::numeric};
    return trial;
}

}  // namespace

TEST_CASE("gate passes for a chain-dependent model") {
    auto slice = make_slice(60);
    auto client = oracle_client("oracle:compute,qo=0");
    ProtocolRunner runner(slice, client, quick_config());
    GateResult gate = runner.run_prerequisite_gate();
    CHECK(gate.verdict.chain_acc == doctest::Approx(1.0));
    CHECK(gate.verdict.qo_acc == doctest::Approx(0.0));
    CHECK(gate.verdict.qo_pass);
    CHECK_FALSE(gate.verdict.interpretable());  // sweep not merged yet
    CHECK(gate.verdict.format_profile.answer_line_rate == doctest::Approx(1.0));
}

TEST_CASE("gate fails on the question-solvability confound") {
    auto slice = make_slice(60);
    auto client = oracle_client("oracle:compute,qo=1.0");
    ProtocolRunner runner(slice, client, quick_config());
    GateResult gate = runner.run_prerequisite_gate();
    CHECK(gate.verdict.chain_acc == doctest::Approx(1.0));
    CHECK(gate.verdict.qo_acc == doctest::Approx(1.0));
    CHECK_FALSE(gate.verdict.qo_pass);  // zero discordant pairs, p = 1
    CHECK(*gate.verdict.qo_sign.p_value == doctest::Approx(1.0));
}

TEST_CASE("gate re-derives the reported QO gap from constructed trials") {
    // 97/100 chain-correct vs 6/100 QO-correct
    std::vector<Trial> trials;
    for (int i = 0; i < 100; ++i) {
        std::string id = "ex" + std::to_string(i);
        trials.push_back(make_trial(id, Condition::Baseline, i < 97));
        trials.push_back(make_trial(id, Condition::QuestionOnly, i < 6));
    }
    RunConfig config = quick_config();
    config.resamples = 2000;
    ProtocolVerdict verdict = analyze_gate(std::move(trials), config, std::nullopt);
    CHECK(verdict.qo_bootstrap.estimate == doctest::Approx(-0.910));
    CHECK(*verdict.qo_sign.p_value < 1e-11);
    CHECK(verdict.qo_pass);
    CHECK(std::fabs(verdict.qo_bootstrap.ci->lo - (-0.960)) <= 0.015);
    CHECK(std::fabs(verdict.qo_bootstrap.ci->hi - (-0.850)) <= 0.015);
}

TEST_CASE("sweep separates readout and compute oracles") {
    auto slice = make_slice(40);
    RunConfig config = quick_config();

    auto readout = oracle_client("oracle:readout,qo=0.2");
    SweepResult readout_sweep = ProtocolRunner(slice, readout, config).run_position_sweep(true);
    CHECK(readout_sweep.classification == DominanceClass::answer_text_dominant);
    REQUIRE(readout_sweep.dominant.size() == 1);
    CHECK(readout_sweep.dominant[0] == Region::suffix);
    CHECK(readout_sweep.positions[2].delta.delta == doctest::Approx(-1.0));
    CHECK(readout_sweep.positions[0].delta.delta == doctest::Approx(0.0));

    auto compute = oracle_client("oracle:compute,qo=0.2");
    SweepResult compute_sweep = ProtocolRunner(slice, compute, config).run_position_sweep(true);
    CHECK(compute_sweep.classification == DominanceClass::reasoning_dominant);
    CHECK(compute_sweep.positions[2].delta.delta == doctest::Approx(0.0));
    CHECK(compute_sweep.positions[0].delta.delta < -0.5);
}

TEST_CASE("readout sweep on a stripped slice is flat") {
    auto slice = make_slice(40);
    for (Example& example : slice) example.steps = strip_answer_line(example.chain()).steps;
    auto readout = oracle_client("oracle:readout,qo=0.2");
    SweepResult sweep = ProtocolRunner(slice, readout, quick_config()).run_position_sweep(true);
    for (const PositionEffect& effect : sweep.positions)
        CHECK(std::fabs(effect.delta.delta) == doctest::Approx(0.0));
    CHECK(sweep.baseline_acc == doctest::Approx(sweep.qo_acc));
}

TEST_CASE("sweep rejects short chains") {
    std::vector<Example> slice = make_slice(3);
    slice[1].steps = {"only", "two"};
    auto client = oracle_client("oracle:readout");
    ProtocolRunner runner(slice, client, quick_config());
    CHECK_THROWS_AS(runner.run_position_sweep(true), ValidationError);
}

TEST_CASE("conflict triad detects the oracle archetypes") {
    auto slice = make_slice(50);
    RunConfig config = quick_config();

    auto readout = oracle_client("oracle:readout,qo=0.1");
    TriadResult readout_triad = ProtocolRunner(slice, readout, config).run_conflict_triad();
    CHECK(readout_triad.fw.estimate == doctest::Approx(1.0));
    CHECK(readout_triad.cc_acc == doctest::Approx(0.0));
    CHECK(readout_triad.classification == DominanceClass::answer_text_dominant);

    auto compute = oracle_client("oracle:compute,qo=0.1");
    TriadResult compute_triad = ProtocolRunner(slice, compute, config).run_conflict_triad();
    CHECK(compute_triad.fw.estimate == doctest::Approx(0.0));
    CHECK(compute_triad.cc_acc == doctest::Approx(compute_triad.sc_acc));
    CHECK(compute_triad.classification == DominanceClass::reasoning_dominant);
}

TEST_CASE("mixed oracle triad lands near theta with a strong majority test") {
    auto slice = make_slice(500);
    RunConfig config = quick_config();
    auto mixed = oracle_client("oracle:mixed,theta=0.63,qo=0.05,seed=99");
    TriadResult triad = ProtocolRunner(slice, mixed, config).run_conflict_triad();
    CHECK(triad.fw.estimate >= 0.58);
    CHECK(triad.fw.estimate <= 0.68);
    CHECK(*triad.fw_majority.p_value < 1e-3);
    CHECK(triad.fw.counts.at("k") == 319);  // frozen for seed 99: FW = 0.638
    CHECK(triad.fw_qo_gap == doctest::Approx(triad.fw.estimate - triad.qo_acc));
}

TEST_CASE("triad requires derivable wrong answers before any call") {
    std::vector<Example> slice{make_example("t1", 2, 3)};
    slice[0].answer_kind = AnswerKind::text;
    slice[0].gold_answer = *Answer::text("grateful");
    slice[0].wrong_answer.reset();
    auto client = oracle_client("oracle:readout");
    ProtocolRunner runner(slice, client, quick_config());
    CHECK_THROWS_AS(runner.run_conflict_triad(), ValidationError);
}

TEST_CASE("FW and correctness are mutually exclusive in CC trials") {
    auto slice = make_slice(80);
    for (const std::string& spec :
         {std::string("oracle:readout,qo=0.3"), std::string("oracle:mixed,theta=0.4,qo=0.3")}) {
        auto client = oracle_client(spec);
        TriadResult triad = ProtocolRunner(slice, client, quick_config()).run_conflict_triad();
        for (const Trial& trial : triad.trials) {
            if (trial.condition != Condition::CC) continue;
            REQUIRE(trial.followed_wrong.has_value());
            bool both = trial.correct && *trial.followed_wrong;
            CHECK_FALSE(both);
        }
    }
}

TEST_CASE("ct stress separates computation from echo") {
    auto slice = make_slice(50);
    RunConfig config = quick_config();

    auto compute = oracle_client("oracle:compute,qo=0.1");
    CtStressResult compute_ct = ProtocolRunner(slice, compute, config).run_ct_stress();
    CHECK(compute_ct.ct_acc == doctest::Approx(compute_ct.sc_acc));
    CHECK(compute_ct.fw.estimate == doctest::Approx(0.0));

    auto readout = oracle_client("oracle:readout,qo=0.1");
    CtStressResult readout_ct = ProtocolRunner(slice, readout, config).run_ct_stress();
    CHECK(readout_ct.ct_acc == doctest::Approx(readout_ct.qo_acc));  // nothing to echo
    CHECK(readout_ct.fw.estimate == doctest::Approx(1.0));
}

TEST_CASE("mixed oracle ct stress reproduces a theta-level override") {
    auto slice = make_slice(200);
    auto mixed = oracle_client("oracle:mixed,theta=0.87,qo=0.05,seed=7");
    CtStressResult ct = ProtocolRunner(slice, mixed, quick_config()).run_ct_stress();
    CHECK(std::fabs(ct.fw.estimate - 0.87) < 0.05);
    CHECK(ct.fw.counts.at("k") == 169);  // frozen for seed 7: FW = 0.845
}

TEST_CASE("factorial grid matches the reported effect decomposition") {
    // A 1.00, B 0.40, C 0.95, D 0.02 -> answer-line 0.765, reasoning 0.215
    std::vector<Trial> trials;
    for (int i = 0; i < 300; ++i) {
        std::string id = "ex" + std::to_string(i);
        trials.push_back(make_trial(id, Condition::FactA, true));
        trials.push_back(make_trial(id, Condition::FactB, i < 120, i >= 120));
        trials.push_back(make_trial(id, Condition::FactC, i < 285));
        trials.push_back(make_trial(id, Condition::FactD, i < 6, i >= 6));
    }
    FactorialResult result = analyze_factorial(std::move(trials), quick_config());
    CHECK(result.accuracy[FactorialCell::A] == doctest::Approx(1.00));
    CHECK(result.accuracy[FactorialCell::B] == doctest::Approx(0.40));
    CHECK(result.accuracy[FactorialCell::C] == doctest::Approx(0.95));
    CHECK(result.accuracy[FactorialCell::D] == doctest::Approx(0.02));
    CHECK(result.answer_line_effect == doctest::Approx(0.765));
    CHECK(result.reasoning_effect == doctest::Approx(0.215));
    CHECK(result.classification == DominanceClass::answer_text_dominant);
}

TEST_CASE("factorial separates the oracles end to end") {
    auto slice = make_slice(40);
    RunConfig config = quick_config();

    auto readout = oracle_client("oracle:readout,qo=0.2");
    FactorialResult readout_grid = ProtocolRunner(slice, readout, config).run_factorial();
    CHECK(readout_grid.accuracy[FactorialCell::A] == doctest::Approx(1.0));
    CHECK(readout_grid.accuracy[FactorialCell::C] == doctest::Approx(1.0));
    CHECK(readout_grid.fw[FactorialCell::B] == doctest::Approx(1.0));
    CHECK(readout_grid.fw[FactorialCell::D] == doctest::Approx(1.0));
    CHECK(readout_grid.classification == DominanceClass::answer_text_dominant);

    auto compute = oracle_client("oracle:compute,qo=0.2");
    FactorialResult compute_grid = ProtocolRunner(slice, compute, config).run_factorial();
    CHECK(compute_grid.accuracy[FactorialCell::A] == doctest::Approx(1.0));
    CHECK(compute_grid.accuracy[FactorialCell::B] == doctest::Approx(1.0));
    CHECK(compute_grid.accuracy[FactorialCell::C] < 0.5);
    CHECK(compute_grid.classification == DominanceClass::reasoning_dominant);
}

TEST_CASE("within-stable subset reproduces the reported attenuation") {
    // 300 matched ids: 197 standard-correct, 121 fail without the cue,
    // 76 stable; 74/76 degrade under standard, 8/76 under stripped
    std::vector<Trial> standard, stripped;
    for (int i = 0; i < 300; ++i) {
        std::string id = "ex" + std::to_string(i);
        bool standard_base = i < 197;
        bool stable = i < 76;
        standard.push_back(make_trial(id, Condition::Baseline, standard_base));
        stripped.push_back(make_trial(id, Condition::Baseline, stable || i >= 197));
        standard.push_back(make_trial(id, Condition::CorruptSuffix, stable && i >= 74));
        stripped.push_back(make_trial(id, Condition::CorruptSuffix, stable && i >= 8));
    }
    WithinStableResult result = within_stable_subset(standard, stripped);
    CHECK(result.matched_n == 300);
    CHECK(result.standard_correct == 197);
    CHECK(result.fails_without_cue == 121);
    CHECK(result.stable_n == 76);
    CHECK(result.delta_format1.delta == doctest::Approx(-74.0 / 76.0));
    CHECK(result.delta_format2.delta == doctest::Approx(-8.0 / 76.0));
    CHECK(result.attenuation_ratio == doctest::Approx(9.25));
    CHECK(std::fabs(result.attenuation_ratio - 9.3) < 0.1);
    CHECK(*result.sign_format1.p_value == doctest::Approx(1.0587911840678754e-22).epsilon(0.02));
    CHECK(*result.sign_format2.p_value == doctest::Approx(0.0078125).epsilon(1e-9));
}

TEST_CASE("within-stable of identical formats has ratio one") {
    std::vector<Trial> format;
    for (int i = 0; i < 50; ++i) {
        std::string id = "ex" + std::to_string(i);
        format.push_back(make_trial(id, Condition::Baseline, true));
        format.push_back(make_trial(id, Condition::CorruptSuffix, i >= 10));
    }
    WithinStableResult result = within_stable_subset(format, format);
    CHECK(result.attenuation_ratio == doctest::Approx(1.0));
    CHECK_FALSE(result.collapse);
}

TEST_CASE("zero format-2 degradations flag a collapse") {
    std::vector<Trial> format1, format2;
    for (int i = 0; i < 30; ++i) {
        std::string id = "ex" + std::to_string(i);
        format1.push_back(make_trial(id, Condition::Baseline, true));
        format2.push_back(make_trial(id, Condition::Baseline, true));
        format1.push_back(make_trial(id, Condition::CorruptSuffix, false));
        format2.push_back(make_trial(id, Condition::CorruptSuffix, true));
    }
    WithinStableResult result = within_stable_subset(format1, format2);
    CHECK(result.collapse);
    CHECK(std::isinf(result.attenuation_ratio));
}

TEST_CASE("self-generated protocol with one oracle both phases") {
    auto slice = make_slice(30);
    auto compute = oracle_client("oracle:compute,qo=0.1");
    ProtocolRunner runner(slice, compute, quick_config());
    SelfGenResult result = runner.run_self_generated(std::pair<long long, long long>{315, 500});
    CHECK(result.generation_acc == doctest::Approx(1.0));
    CHECK(result.kept_n == 30);
    REQUIRE(result.triad);
    CHECK(result.triad->fw.estimate == doctest::Approx(0.0));  // computes through its own chain
    REQUIRE(result.fisher_vs_baseline);
    CHECK(*result.fisher_vs_baseline->p_value < 0.05);  // 0/30 vs 315/500 clearly differ
}

TEST_CASE("compute generation consumed by a readout model follows the wrong answer") {
    auto slice = make_slice(25);
    // phase 1: a computing model writes its own (correct) chains
    Oracle generator(OracleConfig{OracleArchetype::compute, std::nullopt, 0.0, std::nullopt, 3});
    generator.register_examples(slice);
    std::vector<Example> derived = slice;
    for (Example& example : derived) {
        std::string prompt =
            build_prompt(PromptSpec{std::nullopt, example.question, {}, true, example.id});
        std::string generated = generator.complete(prompt);
        example.steps.clear();
        std::istringstream lines(generated);
        std::string line;
        while (std::getline(lines, line))
            if (!line.empty()) example.steps.push_back(line);
        example.wrong_answer = derive_wrong_answer(example.gold_answer, fnv1a64(example.id));
    }
    // phase 2: a readout model consumes those chains under conflict
    auto readout = oracle_client("oracle:readout,qo=0.1");
    TriadResult triad = ProtocolRunner(derived, readout, quick_config()).run_conflict_triad();
    CHECK(triad.fw.estimate == doctest::Approx(1.0));  // dissociation demo
}

TEST_CASE("probe contracts for commit-step oracles") {
    auto slice = make_slice(20);
    RunConfig config = quick_config();

    auto immediate = oracle_client("oracle:compute,commit=1,qo=0");
    ProbeResult early = ProtocolRunner(slice, immediate, config).prefix_branch_probe(6);
    REQUIRE(early.ecr);
    CHECK(early.ecr->estimate == doctest::Approx(1.0));

    auto full = oracle_client("oracle:compute,commit=3,qo=0");  // all reasoning steps
    ProbeResult late = ProtocolRunner(slice, full, config).prefix_branch_probe(6);
    REQUIRE(late.ecr);
    CHECK(late.ecr->estimate == doctest::Approx(0.0));
}

TEST_CASE("half-commit oracle yields a step function at the threshold") {
    auto slice = make_slice(20);
    auto half = oracle_client("oracle:compute,commit=2,qo=0");  // ceil(K/2) of K=4
    ProbeResult probe = ProtocolRunner(slice, half, quick_config()).early_stop_probe(6);
    for (const ProbePoint& point : probe.curve) {
        if (point.step < 2) CHECK(point.accuracy == doctest::Approx(0.0));
        else CHECK(point.accuracy == doctest::Approx(1.0));
    }
    CHECK(probe.full_accuracy == doctest::Approx(1.0));
}

TEST_CASE("early-stop curve under a readout oracle jumps at the answer line") {
    auto slice = make_slice(20);
    auto readout = oracle_client("oracle:readout,qo=0");
    ProbeResult probe = ProtocolRunner(slice, readout, quick_config()).early_stop_probe(6);
    for (const ProbePoint& point : probe.curve) {
        // the reference chain states the answer only at its final step (K=4)
        if (point.step < 4) CHECK(point.accuracy == doctest::Approx(0.0));
        else CHECK(point.accuracy == doctest::Approx(1.0));
    }
}

TEST_CASE("probe replay from persisted trials reproduces the curve") {
    auto slice = make_slice(15);
    auto client = oracle_client("oracle:compute,commit=2,qo=0.3,seed=5");
    RunConfig config = quick_config();
    ProbeResult live = ProtocolRunner(slice, client, config).early_stop_probe(5);
    fs::path path = fs::temp_directory_path() / "cotcheck-probe-trials.jsonl";
    write_trials_jsonl(path, live.trials);
    ProbeResult replayed = analyze_probe(read_trials_jsonl(path), config, true);
    REQUIRE(replayed.curve.size() == live.curve.size());
    for (std::size_t i = 0; i < live.curve.size(); ++i) {
        CHECK(replayed.curve[i].step == live.curve[i].step);
        CHECK(replayed.curve[i].accuracy == doctest::Approx(live.curve[i].accuracy));
    }
}

TEST_CASE("follow-wrong rate over constructed CC trials") {
    std::vector<Trial> trials;
    for (int i = 0; i < 500; ++i)
        trials.push_back(make_trial("ex" + std::to_string(i), Condition::CC, false, i < 313));
    StatReport fw = follow_wrong_rate(trials);
    CHECK(fw.estimate == doctest::Approx(0.626));
    CHECK(std::round(fw.estimate * 100) / 100 == doctest::Approx(0.63));
    std::vector<Trial> empty;
    CHECK_THROWS_AS(follow_wrong_rate(empty), ValidationError);
    trials[0].followed_wrong.reset();
    CHECK_THROWS_AS(follow_wrong_rate(trials), ValidationError);
}

TEST_CASE("strict and magnitude policies differ exactly on sign inversions") {
    // 30% of CC completions state -w instead of w
    auto slice = make_slice(100);
    std::vector<Trial> strict_trials, magnitude_trials;
    for (int i = 0; i < 100; ++i) {
        const Example& example = slice[static_cast<std::size_t>(i)];
        Answer wrong = derive_wrong_answer(example.gold_answer, 11);
        bool inverted = i < 30;
        std::string completion =
            "The answer is " + std::string(inverted ? "-" : "") + wrong.value() + ".";
        for (ExtractMode mode : {ExtractMode::strict, ExtractMode::magnitude_corrected}) {
            ExtractionPolicy policy{mode, AnswerKind::numeric};
            Trial trial;
            trial.example_id = example.id;
            trial.condition = Condition::CC;
            trial.completion = completion;
            trial.policy = policy;
            trial.extracted = extract_answer(completion, policy);
            trial.correct = trial.extracted.value &&
                            compare_answers(*trial.extracted.value, example.gold_answer, policy);
            trial.followed_wrong = trial.extracted.value &&
                                   compare_answers(*trial.extracted.value, wrong, policy);
            (mode == ExtractMode::strict ? strict_trials : magnitude_trials).push_back(trial);
        }
    }
    double strict_fw = follow_wrong_rate(strict_trials).estimate;
    double magnitude_fw = follow_wrong_rate(magnitude_trials).estimate;
    CHECK(magnitude_fw - strict_fw == doctest::Approx(0.30));
    auto acc = [](const std::vector<Trial>& trials) {
        long long correct = 0;
        for (const Trial& trial : trials) correct += trial.correct;
        return static_cast<double>(correct) / static_cast<double>(trials.size());
    };
    CHECK(acc(strict_trials) == doctest::Approx(0.0));
    CHECK(acc(magnitude_trials) == doctest::Approx(0.0));
}

TEST_CASE("trials survive a serialization round trip") {
    auto slice = make_slice(5);
    auto client = oracle_client("oracle:mixed,theta=0.5,qo=0.2,seed=3");
    TriadResult triad = ProtocolRunner(slice, client, quick_config()).run_conflict_triad();
    fs::path path = fs::temp_directory_path() / "cotcheck-trials-roundtrip.jsonl";
    write_trials_jsonl(path, triad.trials);
    auto loaded = read_trials_jsonl(path);
    REQUIRE(loaded.size() == triad.trials.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].to_json() == triad.trials[i].to_json());
    }
}

TEST_CASE("protocol runs are byte-identical across runs and worker counts") {
    auto slice = make_slice(40);
    auto run_once = [&](int concurrency) {
        RunConfig config = quick_config();
        config.concurrency = concurrency;
        auto client = oracle_client("oracle:mixed,theta=0.63,qo=0.1,seed=21");
        TriadResult triad = ProtocolRunner(slice, client, config).run_conflict_triad();
        std::ostringstream trials;
        for (const Trial& trial : triad.trials) trials << trial.to_json().dump() << '\n';
        return std::pair{trials.str(), triad.report().dump()};
    };
    auto [trials_a, report_a] = run_once(1);
    auto [trials_b, report_b] = run_once(8);
    auto [trials_c, report_c] = run_once(8);
    CHECK(trials_a == trials_b);
    CHECK(trials_b == trials_c);
    CHECK(report_a == report_b);
    CHECK(report_b == report_c);
}

TEST_CASE("warm cache reproduces a cold run trial for trial") {
    auto slice = make_slice(15);
    fs::path cache_dir = fs::temp_directory_path() / "cotcheck-proto-cache";
    fs::remove_all(cache_dir);
    auto run_once = [&] {
        ClientOptions options;
        options.cache_dir = cache_dir;
        CompletionClient client(ModelSpec::parse("oracle:readout,qo=0.2"), DecodeParams{},
                                options);
        TriadResult triad = ProtocolRunner(slice, client, quick_config()).run_conflict_triad();
        std::ostringstream out;
        for (const Trial& trial : triad.trials) out << trial.to_json().dump() << '\n';
        return out.str();
    };
    std::string cold = run_once();
    std::string warm = run_once();
    CHECK(cold == warm);
}

TEST_CASE("transport failures beyond the budget abort with partial results") {
    auto slice = make_slice(5);
    ClientOptions options;
    options.max_attempts = 1;
    CompletionClient client(ModelSpec::parse("http://127.0.0.1:1"), DecodeParams{}, options);
    RunConfig config = quick_config();
    config.failure_budget = 0.02;
    ProtocolRunner runner(slice, client, config);
    CHECK_THROWS_AS(runner.run_conflict_triad(), ProtocolAbort);
}

TEST_CASE("nonzero temperature is rejected for protocol runs") {
    auto slice = make_slice(3);
    auto client = oracle_client("oracle:readout");
    RunConfig config = quick_config();
    config.decode.temperature = 0.7;
    CHECK_THROWS_AS(ProtocolRunner(slice, client, config), ValidationError);
}

TEST_CASE("placement controls report per-condition follow-wrong") {
    auto slice = make_slice(30);
    auto readout = oracle_client("oracle:readout,qo=0.2");
    PlacementResult result =
        ProtocolRunner(slice, readout, quick_config()).run_placement_controls();
    CHECK(result.accuracy[Condition::PrefixCtxStd] == doctest::Approx(1.0));
    CHECK(result.fw.at(Condition::PlacedSuffix).estimate == doctest::Approx(1.0));
    CHECK(result.fw.count(Condition::PrefixCtxStd) == 0);  // no planted wrong answer
    // a pure readout model echoes wherever the text sits
    CHECK(result.fw.at(Condition::PrefixCtxConf).estimate == doctest::Approx(1.0));
}

TEST_CASE("verdict interpretability is gated structurally") {
    ProtocolVerdict verdict;
    verdict.qo_pass = false;
    verdict.sweep_complete = true;
    CHECK_FALSE(verdict.interpretable());
    verdict.qo_pass = true;
    CHECK(verdict.interpretable());
    verdict.sweep_complete = false;
    CHECK_FALSE(verdict.interpretable());
}
