#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cotcheck/corpus.hpp"
#include "cotcheck/errors.hpp"
#include "cotcheck/extraction.hpp"
#include "cotcheck/modelio.hpp"
#include "cotcheck/stats.hpp"
#include "cotcheck/transforms.hpp"
#include "json.hpp"

namespace cotcheck {

enum class Condition {
    Baseline,
    CorruptPrefix,
    CorruptMiddle,
    CorruptSuffix,
    QuestionOnly,
    SC,
    CC,
    CT,
    FactA,
    FactB,
    FactC,
    FactD,
    PrefixCtxStd,
    PrefixCtxConf,
    PlacedPrefix,
    PlacedMiddle,
    PlacedSuffix,
    Generation,
    ProbeStep,
};

std::string_view condition_name(Condition condition);
std::optional<Condition> condition_from_name(std::string_view name);

struct Trial {
    std::string example_id;
    Condition condition = Condition::Baseline;
    std::optional<int> probe_step;  // ProbeStep trials only
    std::string prompt;
    std::string completion;
    Extraction extracted;
    bool correct = false;
    std::optional<bool> followed_wrong;  // wrong-answer-bearing conditions only
    ExtractionPolicy policy;

    nlohmann::json to_json() const;
    static Trial from_json(const nlohmann::json& record);
};

// Deterministic trial order for persistence and statistics.
void sort_trials(std::vector<Trial>& trials);
void write_trials_jsonl(const std::filesystem::path& path, std::span<const Trial> trials);
std::vector<Trial> read_trials_jsonl(const std::filesystem::path& path);

// Transport failures exceeded the failure budget; successful trials ride
// along so the caller can persist partial results.
struct ProtocolAbort : TransportError {
    ProtocolAbort(const std::string& what, std::vector<Trial> partial_trials)
        : TransportError(what), partial(std::move(partial_trials)) {}
    std::vector<Trial> partial;
};

struct RunConfig {
    ExtractMode mode = ExtractMode::strict;
    std::uint64_t seed = 42;
    int resamples = 2000;
    int concurrency = 8;
    double failure_budget = 0.02;
    DecodeParams decode;
    bool corrupt_answer_line = true;  // terminal line eligible for corruption
    ConflictTemplate conflict_template = ConflictTemplate::standard;
    double gate_alpha = 0.05;
    std::optional<double> epsilon_min;  // optional absolute-gap requirement
    double ci_level = 0.95;
    int max_probe_step = 8;
    double fixed_position_threshold = 0.9;
};

enum class DominanceClass { answer_text_dominant, reasoning_dominant, mixed };
std::string_view dominance_name(DominanceClass value);

struct ProtocolVerdict {
    StatReport qo_sign;
    StatReport qo_bootstrap;
    double chain_acc = 0.0;
    double qo_acc = 0.0;
    bool qo_pass = false;
    FormatProfile format_profile;
    bool sweep_complete = false;

    bool interpretable() const { return qo_pass && sweep_complete; }
    nlohmann::json to_json() const;
};

struct GateResult {
    std::vector<Trial> trials;
    ProtocolVerdict verdict;
    nlohmann::json report() const;
};

struct PositionEffect {
    Region region;
    double baseline_acc = 0.0;
    double corrupted_acc = 0.0;
    AccuracyDelta delta;
    StatReport sign;
    StatReport bootstrap;
    int unchanged_examples = 0;  // no eligible step in the span (coverage flag)
};

struct SweepResult {
    std::vector<Trial> trials;
    double baseline_acc = 0.0;
    double qo_acc = 0.0;
    std::vector<PositionEffect> positions;  // prefix, middle, suffix
    std::vector<Region> dominant;           // ties all reported
    DominanceClass classification = DominanceClass::mixed;
    bool gate_waived = false;
    std::optional<FormatProfile> profile;
    std::vector<std::string> dropped_examples;
    nlohmann::json report() const;
};

struct TriadResult {
    std::vector<Trial> trials;
    double sc_acc = 0.0;
    double cc_acc = 0.0;
    double qo_acc = 0.0;
    StatReport fw;           // wilson report; estimate is the FW rate
    StatReport fw_vs_qo;     // one-sided binomial against the measured QO rate
    StatReport fw_majority;  // one-sided binomial against 1/2
    double fw_qo_gap = 0.0;
    DominanceClass classification = DominanceClass::mixed;
    std::vector<std::string> dropped_examples;
    nlohmann::json report() const;
};

struct CtStressResult {
    std::vector<Trial> trials;
    double sc_acc = 0.0;
    double ct_acc = 0.0;
    double cc_acc = 0.0;
    double qo_acc = 0.0;
    StatReport ct_vs_qo_sign;
    StatReport ct_vs_qo_bootstrap;
    StatReport fw;
    StatReport fw_majority;
    nlohmann::json report() const;
};

struct FactorialResult {
    std::vector<Trial> trials;
    std::map<FactorialCell, double> accuracy;
    std::map<FactorialCell, double> fw;  // B and D
    double answer_line_effect = 0.0;     // mean(A,C) - mean(B,D)
    double reasoning_effect = 0.0;       // mean(A,B) - mean(C,D)
    DominanceClass classification = DominanceClass::mixed;
    nlohmann::json report() const;
};

struct WithinStableResult {
    long long matched_n = 0;
    long long standard_correct = 0;    // format-1 baseline correct
    long long fails_without_cue = 0;   // format-1 correct, format-2 baseline wrong
    long long stable_n = 0;            // baseline correct under both formats
    AccuracyDelta delta_format1;       // suffix delta on the stable subset
    AccuracyDelta delta_format2;
    StatReport sign_format1;
    StatReport sign_format2;
    double attenuation_ratio = 0.0;  // |delta1| / |delta2|; infinity on collapse
    bool collapse = false;           // zero format-2 degradations
    nlohmann::json report() const;
};

struct PlacementResult {
    std::vector<Trial> trials;
    std::map<Condition, double> accuracy;
    std::map<Condition, StatReport> fw;  // wrong-bearing conditions
    double suffix_minus_context_fw = 0.0;
    nlohmann::json report() const;
};

struct SelfGenResult {
    std::vector<Trial> trials;  // generation + consumption phases
    double generation_acc = 0.0;
    long long generated_n = 0;
    long long kept_n = 0;
    std::optional<TriadResult> triad;  // empty when no correct generations
    std::optional<StatReport> fisher_vs_baseline;
    nlohmann::json report() const;
};

struct ProbePoint {
    int step = 0;
    long long n = 0;
    long long correct = 0;
    double accuracy = 0.0;
};

struct ProbeResult {
    std::vector<Trial> trials;
    std::vector<ProbePoint> curve;
    double full_accuracy = 0.0;
    long long full_n = 0;
    std::optional<StatReport> ecr;  // prefix-branch only (wilson)
    nlohmann::json report() const;
};

// FW = matches(wrong)/N over CC-style trials, with a Wilson interval.
StatReport follow_wrong_rate(std::span<const Trial> cc_trials, double level = 0.95);

// Pure re-analysis entry points: everything below is a function of the
// trial list plus the statistical knobs in RunConfig (no model access).
ProtocolVerdict analyze_gate(std::vector<Trial> trials, const RunConfig& config,
                             std::optional<FormatProfile> profile);
SweepResult analyze_sweep(std::vector<Trial> trials, const RunConfig& config,
                          std::optional<FormatProfile> profile);
TriadResult analyze_triad(std::vector<Trial> trials, const RunConfig& config);
CtStressResult analyze_ct_stress(std::vector<Trial> trials, const RunConfig& config);
FactorialResult analyze_factorial(std::vector<Trial> trials, const RunConfig& config);
WithinStableResult within_stable_subset(std::span<const Trial> format1_trials,
                                        std::span<const Trial> format2_trials);
PlacementResult analyze_placement(std::vector<Trial> trials, const RunConfig& config);
SelfGenResult analyze_self_generated(std::vector<Trial> trials, const RunConfig& config,
                                     std::optional<std::pair<long long, long long>> fw_baseline);
ProbeResult analyze_probe(std::vector<Trial> trials, const RunConfig& config,
                          bool early_stop_reference);

// Orchestration against a live model.
class ProtocolRunner {
 public:
    ProtocolRunner(std::span<const Example> slice, CompletionClient& client, RunConfig config);

    GateResult run_prerequisite_gate();
    // gate_waived: run without a passing gate on record (recorded in report).
    SweepResult run_position_sweep(bool gate_waived = false);
    TriadResult run_conflict_triad();
    CtStressResult run_ct_stress();
    FactorialResult run_factorial();
    PlacementResult run_placement_controls();
    SelfGenResult run_self_generated(
        std::optional<std::pair<long long, long long>> fw_baseline = std::nullopt);
    ProbeResult prefix_branch_probe(int max_step);
    ProbeResult early_stop_probe(int max_step);

    const RunConfig& config() const { return config_; }

 private:
    struct Job {
        const Example* example;
        Condition condition;
        std::optional<int> probe_step;
        std::string prompt;
        const Answer* wrong;  // for followed_wrong; null when not wrong-bearing
        std::optional<ExtractionPolicy> policy_override;
    };

    std::string condition_prompt(const Example& example, std::vector<std::string> steps,
                                 bool generation = false) const;
    Answer wrong_answer_for(const Example& example);
    ExtractionPolicy policy_for(const Example& example) const;
    std::vector<Trial> run_jobs(std::vector<Job> jobs);

    std::span<const Example> slice_;
    CompletionClient& client_;
    RunConfig config_;
    std::map<std::string, Answer> wrong_answers_;
};

}  // namespace cotcheck
