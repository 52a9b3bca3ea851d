#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cotcheck/corpus.hpp"
#include "cotcheck/errors.hpp"
#include "cotcheck/modelio.hpp"
#include "cotcheck/protocols.hpp"
#include "cotcheck/report.hpp"
#include "cotcheck/rng.hpp"
#include "cotcheck/transforms.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cotcheck;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitTransport = 2;
constexpr int kExitGateFailed = 3;

struct CommonOptions {
    std::string slice_path;
    std::string model = "oracle:readout";
    std::string policy = "strict";
    std::uint64_t seed = 42;
    int resamples = 2000;
    int concurrency = 8;
    std::string out_dir = "run-out";
    std::string cache_dir;
    bool trace = false;
    bool require_gate = false;
    double failure_budget = 0.02;
    std::string conflict_template = "standard";
    bool keep_answer_line = false;  // exclude terminal line from corruption
    int max_tokens = 640;
    double temperature = 0.0;
};

void add_common(CLI::App* cmd, CommonOptions& options, bool with_model = true) {
    cmd->add_option("--slice", options.slice_path, "task slice (.jsonl or manifest .json)");
    if (with_model)
        cmd->add_option("--model", options.model,
                        "oracle:<readout|compute|mixed,theta=..[,qo=..,commit=..,seed=..]> or "
                        "endpoint URL [|model|env:VAR]");
    cmd->add_option("--policy", options.policy, "extraction policy: strict | magnitude");
    cmd->add_option("--seed", options.seed, "run seed");
    cmd->add_option("--resamples", options.resamples, "bootstrap resamples");
    cmd->add_option("--concurrency", options.concurrency, "max in-flight completions");
    cmd->add_option("--out", options.out_dir, "output directory");
    cmd->add_option("--cache-dir", options.cache_dir, "response cache directory");
    cmd->add_flag("--trace", options.trace, "log endpoint requests/responses (auth redacted)");
    cmd->add_option("--failure-budget", options.failure_budget,
                    "abort when this fraction of trials fails at transport");
    cmd->add_option("--conflict-template", options.conflict_template,
                    "conflicting-suffix template: standard | strong");
    cmd->add_flag("--keep-answer-line", options.keep_answer_line,
                  "exclude the terminal answer line from corruption eligibility");
    cmd->add_option("--max-tokens", options.max_tokens, "decode budget per completion");
    cmd->add_option("--temperature", options.temperature, "decode temperature (protocols need 0)");
}

// A JSON run-config file pre-fills options; explicit flags override it.
void apply_config_file(const std::string& path, CommonOptions& options) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    json config = json::parse(in);
    options.slice_path = config.value("slice", options.slice_path);
    options.model = config.value("model", options.model);
    options.policy = config.value("policy", options.policy);
    options.seed = config.value("seed", options.seed);
    options.resamples = config.value("resamples", options.resamples);
    options.concurrency = config.value("concurrency", options.concurrency);
    options.out_dir = config.value("out", options.out_dir);
    options.cache_dir = config.value("cache_dir", options.cache_dir);
    options.failure_budget = config.value("failure_budget", options.failure_budget);
    options.conflict_template = config.value("conflict_template", options.conflict_template);
}

RunConfig make_run_config(const CommonOptions& options) {
    RunConfig config;
    auto mode = extract_mode_from_name(options.policy);
    if (!mode) throw ValidationError("unknown policy \"" + options.policy + "\"");
    config.mode = *mode;
    config.seed = options.seed;
    config.resamples = options.resamples;
    config.concurrency = options.concurrency;
    config.failure_budget = options.failure_budget;
    config.decode.max_tokens = options.max_tokens;
    config.decode.temperature = options.temperature;
    config.corrupt_answer_line = !options.keep_answer_line;
    if (options.conflict_template == "strong")
        config.conflict_template = ConflictTemplate::strong;
    else if (options.conflict_template != "standard")
        throw ValidationError("unknown conflict template \"" + options.conflict_template + "\"");
    return config;
}

json options_json(const CommonOptions& options, const std::string& protocol) {
    json out;
    out["protocol"] = protocol;
    out["slice"] = options.slice_path;
    out["model"] = options.model;
    out["policy"] = options.policy;
    out["seed"] = options.seed;
    out["resamples"] = options.resamples;
    out["conflict_template"] = options.conflict_template;
    out["corrupt_answer_line"] = !options.keep_answer_line;
    return out;
}

CompletionClient make_client(const CommonOptions& options, const RunConfig& config) {
    ClientOptions client_options;
    client_options.trace = options.trace;
    if (!options.cache_dir.empty()) client_options.cache_dir = fs::path(options.cache_dir);
    return CompletionClient(ModelSpec::parse(options.model), config.decode, client_options);
}

void write_reports(const fs::path& dir, const json& reports) {
    std::ofstream out(dir / "reports.json", std::ios::binary);
    if (!out) throw ValidationError("cannot write reports.json under " + dir.string());
    out << reports.dump(2) << '\n';
}

void write_tables(const fs::path& dir, const json& reports) {
    RenderedSummary summary = render_summary(reports);
    std::ofstream table(dir / "tables.txt", std::ios::binary);
    table << summary.table;
    std::ofstream csv(dir / "tables.csv", std::ios::binary);
    csv << summary.csv;
}

std::string slice_name_of(const std::string& path) {
    return fs::path(path).stem().string();
}

// Shared run/gate scaffolding: manifest lifecycle, trial persistence,
// transport-abort handling.
template <typename Body>
int with_run_directory(const CommonOptions& options, const std::string& protocol, Body body) {
    fs::create_directories(options.out_dir);
    fs::path dir(options.out_dir);
    json config_json = options_json(options, protocol);
    RunManifest manifest = start_manifest(config_json, slice_name_of(options.slice_path), "v1",
                                          options.model, options.seed);
    write_manifest(dir / "manifest.json", manifest);
    try {
        int code = body(dir);
        finalize_manifest(dir / "manifest.json", manifest, "complete");
        return code;
    } catch (const ProtocolAbort& abort) {
        write_trials_jsonl(dir / "trials.jsonl", abort.partial);
        finalize_manifest(dir / "manifest.json", manifest, "partial");
        std::cerr << "transport abort: " << abort.what() << "\n";
        return kExitTransport;
    }
}

int cmd_build(const CommonOptions& options, const std::string& transform,
              const std::string& in_path, const std::string& out_path,
              const std::string& region_name_opt, double fraction,
              const std::string& placeholder, const std::string& cell_name) {
    auto slice = load_slice(in_path);
    std::vector<Example> out;
    out.reserve(slice.size());
    for (const Example& source : slice) {
        Example derived = source;
        json params;
        if (transform == "corrupt") {
            auto region = region_from_name(region_name_opt);
            if (!region) throw ValidationError("corrupt needs --region prefix|middle|suffix");
            CorruptionSpec spec{*region, fraction, options.seed, !options.keep_answer_line};
            derived.steps = corrupt_region(source.chain(), spec).chain.steps;
            params = {{"region", region_name_opt},
                      {"fraction", fraction},
                      {"include_answer_line", !options.keep_answer_line}};
        } else if (transform == "strip") {
            derived.steps = strip_answer_line(source.chain()).steps;
        } else if (transform == "neutral-strip") {
            std::string text = placeholder.empty() ? std::string(kNeutralPlaceholder) : placeholder;
            derived.steps = neutral_strip(source.chain(), text).steps;
            params = {{"placeholder", text}};
        } else if (transform == "conflict") {
            Answer wrong = source.wrong_answer
                               ? *source.wrong_answer
                               : derive_wrong_answer(source.gold_answer,
                                                     substream_seed(options.seed,
                                                                    fnv1a64(source.id)));
            ConflictTemplate tpl = options.conflict_template == "strong"
                                       ? ConflictTemplate::strong
                                       : ConflictTemplate::standard;
            derived.steps = make_conflicting(source.chain(), wrong, tpl).steps;
            derived.wrong_answer = wrong;
            params = {{"template", options.conflict_template}, {"wrong", wrong.value()}};
        } else if (transform == "insert-suffix") {
            derived.steps = insert_answer_suffix(source.chain(), source.gold_answer).steps;
        } else if (transform == "derive-wrong") {
            derived.wrong_answer =
                source.wrong_answer.has_value()
                    ? source.wrong_answer
                    : std::optional<Answer>(derive_wrong_answer(
                          source.gold_answer, substream_seed(options.seed, fnv1a64(source.id))));
        } else if (transform == "factorial") {
            FactorialCell cell;
            if (cell_name == "A") cell = FactorialCell::A;
            else if (cell_name == "B") cell = FactorialCell::B;
            else if (cell_name == "C") cell = FactorialCell::C;
            else if (cell_name == "D") cell = FactorialCell::D;
            else throw ValidationError("factorial needs --cell A|B|C|D");
            if (!derived.wrong_answer && (cell == FactorialCell::B || cell == FactorialCell::D))
                derived.wrong_answer = derive_wrong_answer(
                    source.gold_answer, substream_seed(options.seed, fnv1a64(source.id)));
            derived.steps = build_factorial_cell(derived, cell,
                                                 substream_seed(options.seed,
                                                                fnv1a64(source.id))).steps;
            params = {{"cell", cell_name}};
        } else {
            throw ValidationError("unknown transform \"" + transform + "\"");
        }
        attach_provenance(derived, transform, params.is_null() ? "{}" : params.dump(),
                          options.seed, source.id);
        out.push_back(std::move(derived));
    }
    save_slice(out_path, out);
    std::cout << "wrote " << out.size() << " examples to " << out_path << "\n";
    return kExitOk;
}

int cmd_gate(const CommonOptions& options) {
    auto slice = load_slice(options.slice_path);
    RunConfig config = make_run_config(options);
    CompletionClient client = make_client(options, config);
    return with_run_directory(options, "gate", [&](const fs::path& dir) {
        ProtocolRunner runner(slice, client, config);
        GateResult result = runner.run_prerequisite_gate();
        write_trials_jsonl(dir / "trials.jsonl", result.trials);
        write_reports(dir, result.report());
        const ProtocolVerdict& verdict = result.verdict;
        std::cout << "chain_acc " << verdict.chain_acc << "  qo_acc " << verdict.qo_acc
                  << "  p " << verdict.qo_sign.p_value.value_or(1.0) << "  gate "
                  << (verdict.qo_pass ? "PASS" : "FAIL") << "\n";
        if (!verdict.qo_pass && options.require_gate) return kExitGateFailed;
        return kExitOk;
    });
}

int cmd_run(const CommonOptions& options, const std::string& protocol, int max_step,
            const std::string& fw_baseline) {
    auto slice = load_slice(options.slice_path);
    RunConfig config = make_run_config(options);
    CompletionClient client = make_client(options, config);
    return with_run_directory(options, protocol, [&](const fs::path& dir) {
        ProtocolRunner runner(slice, client, config);
        std::vector<Trial> trials;
        json reports;
        if (protocol == "sweep") {
            SweepResult result = runner.run_position_sweep(/*gate_waived=*/true);
            trials = std::move(result.trials);
            reports = result.report();
        } else if (protocol == "triad") {
            TriadResult result = runner.run_conflict_triad();
            trials = std::move(result.trials);
            reports = result.report();
        } else if (protocol == "ct-stress") {
            CtStressResult result = runner.run_ct_stress();
            trials = std::move(result.trials);
            reports = result.report();
        } else if (protocol == "factorial") {
            FactorialResult result = runner.run_factorial();
            trials = std::move(result.trials);
            reports = result.report();
        } else if (protocol == "placement") {
            PlacementResult result = runner.run_placement_controls();
            trials = std::move(result.trials);
            reports = result.report();
        } else if (protocol == "self-gen") {
            std::optional<std::pair<long long, long long>> baseline;
            if (!fw_baseline.empty()) {
                auto slash = fw_baseline.find('/');
                if (slash == std::string::npos)
                    throw ValidationError("--fw-baseline expects k/n");
                baseline = {std::stoll(fw_baseline.substr(0, slash)),
                            std::stoll(fw_baseline.substr(slash + 1))};
            }
            SelfGenResult result = runner.run_self_generated(baseline);
            trials = std::move(result.trials);
            reports = result.report();
        } else if (protocol == "prefix-branch") {
            ProbeResult result = runner.prefix_branch_probe(max_step);
            trials = std::move(result.trials);
            reports = result.report();
        } else if (protocol == "early-stop") {
            ProbeResult result = runner.early_stop_probe(max_step);
            trials = std::move(result.trials);
            reports = result.report();
        } else {
            throw ValidationError("unknown protocol \"" + protocol + "\"");
        }
        write_trials_jsonl(dir / "trials.jsonl", trials);
        write_reports(dir, reports);
        write_tables(dir, reports);
        std::cout << "wrote " << trials.size() << " trials under " << dir.string() << "\n";
        return kExitOk;
    });
}

int cmd_analyze(const CommonOptions& options, const std::string& protocol,
                const std::string& trials_path, const std::string& trials2_path,
                const std::string& fw_baseline, const std::string& out_path) {
    RunConfig config = make_run_config(options);
    auto trials = read_trials_jsonl(trials_path);
    std::optional<FormatProfile> profile;
    if (!options.slice_path.empty()) {
        auto slice = load_slice(options.slice_path);
        profile = characterize_format(slice, config.fixed_position_threshold);
    }
    json reports;
    if (protocol == "gate") {
        ProtocolVerdict verdict = analyze_gate(std::move(trials), config, profile);
        reports["protocol"] = "gate";
        reports["verdict"] = verdict.to_json();
    } else if (protocol == "sweep") {
        reports = analyze_sweep(std::move(trials), config, profile).report();
    } else if (protocol == "triad") {
        reports = analyze_triad(std::move(trials), config).report();
    } else if (protocol == "ct-stress") {
        reports = analyze_ct_stress(std::move(trials), config).report();
    } else if (protocol == "factorial") {
        reports = analyze_factorial(std::move(trials), config).report();
    } else if (protocol == "placement") {
        reports = analyze_placement(std::move(trials), config).report();
    } else if (protocol == "self-gen") {
        std::optional<std::pair<long long, long long>> baseline;
        if (!fw_baseline.empty()) {
            auto slash = fw_baseline.find('/');
            if (slash == std::string::npos) throw ValidationError("--fw-baseline expects k/n");
            baseline = {std::stoll(fw_baseline.substr(0, slash)),
                        std::stoll(fw_baseline.substr(slash + 1))};
        }
        reports = analyze_self_generated(std::move(trials), config, baseline).report();
    } else if (protocol == "prefix-branch") {
        reports = analyze_probe(std::move(trials), config, false).report();
    } else if (protocol == "early-stop") {
        reports = analyze_probe(std::move(trials), config, true).report();
    } else if (protocol == "within-stable") {
        if (trials2_path.empty())
            throw ValidationError("within-stable needs --trials2 (second format)");
        auto trials2 = read_trials_jsonl(trials2_path);
        reports = within_stable_subset(trials, trials2).report();
    } else {
        throw ValidationError("unknown protocol \"" + protocol + "\"");
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + out_path);
    out << reports.dump(2) << '\n';
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

int cmd_report(const std::string& reports_path, const std::string& out_dir,
               const std::vector<std::string>& plots) {
    std::ifstream in(reports_path);
    if (!in) throw ValidationError("cannot open " + reports_path);
    json reports = json::parse(in);
    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    write_tables(dir, reports);
    std::string label = fs::path(reports_path).stem().string();
    for (const std::string& kind : plots)
        emit_plot_data({{label, reports}}, kind, dir / (kind + ".csv"));
    std::cout << "wrote tables under " << out_dir << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"corruption-study harness for chain-of-thought evaluations"};
    app.require_subcommand(1);

    CommonOptions options;
    std::string config_file;
    app.add_option("--config", config_file, "JSON run-config file (flags override)");

    // build
    auto* build = app.add_subcommand("build", "apply a transform to a slice, emit derived JSONL");
    std::string transform, in_path, out_path, region_opt, placeholder, cell_name;
    double fraction = 1.0;
    build->add_option("--transform", transform,
                      "corrupt|strip|neutral-strip|conflict|insert-suffix|derive-wrong|factorial")
        ->required();
    build->add_option("--in", in_path, "input slice")->required();
    build->add_option("--out", out_path, "output JSONL")->required();
    build->add_option("--region", region_opt, "corruption region");
    build->add_option("--fraction", fraction, "fraction of eligible steps");
    build->add_option("--placeholder", placeholder, "neutral-strip replacement sentence");
    build->add_option("--cell", cell_name, "factorial cell A|B|C|D");
    build->add_option("--seed", options.seed, "transform seed");
    build->add_option("--conflict-template", options.conflict_template, "standard | strong");
    build->add_flag("--keep-answer-line", options.keep_answer_line,
                    "exclude the terminal answer line from corruption");

    // gate
    auto* gate = app.add_subcommand("gate", "run the question-only prerequisite gate");
    add_common(gate, options);
    gate->add_flag("--require-gate", options.require_gate, "exit 3 when the gate fails");

    // run
    auto* run = app.add_subcommand("run", "run a protocol against a model");
    add_common(run, options);
    std::string protocol;
    int max_step = 8;
    std::string fw_baseline;
    run->add_option("--protocol", protocol,
                    "sweep|triad|ct-stress|factorial|placement|self-gen|prefix-branch|early-stop")
        ->required();
    run->add_option("--max-step", max_step, "probe depth (probes only)");
    run->add_option("--fw-baseline", fw_baseline, "pre-written FW counts k/n (self-gen)");

    // analyze
    auto* analyze = app.add_subcommand(
        "analyze", "recompute statistics from trials.jsonl without model access");
    std::string trials_path, trials2_path, analyze_out = "reports.json";
    std::string analyze_protocol;
    analyze->add_option("--trials", trials_path, "trials.jsonl")->required();
    analyze->add_option("--trials2", trials2_path, "second trials.jsonl (within-stable)");
    analyze->add_option("--protocol", analyze_protocol, "protocol that produced the trials")
        ->required();
    analyze->add_option("--out", analyze_out, "output reports.json");
    analyze->add_option("--slice", options.slice_path, "slice for format characterization");
    analyze->add_option("--policy", options.policy, "strict | magnitude");
    analyze->add_option("--seed", options.seed, "bootstrap seed");
    analyze->add_option("--resamples", options.resamples, "bootstrap resamples");
    analyze->add_option("--fw-baseline", fw_baseline, "pre-written FW counts k/n (self-gen)");

    // report
    auto* report = app.add_subcommand("report", "render tables and plot CSVs from reports.json");
    std::string reports_path, report_out = "report-out";
    std::vector<std::string> plots;
    report->add_option("--reports", reports_path, "reports.json")->required();
    report->add_option("--out", report_out, "output directory");
    report->add_option("--plot", plots, "plot kinds: ablation-bars|fw-scale|probe-curve|fw-qo-gap");

    try {
        // config file fills defaults; explicit flags override it
        for (int i = 1; i < argc; ++i) {
            std::string arg = argv[i];
            if (arg.rfind("--config=", 0) == 0)
                apply_config_file(arg.substr(9), options);
            else if (arg == "--config" && i + 1 < argc)
                apply_config_file(argv[i + 1], options);
        }
        app.parse(argc, argv);
        if (build->parsed())
            return cmd_build(options, transform, in_path, out_path, region_opt, fraction,
                             placeholder, cell_name);
        if (gate->parsed()) return cmd_gate(options);
        if (run->parsed()) return cmd_run(options, protocol, max_step, fw_baseline);
        if (analyze->parsed())
            return cmd_analyze(options, analyze_protocol, trials_path, trials2_path, fw_baseline,
                               analyze_out);
        if (report->parsed()) return cmd_report(reports_path, report_out, plots);
        return kExitValidation;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;  // unknown flags and bad usage exit 1
    } catch (const ProtocolAbort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitTransport;
    } catch (const TransportError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitTransport;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}
