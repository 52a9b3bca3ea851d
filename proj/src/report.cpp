#include "cotcheck/report.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cotcheck/errors.hpp"
#include "cotcheck/rng.hpp"
#include "cotcheck/stats.hpp"

namespace cotcheck {

using nlohmann::json;

namespace {

std::string utc_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string fmt(double value, int digits = 3) {
    if (!std::isfinite(value)) return value > 0 ? "inf" : "-inf";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, value);
    return buf;
}

std::string fmt_p(double p) {
    char buf[48];
    if (p != 0.0 && p < 1e-3)
        std::snprintf(buf, sizeof buf, "%.2e", p);
    else
        std::snprintf(buf, sizeof buf, "%.4f", p);
    return buf;
}

struct Row {
    std::string label;
    std::string accuracy;
    std::string delta;
    std::string ci;
    std::string p;
    std::string n;
    std::string report_id;
    bool dominant = false;
};

std::string ci_text(const json& report) {
    if (!report.contains("ci")) return "—";
    const json& ci = report["ci"];
    return "[" + fmt(ci["lo"].get<double>()) + ", " + fmt(ci["hi"].get<double>()) + "]";
}

std::string p_text(const json& report) {
    if (!report.contains("p_value")) return "—";
    return fmt_p(report["p_value"].get<double>());
}

RenderedSummary render_rows(const std::string& caption, const std::vector<Row>& rows,
                            bool fw_column = false) {
    std::ostringstream table;
    table << caption << "\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-18s %10s %10s %22s %12s %8s  %s\n", "condition",
                  fw_column ? "acc" : "accuracy", fw_column ? "fw" : "delta", "ci", "p", "n",
                  "report");
    table << line;
    table << std::string(92, '-') << "\n";
    std::ostringstream csv;
    csv << "condition,accuracy," << (fw_column ? "fw" : "delta")
        << ",ci_lo,ci_hi,p,n,report_id,dominant\n";
    for (const Row& row : rows) {
        std::string label = row.label + (row.dominant ? " *" : "");
        std::snprintf(line, sizeof line, "%-18s %10s %10s %22s %12s %8s  %s\n", label.c_str(),
                      row.accuracy.c_str(), row.delta.c_str(), row.ci.c_str(), row.p.c_str(),
                      row.n.c_str(), row.report_id.c_str());
        table << line;
        std::string ci_csv = ",";
        if (row.ci.size() > 2 && row.ci.front() == '[') {
            std::string inner = row.ci.substr(1, row.ci.size() - 2);
            std::size_t comma = inner.find(',');
            ci_csv = inner.substr(0, comma) + "," + inner.substr(comma + 2);
        }
        csv << row.label << ',' << row.accuracy << ',' << row.delta << ',' << ci_csv << ','
            << row.p << ',' << row.n << ',' << row.report_id << ','
            << (row.dominant ? "1" : "0") << "\n";
    }
    if (rows.empty()) throw ValidationError("render_summary: no rows to render");
    return RenderedSummary{table.str(), csv.str()};
}

RenderedSummary render_sweep(const json& reports) {
    std::vector<Row> rows;
    rows.push_back(Row{"Baseline", fmt(reports["baseline_acc"].get<double>()), "—", "—", "—",
                       "—", "", false});
    std::vector<std::string> dominant;
    for (const json& region : reports["dominant"]) dominant.push_back(region.get<std::string>());
    for (const std::string& region : {std::string("prefix"), std::string("middle"),
                                      std::string("suffix")}) {
        if (!reports["positions"].contains(region)) {
            std::cerr << "warning: missing sweep condition " << region << "\n";
            rows.push_back(Row{"Corrupt" + region, "—", "—", "—", "—", "—", "", false});
            continue;
        }
        const json& entry = reports["positions"][region];
        const json& sign = entry["sign"];
        Row row;
        row.label = "Corrupt " + region;
        row.accuracy = fmt(entry["corrupted_acc"].get<double>());
        row.delta = fmt(entry["delta"].get<double>());
        row.ci = ci_text(entry["bootstrap"]);
        row.p = p_text(sign);
        row.n = std::to_string(sign["n"].get<long long>());
        row.report_id = "positions." + region + ".sign";
        row.dominant = std::find(dominant.begin(), dominant.end(), region) != dominant.end();
        rows.push_back(row);
    }
    rows.push_back(Row{"QuestionOnly", fmt(reports["qo_acc"].get<double>()), "—", "—", "—", "—",
                       "", false});
    std::string caption = "Position sweep (dominant marked *), classification: " +
                          reports["classification"].get<std::string>();
    return render_rows(caption, rows);
}

RenderedSummary render_triad(const json& reports) {
    std::vector<Row> rows;
    rows.push_back(Row{"SC", fmt(reports["sc_acc"].get<double>()), "—", "—", "—", "—", "", false});
    const json& fw = reports["fw"];
    Row cc;
    cc.label = "CC";
    cc.accuracy = fmt(reports["cc_acc"].get<double>());
    cc.delta = fmt(fw["estimate"].get<double>());
    cc.ci = ci_text(fw);
    cc.p = p_text(reports["fw_majority"]);
    cc.n = std::to_string(fw["n"].get<long long>());
    cc.report_id = "fw_majority";
    rows.push_back(cc);
    rows.push_back(Row{"QuestionOnly", fmt(reports["qo_acc"].get<double>()), "—", "—", "—", "—",
                       "", false});
    std::string caption = "Conflict triad (fw column = followed-wrong), classification: " +
                          reports["classification"].get<std::string>();
    return render_rows(caption, rows, /*fw_column=*/true);
}

RenderedSummary render_generic(const json& reports) {
    std::vector<Row> rows;
    for (const auto& [key, value] : reports.items()) {
        if (!value.is_number()) continue;
        rows.push_back(Row{key, fmt(value.get<double>()), "—", "—", "—", "—", "", false});
    }
    if (rows.empty())
        rows.push_back(Row{"(see reports.json)", "—", "—", "—", "—", "—", "", false});
    return render_rows("Protocol: " + reports.value("protocol", std::string("unknown")), rows);
}

}  // namespace

json RunManifest::to_json() const {
    json out;
    out["run_id"] = run_id;
    out["config_hash"] = config_hash;
    out["seed"] = seed;
    out["slice_name"] = slice_name;
    out["slice_version"] = slice_version;
    out["model_name"] = model_name;
    out["harness_version"] = harness_version;
    out["started_at"] = started_at;
    out["finished_at"] = finished_at;
    out["status"] = status;
    return out;
}

RunManifest start_manifest(const json& config, const std::string& slice_name,
                           const std::string& slice_version, const std::string& model_name,
                           std::uint64_t seed) {
    RunManifest manifest;
    manifest.config_hash = hex64(fnv1a64(config.dump()));
    manifest.started_at = utc_now();
    manifest.run_id = manifest.config_hash.substr(0, 8) + "-" +
                      hex64(fnv1a64(manifest.started_at)).substr(0, 8);
    manifest.seed = seed;
    manifest.slice_name = slice_name;
    manifest.slice_version = slice_version;
    manifest.model_name = model_name;
    manifest.status = "running";
    return manifest;
}

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write manifest: " + path.string());
    out << manifest.to_json().dump(2) << '\n';
}

void finalize_manifest(const std::filesystem::path& path, RunManifest& manifest,
                       const std::string& status) {
    manifest.finished_at = utc_now();
    manifest.status = status;
    write_manifest(path, manifest);
}

RenderedSummary render_summary(const json& reports) {
    if (!reports.is_object() || !reports.contains("protocol"))
        throw ValidationError("render_summary: not a reports payload");
    std::string protocol = reports["protocol"].get<std::string>();
    if (protocol == "sweep") return render_sweep(reports);
    if (protocol == "triad") return render_triad(reports);
    if (protocol == "self-gen" && reports.contains("triad")) {
        RenderedSummary inner = render_triad(reports["triad"]);
        inner.table = "Self-generated chains: generation_acc " +
                      fmt(reports["generation_acc"].get<double>()) + ", kept " +
                      std::to_string(reports["kept_n"].get<long long>()) + "\n" + inner.table;
        return inner;
    }
    return render_generic(reports);
}

void emit_plot_data(const std::vector<std::pair<std::string, json>>& reports,
                    std::string_view kind, const std::filesystem::path& csv_path) {
    std::ostringstream csv;
    csv << "series,x,y,ci_lo,ci_hi\n";
    auto row = [&](const std::string& series, const std::string& x, double y, double lo,
                   double hi) {
        csv << series << ',' << x << ',' << fmt(y, 6) << ',' << fmt(lo, 6) << ',' << fmt(hi, 6)
            << "\n";
    };
    if (kind == "probe-curve") {
        for (const auto& [label, report] : reports) {
            for (const json& point : report.at("curve")) {
                long long n = point.at("n").get<long long>();
                long long correct = point.at("correct").get<long long>();
                auto ci = wilson_interval(correct, n, 0.95);
                row(label, std::to_string(point.at("step").get<int>()),
                    point.at("accuracy").get<double>(), ci.lo, ci.hi);
            }
        }
    } else if (kind == "fw-scale") {
        for (const auto& [label, report] : reports) {
            const json& fw = report.at("fw");
            row(label, "fw", fw.at("estimate").get<double>(), fw.at("ci").at("lo").get<double>(),
                fw.at("ci").at("hi").get<double>());
        }
    } else if (kind == "fw-qo-gap") {
        for (const auto& [label, report] : reports) {
            const json& fw = report.at("fw");
            row(label, "fw", fw.at("estimate").get<double>(), fw.at("ci").at("lo").get<double>(),
                fw.at("ci").at("hi").get<double>());
            double qo = report.at("qo_acc").get<double>();
            row(label, "qo", qo, qo, qo);
            double gap = report.at("fw_qo_gap").get<double>();
            row(label, "fw_minus_qo", gap, gap, gap);
        }
    } else if (kind == "ablation-bars") {
        for (const auto& [label, report] : reports) {
            for (const std::string& region : {std::string("prefix"), std::string("middle"),
                                              std::string("suffix")}) {
                if (!report.at("positions").contains(region)) continue;
                const json& entry = report.at("positions").at(region);
                const json& ci = entry.at("bootstrap").at("ci");
                row(label, region, entry.at("delta").get<double>(), ci.at("lo").get<double>(),
                    ci.at("hi").get<double>());
            }
        }
    } else {
        throw ValidationError("unknown plot kind \"" + std::string(kind) + "\"");
    }
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw ValidationError("cannot write plot data: " + csv_path.string());
    out << csv.str();
}

}  // namespace cotcheck
