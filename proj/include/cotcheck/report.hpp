#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace cotcheck {

inline constexpr std::string_view kHarnessVersion = "0.1.0";

struct RunManifest {
    std::string run_id;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string slice_name;
    std::string slice_version;
    std::string model_name;
    std::string harness_version{kHarnessVersion};
    std::string started_at;
    std::string finished_at;
    std::string status;  // running | complete | partial

    nlohmann::json to_json() const;
};

// Written before the first trial; finalize after the last one.
RunManifest start_manifest(const nlohmann::json& config, const std::string& slice_name,
                           const std::string& slice_version, const std::string& model_name,
                           std::uint64_t seed);
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);
void finalize_manifest(const std::filesystem::path& path, RunManifest& manifest,
                       const std::string& status);

struct RenderedSummary {
    std::string table;  // fixed-width text, dominant row marked with '*'
    std::string csv;    // same rows, machine-readable
};

// Human-readable tables for a reports.json payload. Every delta row cites
// the StatReport it came from by its JSON path.
RenderedSummary render_summary(const nlohmann::json& reports);

// Tidy plot data: one observation per row, columns series,x,y,ci_lo,ci_hi.
// kinds: ablation-bars, fw-scale, probe-curve, fw-qo-gap. Each input pair is
// (series label, reports.json payload).
void emit_plot_data(const std::vector<std::pair<std::string, nlohmann::json>>& reports,
                    std::string_view kind, const std::filesystem::path& csv_path);

}  // namespace cotcheck
