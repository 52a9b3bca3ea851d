#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cotcheck/example.hpp"
#include "json.hpp"

namespace cotcheck {

struct DecodeParams {
    double temperature = 0.0;
    int max_tokens = 640;
    std::vector<std::string> stop;

    nlohmann::json to_json() const;
};

enum class OracleArchetype { readout, compute, mixed };

std::string_view oracle_archetype_name(OracleArchetype archetype);

// Simulated model behaviors used to validate the protocols. readout echoes
// whatever explicit answer text the prompt carries; compute answers from the
// reasoning steps and ignores answer statements; mixed follows the readout
// path with probability theta per example.
struct OracleConfig {
    OracleArchetype archetype = OracleArchetype::readout;
    std::optional<double> follow_prob;  // theta, mixed only
    double qo_competence = 0.0;         // P(correct with no usable chain)
    std::optional<int> commit_step;     // reasoning steps needed; default all
    std::uint64_t seed = 0;
};

struct ModelSpec {
    enum class Kind { endpoint, oracle };
    Kind kind = Kind::oracle;
    std::string model_name;
    std::string endpoint_url;  // endpoint only
    std::string auth_env;      // environment variable holding the bearer token
    OracleConfig oracle;       // oracle only

    // "oracle:compute", "oracle:mixed,theta=0.63,qo=0.1,seed=7,commit=2",
    // or an http(s) URL (optionally "url|model_name|env:VAR").
    static ModelSpec parse(std::string_view text);
};

// Deterministic oracle over a slice's answer key. All stochastic draws are
// keyed by (seed, example id) alone, never by prompt bytes, so a given
// example behaves identically across conditions and runs.
class Oracle {
 public:
    explicit Oracle(OracleConfig config) : config_(config) {}

    void register_examples(std::span<const Example> slice);
    std::string complete(std::string_view prompt) const;

 private:
    struct KeyEntry {
        Answer gold;
        std::optional<Answer> wrong;
        std::vector<std::string> steps;
        std::vector<std::string> reasoning_steps;  // steps minus answer lines
    };
    const KeyEntry& lookup(const std::string& id) const;
    bool qo_success(const std::string& id) const;
    bool readout_path(const std::string& id) const;
    Answer qo_draw(const std::string& id, const KeyEntry& entry) const;
    std::string generate(const KeyEntry& entry, const std::string& id) const;

    OracleConfig config_;
    std::map<std::string, KeyEntry> key_;
};

// Content-addressed completion store. Entries embed their full key, so a
// hash collision can only cost a miss, never a wrong hit.
class ResponseCache {
 public:
    explicit ResponseCache(std::filesystem::path directory);

    std::optional<std::string> get(const std::string& model_name, std::string_view prompt,
                                   const nlohmann::json& params) const;
    void put(const std::string& model_name, std::string_view prompt,
             const nlohmann::json& params, std::string_view completion) const;

 private:
    std::filesystem::path entry_path(const std::string& model_name, std::string_view prompt,
                                     const std::string& params_dump) const;
    std::filesystem::path directory_;
};

struct ClientOptions {
    int max_attempts = 4;
    int backoff_ms = 250;  // doubled per retry
    std::optional<std::filesystem::path> cache_dir;
    bool trace = false;
};

// Uniform completion interface over an endpoint or a built-in oracle.
class CompletionClient {
 public:
    CompletionClient(ModelSpec spec, DecodeParams params, ClientOptions options = {});

    // Answer key for oracle models; no-op for endpoints.
    void register_examples(std::span<const Example> slice);

    // Endpoint calls see the prompt with the id trailer stripped; caching
    // keys on (model, full prompt, decode params).
    std::string complete(std::string_view prompt) const;

    const ModelSpec& spec() const { return spec_; }
    const DecodeParams& params() const { return params_; }

 private:
    std::string endpoint_complete(std::string_view prompt) const;

    ModelSpec spec_;
    DecodeParams params_;
    ClientOptions options_;
    std::unique_ptr<Oracle> oracle_;
    std::unique_ptr<ResponseCache> cache_;
};

// Runs fn(0..count-1) on up to `workers` threads. Output slots are
// pre-assigned by index, so results never depend on scheduling; the first
// exception is rethrown after all workers join.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace cotcheck
