#include "cotcheck/modelio.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cotcheck/corpus.hpp"
#include "cotcheck/numeric.hpp"
#include "cotcheck/errors.hpp"
#include "cotcheck/prompt.hpp"
#include "cotcheck/rng.hpp"
#include "httplib.h"

namespace cotcheck {

using nlohmann::json;

json DecodeParams::to_json() const {
    json out;
    out["temperature"] = temperature;
    out["max_tokens"] = max_tokens;
    if (!stop.empty()) out["stop"] = stop;
    return out;
}

std::string_view oracle_archetype_name(OracleArchetype archetype) {
    switch (archetype) {
        case OracleArchetype::readout: return "readout";
        case OracleArchetype::compute: return "compute";
        default: return "mixed";
    }
}

namespace {

std::optional<OracleArchetype> archetype_from_name(std::string_view name) {
    if (name == "readout") return OracleArchetype::readout;
    if (name == "compute") return OracleArchetype::compute;
    if (name == "mixed") return OracleArchetype::mixed;
    return std::nullopt;
}

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t pos = text.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(text.substr(start));
            break;
        }
        parts.emplace_back(text.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

}  // namespace

ModelSpec ModelSpec::parse(std::string_view text) {
    ModelSpec spec;
    if (text.rfind("oracle:", 0) == 0) {
        spec.kind = Kind::oracle;
        auto parts = split(text.substr(7), ',');
        if (parts.empty() || parts[0].empty())
            throw ParseError("oracle spec needs an archetype: oracle:<readout|compute|mixed>");
        auto archetype = archetype_from_name(parts[0]);
        if (!archetype) throw ParseError("unknown oracle archetype \"" + parts[0] + "\"");
        spec.oracle.archetype = *archetype;
        for (std::size_t i = 1; i < parts.size(); ++i) {
            auto kv = split(parts[i], '=');
            if (kv.size() != 2) throw ParseError("bad oracle option \"" + parts[i] + "\"");
            const std::string& key = kv[0];
            const std::string& value = kv[1];
            if (key == "theta")
                spec.oracle.follow_prob = std::stod(value);
            else if (key == "qo")
                spec.oracle.qo_competence = std::stod(value);
            else if (key == "commit")
                spec.oracle.commit_step = std::stoi(value);
            else if (key == "seed")
                spec.oracle.seed = std::stoull(value);
            else
                throw ParseError("unknown oracle option \"" + key + "\"");
        }
        if ((spec.oracle.archetype == OracleArchetype::mixed) != spec.oracle.follow_prob.has_value())
            throw ValidationError("theta must be set exactly for the mixed archetype");
        spec.model_name = std::string(text);
        return spec;
    }
    if (text.rfind("http://", 0) == 0 || text.rfind("https://", 0) == 0) {
        spec.kind = Kind::endpoint;
        auto parts = split(text, '|');
        spec.endpoint_url = parts[0];
        spec.model_name = parts.size() > 1 && !parts[1].empty() ? parts[1] : parts[0];
        if (parts.size() > 2 && !parts[2].empty()) {
            if (parts[2].rfind("env:", 0) != 0)
                throw ParseError("endpoint auth must be an \"env:VARNAME\" reference");
            spec.auth_env = parts[2].substr(4);
        }
        return spec;
    }
    throw ParseError("model spec must be oracle:<...> or an http(s) endpoint URL");
}

// ---------------------------------------------------------------------------
// Oracle

void Oracle::register_examples(std::span<const Example> slice) {
    for (const Example& example : slice) {
        KeyEntry entry{example.gold_answer, example.wrong_answer, example.steps, {}};
        Chain chain = example.chain();
        for (int index = 1; index <= chain.length(); ++index) {
            Chain single{{chain.steps[static_cast<std::size_t>(index - 1)]}};
            if (!detect_answer_line(single).line)
                entry.reasoning_steps.push_back(chain.steps[static_cast<std::size_t>(index - 1)]);
        }
        key_.insert_or_assign(example.id, std::move(entry));
    }
}

const Oracle::KeyEntry& Oracle::lookup(const std::string& id) const {
    auto it = key_.find(id);
    if (it == key_.end())
        throw ValidationError("oracle cannot resolve example id \"" + id + "\"");
    return it->second;
}

bool Oracle::qo_success(const std::string& id) const {
    return keyed_unit(config_.seed, "qo", id) < config_.qo_competence;
}

bool Oracle::readout_path(const std::string& id) const {
    switch (config_.archetype) {
        case OracleArchetype::readout: return true;
        case OracleArchetype::compute: return false;
        default: return keyed_unit(config_.seed, "path", id) < *config_.follow_prob;
    }
}

Answer Oracle::qo_draw(const std::string& id, const KeyEntry& entry) const {
    if (qo_success(id)) return entry.gold;
    if (entry.gold.is_numeric()) {
        // a wrong value that can never alias the planted wrong answer or
        // the gold's magnitude
        for (int bump = 1;; ++bump) {
            std::string canon = entry.gold.value();
            Rational value = rational_from_decimal(canon) + bump;
            auto candidate = Answer::numeric(*decimal_from_rational(value));
            if (!candidate) continue;
            if (*candidate == entry.gold) continue;
            if (candidate->magnitude() == entry.gold.magnitude()) continue;
            if (entry.wrong && *candidate == *entry.wrong) continue;
            return *candidate;
        }
    }
    auto fallback = Answer::text(entry.gold.value() == "unknown" ? "mistaken" : "unknown");
    return *fallback;
}

std::string Oracle::generate(const KeyEntry& entry, const std::string& id) const {
    bool correct = readout_path(id) ? qo_success(id) : true;
    Answer final_value = correct ? entry.gold : qo_draw(id, entry);
    Chain chain{entry.reasoning_steps};
    chain.steps.push_back("Therefore, the answer is " + final_value.display() + ".");
    std::string out;
    for (std::size_t i = 0; i < chain.steps.size(); ++i) {
        if (i) out += '\n';
        out += chain.steps[i];
    }
    return out;
}

std::string Oracle::complete(std::string_view prompt) const {
    PromptView view = parse_prompt(prompt);
    if (view.example_id.empty())
        throw ValidationError("oracle prompts must carry an id trailer");
    const KeyEntry& entry = lookup(view.example_id);

    if (view.generation_request) return generate(entry, view.example_id);

    // explicit answer statements visible to a readout path: context header
    // first, then reasoning lines; last occurrence wins
    std::vector<std::string> visible;
    if (view.context_line) visible.push_back(*view.context_line);
    for (const std::string& line : view.reasoning_lines) visible.push_back(line);
    auto stated = detect_answer_line(Chain{visible});

    // reasoning prefix available to a compute path
    std::vector<std::string> reasoning;
    for (const std::string& line : view.reasoning_lines) {
        if (!detect_answer_line(Chain{{line}}).line) reasoning.push_back(line);
    }
    std::size_t need = config_.commit_step
                           ? static_cast<std::size_t>(*config_.commit_step)
                           : entry.reasoning_steps.size();
    bool intact = reasoning.size() >= need;
    for (std::size_t i = 0; intact && i < need; ++i)
        intact = reasoning[i] == entry.reasoning_steps[i];

    Answer value = entry.gold;
    if (readout_path(view.example_id)) {
        value = stated.line ? stated.line->value : qo_draw(view.example_id, entry);
    } else {
        value = intact ? entry.gold : qo_draw(view.example_id, entry);
    }
    return "The answer is " + value.display() + ".";
}

// ---------------------------------------------------------------------------
// ResponseCache

ResponseCache::ResponseCache(std::filesystem::path directory)
    : directory_(std::move(directory)) {
    std::filesystem::create_directories(directory_);
}

std::filesystem::path ResponseCache::entry_path(const std::string& model_name,
                                                std::string_view prompt,
                                                const std::string& params_dump) const {
    std::uint64_t h1 = fnv1a64(model_name) ^ mix64(fnv1a64(prompt));
    std::uint64_t h2 = mix64(h1 ^ fnv1a64(params_dump));
    char name[40];
    std::snprintf(name, sizeof name, "%016llx%016llx.json",
                  static_cast<unsigned long long>(h1), static_cast<unsigned long long>(h2));
    return directory_ / name;
}

std::optional<std::string> ResponseCache::get(const std::string& model_name,
                                              std::string_view prompt,
                                              const json& params) const {
    std::string params_dump = params.dump();
    std::filesystem::path path = entry_path(model_name, prompt, params_dump);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    try {
        json entry = json::parse(in);
        if (entry.at("model") != model_name || entry.at("prompt") != std::string(prompt) ||
            entry.at("params").dump() != params_dump) {
            std::cerr << "warning: cache key mismatch at " << path << ", treating as miss\n";
            return std::nullopt;
        }
        return entry.at("completion").get<std::string>();
    } catch (const json::exception&) {
        std::cerr << "warning: corrupt cache entry at " << path << ", treating as miss\n";
        return std::nullopt;
    }
}

void ResponseCache::put(const std::string& model_name, std::string_view prompt,
                        const json& params, std::string_view completion) const {
    json entry;
    entry["model"] = model_name;
    entry["prompt"] = std::string(prompt);
    entry["params"] = params;
    entry["completion"] = std::string(completion);
    std::filesystem::path path = entry_path(model_name, prompt, params.dump());
    std::filesystem::path tmp = path;
    tmp += ".tmp" + std::to_string(
        std::hash<std::thread::id>{}(std::this_thread::get_id()) & 0xFFFF);
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw TransportError("cache directory not writable: " + tmp.string());
        out << entry.dump();
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// CompletionClient

CompletionClient::CompletionClient(ModelSpec spec, DecodeParams params, ClientOptions options)
    : spec_(std::move(spec)), params_(std::move(params)), options_(std::move(options)) {
    if (params_.temperature < 0) throw ValidationError("temperature must be >= 0");
    if (spec_.kind == ModelSpec::Kind::oracle)
        oracle_ = std::make_unique<Oracle>(spec_.oracle);
    if (options_.cache_dir) cache_ = std::make_unique<ResponseCache>(*options_.cache_dir);
}

void CompletionClient::register_examples(std::span<const Example> slice) {
    if (oracle_) oracle_->register_examples(slice);
}

std::string CompletionClient::complete(std::string_view prompt) const {
    json params = params_.to_json();
    if (cache_) {
        if (auto hit = cache_->get(spec_.model_name, prompt, params)) return *hit;
    }
    std::string completion = spec_.kind == ModelSpec::Kind::oracle
                                 ? oracle_->complete(prompt)
                                 : endpoint_complete(prompt);
    if (cache_) cache_->put(spec_.model_name, prompt, params, completion);
    return completion;
}

std::string CompletionClient::endpoint_complete(std::string_view prompt) const {
    // scheme://host[:port][/path]; default chat-completions path
    const std::string& url = spec_.endpoint_url;
    std::size_t scheme_end = url.find("://");
    std::size_t path_start = url.find('/', scheme_end + 3);
    std::string base = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? std::string("/v1/chat/completions")
                                                       : url.substr(path_start);

    json body;
    body["model"] = spec_.model_name;
    body["messages"] = json::array({json{{"role", "user"}, {"content", strip_trailer(prompt)}}});
    body["temperature"] = params_.temperature;
    body["max_tokens"] = params_.max_tokens;
    if (!params_.stop.empty()) body["stop"] = params_.stop;
    std::string payload = body.dump();

    httplib::Headers headers;
    if (!spec_.auth_env.empty()) {
        const char* token = std::getenv(spec_.auth_env.c_str());
        if (!token)
            throw TransportError("auth environment variable " + spec_.auth_env + " is not set");
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    if (options_.trace)
        std::cerr << "trace: POST " << base << path << " body=" << payload
                  << " auth=" << (spec_.auth_env.empty() ? "none" : "Bearer <redacted>") << "\n";

    int last_status = 0;
    std::string last_error;
    for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
        if (attempt > 0) {
            int delay = options_.backoff_ms << (attempt - 1);
            std::this_thread::sleep_for(std::chrono::milliseconds(std::min(delay, 4000)));
        }
        httplib::Client client(base);
        client.set_read_timeout(120, 0);
        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_error = "connection failure: " + httplib::to_string(res.error());
            continue;  // transient
        }
        last_status = res->status;
        if (res->status == 200) {
            try {
                json reply = json::parse(res->body);
                if (options_.trace) std::cerr << "trace: response " << res->body << "\n";
                return reply.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const json::exception& e) {
                throw TransportError(std::string("malformed completion response: ") + e.what(),
                                     res->status);
            }
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "status " + std::to_string(res->status);
            continue;  // retryable
        }
        throw TransportError("endpoint returned status " + std::to_string(res->status) + ": " +
                                 res->body,
                             res->status);
    }
    throw TransportError("exhausted " + std::to_string(options_.max_attempts) +
                             " attempts: " + last_error,
                         last_status);
}

// ---------------------------------------------------------------------------

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(count)));
    if (n_workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_workers));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) {
        pool.emplace_back([&, w] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                    return;
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& error : errors)
        if (error) std::rethrow_exception(error);
}

}  // namespace cotcheck
