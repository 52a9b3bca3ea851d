#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace cotcheck {

enum class Tail { two_sided, greater, less };

std::string_view tail_name(Tail tail);
std::optional<Tail> tail_from_name(std::string_view name);

struct PairedOutcome {
    std::string example_id;
    bool baseline_correct = false;
    bool variant_correct = false;
};

struct ConfidenceInterval {
    double lo = 0.0;
    double hi = 0.0;
    double level = 0.95;
};

enum class TestKind { sign, binomial, mcnemar, fisher, wilson, bootstrap_delta };

std::string_view test_kind_name(TestKind kind);

struct StatReport {
    TestKind test;
    double estimate = 0.0;
    std::optional<double> p_value;
    std::optional<ConfidenceInterval> ci;
    std::map<std::string, long long> counts;
    Tail sidedness = Tail::two_sided;
    long long n = 0;

    nlohmann::json to_json() const;
};

// Standard normal quantile (Wichura's AS241, double precision).
double normal_quantile(double p);

// Exact binomial tail P(X >= k) / P(X <= k) at success probability p0,
// computed in log space with compensated summation (stable down to the
// p ~ 1e-179 regime).
double binomial_tail(long long k, long long n, double p0, Tail tail);

// Paired sign test on discordant counts; p0 = 1/2, two-sided by tail
// doubling. Tail::greater puts the tail on the degradation count.
StatReport sign_test(long long degradations, long long improvements, Tail tail);

StatReport binomial_test(long long k, long long n, double p0, Tail tail);

// Exact McNemar over discordant pair counts (b, c); Tail::greater puts the
// tail on b.
StatReport mcnemar_exact(long long b, long long c, Tail tail);

// Fisher's exact test for [[a, b], [c, d]]; two-sided sums all tables with
// probability <= the observed one.
StatReport fisher_exact_2x2(long long a, long long b, long long c, long long d, Tail tail);

ConfidenceInterval wilson_interval(long long k, long long n, double level);
StatReport wilson_report(long long k, long long n, double level);

// Percentile bootstrap CI for mean(variant) - mean(baseline) over paired
// resampling; resample i always draws from the i-th splitmix64 substream, so
// results are bit-stable regardless of execution order.
StatReport bootstrap_delta_ci(std::span<const PairedOutcome> pairs, int resamples,
                              std::uint64_t seed, double level);

struct AccuracyDelta {
    double baseline_acc = 0.0;
    double variant_acc = 0.0;
    double delta = 0.0;
    long long degradations = 0;  // baseline correct, variant wrong
    long long improvements = 0;  // baseline wrong, variant correct
    long long n = 0;
};

AccuracyDelta accuracy_delta(std::span<const PairedOutcome> pairs);

// Joins two (id, correct) trial sets into paired outcomes; throws listing
// the symmetric difference when the id sets differ.
std::vector<PairedOutcome> pair_outcomes(
    std::span<const std::pair<std::string, bool>> baseline,
    std::span<const std::pair<std::string, bool>> variant);

}  // namespace cotcheck
