#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cotcheck/errors.hpp"
#include "cotcheck/stats.hpp"

using namespace cotcheck;

TEST_CASE("sign test reproduces the reported ablation p-values") {
    // 18 degradations / 6 improvements -> 0.0227 two-sided
    StatReport mild = sign_test(18, 6, Tail::two_sided);
    CHECK(*mild.p_value == doctest::Approx(0.022655844688).epsilon(1e-6));
    CHECK(std::fabs(*mild.p_value - 0.0227) < 1e-4);

    // 74 degradations / 0 improvements -> 1.06e-22 two-sided
    StatReport total = sign_test(74, 0, Tail::two_sided);
    CHECK(*total.p_value == doctest::Approx(1.0587911840678754e-22).epsilon(0.02));

    // symmetric discordants are uninformative
    CHECK(*sign_test(3, 3, Tail::two_sided).p_value == doctest::Approx(1.0));
}

TEST_CASE("sign test is symmetric two-sided and errors on n=0") {
    for (auto [a, b] : {std::pair{5LL, 2LL}, {18LL, 6LL}, {1LL, 9LL}}) {
        CHECK(*sign_test(a, b, Tail::two_sided).p_value ==
              doctest::Approx(*sign_test(b, a, Tail::two_sided).p_value));
    }
    CHECK_THROWS_AS(sign_test(0, 0, Tail::two_sided), DomainError);
}

TEST_CASE("two-sided p is the doubled one-sided tail, capped at one") {
    for (auto [a, b] : {std::pair{18LL, 6LL}, {74LL, 0LL}, {8LL, 0LL}, {10LL, 10LL}}) {
        double one = *sign_test(a, b, a >= b ? Tail::greater : Tail::less).p_value;
        double two = *sign_test(a, b, Tail::two_sided).p_value;
        CHECK(two == doctest::Approx(std::min(1.0, 2.0 * one)));
    }
}

TEST_CASE("binomial test majority check and boundaries") {
    StatReport majority = binomial_test(313, 500, 0.5, Tail::greater);
    CHECK(*majority.p_value < 1e-8);
    CHECK(*majority.p_value == doctest::Approx(9.60269564923439e-09).epsilon(1e-6));

    CHECK(*binomial_test(0, 10, 0.5, Tail::greater).p_value == doctest::Approx(1.0));
    CHECK(*binomial_test(10, 10, 0.5, Tail::less).p_value == doctest::Approx(1.0));
    CHECK_THROWS_AS(binomial_test(3, 10, 0.0, Tail::greater), ValidationError);
    CHECK_THROWS_AS(binomial_test(3, 10, 1.0, Tail::greater), ValidationError);
    CHECK_THROWS_AS(binomial_test(11, 10, 0.5, Tail::greater), ValidationError);
}

TEST_CASE("binomial tail against a direct summation oracle") {
    // brute-force: sum pmf terms with a multiplicative recurrence
    auto brute = [](long long k, long long n, double p0) {
        long double pmf = std::pow(1.0L - static_cast<long double>(p0), n);
        long double sum = k <= 0 ? pmf : 0.0L;
        for (long long j = 1; j <= n; ++j) {
            pmf *= static_cast<long double>(n - j + 1) / static_cast<long double>(j) *
                   static_cast<long double>(p0) / (1.0L - static_cast<long double>(p0));
            if (j >= k) sum += pmf;
        }
        return static_cast<double>(sum);
    };
    StatReport rare = binomial_test(7, 200, 0.015, Tail::greater);
    CHECK(*rare.p_value == doctest::Approx(brute(7, 200, 0.015)).epsilon(1e-10));
    StatReport common = binomial_test(42, 100, 0.37, Tail::greater);
    CHECK(*common.p_value == doctest::Approx(brute(42, 100, 0.37)).epsilon(1e-10));
}

TEST_CASE("log-space tails survive the N=1000 regime") {
    // deep tail comparable to the reported 1.5e-179
    StatReport report = sign_test(595 + 405, 0, Tail::two_sided);  // 2^-999 doubled
    CHECK(*report.p_value > 0.0);
    CHECK(std::log10(*report.p_value) == doctest::Approx(-300.4).epsilon(0.01));
    StatReport paper_scale = sign_test(595, 11, Tail::two_sided);
    CHECK(std::log10(*paper_scale.p_value) < -150);
}

TEST_CASE("exact McNemar reproduces the within-stable replication") {
    StatReport one = mcnemar_exact(8, 0, Tail::greater);
    CHECK(*one.p_value == doctest::Approx(0.00390625).epsilon(1e-9));
    CHECK(std::fabs(*one.p_value - 0.00391) < 1e-5);

    StatReport two = mcnemar_exact(8, 0, Tail::two_sided);
    CHECK(*two.p_value == doctest::Approx(0.0078125).epsilon(1e-9));

    CHECK(*mcnemar_exact(5, 5, Tail::two_sided).p_value == doctest::Approx(1.0));
    CHECK_THROWS_AS(mcnemar_exact(0, 0, Tail::two_sided), DomainError);
}

TEST_CASE("fisher exact handles the self-generated comparison") {
    // the spec's reconstruction (313/500) and the one matching the paper's
    // printed 0.240 (315/500 = 0.63 exactly); both frozen from enumeration
    StatReport spec_counts = fisher_exact_2x2(101, 46, 313, 187, Tail::two_sided);
    CHECK(*spec_counts.p_value == doctest::Approx(0.20386726722759246).epsilon(1e-6));
    StatReport paper_counts = fisher_exact_2x2(101, 46, 315, 185, Tail::two_sided);
    CHECK(*paper_counts.p_value == doctest::Approx(0.23994151250306373).epsilon(1e-6));
    CHECK(std::fabs(*paper_counts.p_value - 0.240) < 1e-3);
}

TEST_CASE("fisher exact on extreme and symmetric tables") {
    StatReport extreme = fisher_exact_2x2(0, 10, 10, 0, Tail::two_sided);
    CHECK(*extreme.p_value == doctest::Approx(1.082508822446903e-05).epsilon(1e-6));
    CHECK(*fisher_exact_2x2(5, 5, 5, 5, Tail::two_sided).p_value == doctest::Approx(1.0));
    CHECK_THROWS_AS(fisher_exact_2x2(0, 0, 5, 5, Tail::two_sided), DomainError);
}

TEST_CASE("wilson interval matches the reported self-generated CI") {
    ConfidenceInterval ci = wilson_interval(101, 147, 0.95);
    CHECK(ci.lo == doctest::Approx(0.6081611102463782).epsilon(1e-9));
    CHECK(ci.hi == doctest::Approx(0.7564601313539084).epsilon(1e-9));
    CHECK(std::round(ci.lo * 100) / 100 == doctest::Approx(0.61));
    CHECK(std::round(ci.hi * 100) / 100 == doctest::Approx(0.76));
}

TEST_CASE("wilson interval boundaries and containment") {
    ConfidenceInterval degenerate = wilson_interval(0, 1, 0.95);
    CHECK(degenerate.lo == doctest::Approx(0.0));
    CHECK_THROWS_AS(wilson_interval(0, 0, 0.95), DomainError);
    for (long long n : {1LL, 7LL, 50LL, 147LL}) {
        for (long long k = 0; k <= n; k += std::max<long long>(1, n / 7)) {
            ConfidenceInterval ci = wilson_interval(k, n, 0.95);
            double phat = static_cast<double>(k) / static_cast<double>(n);
            CHECK(ci.lo >= 0.0);
            CHECK(ci.hi <= 1.0);
            CHECK(ci.lo <= phat + 1e-12);
            CHECK(ci.hi >= phat - 1e-12);
        }
    }
}

TEST_CASE("wilson matches an independent closed-form recomputation") {
    // second route: solve the defining quadratic with its own algebra
    auto independent = [](long long k, long long n, double z) {
        double p = static_cast<double>(k) / static_cast<double>(n);
        double a = 1.0 + z * z / static_cast<double>(n);
        double b = -(2.0 * p + z * z / static_cast<double>(n));
        double c = p * p;
        double disc = std::sqrt(b * b - 4.0 * a * c);
        return std::pair{(-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a)};
    };
    double z = normal_quantile(0.975);
    auto [lo, hi] = independent(7, 200, z);
    ConfidenceInterval ci = wilson_interval(7, 200, 0.95);
    CHECK(ci.lo == doctest::Approx(lo).epsilon(1e-10));
    CHECK(ci.hi == doctest::Approx(hi).epsilon(1e-10));
}

TEST_CASE("normal quantile is accurate at standard points") {
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
    CHECK(normal_quantile(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-12));
    CHECK(normal_quantile(0.995) == doctest::Approx(2.5758293035489004).epsilon(1e-12));
    CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-9));
    CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
}

namespace {

std::vector<PairedOutcome> qo_gap_pairs() {
    // reconstructed GSM8K-v1 pairing: 97/100 chain-correct, 6/100 QO-correct,
    // QO successes nested in the chain successes
    std::vector<PairedOutcome> pairs;
    for (int i = 0; i < 6; ++i) pairs.push_back({"ex" + std::to_string(i), true, true});
    for (int i = 6; i < 97; ++i) pairs.push_back({"ex" + std::to_string(i), true, false});
    for (int i = 97; i < 100; ++i) pairs.push_back({"ex" + std::to_string(i), false, false});
    return pairs;
}

}  // namespace

TEST_CASE("bootstrap reproduces the reported QO-gap interval") {
    auto pairs = qo_gap_pairs();
    for (std::uint64_t seed : {42ULL, 7ULL, 20240601ULL}) {
        StatReport report = bootstrap_delta_ci(pairs, 2000, seed, 0.95);
        CHECK(report.estimate == doctest::Approx(-0.910));
        CHECK(std::fabs(report.ci->lo - (-0.960)) <= 0.015);
        CHECK(std::fabs(report.ci->hi - (-0.850)) <= 0.015);
    }
}

TEST_CASE("bootstrap is bit-identical for a fixed seed") {
    auto pairs = qo_gap_pairs();
    StatReport first = bootstrap_delta_ci(pairs, 2000, 42, 0.95);
    StatReport second = bootstrap_delta_ci(pairs, 2000, 42, 0.95);
    CHECK(first.ci->lo == second.ci->lo);
    CHECK(first.ci->hi == second.ci->hi);
}

TEST_CASE("bootstrap of a constant statistic is degenerate") {
    std::vector<PairedOutcome> pairs;
    for (int i = 0; i < 40; ++i) pairs.push_back({"ex" + std::to_string(i), true, true});
    StatReport report = bootstrap_delta_ci(pairs, 500, 3, 0.95);
    CHECK(report.estimate == 0.0);
    CHECK(report.ci->lo == 0.0);
    CHECK(report.ci->hi == 0.0);
    std::vector<PairedOutcome> empty;
    CHECK_THROWS_AS(bootstrap_delta_ci(empty, 100, 1, 0.95), ValidationError);
}

TEST_CASE("accuracy delta and discordant counts") {
    std::vector<PairedOutcome> identity;
    for (int i = 0; i < 25; ++i) identity.push_back({"ex" + std::to_string(i), true, true});
    AccuracyDelta same = accuracy_delta(identity);
    CHECK(same.delta == 0.0);

    std::vector<PairedOutcome> drop;
    for (int i = 0; i < 300; ++i)
        drop.push_back({"ex" + std::to_string(i), true, i < 240});
    AccuracyDelta worse = accuracy_delta(drop);
    CHECK(worse.delta == doctest::Approx(-0.200));
    CHECK(worse.degradations == 60);
    CHECK(worse.improvements == 0);

    // paper fixture: baseline 0.970, suffix 0.210 over N=100
    std::vector<PairedOutcome> suffix;
    for (int i = 0; i < 100; ++i) {
        bool baseline = i < 97;
        bool corrupted = i < 21;
        suffix.push_back({"ex" + std::to_string(i), baseline, corrupted});
    }
    AccuracyDelta paper = accuracy_delta(suffix);
    CHECK(paper.baseline_acc == doctest::Approx(0.970));
    CHECK(paper.variant_acc == doctest::Approx(0.210));
    CHECK(paper.delta == doctest::Approx(-0.760));
}

TEST_CASE("pairing rejects mismatched id sets listing the difference") {
    std::vector<std::pair<std::string, bool>> baseline{{"a", true}, {"b", true}};
    std::vector<std::pair<std::string, bool>> variant{{"a", false}, {"c", true}};
    try {
        pair_outcomes(baseline, variant);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string what = e.what();
        CHECK(what.find("b") != std::string::npos);
        CHECK(what.find("c") != std::string::npos);
    }
}

TEST_CASE("stat reports serialize their counts") {
    StatReport report = sign_test(18, 6, Tail::two_sided);
    auto serialized = report.to_json();
    CHECK(serialized["test"] == "sign");
    CHECK(serialized["counts"]["degradations"] == 18);
    CHECK(serialized["counts"]["improvements"] == 6);
    CHECK(serialized["n"] == 24);
    CHECK(serialized["sidedness"] == "two");
}
