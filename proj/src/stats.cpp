#include "cotcheck/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "cotcheck/errors.hpp"
#include "cotcheck/rng.hpp"

namespace cotcheck {

using nlohmann::json;

std::string_view tail_name(Tail tail) {
    switch (tail) {
        case Tail::greater: return "greater";
        case Tail::less: return "less";
        default: return "two";
    }
}

std::optional<Tail> tail_from_name(std::string_view name) {
    if (name == "two" || name == "two_sided") return Tail::two_sided;
    if (name == "greater" || name == "one_greater") return Tail::greater;
    if (name == "less" || name == "one_less") return Tail::less;
    return std::nullopt;
}

std::string_view test_kind_name(TestKind kind) {
    switch (kind) {
        case TestKind::sign: return "sign";
        case TestKind::binomial: return "binomial";
        case TestKind::mcnemar: return "mcnemar";
        case TestKind::fisher: return "fisher";
        case TestKind::wilson: return "wilson";
        default: return "bootstrap_delta";
    }
}

json StatReport::to_json() const {
    json out;
    out["test"] = std::string(test_kind_name(test));
    out["estimate"] = estimate;
    if (p_value) out["p_value"] = *p_value;
    if (ci) out["ci"] = {{"lo", ci->lo}, {"hi", ci->hi}, {"level", ci->level}};
    out["counts"] = counts;
    out["sidedness"] = std::string(tail_name(sidedness));
    out["n"] = n;
    return out;
}

// ---------------------------------------------------------------------------
// normal quantile, AS241 (PPND16)

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile requires p in (0,1)");
    static const double a[8] = {
        3.3871328727963666080e0,  1.3314166789178437745e+2, 1.9715909503065514427e+3,
        1.3731693765509461125e+4, 4.5921953931549871457e+4, 6.7265770927008700853e+4,
        3.3430575583588128105e+4, 2.5090809287301226727e+3};
    static const double b[8] = {
        1.0,                      4.2313330701600911252e+1, 6.8718700749205790830e+2,
        5.3941960214247511077e+3, 2.1213794301586595867e+4, 3.9307895800092710610e+4,
        2.8729085735721942674e+4, 5.2264952788528545610e+3};
    static const double c[8] = {
        1.42343711074968357734e0,  4.63033784615654529590e0,  5.76949722146069140550e0,
        3.64784832476320460504e0,  1.27045825245236838258e0,  2.41780725177450611770e-1,
        2.27238449892691845833e-2, 7.74545014278341407640e-4};
    static const double d[8] = {
        1.0,                       2.05319162663775882187e0,  1.67638483018380384940e0,
        6.89767334985100004550e-1, 1.48103976427480074590e-1, 1.51986665636164571966e-2,
        5.47593808499534494600e-4, 1.05075007164441684324e-9};
    static const double e[8] = {
        6.65790464350110377720e0,  5.46378491116411436990e0,  1.78482653991729133580e0,
        2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
        2.71155556874348757815e-5, 2.01033439929228813265e-7};
    static const double f[8] = {
        1.0,                       5.99832206555887937690e-1, 1.36929880922735805310e-1,
        1.48753612908506148525e-2, 7.86869131145613259100e-4, 1.84631831751005468180e-6,
        1.42151175831644588870e-15, 0.0};

    double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        double r = 0.180625 - q * q;
        double num = a[7];
        double den = b[7];
        for (int i = 6; i >= 0; --i) {
            num = num * r + a[i];
            den = den * r + b[i];
        }
        return q * num / den;
    }
    double r = q < 0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double num, den;
    if (r <= 5.0) {
        r -= 1.6;
        num = c[7];
        den = d[7];
        for (int i = 6; i >= 0; --i) {
            num = num * r + c[i];
            den = den * r + d[i];
        }
    } else {
        r -= 5.0;
        num = e[7];
        den = f[7];
        for (int i = 6; i >= 0; --i) {
            num = num * r + e[i];
            den = den * r + f[i];
        }
    }
    double value = num / den;
    return q < 0 ? -value : value;
}

// ---------------------------------------------------------------------------
// exact tails

namespace {

double log_binom_pmf(long long j, long long n, double log_p, double log_q) {
    return std::lgamma(static_cast<double>(n) + 1.0) -
           std::lgamma(static_cast<double>(j) + 1.0) -
           std::lgamma(static_cast<double>(n - j) + 1.0) +
           static_cast<double>(j) * log_p + static_cast<double>(n - j) * log_q;
}

// logsumexp over j in [lo, hi] with Kahan compensation.
double log_binom_range(long long lo, long long hi, long long n, double p0) {
    if (lo > hi) return -std::numeric_limits<double>::infinity();
    double log_p = std::log(p0);
    double log_q = std::log1p(-p0);
    double max_term = -std::numeric_limits<double>::infinity();
    for (long long j = lo; j <= hi; ++j)
        max_term = std::max(max_term, log_binom_pmf(j, n, log_p, log_q));
    double sum = 0.0, comp = 0.0;
    for (long long j = lo; j <= hi; ++j) {
        double term = std::exp(log_binom_pmf(j, n, log_p, log_q) - max_term);
        double y = term - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    return max_term + std::log(sum);
}

double clamp_probability(double p) { return std::min(1.0, std::max(0.0, p)); }

}  // namespace

double binomial_tail(long long k, long long n, double p0, Tail tail) {
    if (n < 1) throw DomainError("binomial tail requires n >= 1");
    if (!(p0 > 0.0 && p0 < 1.0)) throw ValidationError("binomial p0 must lie in (0,1)");
    if (k < 0 || k > n) throw ValidationError("binomial k must lie in [0, n]");
    auto tail_ge = [&](long long j) {
        return j <= 0 ? 1.0 : clamp_probability(std::exp(log_binom_range(j, n, n, p0)));
    };
    auto tail_le = [&](long long j) {
        return j >= n ? 1.0 : clamp_probability(std::exp(log_binom_range(0, j, n, p0)));
    };
    switch (tail) {
        case Tail::greater: return tail_ge(k);
        case Tail::less: return tail_le(k);
        default: return clamp_probability(2.0 * std::min(tail_ge(k), tail_le(k)));
    }
}

StatReport sign_test(long long degradations, long long improvements, Tail tail) {
    if (degradations < 0 || improvements < 0)
        throw ValidationError("sign test counts must be non-negative");
    long long n = degradations + improvements;
    if (n == 0) throw DomainError("sign test undefined: no discordant outcomes");
    StatReport report;
    report.test = TestKind::sign;
    report.sidedness = tail;
    report.n = n;
    report.counts = {{"degradations", degradations}, {"improvements", improvements}};
    report.estimate = static_cast<double>(degradations) / static_cast<double>(n);
    report.p_value = binomial_tail(degradations, n, 0.5, tail);
    return report;
}

StatReport binomial_test(long long k, long long n, double p0, Tail tail) {
    StatReport report;
    report.test = TestKind::binomial;
    report.sidedness = tail;
    report.n = n;
    report.counts = {{"k", k}, {"n", n}};
    report.estimate = static_cast<double>(k) / static_cast<double>(n);
    report.p_value = binomial_tail(k, n, p0, tail);
    return report;
}

StatReport mcnemar_exact(long long b, long long c, Tail tail) {
    if (b < 0 || c < 0) throw ValidationError("mcnemar counts must be non-negative");
    if (b + c == 0) throw DomainError("mcnemar undefined: no discordant pairs");
    StatReport report;
    report.test = TestKind::mcnemar;
    report.sidedness = tail;
    report.n = b + c;
    report.counts = {{"b", b}, {"c", c}};
    report.estimate = static_cast<double>(b) / static_cast<double>(b + c);
    report.p_value = binomial_tail(b, b + c, 0.5, tail);
    return report;
}

StatReport fisher_exact_2x2(long long a, long long b, long long c, long long d, Tail tail) {
    if (a < 0 || b < 0 || c < 0 || d < 0)
        throw ValidationError("fisher cells must be non-negative");
    long long r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d;
    if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0)
        throw DomainError("fisher undefined: degenerate margins");
    long long total = r1 + r2;

    auto lchoose = [](long long n, long long k) {
        return std::lgamma(static_cast<double>(n) + 1.0) -
               std::lgamma(static_cast<double>(k) + 1.0) -
               std::lgamma(static_cast<double>(n - k) + 1.0);
    };
    long long x_lo = std::max<long long>(0, c1 - r2);
    long long x_hi = std::min(r1, c1);
    auto log_pmf = [&](long long x) {
        return lchoose(r1, x) + lchoose(r2, c1 - x) - lchoose(total, c1);
    };

    double log_obs = log_pmf(a);
    double max_term = -std::numeric_limits<double>::infinity();
    auto in_tail = [&](long long x) {
        switch (tail) {
            case Tail::greater: return x >= a;
            case Tail::less: return x <= a;
            default:
                // R's convention: include tables no more probable than the
                // observed one, with a small relative tolerance for fp ties.
                return log_pmf(x) <= log_obs + 1e-7;
        }
    };
    for (long long x = x_lo; x <= x_hi; ++x)
        if (in_tail(x)) max_term = std::max(max_term, log_pmf(x));
    double sum = 0.0, comp = 0.0;
    for (long long x = x_lo; x <= x_hi; ++x) {
        if (!in_tail(x)) continue;
        double term = std::exp(log_pmf(x) - max_term);
        double y = term - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    double p = clamp_probability(std::exp(max_term + std::log(sum)));

    StatReport report;
    report.test = TestKind::fisher;
    report.sidedness = tail;
    report.n = total;
    report.counts = {{"a", a}, {"b", b}, {"c", c}, {"d", d}};
    report.estimate = (b * c == 0)
                          ? std::numeric_limits<double>::infinity()
                          : (static_cast<double>(a) * static_cast<double>(d)) /
                                (static_cast<double>(b) * static_cast<double>(c));
    report.p_value = p;
    return report;
}

ConfidenceInterval wilson_interval(long long k, long long n, double level) {
    if (n < 1) throw DomainError("wilson interval requires n >= 1");
    if (k < 0 || k > n) throw ValidationError("wilson k must lie in [0, n]");
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("level must lie in (0,1)");
    double z = normal_quantile((1.0 + level) / 2.0);
    double nn = static_cast<double>(n);
    double phat = static_cast<double>(k) / nn;
    double z2 = z * z;
    double denom = 1.0 + z2 / nn;
    double center = phat + z2 / (2.0 * nn);
    double radius = z * std::sqrt(phat * (1.0 - phat) / nn + z2 / (4.0 * nn * nn));
    return ConfidenceInterval{std::max(0.0, (center - radius) / denom),
                              std::min(1.0, (center + radius) / denom), level};
}

StatReport wilson_report(long long k, long long n, double level) {
    StatReport report;
    report.test = TestKind::wilson;
    report.sidedness = Tail::two_sided;
    report.n = n;
    report.counts = {{"k", k}, {"n", n}};
    report.estimate = static_cast<double>(k) / static_cast<double>(n);
    report.ci = wilson_interval(k, n, level);
    return report;
}

namespace {

// type-7 quantile (linear interpolation between order statistics)
double percentile(const std::vector<double>& sorted, double q) {
    double rank = q * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(rank);
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = rank - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

StatReport bootstrap_delta_ci(std::span<const PairedOutcome> pairs, int resamples,
                              std::uint64_t seed, double level) {
    if (pairs.empty()) throw ValidationError("bootstrap requires a non-empty pairing");
    if (resamples < 1) throw ValidationError("bootstrap requires resamples >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("level must lie in (0,1)");
    std::size_t n = pairs.size();

    long long base = 0, var = 0;
    for (const PairedOutcome& pair : pairs) {
        base += pair.baseline_correct;
        var += pair.variant_correct;
    }
    double estimate = (static_cast<double>(var) - static_cast<double>(base)) /
                      static_cast<double>(n);

    std::vector<double> deltas(static_cast<std::size_t>(resamples));
    for (int i = 0; i < resamples; ++i) {
        SplitMix64 rng = substream(seed, static_cast<std::uint64_t>(i));
        long long rb = 0, rv = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const PairedOutcome& pick = pairs[bounded_index(rng.next(), n)];
            rb += pick.baseline_correct;
            rv += pick.variant_correct;
        }
        deltas[static_cast<std::size_t>(i)] =
            (static_cast<double>(rv) - static_cast<double>(rb)) / static_cast<double>(n);
    }
    std::sort(deltas.begin(), deltas.end());
    double alpha = 1.0 - level;

    StatReport report;
    report.test = TestKind::bootstrap_delta;
    report.sidedness = Tail::two_sided;
    report.n = static_cast<long long>(n);
    report.counts = {{"n", static_cast<long long>(n)},
                     {"resamples", resamples},
                     {"baseline_correct", base},
                     {"variant_correct", var}};
    report.estimate = estimate;
    report.ci = ConfidenceInterval{percentile(deltas, alpha / 2.0),
                                   percentile(deltas, 1.0 - alpha / 2.0), level};
    return report;
}

AccuracyDelta accuracy_delta(std::span<const PairedOutcome> pairs) {
    if (pairs.empty()) throw ValidationError("accuracy_delta requires a non-empty pairing");
    AccuracyDelta out;
    out.n = static_cast<long long>(pairs.size());
    long long base = 0, var = 0;
    for (const PairedOutcome& pair : pairs) {
        base += pair.baseline_correct;
        var += pair.variant_correct;
        if (pair.baseline_correct && !pair.variant_correct) ++out.degradations;
        if (!pair.baseline_correct && pair.variant_correct) ++out.improvements;
    }
    out.baseline_acc = static_cast<double>(base) / static_cast<double>(out.n);
    out.variant_acc = static_cast<double>(var) / static_cast<double>(out.n);
    out.delta = out.variant_acc - out.baseline_acc;
    return out;
}

std::vector<PairedOutcome> pair_outcomes(
    std::span<const std::pair<std::string, bool>> baseline,
    std::span<const std::pair<std::string, bool>> variant) {
    std::map<std::string, bool> variant_by_id;
    for (const auto& [id, correct] : variant) variant_by_id.emplace(id, correct);
    std::vector<PairedOutcome> out;
    std::set<std::string> baseline_ids;
    std::vector<std::string> missing;
    for (const auto& [id, correct] : baseline) {
        baseline_ids.insert(id);
        auto it = variant_by_id.find(id);
        if (it == variant_by_id.end()) {
            missing.push_back(id);
            continue;
        }
        out.push_back(PairedOutcome{id, correct, it->second});
    }
    std::vector<std::string> extra;
    for (const auto& [id, _] : variant_by_id)
        if (!baseline_ids.count(id)) extra.push_back(id);
    if (!missing.empty() || !extra.empty()) {
        std::string detail = "example-id mismatch;";
        if (!missing.empty()) {
            detail += " baseline-only:";
            for (std::size_t i = 0; i < std::min<std::size_t>(5, missing.size()); ++i)
                detail += " " + missing[i];
        }
        if (!extra.empty()) {
            detail += " variant-only:";
            for (std::size_t i = 0; i < std::min<std::size_t>(5, extra.size()); ++i)
                detail += " " + extra[i];
        }
        throw ValidationError(detail);
    }
    return out;
}

}  // namespace cotcheck
