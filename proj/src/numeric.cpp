#include "cotcheck/numeric.hpp"

#include <algorithm>
#include <cctype>

namespace cotcheck {
namespace {

bool all_digits(std::string_view s) {
    return !s.empty() &&
           std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

// Currency marks tolerated in front of (or glued to) a number. The unicode
// ones arrive as multi-byte UTF-8 sequences.
const std::string_view kCurrencyMarks[] = {"$", "€", "£", "¥"};

std::string strip_currency_and_commas(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        bool skipped = false;
        for (std::string_view mark : kCurrencyMarks) {
            if (s.substr(i, mark.size()) == mark) {
                i += mark.size();
                skipped = true;
                break;
            }
        }
        if (skipped) continue;
        if (s[i] == ',') {
            ++i;
            continue;
        }
        out.push_back(s[i]);
        ++i;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string canonical_from_parts(bool negative, std::string int_part, std::string frac_part) {
    // no leading zeros
    std::size_t nz = int_part.find_first_not_of('0');
    int_part = (nz == std::string::npos) ? "0" : int_part.substr(nz);
    // no trailing fraction zeros
    while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
    std::string out;
    if (negative && !(int_part == "0" && frac_part.empty())) out.push_back('-');
    out += int_part;
    if (!frac_part.empty()) {
        out.push_back('.');
        out += frac_part;
    }
    return out;
}

}  // namespace

std::optional<std::string> canonicalize_decimal(std::string_view raw) {
    std::string s{trim(raw)};
    s = strip_currency_and_commas(s);
    if (!s.empty() && s.back() == '.') s.pop_back();  // one trailing period
    std::string_view v = trim(s);
    if (v.empty()) return std::nullopt;

    bool negative = false;
    if (v.front() == '+' || v.front() == '-') {
        negative = v.front() == '-';
        v.remove_prefix(1);
    }
    if (v.empty()) return std::nullopt;

    std::string int_part, frac_part;
    std::size_t dot = v.find('.');
    if (dot == std::string_view::npos) {
        int_part = std::string(v);
    } else {
        int_part = std::string(v.substr(0, dot));
        frac_part = std::string(v.substr(dot + 1));
        if (frac_part.empty() || v.find('.', dot + 1) != std::string_view::npos)
            return std::nullopt;
    }
    if (int_part.empty()) int_part = "0";  // ".5" -> "0.5"
    if (!all_digits(int_part)) return std::nullopt;
    if (!frac_part.empty() && !all_digits(frac_part)) return std::nullopt;
    return canonical_from_parts(negative, std::move(int_part), std::move(frac_part));
}

bool is_canonical_decimal(std::string_view s) {
    auto canon = canonicalize_decimal(s);
    return canon && *canon == s;
}

Rational rational_from_decimal(std::string_view canonical) {
    bool negative = !canonical.empty() && canonical.front() == '-';
    if (negative) canonical.remove_prefix(1);
    std::size_t dot = canonical.find('.');
    std::string digits;
    std::size_t frac_len = 0;
    if (dot == std::string_view::npos) {
        digits = std::string(canonical);
    } else {
        digits = std::string(canonical.substr(0, dot)) + std::string(canonical.substr(dot + 1));
        frac_len = canonical.size() - dot - 1;
    }
    // cpp_int reads a leading zero as an octal prefix
    std::size_t nonzero = digits.find_first_not_of('0');
    digits = nonzero == std::string::npos ? "0" : digits.substr(nonzero);
    BigInt numer(digits);
    BigInt denom = 1;
    for (std::size_t i = 0; i < frac_len; ++i) denom *= 10;
    if (negative) numer = -numer;
    return Rational(numer, denom);
}

std::optional<std::string> decimal_from_rational(const Rational& value) {
    BigInt num = boost::multiprecision::numerator(value);
    BigInt den = boost::multiprecision::denominator(value);  // positive, reduced
    bool negative = num < 0;
    if (negative) num = -num;

    // den must be 2^a * 5^b for a finite decimal expansion
    BigInt d = den;
    unsigned twos = 0, fives = 0;
    while (d % 2 == 0) {
        d /= 2;
        ++twos;
    }
    while (d % 5 == 0) {
        d /= 5;
        ++fives;
    }
    if (d != 1) return std::nullopt;

    unsigned digits_after = std::max(twos, fives);
    BigInt scaled = num;
    for (unsigned i = twos; i < digits_after; ++i) scaled *= 2;
    for (unsigned i = fives; i < digits_after; ++i) scaled *= 5;
    std::string all = scaled.str();
    if (all.size() <= digits_after) all.insert(0, digits_after + 1 - all.size(), '0');
    std::string int_part = all.substr(0, all.size() - digits_after);
    std::string frac_part = all.substr(all.size() - digits_after);
    return canonical_from_parts(negative, std::move(int_part), std::move(frac_part));
}

std::string increment_decimal_magnitude(std::string_view canonical) {
    bool negative = !canonical.empty() && canonical.front() == '-';
    if (negative) canonical.remove_prefix(1);
    std::size_t dot = canonical.find('.');
    std::string int_part =
        std::string(dot == std::string_view::npos ? canonical : canonical.substr(0, dot));
    std::string frac_part =
        dot == std::string_view::npos ? std::string() : std::string(canonical.substr(dot + 1));

    // integer-part + 1 with carry
    int carry = 1;
    for (auto it = int_part.rbegin(); it != int_part.rend() && carry; ++it) {
        int d = (*it - '0') + carry;
        *it = static_cast<char>('0' + d % 10);
        carry = d / 10;
    }
    if (carry) int_part.insert(int_part.begin(), '1');
    return canonical_from_parts(negative, std::move(int_part), std::move(frac_part));
}

}  // namespace cotcheck
