#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <optional>
#include <string>
#include <string_view>

namespace cotcheck {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

// Canonical decimal strings are how every numeric answer is stored and
// compared: optional leading '-', no leading zeros, no trailing fraction
// zeros, no '+', "-0" collapsed to "0". Examples: "24", "-260", "0.5", "4.5".

// Canonicalize raw text as a decimal number. Strips surrounding whitespace,
// thousands commas, common currency symbols and one trailing period.
// Returns nullopt when the remainder is not a plain decimal literal.
std::optional<std::string> canonicalize_decimal(std::string_view raw);

bool is_canonical_decimal(std::string_view s);

// Exact bridge between canonical decimals and rationals.
Rational rational_from_decimal(std::string_view canonical);

// Finite decimal rendering of a rational; nullopt when the reduced
// denominator has prime factors other than 2 and 5.
std::optional<std::string> decimal_from_rational(const Rational& value);

// "24" -> "25", "3.5" -> "4.5", "999" -> "1000": magnitude grows by one,
// sign and integer/decimal form preserved. Input must be canonical.
std::string increment_decimal_magnitude(std::string_view canonical);

}  // namespace cotcheck
