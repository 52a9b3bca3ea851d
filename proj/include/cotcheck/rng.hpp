#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace cotcheck {

// All seeded behavior in this project flows through splitmix64 with the
// constants below, so every derived dataset, oracle draw and bootstrap
// interval is bit-stable across platforms and across worker counts.
class SplitMix64 {
 public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) from the top 53 bits.
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
    std::uint64_t state_;
};

// Stateless finalizer (one splitmix step from a fixed origin).
inline std::uint64_t mix64(std::uint64_t x) {
    return SplitMix64(x).next();
}

// Seed for the i-th substream of a run seed. Resample/worker i always uses
// substream i, so fan-out order cannot change results.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(seed ^ mix64(stream + 0x6A09E667F3BCC909ULL));
}

inline SplitMix64 substream(std::uint64_t seed, std::uint64_t stream) {
    return SplitMix64(substream_seed(seed, stream));
}

// Rejection-free bounded draw: 128-bit multiply-shift of a full-width word.
inline std::size_t bounded_index(std::uint64_t x, std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(x) * static_cast<unsigned __int128>(n)) >> 64);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Deterministic per-(seed, tag, id) uniform draw, used by oracle decisions
// that must depend on the example identity only, never on the prompt bytes.
inline double keyed_unit(std::uint64_t seed, std::string_view tag, std::string_view id) {
    return SplitMix64(mix64(seed ^ mix64(fnv1a64(tag))) ^ fnv1a64(id)).unit();
}

}  // namespace cotcheck
