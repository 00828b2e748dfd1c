#pragma once

#include <cmath>
#include <cstdint>

namespace sas {

// Deterministic PRNG (splitmix64). The std:: distributions are
// implementation-defined, so everything that must reproduce bitwise across
// toolchains goes through this class instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
    std::uint64_t uniform_below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller (no cached spare, so the consumed
    // stream length per call is fixed).
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Independent sub-stream keyed by a tag; used to decouple e.g. the
    // train-batch stream from the validation-batch stream.
    Rng derive(std::uint64_t tag) const {
        Rng mix(state_ ^ (tag * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
        return Rng(mix.next_u64());
    }

private:
    std::uint64_t state_;
};

}  // namespace sas
