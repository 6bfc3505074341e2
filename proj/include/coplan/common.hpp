#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace coplan {

// Base error for contract violations; in-band step failures use
// StepOutcome codes instead.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct GenerationError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct EpisodeExhausted : Error {
    using Error::Error;
};
struct Unsolvable : Error {
    using Error::Error;
};
struct SchemaMismatch : Error {
    using Error::Error;
};
struct OutOfVocabulary : Error {
    using Error::Error;
};

// splitmix64; used for stable seed derivation so that runs are
// reproducible across platforms (std::hash is not).
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// FNV-1a over bytes; stable digest for fixtures and schema hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t seed = 0xcbf29ce484222325ULL) {
    return fnv1a(s.data(), s.size(), seed);
}

std::string hex64(std::uint64_t v);

// Deterministic RNG wrapper. Bounded draws avoid
// std::uniform_int_distribution, whose output is implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b9ULL) {}

    std::uint64_t next_u64() {
        std::uint64_t s = state_;
        state_ = s + 0x9e3779b97f4a7c15ULL;
        return mix64(s);
    }

    // Uniform in [0, n); rejection sampling to kill modulo bias.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw Error("Rng::below(0)");
        std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Uniform double in [0, 1).
    double unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    bool bernoulli(double p) { return unit() < p; }

  private:
    std::uint64_t state_;
};

}  // namespace coplan
