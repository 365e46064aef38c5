#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "ugac/errors.hpp"

namespace ugac {

/// Deterministic random source. Every component that needs randomness takes
/// an explicit Rng so whole runs are a pure function of their seeds, and the
/// engine state can be checkpointed as text.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n).
    std::uint64_t integer(std::uint64_t n) {
        if (n == 0) throw DomainError("Rng::integer: n must be positive");
        const std::uint64_t limit = (UINT64_MAX / n) * n;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return r % n;
    }

    /// Standard normal via Box-Muller (no cached spare, so the state is just
    /// the engine).
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Gamma(shape, scale 1) via Marsaglia-Tsang, boosted for shape < 1.
    double gamma(double shape) {
        if (!(shape > 0.0)) throw DomainError("Rng::gamma: shape must be > 0");
        if (shape < 1.0) {
            const double u = 1.0 - uniform(); // (0, 1]
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = 1.0 - uniform(); // (0, 1], safe for log
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (!is) throw DataError("Rng::set_state: malformed engine state");
    }

private:
    static constexpr double kPi = 3.14159265358979323846;
    std::mt19937_64 engine_;
};

/// Mixes seed material into a fresh stream id (splitmix64 finalizer), used to
/// derive independent per-image / per-level streams from one run seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t x = a * 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL +
                      c * 0x94d049bb133111ebULL + 0x2545f4914f6cdd1dULL;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

} // namespace ugac
