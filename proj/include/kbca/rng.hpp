#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace kbca {

/// Counter-based deterministic RNG. Every draw is a pure hash of
/// (seed, stream, draw index), so the same triple yields the same value
/// on every platform regardless of evaluation order. Substreams fork a
/// new independent stream from a key, which is how per-item / per-head
/// noise stays reproducible under reordering or parallelism.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        return mix(mix(mix(seed_) ^ stream_) ^ counter_++);
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform clamped into [lo, 1-lo]; keeps -log(1-eps) finite.
    double uniform_clamped(double lo = 1e-12) {
        double u = uniform();
        if (u < lo) return lo;
        if (u > 1.0 - lo) return 1.0 - lo;
        return u;
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_clamped();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    /// Independent stream derived from this one and a key.
    Rng substream(std::uint64_t key) const {
        return Rng(seed_, mix(mix(stream_) ^ key));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// FNV-1a over a string, for hashing utterance ids into split buckets
/// and stream keys.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace kbca
