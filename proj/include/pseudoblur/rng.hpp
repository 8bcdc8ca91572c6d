#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace pseudoblur {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_str(const std::string& s) {
    // FNV-1a, stable across platforms
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Self-contained deterministic generator (splitmix64 stream). All project
// randomness flows from one root seed, split per consumer via child().
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // warm up so that small seeds decorrelate
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    std::uint32_t next_u32() { return static_cast<std::uint32_t>(next_u64() >> 32); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t index(std::uint64_t n) { return next_u64() % n; }

    int range_int(int lo, int hi) { // inclusive bounds
        return lo + static_cast<int>(index(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Rng child(const std::string& tag) const {
        std::uint64_t s = state_ ^ hash_str(tag);
        return Rng(splitmix64(s));
    }

    Rng child(std::uint64_t tag) const {
        std::uint64_t s = state_ ^ (tag * 0x9e3779b97f4a7c15ULL + 0x3c6ef372fe94f82aULL);
        return Rng(splitmix64(s));
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace pseudoblur
