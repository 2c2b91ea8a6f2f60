#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace dmtv {

// xoshiro256** with explicit, serializable state. Gaussian sampling uses
// Box-Muller so streams are identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (int i = 0; i < 4; ++i) s_[i] = splitmix64(x);
        have_spare_ = false;
        spare_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 1e-300);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Independent child stream; does not disturb this stream.
    Rng fork(uint64_t tag) const {
        uint64_t x = s_[0] ^ rotl(s_[2], 13) ^ (tag * 0x9e3779b97f4a7c15ULL);
        Rng child(0);
        for (int i = 0; i < 4; ++i) child.s_[i] = splitmix64(x);
        child.have_spare_ = false;
        return child;
    }

    // Stream derived purely from integer coordinates, for reproducible
    // per-step / per-sample randomness independent of call order.
    static Rng from_stream(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        uint64_t x = seed;
        x = splitmix64(x) ^ (a * 0xbf58476d1ce4e5b9ULL);
        x = splitmix64(x) ^ (b * 0x94d049bb133111ebULL);
        x = splitmix64(x) ^ (c * 0x2545f4914f6cdd1dULL);
        return Rng(splitmix64(x));
    }

    std::vector<uint64_t> state() const {
        return {s_[0], s_[1], s_[2], s_[3],
                have_spare_ ? 1ULL : 0ULL, bitcast_u64(spare_)};
    }

    void set_state(const std::vector<uint64_t>& st) {
        for (int i = 0; i < 4; ++i) s_[i] = st.at(static_cast<size_t>(i));
        have_spare_ = st.at(4) != 0;
        spare_ = bitcast_f64(st.at(5));
    }

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
    static uint64_t bitcast_u64(double d) {
        uint64_t u;
        __builtin_memcpy(&u, &d, 8);
        return u;
    }
    static double bitcast_f64(uint64_t u) {
        double d;
        __builtin_memcpy(&d, &u, 8);
        return d;
    }

    uint64_t s_[4] = {1, 2, 3, 4};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dmtv
