#pragma once

#include <cmath>
#include <cstdint>

namespace wbmae {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic stream splitting: every parallel unit of work (trial, sample,
// epoch) gets its own generator seeded from (base, index) so results do not
// depend on scheduling or worker count.
inline std::uint64_t sub_seed(std::uint64_t base, std::uint64_t stream) {
    return splitmix64(splitmix64(base) ^ splitmix64(stream + 0x632be59bd9b4e019ull));
}

// xorshift64* with splitmix-mixed seeding. Gaussians via Box-Muller with the
// spare value cached, so a stream's draw sequence is a pure function of seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        state_ = splitmix64(seed);
        if (state_ == 0) state_ = 0x9e3779b97f4a7c15ull; // state must stay nonzero
    }

    std::uint64_t next_u64() {
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 2685821657736338717ull;
    }

    // [0, 1), 53-bit resolution
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    // [0, n), multiply-shift; bias is O(n / 2^64)
    long uniform_int(long n) {
        return long((static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform01(); // (0, 1], keeps log finite
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace wbmae
