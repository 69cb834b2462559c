// Seeded RNG with hand-rolled value transforms so streams are identical
// across standard libraries and platforms.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mrf {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // Per-sample stream splitting rule used by dataset generation:
    // stream i of root seed s is Rng(s + i).
    static Rng split(std::uint64_t root_seed, std::uint64_t index) {
        return Rng(root_seed + index);
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform01() { return (eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) {
        if (lo == hi) {
            eng_();  // keep draw counts regime-independent
            return lo;
        }
        return lo + (hi - lo) * uniform01();
    }

    // Box-Muller, one value per call (the mate is cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01(), u2 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586477 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t next_u64() { return eng_(); }

    int uniform_int(int lo, int hi_inclusive) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi_inclusive - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mrf
