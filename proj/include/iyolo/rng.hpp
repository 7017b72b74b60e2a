#pragma once

#include <cstdint>
#include <random>

namespace iyolo {

// mt19937 with hand-rolled value mappings so streams are identical across
// standard libraries (uniform_real_distribution is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint32_t seed) : gen_(seed) {}

    // [0, 1)
    double uniform() { return (gen_() >> 6) * (1.0 / 67108864.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniform_f(float lo, float hi) { return static_cast<float>(uniform(lo, hi)); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<std::uint32_t>(hi - lo + 1));
    }

    std::uint32_t next_u32() { return gen_(); }

private:
    std::mt19937 gen_;
};

}  // namespace iyolo
