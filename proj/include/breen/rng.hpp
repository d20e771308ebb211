#pragma once

#include <cmath>
#include <cstdint>

namespace breen {

// splitmix64 generator. Chosen over std::mt19937 + std::normal_distribution
// because the distribution adaptors are implementation-defined; this one is
// bit-reproducible everywhere and its whole state is a single u64, which keeps
// checkpointing trivial.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1) with 53 bits of mantissa
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // Box-Muller with cached spare
    double gauss() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0,1], keeps log finite
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) {
        state_ = s;
        has_spare_ = false;
    }

    // Independent stream derived from (seed, tag); used for stateless
    // per-step/per-sample derivations.
    static Rng stream(std::uint64_t seed, std::uint64_t tag) {
        Rng mix(seed ^ (tag * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
        mix.next_u64();
        return mix;
    }

  private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace breen
