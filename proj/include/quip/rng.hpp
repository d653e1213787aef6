#pragma once

#include <cmath>
#include <cstdint>

namespace quip {

// All randomness in the repo flows through this generator: SplitMix64 run in
// counter mode, keyed by (seed, stream). A draw is a pure function of
// (seed, stream, counter), so independent streams can be handed to workers and
// results never depend on execution order.
class Rng {
  public:
    Rng(uint64_t seed, uint64_t stream = 0) : seed_(seed), stream_(stream) {
        key_ = mix(seed_ + 0x9e3779b97f4a7c15ULL * (stream_ + 1));
    }

    // New independent stream keyed off this generator's identity.
    Rng derive(uint64_t substream) const { return Rng(seed_, mix(stream_ + 0x632be59bd9b4e019ULL * (substream + 1))); }

    uint64_t next_u64() { return mix(key_ ^ mix(counter_++ + 0xd1b54a32d192ed03ULL)); }

    // Uniform in [0, 1) with 53 random bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (two uniforms per draw).
    double next_gaussian() {
        double u1 = 0.0;
        do {
            u1 = next_unit();
        } while (u1 <= 0.0);
        const double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    uint64_t seed_;
    uint64_t stream_;
    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace quip
