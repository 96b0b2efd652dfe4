#pragma once

#include <cmath>
#include <cstdint>

namespace gazediff {

// Counter-based generator (splitmix64 finalizer over key + counter*golden).
// The k-th output is a pure function of (key, k), so any draw can be
// reproduced without replaying the sequence, and independent streams are
// derived by re-keying. Every random draw in the project flows through this.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) : key_(mix(seed + mix(stream ^ kGolden))) {}

    uint64_t next_u64() { return mix(key_ + (++counter_) * kGolden); }

    // [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // One N(0,1) draw per call (Box-Muller, sine partner discarded so the
    // generator stays stateless apart from the counter).
    double next_gaussian() {
        double u1 = 1.0 - next_double(); // (0, 1]
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    // Child stream independent of this one and of other labels.
    Rng split(uint64_t label) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(label + kGolden));
        child.counter_ = 0;
        return child;
    }

    uint64_t counter() const { return counter_; }

private:
    static constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
    static constexpr double kPi = 3.14159265358979323846;

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_ = 0;
};

// Stream labels used to derive independent randomness from one master seed.
namespace rng_stream {
constexpr uint64_t kInit = 1;      // parameter initialization
constexpr uint64_t kBatch = 2;     // batch index selection, per step
constexpr uint64_t kTimestep = 3;  // diffusion timestep draws, per step
constexpr uint64_t kNoise = 4;     // q_sample corruption noise, per step
constexpr uint64_t kDropout = 5;   // dropout masks, per step
constexpr uint64_t kSample = 6;    // reverse-process sampling chains
constexpr uint64_t kSynth = 7;     // synthetic corpus generation
constexpr uint64_t kVal = 8;       // held-out validation noise
} // namespace rng_stream

} // namespace gazediff
