#pragma once

#include <cmath>
#include <cstdint>

namespace tsembed {

// Counter-based 64-bit generator (splitmix64). The whole toolkit draws
// randomness through this stream so that datasets, batches and weight
// initialisations are reproducible from a single integer seed, independent
// of the platform's standard library.
//
// Stream protocol:
//   * next()           one raw 64-bit output, advances the counter by the
//                      golden-ratio increment.
//   * uniform()        double in [0, 1), 53 mantissa bits of one draw.
//   * uniform_index(n) integer in [0, n) via the 128-bit multiply-shift
//                      reduction of one draw.
//   * normal()         standard Gaussian via Box-Muller; consumes exactly
//                      two draws and returns the cosine branch.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  double normal() {
    // u1 in (0, 1] so the log is finite; u2 in [0, 1).
    const double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// Derives an independent child seed from (seed, tag). Used to give every
// subsystem (weight init, batch sampling, per-subject scenario runs, ...)
// its own stream without manual bookkeeping.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed ^ (tag * 0xD6E8FEB86659FD93ULL + 0xA5A5A5A5A5A5A5A5ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace tsembed
