#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace qlink::sim {

// Deterministic random stream: xoshiro256** seeded through splitmix64.
// Streams derived from the same master seed but different stage ids are
// statistically independent, so pipeline stages (emission, detection,
// per-channel detector noise) can be evaluated in any order, or in
// parallel, without changing the produced samples.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) { reseed(seed, {}); }

  // Stage-split stream: ids select a sub-stream of the master seed.
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream_ids) {
    reseed(seed, stream_ids);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return next_double() < p; }

  // Exponential with the given rate (mean 1/rate); rate must be > 0.
  double exponential(double rate) {
    // log1p(-u) with u in [0,1) never evaluates log(0).
    return -std::log1p(-next_double()) / rate;
  }

  // Standard normal via the Marsaglia polar method (second sample cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, q;
    do {
      u = 2.0 * next_double() - 1.0;
      v = 2.0 * next_double() - 1.0;
      q = u * u + v * v;
    } while (q >= 1.0 || q == 0.0);
    const double f = std::sqrt(-2.0 * std::log(q) / q);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Zero-mean Gaussian specified by its full width at half maximum.
  double gaussian_fwhm(double fwhm) {
    if (fwhm <= 0.0) return 0.0;
    return normal() * (fwhm / kFwhmPerSigma);
  }

  // Index into a 4-outcome distribution given cumulative probabilities
  // c[k] = p0 + ... + pk (c[3] is assumed to be ~1).
  int pick4(const std::array<double, 4>& cumulative) {
    const double u = next_double();
    if (u < cumulative[0]) return 0;
    if (u < cumulative[1]) return 1;
    if (u < cumulative[2]) return 2;
    return 3;
  }

  static constexpr double kFwhmPerSigma = 2.3548200450309493;  // 2*sqrt(2 ln 2)

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  void reseed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream_ids) {
    std::uint64_t h = seed;
    for (std::uint64_t id : stream_ids) {
      h ^= splitmix64(h) + 0x9E3779B97F4A7C15ULL * (id + 1);
    }
    std::uint64_t sm = h;
    for (auto& word : s_) word = splitmix64(sm);
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;  // forbidden all-zero state
    has_spare_ = false;
    spare_ = 0.0;
  }

  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace qlink::sim
