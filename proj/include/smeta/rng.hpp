#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace smeta {

// SplitMix64 finalizer. Used both as a bit mixer for seed derivation and as
// the engine behind Rng. Self-contained so that streams are reproducible
// bit-for-bit across standard libraries (std::normal_distribution is not
// pinned by the standard, so we never use it).
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Deterministic per-index substream derivation: episode i of run seed m uses
// split_seed(m, i). Mixing twice keeps adjacent indices uncorrelated.
inline uint64_t split_seed(uint64_t master, uint64_t index) {
  uint64_t s = master ^ (0xD1B54A32D192ED03ULL * (index + 1));
  uint64_t a = splitmix64(s);
  uint64_t b = splitmix64(s);
  return a ^ (b << 1);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1): 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::vector<double> gaussian_vec(int n) {
    std::vector<double> v(n);
    for (double& x : v) x = gaussian();
    return v;
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // First k entries of a seeded Fisher-Yates shuffle of 0..n-1:
  // a without-replacement draw of k distinct indices.
  std::vector<int> choose(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
      const int j = i + static_cast<int>(below(static_cast<uint64_t>(n - i)));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace smeta
