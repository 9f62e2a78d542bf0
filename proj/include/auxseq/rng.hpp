// Portable random streams. Every sampled subset, shuffle, dropout mask and
// noise draw in the project comes from SplitMix64 so results are bit-exact
// across compilers and standard libraries.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace auxseq {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [0, range) by Lemire's multiply-shift with rejection.
  std::uint64_t bounded(std::uint64_t range) {
    if (range == 0) return 0;
    std::uint64_t x = next();
    unsigned __int128 m = static_cast<unsigned __int128>(x) * range;
    auto low = static_cast<std::uint64_t>(m);
    if (low < range) {
      const std::uint64_t threshold = (0 - range) % range;
      while (low < threshold) {
        x = next();
        m = static_cast<unsigned __int128>(x) * range;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one draw per call, the sine half is dropped).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// Mixes several integers into one seed; used to derive independent streams
/// (e.g. per step and per example) from a user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  SplitMix64 g(seed ^ 0x6a09e667f3bcc909ULL);
  std::uint64_t h = g.next();
  SplitMix64 g2(h ^ (a * 0x9e3779b97f4a7c15ULL));
  h = g2.next();
  SplitMix64 g3(h ^ (b * 0xc2b2ae3d27d4eb4fULL));
  return g3.next();
}

/// Fisher-Yates from the last element down: for i = n-1..1 swap(i, bounded(i+1)).
template <class T>
void portable_shuffle(std::span<T> items, std::uint64_t seed) {
  SplitMix64 g(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(g.bounded(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  portable_shuffle(std::span<std::size_t>(idx), seed);
  return idx;
}

}  // namespace auxseq
