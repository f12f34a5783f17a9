#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

namespace wishflow::rng {

// splitmix64; used both as a mixer and as the per-counter generator so that
// every (seed, a, b, c) tuple addresses an independent substream.
inline std::uint64_t splitmix64(std::uint64_t &state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

// Counter-based stream of standard normals. Draws are a pure function of
// (seed, key triple, position), so parallel and serial consumers agree.
class NoiseStream {
public:
  explicit NoiseStream(std::uint64_t seed) : seed_(seed) {}

  // Standard-normal matrix for substream (a, b, c). Typical usage:
  // a = MC sample index, b = step index, c = role tag.
  Eigen::MatrixXd normal(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                         long rows, long cols) const {
    Eigen::MatrixXd out(rows, cols);
    std::uint64_t state = mix(mix(mix(seed_, a), b), c);
    const long n = rows * cols;
    long i = 0;
    while (i < n) {
      // Box-Muller on explicit uniforms; no implementation-defined
      // distributions so streams are stable across standard libraries.
      double u1 = to_unit(splitmix64(state));
      double u2 = to_unit(splitmix64(state));
      double r = std::sqrt(-2.0 * std::log(u1));
      double z0 = r * std::cos(2.0 * M_PI * u2);
      double z1 = r * std::sin(2.0 * M_PI * u2);
      out(i / out.cols(), i % out.cols()) = z0;
      ++i;
      if (i < n) {
        out(i / out.cols(), i % out.cols()) = z1;
        ++i;
      }
    }
    return out;
  }

  Eigen::MatrixXd uniform(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                          long rows, long cols) const {
    Eigen::MatrixXd out(rows, cols);
    std::uint64_t state = mix(mix(mix(seed_, a), b), c);
    for (long i = 0; i < rows * cols; ++i)
      out(i / cols, i % cols) = to_unit(splitmix64(state));
    return out;
  }

  std::uint64_t seed() const { return seed_; }

private:
  static double to_unit(std::uint64_t x) {
    // (0, 1]; never 0 so log(u) is finite.
    return (static_cast<double>(x >> 11) + 1.0) * (1.0 / 9007199254740993.0);
  }

  std::uint64_t seed_;
};

// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<long> permutation(std::uint64_t seed, std::uint64_t key, long n) {
  std::vector<long> idx(n);
  for (long i = 0; i < n; ++i) idx[i] = i;
  std::uint64_t state = mix(seed, key);
  for (long i = n - 1; i > 0; --i) {
    long j = static_cast<long>(splitmix64(state) % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

} // namespace wishflow::rng
