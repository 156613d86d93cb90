#pragma once
// Seeded random streams for the simulator.
//
// Every stochastic component owns a stream keyed by (run_seed, stream_id), so
// results do not depend on how clients are scheduled across threads. The
// distributions are implemented here rather than taken from <random> because
// the standard normal/gamma distributions are implementation-defined and would
// make partitions differ between standard libraries; std::mt19937_64 itself is
// fully specified.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace fedpb {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for an independent stream derived from a run seed and a stream key.
inline std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t stream_id) {
  return splitmix64(splitmix64(run_seed) ^ splitmix64(stream_id + 0x632be59bd9b4e019ULL));
}

/// Well-known stream keys. Client streams use the client id directly.
namespace streams {
inline constexpr std::uint64_t kPartition = 0x1000'0000'0000'0001ULL;
inline constexpr std::uint64_t kSynthetic = 0x1000'0000'0000'0002ULL;
inline constexpr std::uint64_t kInit = 0x1000'0000'0000'0003ULL;
inline constexpr std::uint64_t kServer = 0x1000'0000'0000'0004ULL;
inline constexpr std::uint64_t kClientBase = 0x2000'0000'0000'0000ULL;
}  // namespace streams

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : engine_(seed) {}
  RngStream(std::uint64_t run_seed, std::uint64_t stream_id)
      : engine_(derive_seed(run_seed, stream_id)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  /// Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Marsaglia polar method; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Marsaglia-Tsang, with the shape<1 boost.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      return g * std::pow(uniform_open(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::vector<double> dirichlet(std::size_t k, double alpha) {
    std::vector<double> out(k);
    double total = 0.0;
    for (auto& g : out) {
      g = gamma(alpha);
      total += g;
    }
    if (!(total > 0.0)) {
      // All draws underflowed (alpha extremely small): put the mass on one coordinate.
      out.assign(k, 0.0);
      out[uniform_index(k)] = 1.0;
      return out;
    }
    for (auto& g : out) g /= total;
    return out;
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fedpb
