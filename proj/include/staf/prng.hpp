#pragma once

#include <cstdint>
#include <string>

#include "staf/tensor.hpp"

namespace staf {

/// Counter-based generator (splitmix64 finalizer in counter mode).
/// A value depends only on (key, counter), and independent substreams are
/// derived by rekeying, so hierarchical seeding is order-independent:
/// splitting a Prng per frame / per trial gives the same numbers no matter
/// which thread draws first.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : key_(mix(seed ^ 0x5851f42d4c957f2dULL)) {}

  /// Independent substream; drawing from the child never disturbs the parent.
  Prng stream(std::uint64_t id) const {
    Prng child(0);
    child.key_ = mix(key_ ^ mix(id + 0x9e3779b97f4a7c15ULL));
    child.counter_ = 0;
    return child;
  }

  Prng stream(const std::string& label) const { return stream(fnv1a64(label.data(), label.size())); }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two draws per value.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::int64_t index(std::int64_t n) { return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n)); }

  Tensor uniform_tensor(std::vector<std::int64_t> dims, double lo, double hi) {
    std::vector<double> d(static_cast<std::size_t>(Tensor::count(dims)));
    for (auto& v : d) v = uniform(lo, hi);
    return Tensor(std::move(dims), std::move(d));
  }

  Tensor normal_tensor(std::vector<std::int64_t> dims, double stddev = 1.0) {
    std::vector<double> d(static_cast<std::size_t>(Tensor::count(dims)));
    for (auto& v : d) v = stddev * normal();
    return Tensor(std::move(dims), std::move(d));
  }

  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  static std::uint64_t fnv1a64(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace staf
