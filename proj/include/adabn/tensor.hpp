#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace adabn {

// Counter-based pseudo-random generator (SplitMix64 finalizer). The i-th
// output is a pure function of (key, i), so copies replay exactly and
// split() yields non-overlapping child streams. Single-owner: never share
// one instance across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed + kGolden)) {}

  std::uint64_t next_u64() { return mix(key_ + kGolden * ++counter_); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n), rejection-sampled so all values are equally
  // likely.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Standard normal via Box-Muller; the second deviate of each pair is cached.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
    const double u2 = next_double();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    spare_ = radius * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return radius * std::cos(kTwoPi * u2);
  }

  // Deterministic child stream keyed by (parent key, tag).
  Rng split(std::uint64_t tag) const {
    Rng child(0);
    child.key_ = mix(key_ ^ mix(tag + 0x632be59bd9b4e019ull));
    child.counter_ = 0;
    child.has_spare_ = false;
    return child;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;
  static constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Dense (n, c, d) array of doubles: n samples, c channels, d spatial
// positions. Row-major with channel as the middle axis. Values are treated
// as immutable once a tensor has been handed off.
struct Tensor3 {
  int n = 0;
  int c = 0;
  int d = 0;
  std::vector<double> data;

  Tensor3() = default;

  Tensor3(int n_, int c_, int d_, double fill) : n(n_), c(c_), d(d_) {
    if (n_ < 1 || c_ < 1 || d_ < 1)
      throw std::invalid_argument("Tensor3: all dimensions must be >= 1");
    data.assign(static_cast<std::size_t>(n_) * c_ * d_, fill);
  }

  std::size_t size() const { return data.size(); }

  double& at(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * c + j) * d + k];
  }
  double at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * c + j) * d + k];
  }

  bool same_shape(const Tensor3& other) const {
    return n == other.n && c == other.c && d == other.d;
  }
};

inline Tensor3 tensor_new(int n, int c, int d, double fill) {
  return Tensor3(n, c, d, fill);
}

inline Tensor3 tensor_randn(Rng& rng, int n, int c, int d, double mean,
                            double stddev) {
  if (stddev < 0.0)
    throw std::invalid_argument("tensor_randn: stddev must be >= 0");
  Tensor3 out(n, c, d, 0.0);
  for (double& v : out.data) v = mean + stddev * rng.next_gaussian();
  return out;
}

inline bool all_finite(const Tensor3& a) {
  for (double v : a.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace adabn
