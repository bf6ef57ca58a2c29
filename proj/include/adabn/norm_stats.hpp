#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "adabn/tensor.hpp"

namespace adabn {

// Per-channel statistics pair: mean and biased (population) variance, the
// value of the statistic function S applied to a batch.
struct Stats {
  std::vector<double> mean;
  std::vector<double> var;

  int channels() const { return static_cast<int>(mean.size()); }

  static Stats zeros(int c) {
    Stats s;
    s.mean.assign(c, 0.0);
    s.var.assign(c, 0.0);
    return s;
  }

  // Euclidean norm of the concatenated (mean, var) vector.
  double norm() const {
    double acc = 0.0;
    for (double v : mean) acc += v * v;
    for (double v : var) acc += v * v;
    return std::sqrt(acc);
  }
};

// Per-sample, per-group statistics used by group normalization. Row-major
// n-by-groups layout.
struct GroupStats {
  std::vector<double> mean;
  std::vector<double> var;
  int n = 0;
  int groups = 0;

  double& mean_at(int i, int g) { return mean[static_cast<std::size_t>(i) * groups + g]; }
  double mean_at(int i, int g) const { return mean[static_cast<std::size_t>(i) * groups + g]; }
  double& var_at(int i, int g) { return var[static_cast<std::size_t>(i) * groups + g]; }
  double var_at(int i, int g) const { return var[static_cast<std::size_t>(i) * groups + g]; }
};

// Learnable per-channel scale and shift.
struct AffineParams {
  std::vector<double> gamma;
  std::vector<double> beta;

  static AffineParams identity(int c) {
    AffineParams p;
    p.gamma.assign(c, 1.0);
    p.beta.assign(c, 0.0);
    return p;
  }
};

// Per-channel mean and biased variance over all samples and spatial
// positions. Two-pass so the variance is an explicit sum of squares (never
// negative, even in floating point).
inline Stats bn_stats(const Tensor3& a) {
  Stats s = Stats::zeros(a.c);
  const double inv = 1.0 / (static_cast<double>(a.n) * a.d);
  for (int c = 0; c < a.c; ++c) {
    double sum = 0.0;
    for (int n = 0; n < a.n; ++n)
      for (int d = 0; d < a.d; ++d) sum += a.at(n, c, d);
    const double mu = sum * inv;
    double sq = 0.0;
    for (int n = 0; n < a.n; ++n)
      for (int d = 0; d < a.d; ++d) {
        const double diff = a.at(n, c, d) - mu;
        sq += diff * diff;
      }
    s.mean[c] = mu;
    s.var[c] = sq * inv;
  }
  return s;
}

// Per-sample statistics over channel groups. groups=1 is layer norm,
// groups=c is instance norm. The channel count must divide evenly; a
// remainder would leave channels with no defined group.
inline GroupStats gn_stats(const Tensor3& a, int groups) {
  if (groups < 1 || groups > a.c)
    throw std::invalid_argument("gn_stats: groups must be in [1, channels]");
  if (a.c % groups != 0)
    throw std::invalid_argument("gn_stats: channels must be divisible by groups");
  const int k = a.c / groups;
  GroupStats s;
  s.n = a.n;
  s.groups = groups;
  s.mean.assign(static_cast<std::size_t>(a.n) * groups, 0.0);
  s.var.assign(static_cast<std::size_t>(a.n) * groups, 0.0);
  const double inv = 1.0 / (static_cast<double>(k) * a.d);
  for (int n = 0; n < a.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      double sum = 0.0;
      for (int j = 0; j < k; ++j)
        for (int d = 0; d < a.d; ++d) sum += a.at(n, g * k + j, d);
      const double mu = sum * inv;
      double sq = 0.0;
      for (int j = 0; j < k; ++j)
        for (int d = 0; d < a.d; ++d) {
          const double diff = a.at(n, g * k + j, d) - mu;
          sq += diff * diff;
        }
      s.mean_at(n, g) = mu;
      s.var_at(n, g) = sq * inv;
    }
  }
  return s;
}

// Center and scale per channel: (a - mean) / sqrt(var + eps).
inline Tensor3 normalize(const Tensor3& a, const Stats& s, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("normalize: eps must be > 0");
  if (s.channels() != a.c)
    throw std::invalid_argument("normalize: channel count mismatch");
  Tensor3 out(a.n, a.c, a.d, 0.0);
  for (int c = 0; c < a.c; ++c) {
    const double inv_std = 1.0 / std::sqrt(s.var[c] + eps);
    for (int n = 0; n < a.n; ++n)
      for (int d = 0; d < a.d; ++d)
        out.at(n, c, d) = (a.at(n, c, d) - s.mean[c]) * inv_std;
  }
  return out;
}

// Per-channel scale-and-shift: gamma * a + beta.
inline Tensor3 affine(const Tensor3& a_prime, const AffineParams& p) {
  if (static_cast<int>(p.gamma.size()) != a_prime.c ||
      static_cast<int>(p.beta.size()) != a_prime.c)
    throw std::invalid_argument("affine: parameter length mismatch");
  Tensor3 out(a_prime.n, a_prime.c, a_prime.d, 0.0);
  for (int c = 0; c < a_prime.c; ++c)
    for (int n = 0; n < a_prime.n; ++n)
      for (int d = 0; d < a_prime.d; ++d)
        out.at(n, c, d) = p.gamma[c] * a_prime.at(n, c, d) + p.beta[c];
  return out;
}

// Group normalization with unit affine, given precomputed group stats.
inline Tensor3 gn_normalize(const Tensor3& a, const GroupStats& s, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("gn_normalize: eps must be > 0");
  const int k = a.c / s.groups;
  Tensor3 out(a.n, a.c, a.d, 0.0);
  for (int n = 0; n < a.n; ++n)
    for (int g = 0; g < s.groups; ++g) {
      const double mu = s.mean_at(n, g);
      const double inv_std = 1.0 / std::sqrt(s.var_at(n, g) + eps);
      for (int j = 0; j < k; ++j)
        for (int d = 0; d < a.d; ++d)
          out.at(n, g * k + j, d) = (a.at(n, g * k + j, d) - mu) * inv_std;
    }
  return out;
}

inline Tensor3 gn_normalize(const Tensor3& a, int groups, double eps) {
  return gn_normalize(a, gn_stats(a, groups), eps);
}

}  // namespace adabn
