#pragma once

#include <cmath>
#include <stdexcept>

#include "adabn/norm_stats.hpp"

namespace adabn {

enum class ScheduleKind { Ema, Cma, AdaB2n };

// Emits the momentum sequence eta_i for running-statistics updates.
//
//   Ema     constant eta_tilde
//   Cma     1/(1+i) with i counting emissions from 0, so the first update
//           fully replaces the zero-initialized population and the running
//           value stays the arithmetic mean of all batches
//   AdaB2n  eta_i = eta_{i-1} / (eta_{i-1} + (1-eta_tilde)^kappa) seeded
//           with eta_0 = eta_tilde^kappa; the seed itself is the first
//           emitted value
//
// At kappa=1 the recurrence is the constant eta_tilde and at kappa=0 it is
// exactly 1/(1+i) (both by induction), so those endpoints emit the closed
// forms rather than accumulating rounding through the division.
class MomentumSchedule {
 public:
  MomentumSchedule(ScheduleKind kind, double eta_tilde = 0.1, double kappa = 0.7)
      : kind_(kind), eta_tilde_(eta_tilde), kappa_(kappa) {
    if (kind != ScheduleKind::Cma && (eta_tilde <= 0.0 || eta_tilde >= 1.0))
      throw std::invalid_argument("MomentumSchedule: eta_tilde must be in (0,1)");
    if (kind == ScheduleKind::AdaB2n && (kappa < 0.0 || kappa > 1.0))
      throw std::invalid_argument("MomentumSchedule: kappa must be in [0,1]");
  }

  ScheduleKind kind() const { return kind_; }
  double eta_tilde() const { return eta_tilde_; }
  double kappa() const { return kappa_; }
  long step() const { return step_; }

  // Returns eta for the current step and advances.
  double next() {
    double eta = 0.0;
    switch (kind_) {
      case ScheduleKind::Ema:
        eta = eta_tilde_;
        break;
      case ScheduleKind::Cma:
        eta = 1.0 / (1.0 + static_cast<double>(step_));
        break;
      case ScheduleKind::AdaB2n:
        if (kappa_ == 0.0) {
          eta = 1.0 / (1.0 + static_cast<double>(step_));
        } else if (kappa_ == 1.0) {
          eta = eta_tilde_;
        } else if (step_ == 0) {
          eta = std::pow(eta_tilde_, kappa_);
        } else {
          eta = eta_prev_ / (eta_prev_ + std::pow(1.0 - eta_tilde_, kappa_));
        }
        break;
    }
    eta_prev_ = eta;
    ++step_;
    return eta;
  }

 private:
  ScheduleKind kind_;
  double eta_tilde_;
  double kappa_;
  long step_ = 0;
  double eta_prev_ = 0.0;
};

// Running estimate of the per-channel statistics used at test time.
// Starts at the zero element; update blends in one batch of statistics
// with the supplied momentum.
class PopulationStats {
 public:
  explicit PopulationStats(int channels) : stats_(Stats::zeros(channels)) {}

  void update(const Stats& batch, double eta) {
    if (eta <= 0.0 || eta > 1.0)
      throw std::invalid_argument("PopulationStats::update: eta must be in (0,1]");
    if (batch.channels() != stats_.channels())
      throw std::invalid_argument("PopulationStats::update: channel mismatch");
    const double keep = 1.0 - eta;
    for (int c = 0; c < stats_.channels(); ++c) {
      stats_.mean[c] = keep * stats_.mean[c] + eta * batch.mean[c];
      stats_.var[c] = keep * stats_.var[c] + eta * batch.var[c];
    }
    initialized_ = true;
    ++step_;
  }

  const Stats& stats() const { return stats_; }
  bool initialized() const { return initialized_; }
  long step() const { return step_; }

 private:
  Stats stats_;
  bool initialized_ = false;
  long step_ = 0;
};

}  // namespace adabn
