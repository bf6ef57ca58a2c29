#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "adabn/momentum.hpp"

namespace adabn {

// A training timeline for weight analysis: batches are indexed 1..m_T,
// boundaries[t-1] = m_t is the last batch of task t, eta(i) is the momentum
// applied at batch i and r(i) the current-task proportion of batch i.
struct BatchSchedule {
  std::vector<long> boundaries;
  std::function<double(long)> eta;
  std::function<double(long)> r;

  int tasks() const { return static_cast<int>(boundaries.size()); }
  long total_batches() const { return boundaries.empty() ? 0 : boundaries.back(); }

  // 1-based task index owning batch i.
  int task_of(long i) const {
    for (int t = 0; t < tasks(); ++t)
      if (i <= boundaries[t]) return t + 1;
    throw std::out_of_range("BatchSchedule::task_of: batch index past m_T");
  }

  void validate() const {
    if (boundaries.empty())
      throw std::invalid_argument("BatchSchedule: at least one task required");
    long prev = 0;
    for (long m : boundaries) {
      if (m <= prev)
        throw std::invalid_argument("BatchSchedule: boundaries must be strictly increasing and positive");
      prev = m;
    }
  }
};

// Normalized per-task contribution to the population statistics.
struct TaskWeights {
  std::vector<double> weights;
  double normalizer = 0.0;
};

// How a batch's replay mass (1-r) is attributed to past tasks.
//   SeenTasks   split evenly over the g(i)-1 tasks that exist before the
//               batch's own task; conserves the batch's total mass
//   TotalTasks  give every past task (1-r)/(T-1) with T the full task
//               count, the bookkeeping the closed form uses; mass is
//               dropped for batches whose task has fewer than T-1
//               predecessors
enum class ReplaySplit { SeenTasks, TotalTasks };

namespace detail {

inline std::vector<double> eta_table(const BatchSchedule& s) {
  const long m = s.total_batches();
  std::vector<double> eta(static_cast<std::size_t>(m) + 1, 0.0);
  for (long i = 1; i <= m; ++i) {
    eta[i] = s.eta(i);
    if (!(eta[i] > 0.0 && eta[i] < 1.0))
      throw std::invalid_argument("BatchSchedule: eta(i) must lie in (0,1)");
  }
  return eta;
}

inline std::vector<double> r_table(const BatchSchedule& s) {
  const long m = s.total_batches();
  std::vector<double> r(static_cast<std::size_t>(m) + 1, 1.0);
  for (long i = 1; i <= m; ++i) {
    r[i] = s.r(i);
    if (!(r[i] > 0.0 && r[i] <= 1.0))
      throw std::invalid_argument("BatchSchedule: r(i) must lie in (0,1]");
  }
  return r;
}

inline TaskWeights normalize_weights(std::vector<double> raw) {
  double z = 0.0;
  for (double w : raw) z += w;
  if (!(z > 0.0))
    throw std::logic_error("task weights: normalizer must be positive");
  for (double& w : raw) w /= z;
  return TaskWeights{std::move(raw), z};
}

}  // namespace detail

// Closed-form statistical weight of each task: the task's own batches
// contribute eta_i * r_i times the decay product of everything after them,
// and every later batch contributes eta_i * (1-r_i) / (T-1). Weights are
// returned normalized to sum to one.
inline TaskWeights weights_closed_form(const BatchSchedule& sched) {
  sched.validate();
  const int tasks = sched.tasks();
  const long m = sched.total_batches();
  const auto eta = detail::eta_table(sched);
  const auto r = detail::r_table(sched);

  if (tasks == 1) {
    for (long i = 1; i <= m; ++i)
      if (r[i] < 1.0)
        throw std::invalid_argument(
            "weights_closed_form: r<1 with a single task has no replay source");
    return TaskWeights{{1.0}, 1.0};
  }

  // suffix[i] = prod_{j=i+1..m} (1 - eta_j)
  std::vector<double> suffix(static_cast<std::size_t>(m) + 1, 1.0);
  for (long i = m - 1; i >= 0; --i) suffix[i] = suffix[i + 1] * (1.0 - eta[i + 1]);

  std::vector<double> raw(tasks, 0.0);
  for (int t = 1; t <= tasks; ++t) {
    const long lo = (t == 1) ? 1 : sched.boundaries[t - 2] + 1;
    const long hi = sched.boundaries[t - 1];
    double own = 0.0;
    for (long i = lo; i <= hi; ++i) own += eta[i] * r[i] * suffix[i];
    double replay = 0.0;
    for (long i = hi + 1; i <= m; ++i)
      replay += eta[i] * (1.0 - r[i]) / (tasks - 1) * suffix[i];
    raw[t - 1] = own + replay;
  }
  return detail::normalize_weights(std::move(raw));
}

// Brute-force unrolling of the running-statistics recursion with symbolic
// per-task mass: batch i first decays every accumulated coefficient by
// (1-eta_i), then deposits eta_i * r_i on its own task and shares
// eta_i * (1-r_i) among past tasks according to the chosen split.
inline TaskWeights weights_oracle(const BatchSchedule& sched,
                                  ReplaySplit split = ReplaySplit::SeenTasks) {
  sched.validate();
  const int tasks = sched.tasks();
  const long m = sched.total_batches();
  const auto eta = detail::eta_table(sched);
  const auto r = detail::r_table(sched);

  std::vector<double> coef(tasks, 0.0);
  for (long i = 1; i <= m; ++i) {
    const int g = sched.task_of(i);
    for (double& c : coef) c *= 1.0 - eta[i];
    coef[g - 1] += eta[i] * r[i];
    if (r[i] < 1.0) {
      if (split == ReplaySplit::SeenTasks) {
        if (g == 1)
          throw std::invalid_argument(
              "weights_oracle: batch in the first task cannot replay past tasks");
        const double share = eta[i] * (1.0 - r[i]) / (g - 1);
        for (int t = 0; t < g - 1; ++t) coef[t] += share;
      } else {
        if (tasks == 1)
          throw std::invalid_argument(
              "weights_oracle: r<1 with a single task has no replay source");
        const double share = eta[i] * (1.0 - r[i]) / (tasks - 1);
        for (int t = 0; t < g - 1; ++t) coef[t] += share;
      }
    }
  }
  return detail::normalize_weights(std::move(coef));
}

namespace detail {

inline void require_constant_eta_r1_equal_segments(const BatchSchedule& sched,
                                                   double* eta_out, long* m1_out) {
  sched.validate();
  const long m = sched.total_batches();
  const double eta0 = sched.eta(1);
  for (long i = 1; i <= m; ++i) {
    if (sched.eta(i) != eta0)
      throw std::invalid_argument("cor1_approx: eta must be constant");
    if (sched.r(i) != 1.0)
      throw std::invalid_argument("cor1_approx: r must be identically 1");
  }
  const long m1 = sched.boundaries[0];
  long prev = 0;
  for (long b : sched.boundaries) {
    if (b - prev != m1)
      throw std::invalid_argument("cor1_approx: segments must have equal length");
    prev = b;
  }
  *eta_out = eta0;
  *m1_out = m1;
}

}  // namespace detail

// Exact constant-eta no-replay weights, already normalized:
//   w_t = (etabar^{m_{T-t}} - etabar^{m_{T-t+1}}) / (1 - etabar^{m_T}).
inline std::vector<double> cor1_exact_weights(const BatchSchedule& sched) {
  sched.validate();
  const long m = sched.total_batches();
  const double eta0 = sched.eta(1);
  for (long i = 1; i <= m; ++i) {
    if (sched.eta(i) != eta0)
      throw std::invalid_argument("cor1_exact_weights: eta must be constant");
    if (sched.r(i) != 1.0)
      throw std::invalid_argument("cor1_exact_weights: r must be identically 1");
  }
  const double etabar = 1.0 - eta0;
  const int tasks = sched.tasks();
  auto boundary = [&](int k) -> long {
    return k == 0 ? 0 : sched.boundaries[k - 1];
  };
  const double denom = 1.0 - std::pow(etabar, static_cast<double>(boundary(tasks)));
  std::vector<double> w(tasks, 0.0);
  for (int t = 1; t <= tasks; ++t) {
    const double hi = std::pow(etabar, static_cast<double>(boundary(tasks - t)));
    const double lo = std::pow(etabar, static_cast<double>(boundary(tasks - t + 1)));
    w[t - 1] = (hi - lo) / denom;
  }
  return w;
}

struct Cor1Approx {
  std::vector<double> weights;  // etabar^{m_1 (T - t)}, pre-normalization
  double error_bound = 0.0;     // etabar^{m_1} / (1 - etabar^{m_1 T})
};

// Exponential-decay approximation of the constant-eta no-replay weights.
// Valid under constant eta, r identically 1 and equal segment lengths;
// |cor1_exact - approx| <= error_bound holds per task with constant one.
inline Cor1Approx cor1_approx(const BatchSchedule& sched) {
  double eta = 0.0;
  long m1 = 0;
  detail::require_constant_eta_r1_equal_segments(sched, &eta, &m1);
  const double etabar = 1.0 - eta;
  const int tasks = sched.tasks();
  Cor1Approx out;
  out.weights.resize(tasks);
  for (int t = 1; t <= tasks; ++t)
    out.weights[t - 1] = std::pow(etabar, static_cast<double>(m1) * (tasks - t));
  out.error_bound = std::pow(etabar, static_cast<double>(m1)) /
                    (1.0 - std::pow(etabar, static_cast<double>(m1) * tasks));
  return out;
}

// Current-task proportion that balances the weights, to first order.
inline double cor2_balanced_r(int tasks) {
  if (tasks < 2) throw std::invalid_argument("cor2_balanced_r: need at least 2 tasks");
  return 1.0 / tasks;
}

// The exact balance point for constant eta and equal segments,
// r* = 1 / (T - etabar^{m_1} (T - 1)). All adjacent weight differences
// vanish at r*, so the closed-form weights are uniform there.
inline double cor2_balanced_r_exact(double etabar, long m1, int tasks) {
  if (tasks < 2)
    throw std::invalid_argument("cor2_balanced_r_exact: need at least 2 tasks");
  if (etabar <= 0.0 || etabar >= 1.0)
    throw std::invalid_argument("cor2_balanced_r_exact: etabar must be in (0,1)");
  return 1.0 / (tasks - std::pow(etabar, static_cast<double>(m1)) * (tasks - 1));
}

inline double weight_spread(const TaskWeights& w) {
  if (w.weights.empty()) throw std::invalid_argument("weight_spread: empty weights");
  double lo = w.weights[0], hi = w.weights[0];
  for (double v : w.weights) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return hi - lo;
}

// --- schedule builders -----------------------------------------------------

inline std::vector<long> equal_boundaries(int tasks, long per_task) {
  if (tasks < 1 || per_task < 1)
    throw std::invalid_argument("equal_boundaries: counts must be >= 1");
  std::vector<long> b(tasks);
  for (int t = 0; t < tasks; ++t) b[t] = static_cast<long>(t + 1) * per_task;
  return b;
}

// Batch i (1-based) receives the i-th value of the momentum recurrence,
// with the recurrence seed eta_0 = eta_tilde^kappa not applied to any batch.
// Keeps every applied eta inside (0,1) as the closed form requires.
inline BatchSchedule make_schedule(ScheduleKind kind, double eta_tilde, double kappa,
                                   std::vector<long> boundaries,
                                   std::function<double(long)> r_fn) {
  BatchSchedule s;
  s.boundaries = std::move(boundaries);
  s.validate();
  const long m = s.total_batches();
  auto table = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m) + 1, 0.0);
  switch (kind) {
    case ScheduleKind::Ema:
      for (long i = 1; i <= m; ++i) (*table)[i] = eta_tilde;
      break;
    case ScheduleKind::Cma:
      for (long i = 1; i <= m; ++i) (*table)[i] = 1.0 / (1.0 + static_cast<double>(i));
      break;
    case ScheduleKind::AdaB2n: {
      if (kappa == 0.0) {
        for (long i = 1; i <= m; ++i) (*table)[i] = 1.0 / (1.0 + static_cast<double>(i));
      } else if (kappa == 1.0) {
        for (long i = 1; i <= m; ++i) (*table)[i] = eta_tilde;
      } else {
        double prev = std::pow(eta_tilde, kappa);
        const double decay = std::pow(1.0 - eta_tilde, kappa);
        for (long i = 1; i <= m; ++i) {
          prev = prev / (prev + decay);
          (*table)[i] = prev;
        }
      }
      break;
    }
  }
  s.eta = [table](long i) { return (*table)[static_cast<std::size_t>(i)]; };
  s.r = std::move(r_fn);
  return s;
}

inline BatchSchedule make_schedule(ScheduleKind kind, double eta_tilde, double kappa,
                                   std::vector<long> boundaries, double r_const) {
  return make_schedule(kind, eta_tilde, kappa, std::move(boundaries),
                       [r_const](long) { return r_const; });
}

// r = 1 everywhere except the final task's segment.
inline std::function<double(long)> replay_in_last_segment(std::vector<long> boundaries,
                                                          double r_last) {
  const long last_start =
      boundaries.size() < 2 ? 1 : boundaries[boundaries.size() - 2] + 1;
  return [last_start, r_last](long i) { return i >= last_start ? r_last : 1.0; };
}

}  // namespace adabn
