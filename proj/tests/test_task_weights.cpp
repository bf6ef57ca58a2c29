#include <doctest.h>

#include <cmath>

#include "adabn/task_weights.hpp"
#include "adabn/tensor.hpp"

using namespace adabn;

namespace {

// Random schedule whose replay (if any) is confined to the last segment, the
// family on which the seen-task and total-count replay splits coincide.
BatchSchedule random_coinciding_schedule(Rng& rng, int max_tasks, long max_m) {
  const int tasks = 1 + static_cast<int>(rng.next_below(max_tasks));
  std::vector<long> bounds(tasks);
  long prev = 0;
  for (int t = 0; t < tasks; ++t) {
    const long remaining = max_m - prev - (tasks - 1 - t);
    const long len = 1 + static_cast<long>(rng.next_below(
                             static_cast<std::uint64_t>(std::max<long>(1, remaining / (tasks - t)))));
    prev += len;
    bounds[t] = prev;
  }
  auto eta_table = std::make_shared<std::vector<double>>(bounds.back() + 1, 0.0);
  for (long i = 1; i <= bounds.back(); ++i)
    (*eta_table)[i] = 0.01 + 0.98 * rng.next_double();
  const double r_last = (tasks > 1 && rng.next_double() < 0.7)
                            ? 0.05 + 0.95 * rng.next_double()
                            : 1.0;
  BatchSchedule s;
  s.boundaries = bounds;
  s.eta = [eta_table](long i) { return (*eta_table)[static_cast<std::size_t>(i)]; };
  s.r = replay_in_last_segment(bounds, r_last);
  return s;
}

}  // namespace

TEST_CASE("single task owns all statistics") {
  const auto sched = make_schedule(ScheduleKind::Ema, 0.1, 0.0, {7}, 1.0);
  const TaskWeights closed = weights_closed_form(sched);
  const TaskWeights oracle = weights_oracle(sched);
  REQUIRE(closed.weights.size() == 1);
  CHECK(closed.weights[0] == 1.0);
  CHECK(oracle.weights[0] == 1.0);

  const auto bad = make_schedule(ScheduleKind::Ema, 0.1, 0.0, {7}, 0.5);
  CHECK_THROWS_AS(weights_closed_form(bad), std::invalid_argument);
  CHECK_THROWS_AS(weights_oracle(bad), std::invalid_argument);
}

TEST_CASE("two-task ema weights, frozen from the unrolling") {
  const auto sched = make_schedule(ScheduleKind::Ema, 0.1, 0.0, {5, 10}, 1.0);
  const TaskWeights closed = weights_closed_form(sched);
  const TaskWeights oracle = weights_oracle(sched);
  REQUIRE(closed.weights.size() == 2);
  CHECK(closed.weights[0] == doctest::Approx(0.3712629).epsilon(1e-6));
  CHECK(closed.weights[1] == doctest::Approx(0.6287371).epsilon(1e-6));
  for (int t = 0; t < 2; ++t)
    CHECK(std::abs(closed.weights[t] - oracle.weights[t]) <= 1e-12);

  // Matches the exact constant-eta form as well.
  const auto exact = cor1_exact_weights(sched);
  for (int t = 0; t < 2; ++t)
    CHECK(std::abs(closed.weights[t] - exact[t]) <= 1e-12);
}

TEST_CASE("closed form equals the literal unrolling on random schedules") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int tasks = 1 + static_cast<int>(rng.next_below(6));
    std::vector<long> bounds(tasks);
    long prev = 0;
    for (int t = 0; t < tasks; ++t) {
      prev += 1 + static_cast<long>(rng.next_below(30));
      bounds[t] = prev;
    }
    auto eta_table = std::make_shared<std::vector<double>>(prev + 1, 0.0);
    auto r_table = std::make_shared<std::vector<double>>(prev + 1, 1.0);
    for (long i = 1; i <= prev; ++i) {
      (*eta_table)[i] = 0.02 + 0.96 * rng.next_double();
      (*r_table)[i] = tasks == 1 ? 1.0 : 0.05 + 0.95 * rng.next_double();
    }
    BatchSchedule s;
    s.boundaries = bounds;
    s.eta = [eta_table](long i) { return (*eta_table)[static_cast<std::size_t>(i)]; };
    s.r = [r_table](long i) { return (*r_table)[static_cast<std::size_t>(i)]; };

    const TaskWeights closed = weights_closed_form(s);
    const TaskWeights oracle = weights_oracle(s, ReplaySplit::TotalTasks);
    double sum = 0.0;
    for (int t = 0; t < tasks; ++t) {
      CHECK(std::abs(closed.weights[t] - oracle.weights[t]) <= 1e-12);
      CHECK(closed.weights[t] > 0.0);
      sum += closed.weights[t];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("closed form equals the seen-task unrolling when replay is confined to the last segment") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const BatchSchedule s = random_coinciding_schedule(rng, 6, 120);
    const TaskWeights closed = weights_closed_form(s);
    const TaskWeights oracle = weights_oracle(s, ReplaySplit::SeenTasks);
    for (std::size_t t = 0; t < closed.weights.size(); ++t)
      CHECK(std::abs(closed.weights[t] - oracle.weights[t]) <= 1e-12);
  }
}

TEST_CASE("cma balances exactly when every batch is pure current-task") {
  for (int tasks : {1, 2, 3, 5, 8}) {
    for (long len : {1L, 3L, 7L, 20L}) {
      const auto sched =
          make_schedule(ScheduleKind::Cma, 0.1, 0.0, equal_boundaries(tasks, len), 1.0);
      CHECK(weight_spread(weights_closed_form(sched)) <= 1e-12);
      CHECK(weight_spread(weights_oracle(sched)) <= 1e-12);
    }
  }
}

TEST_CASE("cma with constant replay keeps strictly more mass on older tasks") {
  // Under the total-count replay split, a batch of task g feeds only its
  // g-1 predecessors, so with uniform per-batch mass the oldest task
  // accumulates the most. Frozen from the unrolling: (4/9, 3/9, 2/9).
  const auto sched =
      make_schedule(ScheduleKind::Cma, 0.1, 0.0, equal_boundaries(3, 4), 0.5);
  const TaskWeights closed = weights_closed_form(sched);
  const TaskWeights oracle = weights_oracle(sched, ReplaySplit::TotalTasks);
  CHECK(closed.weights[0] == doctest::Approx(4.0 / 9.0).epsilon(1e-12));
  CHECK(closed.weights[1] == doctest::Approx(3.0 / 9.0).epsilon(1e-12));
  CHECK(closed.weights[2] == doctest::Approx(2.0 / 9.0).epsilon(1e-12));
  for (int t = 0; t < 3; ++t)
    CHECK(std::abs(closed.weights[t] - oracle.weights[t]) <= 1e-12);
}

TEST_CASE("exponential recency approximation and its error bound") {
  const auto sched =
      make_schedule(ScheduleKind::Ema, 0.1, 0.0, equal_boundaries(5, 20), 1.0);
  const auto exact = cor1_exact_weights(sched);
  const TaskWeights oracle = weights_oracle(sched);
  const Cor1Approx approx = cor1_approx(sched);

  for (int t = 0; t < 5; ++t) {
    CHECK(std::abs(exact[t] - oracle.weights[t]) <= 1e-12);
    CHECK(approx.weights[t] ==
          doctest::Approx(std::pow(0.9, 20.0 * (4 - t))).epsilon(1e-12));
    CHECK(std::abs(exact[t] - approx.weights[t]) <= approx.error_bound);
  }

  // Recency: strictly increasing weight toward the latest task.
  for (int t = 1; t < 5; ++t) CHECK(exact[t] > exact[t - 1]);

  const auto uneven = make_schedule(ScheduleKind::Ema, 0.1, 0.0, {5, 12}, 1.0);
  CHECK_THROWS_AS(cor1_approx(uneven), std::invalid_argument);
  const auto replayed =
      make_schedule(ScheduleKind::Ema, 0.1, 0.0, equal_boundaries(2, 5), 0.5);
  CHECK_THROWS_AS(cor1_approx(replayed), std::invalid_argument);
}

TEST_CASE("balanced replay proportion") {
  CHECK(cor2_balanced_r(10) == doctest::Approx(0.1));
  // 1 / (10 - 0.9^20 * 9), evaluated directly.
  CHECK(cor2_balanced_r_exact(0.9, 20, 10) == doctest::Approx(0.1122866).epsilon(1e-6));

  // At the exact balance point every adjacent weight difference vanishes.
  for (int tasks : {2, 5, 10}) {
    for (long m1 : {5L, 20L}) {
      const double eta = 0.1;
      const double r_star = cor2_balanced_r_exact(1.0 - eta, m1, tasks);
      const auto sched = make_schedule(ScheduleKind::Ema, eta, 0.0,
                                       equal_boundaries(tasks, m1), r_star);
      CHECK(weight_spread(weights_closed_form(sched)) <= 1e-12);
    }
  }

  // r = 1/T balances only up to the decay of a full segment.
  const auto near = make_schedule(ScheduleKind::Ema, 0.1, 0.0,
                                  equal_boundaries(10, 20), 0.1);
  CHECK(weight_spread(weights_closed_form(near)) <= std::pow(0.9, 20));
}

TEST_CASE("weight spread basics") {
  TaskWeights uniform{{0.25, 0.25, 0.25, 0.25}, 1.0};
  CHECK(weight_spread(uniform) == 0.0);
  TaskWeights skew{{0.7, 0.3}, 1.0};
  CHECK(weight_spread(skew) == doctest::Approx(0.4));
}

TEST_CASE("momentum-recurrence schedule endpoints reproduce ema and cma weights") {
  const auto bounds = equal_boundaries(4, 15);
  const auto r_fn = replay_in_last_segment(bounds, 0.5);

  const auto ada1 = make_schedule(ScheduleKind::AdaB2n, 0.1, 1.0, bounds, r_fn);
  const auto ema = make_schedule(ScheduleKind::Ema, 0.1, 0.0, bounds, r_fn);
  const TaskWeights w_ada1 = weights_oracle(ada1);
  const TaskWeights w_ema = weights_oracle(ema);

  const auto ada0 = make_schedule(ScheduleKind::AdaB2n, 0.1, 0.0, bounds, r_fn);
  const auto cma = make_schedule(ScheduleKind::Cma, 0.1, 0.0, bounds, r_fn);
  const TaskWeights w_ada0 = weights_oracle(ada0);
  const TaskWeights w_cma = weights_oracle(cma);

  for (int t = 0; t < 4; ++t) {
    CHECK(w_ada1.weights[t] == w_ema.weights[t]);
    CHECK(w_ada0.weights[t] == w_cma.weights[t]);
  }
}

TEST_CASE("schedule validation") {
  BatchSchedule s;
  s.boundaries = {5, 5};
  s.eta = [](long) { return 0.1; };
  s.r = [](long) { return 1.0; };
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  auto bad_eta = make_schedule(ScheduleKind::Ema, 0.1, 0.0, {4}, 1.0);
  bad_eta.eta = [](long) { return 1.0; };
  CHECK_THROWS_AS(weights_closed_form(bad_eta), std::invalid_argument);

  auto bad_r = make_schedule(ScheduleKind::Ema, 0.1, 0.0, {2, 4}, 1.0);
  bad_r.r = [](long) { return 0.0; };
  CHECK_THROWS_AS(weights_closed_form(bad_r), std::invalid_argument);
}
