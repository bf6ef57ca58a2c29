#pragma once

#include <string>
#include <vector>

#include "adabn/continual.hpp"

namespace adabn {

struct GradCheckGroup {
  std::string name;
  double max_rel = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double tolerance = 1e-5;
  int instances = 0;
  bool passed = true;

  void record(const std::string& name, double rel) {
    for (auto& g : groups)
      if (g.name == name) {
        g.max_rel = std::max(g.max_rel, rel);
        if (g.max_rel > tolerance) passed = false;
        return;
      }
    groups.push_back({name, rel});
    if (rel > tolerance) passed = false;
  }
};

namespace detail {

inline double rel_gap(double analytic, double fd) {
  return std::abs(analytic - fd) /
         std::max({1.0, std::abs(analytic), std::abs(fd)});
}

// Linear readout of the layer output plus the weighted alignment loss.
inline double layer_objective(const NormLayer& layer, const Tensor3& a,
                              const std::vector<int>& tasks, const Stats& target,
                              const Tensor3& readout, double lambda) {
  const TrainForward r = layer.forward_train_frozen(a, tasks, target);
  double s = 0.0;
  for (std::size_t i = 0; i < readout.data.size(); ++i)
    s += readout.data[i] * r.out.data[i];
  return s + lambda * r.l_ada;
}

inline double model_objective(const TinyModel& model, const Tensor3& x,
                              const std::vector<int>& tasks,
                              const std::vector<int>& labels, const Stats& t1,
                              const Stats& t2, double lambda) {
  const TinyModel::Forward f = model.forward_train_frozen(x, tasks, t1, t2);
  return cross_entropy(f.logits, labels).value + lambda * f.l_ada;
}

}  // namespace detail

// Central finite differences against the analytic layer backward across
// randomized small instances of all three modes, with and without the
// alignment term.
inline GradCheckReport gradcheck_layers(std::uint64_t seed, int instances,
                                        double tolerance = 1e-5) {
  const double h = 1e-5;
  Rng rng(seed);
  GradCheckReport report;
  report.tolerance = tolerance;
  report.instances = instances;

  for (int trial = 0; trial < instances; ++trial) {
    const int pick = static_cast<int>(rng.next_below(4));
    const NormMode mode = pick <= 1 ? NormMode::AdaB2n
                                    : (pick == 2 ? NormMode::Bn : NormMode::Cn);
    const double lambda = (mode == NormMode::AdaB2n && pick == 1) ? 0.7 : 0.0;
    const int C = mode == NormMode::Cn ? 2 : 1 + static_cast<int>(rng.next_below(3));
    const int D = 2 + static_cast<int>(rng.next_below(2));
    const int T = mode == NormMode::AdaB2n ? 1 + static_cast<int>(rng.next_below(3)) : 1;
    const int N = std::max(2 * T, 2 + static_cast<int>(rng.next_below(3)));

    std::vector<int> tasks(N);
    for (int n = 0; n < N; ++n) tasks[n] = n % T;

    Tensor3 a = tensor_randn(rng, N, C, D, 0.3, 1.0);
    const Tensor3 readout = tensor_randn(rng, N, C, D, 0.0, 1.0);

    NormLayer layer(mode, C, ScheduleKind::Ema, 0.1, 0.7, 1e-5,
                    mode == NormMode::Cn ? 2 : 32);
    layer.observe_tasks(tasks);
    for (int c = 0; c < C; ++c) {
      layer.affine_params().gamma[c] = 0.5 + rng.next_double();
      layer.affine_params().beta[c] = rng.next_double() - 0.5;
    }
    for (double& p : layer.concentration().psi)
      p = 2.0 * (rng.next_double() - 0.5);

    Stats target = Stats::zeros(C);
    for (int c = 0; c < C; ++c) {
      target.mean[c] = rng.next_double() - 0.5;
      target.var[c] = 0.5 + rng.next_double();
    }

    const TrainForward cache = layer.forward_train_frozen(a, tasks, target);
    const LayerGrads g = layer.backward(cache, readout, lambda);

    auto probe = [&](double& slot, double analytic, const char* name) {
      const double keep = slot;
      slot = keep + h;
      const double fp = detail::layer_objective(layer, a, tasks, target, readout, lambda);
      slot = keep - h;
      const double fm = detail::layer_objective(layer, a, tasks, target, readout, lambda);
      slot = keep;
      report.record(name, detail::rel_gap(analytic, (fp - fm) / (2 * h)));
    };

    for (std::size_t i = 0; i < a.data.size(); ++i)
      probe(a.data[i], g.d_input.data[i], "input");
    for (int c = 0; c < C; ++c) {
      probe(layer.affine_params().gamma[c], g.d_gamma[c], "gamma");
      probe(layer.affine_params().beta[c], g.d_beta[c], "beta");
    }
    for (int t = 0; t < layer.concentration().tasks(); ++t)
      probe(layer.concentration().psi[t], g.d_psi[t], "psi");
  }
  return report;
}

// Finite differences of the whole-model loss (cross-entropy plus weighted
// alignment terms) with respect to every parameter family and the input.
inline GradCheckReport gradcheck_model(std::uint64_t seed, int instances,
                                       double tolerance = 1e-5) {
  const double h = 1e-5;
  Rng rng(seed);
  GradCheckReport report;
  report.tolerance = tolerance;
  report.instances = instances;

  for (int trial = 0; trial < instances; ++trial) {
    const bool adaptive = trial % 2 == 0;
    ModelConfig mc;
    mc.input_dim = 6;
    mc.hidden = 8;
    mc.num_classes = 4;
    mc.mode = adaptive ? NormMode::AdaB2n : NormMode::Bn;
    mc.sched_kind = ScheduleKind::Ema;
    mc.groups = 4;
    const double lambda = adaptive ? 0.5 : 0.0;

    Rng init = rng.split(100 + trial);
    TinyModel model(init, mc);

    const int N = 8;
    std::vector<int> tasks(N), labels(N);
    for (int n = 0; n < N; ++n) {
      tasks[n] = n % 2;
      labels[n] = static_cast<int>(rng.next_below(mc.num_classes));
    }

    // A couple of live steps so populations, schedules and psi are
    // non-trivial before freezing the targets.
    for (int warm = 0; warm < 3; ++warm) {
      const Tensor3 wx = tensor_randn(rng, N, mc.input_dim, 1, 0.0, 1.0);
      TinyModel::Forward f = model.forward_train(wx, tasks);
      const CeLoss ce = cross_entropy(f.logits, labels);
      model.sgd(model.backward(f, ce.d_logits, lambda), 0.05);
    }

    Tensor3 x = tensor_randn(rng, N, mc.input_dim, 1, 0.2, 1.0);
    const Stats t1 = model.norm1().population().stats();
    const Stats t2 = model.norm2().population().stats();

    const TinyModel::Forward f = model.forward_train_frozen(x, tasks, t1, t2);
    const CeLoss ce = cross_entropy(f.logits, labels);
    const TinyModel::Grads g = model.backward(f, ce.d_logits, lambda);

    auto probe = [&](double& slot, double analytic, const char* name) {
      const double keep = slot;
      slot = keep + h;
      const double fp = detail::model_objective(model, x, tasks, labels, t1, t2, lambda);
      slot = keep - h;
      const double fm = detail::model_objective(model, x, tasks, labels, t1, t2, lambda);
      slot = keep;
      report.record(name, detail::rel_gap(analytic, (fp - fm) / (2 * h)));
    };

    auto probe_vec = [&](std::vector<double>& params, const std::vector<double>& grads,
                         const char* name) {
      for (std::size_t i = 0; i < params.size(); ++i) probe(params[i], grads[i], name);
    };

    probe_vec(model.dense1().w, g.w1, "w1");
    probe_vec(model.dense1().b, g.b1, "b1");
    probe_vec(model.dense2().w, g.w2, "w2");
    probe_vec(model.dense2().b, g.b2, "b2");
    probe_vec(model.head().w, g.wh, "wh");
    probe_vec(model.head().b, g.bh, "bh");
    probe_vec(model.norm1().affine_params().gamma, g.gamma1, "gamma");
    probe_vec(model.norm1().affine_params().beta, g.beta1, "beta");
    probe_vec(model.norm2().affine_params().gamma, g.gamma2, "gamma");
    probe_vec(model.norm2().affine_params().beta, g.beta2, "beta");
    if (adaptive) {
      probe_vec(model.norm1().concentration().psi, g.psi1, "psi");
      probe_vec(model.norm2().concentration().psi, g.psi2, "psi");
    }
    for (std::size_t i = 0; i < x.data.size(); ++i)
      probe(x.data[i], g.d_input.data[i], "input");
  }
  return report;
}

}  // namespace adabn
