#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "adabn/momentum.hpp"
#include "adabn/norm_stats.hpp"
#include "adabn/tensor.hpp"

namespace adabn {

enum class NormMode { Bn, Cn, AdaB2n };

// Learnable log-concentration, one scalar per seen task and shared across
// channels. phi = exp(psi) stays strictly positive; psi is clamped before
// exponentiation so the sum of concentrations stays finite.
struct Concentration {
  static constexpr double kPsiClamp = 20.0;

  std::vector<double> psi;

  int tasks() const { return static_cast<int>(psi.size()); }

  // Grows by zeros until task ids [0, count) are covered.
  void ensure(int count) {
    if (count > tasks()) psi.resize(count, 0.0);
  }

  double phi(int task) const {
    return std::exp(std::clamp(psi[task], -kPsiClamp, kPsiClamp));
  }

  // d phi / d psi; zero at the clamp boundary.
  double dphi(int task) const {
    if (psi[task] <= -kPsiClamp || psi[task] >= kPsiClamp) return 0.0;
    return phi(task);
  }
};

// Per-task view of one batch: the distinct task ids present (ascending),
// their sample counts and per-channel statistics, and each sample's slot.
struct TaskSlices {
  std::vector<int> ids;
  std::vector<int> counts;
  std::vector<Stats> stats;
  std::vector<int> slot_of_sample;

  int present() const { return static_cast<int>(ids.size()); }
};

inline TaskSlices task_conditional_stats(const Tensor3& a,
                                         const std::vector<int>& tasks) {
  if (static_cast<int>(tasks.size()) != a.n)
    throw std::invalid_argument("task_conditional_stats: one task id per sample");
  TaskSlices out;
  std::map<int, int> slot;
  for (int t : tasks) {
    if (t < 0) throw std::invalid_argument("task_conditional_stats: task ids must be >= 0");
    slot.emplace(t, 0);
  }
  int next = 0;
  for (auto& [id, s] : slot) {
    s = next++;
    out.ids.push_back(id);
  }
  out.counts.assign(out.ids.size(), 0);
  out.slot_of_sample.resize(a.n);
  for (int n = 0; n < a.n; ++n) {
    out.slot_of_sample[n] = slot[tasks[n]];
    ++out.counts[out.slot_of_sample[n]];
  }
  // Two-pass per-task statistics, accumulated in batch order so a
  // single-task batch reproduces bn_stats bit for bit.
  out.stats.assign(out.ids.size(), Stats::zeros(a.c));
  for (int s = 0; s < out.present(); ++s) {
    Stats& st = out.stats[s];
    const double inv = 1.0 / (static_cast<double>(out.counts[s]) * a.d);
    for (int c = 0; c < a.c; ++c) {
      double sum = 0.0;
      for (int n = 0; n < a.n; ++n) {
        if (out.slot_of_sample[n] != s) continue;
        for (int d = 0; d < a.d; ++d) sum += a.at(n, c, d);
      }
      const double mu = sum * inv;
      double sq = 0.0;
      for (int n = 0; n < a.n; ++n) {
        if (out.slot_of_sample[n] != s) continue;
        for (int d = 0; d < a.d; ++d) {
          const double diff = a.at(n, c, d) - mu;
          sq += diff * diff;
        }
      }
      st.mean[c] = mu;
      st.var[c] = sq * inv;
    }
  }
  return out;
}

// Closed-form posterior task weights (phi_t + N_t) / (phibar + N), with the
// concentration total restricted to the tasks present in the batch so the
// weights sum to one. With phi -> 0 this is the empirical N_t / N.
inline std::vector<double> dirichlet_weights(const Concentration& conc,
                                             const std::vector<int>& present_ids,
                                             const std::vector<int>& counts,
                                             int batch_n) {
  if (batch_n <= 0) throw std::invalid_argument("dirichlet_weights: empty batch");
  if (present_ids.size() != counts.size())
    throw std::invalid_argument("dirichlet_weights: ids/counts mismatch");
  int total = 0;
  for (int c : counts) total += c;
  if (total != batch_n)
    throw std::invalid_argument("dirichlet_weights: counts must sum to the batch size");
  double phibar = 0.0;
  for (int id : present_ids) {
    if (id >= conc.tasks())
      throw std::logic_error("dirichlet_weights: unseen task id; grow the concentration first");
    phibar += conc.phi(id);
  }
  std::vector<double> w(present_ids.size(), 0.0);
  for (std::size_t i = 0; i < present_ids.size(); ++i)
    w[i] = (conc.phi(present_ids[i]) + counts[i]) / (phibar + batch_n);
  return w;
}

// Everything the backward pass needs from one training forward.
struct TrainForward {
  Tensor3 out;
  Tensor3 a_prime;
  double l_ada = 0.0;

  NormMode mode = NormMode::Bn;
  Tensor3 input;          // the tensor the batch statistics were taken from
  TaskSlices slices;
  std::vector<double> weights;
  Stats mixture;          // weighted per-task statistics actually used
  Stats target;           // alignment target, treated as constant
  double phibar_present = 0.0;

  // Dynamics bookkeeping, filled only by the stateful training forward.
  double batch_stats_norm = 0.0;
  double pop_stats_norm = 0.0;
  double eta = 0.0;

  // Group-norm stage, CN only.
  Tensor3 cn_raw;
  GroupStats cn_group;
};

struct LayerGrads {
  Tensor3 d_input;
  std::vector<double> d_gamma;
  std::vector<double> d_beta;
  std::vector<double> d_psi;
};

// Cosine similarity of two tensors viewed as flat vectors; zero if either
// has zero norm.
inline double gradient_similarity(const Tensor3& d, const Tensor3& a_prime) {
  if (!d.same_shape(a_prime))
    throw std::invalid_argument("gradient_similarity: shape mismatch");
  double dot = 0.0, nd = 0.0, na = 0.0;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    dot += d.data[i] * a_prime.data[i];
    nd += d.data[i] * d.data[i];
    na += a_prime.data[i] * a_prime.data[i];
  }
  if (nd == 0.0 || na == 0.0) return 0.0;
  return dot / (std::sqrt(nd) * std::sqrt(na));
}

// One normalization layer in BN, CN or adaptive-balance mode. Training
// forwards advance the momentum schedule and population statistics exactly
// once per batch; evaluation forwards are pure.
class NormLayer {
 public:
  NormLayer(NormMode mode, int channels, ScheduleKind sched_kind,
            double eta_tilde = 0.1, double kappa = 0.7, double eps = 1e-5,
            int groups = 32)
      : mode_(mode),
        channels_(channels),
        eps_(eps),
        groups_(groups),
        affine_(AffineParams::identity(channels)),
        pop_(channels),
        sched_(sched_kind, eta_tilde, kappa) {
    if (channels < 1) throw std::invalid_argument("NormLayer: channels must be >= 1");
    if (eps <= 0.0) throw std::invalid_argument("NormLayer: eps must be > 0");
    if (mode == NormMode::Cn && (groups < 1 || groups > channels || channels % groups != 0))
      throw std::invalid_argument("NormLayer: invalid group count for CN");
  }

  NormMode mode() const { return mode_; }
  int channels() const { return channels_; }
  double eps() const { return eps_; }
  int groups() const { return groups_; }

  AffineParams& affine_params() { return affine_; }
  const AffineParams& affine_params() const { return affine_; }
  Concentration& concentration() { return conc_; }
  const Concentration& concentration() const { return conc_; }
  const PopulationStats& population() const { return pop_; }
  PopulationStats& population() { return pop_; }
  const MomentumSchedule& schedule() const { return sched_; }

  // Whether the alignment loss contributes to the input gradient as well as
  // to psi. On by default; off restricts it to the concentration path.
  bool lada_grads_to_input = true;

  void observe_tasks(const std::vector<int>& tasks) {
    int max_id = -1;
    for (int t : tasks) {
      if (t < 0) throw std::invalid_argument("observe_tasks: task ids must be >= 0");
      max_id = std::max(max_id, t);
    }
    conc_.ensure(max_id + 1);
  }

  // Training forward: advances the schedule, folds this batch's full
  // statistics into the population, then normalizes against the
  // batch-internal (mode-dependent) statistics. Returns the forward cache.
  TrainForward forward_train(const Tensor3& a, const std::vector<int>& tasks) {
    if (a.c != channels_) throw std::invalid_argument("forward_train: channel mismatch");
    observe_tasks(tasks);
    if (mode_ == NormMode::Cn) {
      const GroupStats gs = gn_stats(a, groups_);
      const Tensor3 gnout = gn_normalize(a, gs, eps_);
      const Stats batch = bn_stats(gnout);
      const double eta = sched_.next();
      pop_.update(batch, eta);
      TrainForward r = forward_bn_like(gnout, tasks, pop_.stats());
      r.mode = NormMode::Cn;
      r.cn_raw = a;
      r.cn_group = gs;
      r.batch_stats_norm = batch.norm();
      r.pop_stats_norm = pop_.stats().norm();
      r.eta = eta;
      return r;
    }
    const Stats batch = bn_stats(a);
    const double eta = sched_.next();
    pop_.update(batch, eta);
    TrainForward r = mode_ == NormMode::Bn ? forward_bn_like(a, tasks, pop_.stats())
                                           : forward_adaptive(a, tasks, pop_.stats());
    r.batch_stats_norm = batch.norm();
    r.pop_stats_norm = pop_.stats().norm();
    r.eta = eta;
    return r;
  }

  // Same computation with an explicit alignment target and no state
  // mutation. Task ids must already be observed.
  TrainForward forward_train_frozen(const Tensor3& a, const std::vector<int>& tasks,
                                    const Stats& target) const {
    if (a.c != channels_) throw std::invalid_argument("forward_train_frozen: channel mismatch");
    if (mode_ == NormMode::Cn) {
      const GroupStats gs = gn_stats(a, groups_);
      const Tensor3 gnout = gn_normalize(a, gs, eps_);
      TrainForward r = forward_bn_like(gnout, tasks, target);
      r.mode = NormMode::Cn;
      r.cn_raw = a;
      r.cn_group = gs;
      return r;
    }
    return mode_ == NormMode::Bn ? forward_bn_like(a, tasks, target)
                                 : forward_adaptive(a, tasks, target);
  }

  // Evaluation forward: population statistics only, no mutation.
  Tensor3 forward_eval(const Tensor3& a) const {
    if (!pop_.initialized())
      throw std::logic_error("forward_eval: population statistics not initialized");
    if (mode_ == NormMode::Cn)
      return affine(normalize(gn_normalize(a, groups_, eps_), pop_.stats(), eps_), affine_);
    return affine(normalize(a, pop_.stats(), eps_), affine_);
  }

  // Analytic gradients of (upstream loss + lambda * l_ada) with the
  // alignment target held constant.
  LayerGrads backward(const TrainForward& cache, const Tensor3& d_out,
                      double lambda) const {
    if (!d_out.same_shape(cache.out))
      throw std::logic_error("backward: upstream gradient shape mismatch");
    const Tensor3& x = cache.input;
    const int nC = x.c;
    const double dcount = static_cast<double>(x.d);

    LayerGrads g;
    g.d_gamma.assign(nC, 0.0);
    g.d_beta.assign(nC, 0.0);
    g.d_psi.assign(conc_.tasks(), 0.0);

    // Affine stage.
    Tensor3 dap(x.n, x.c, x.d, 0.0);
    for (int c = 0; c < nC; ++c) {
      double dg = 0.0, db = 0.0;
      for (int n = 0; n < x.n; ++n)
        for (int d = 0; d < x.d; ++d) {
          const double go = d_out.at(n, c, d);
          dg += go * cache.a_prime.at(n, c, d);
          db += go;
          dap.at(n, c, d) = go * affine_.gamma[c];
        }
      g.d_gamma[c] = dg;
      g.d_beta[c] = db;
    }

    // Mixture-statistics stage.
    const Stats& mix = cache.mixture;
    std::vector<double> inv_std(nC), dM_in(nC), dV_in(nC), dM_psi(nC), dV_psi(nC);
    const bool adaptive = cache.mode == NormMode::AdaB2n;
    for (int c = 0; c < nC; ++c) {
      const double vareps = mix.var[c] + eps_;
      inv_std[c] = 1.0 / std::sqrt(vareps);
      double G = 0.0, H = 0.0;
      for (int n = 0; n < x.n; ++n)
        for (int d = 0; d < x.d; ++d) {
          G += dap.at(n, c, d);
          H += dap.at(n, c, d) * cache.a_prime.at(n, c, d);
        }
      const double dM_up = -G * inv_std[c];
      const double dV_up = -0.5 * H / vareps;
      const double dM_ada = adaptive ? 2.0 * lambda * (mix.mean[c] - cache.target.mean[c]) : 0.0;
      const double dV_ada = adaptive ? 2.0 * lambda * (mix.var[c] - cache.target.var[c]) : 0.0;
      dM_psi[c] = dM_up + dM_ada;
      dV_psi[c] = dV_up + dV_ada;
      dM_in[c] = dM_up + (lada_grads_to_input ? dM_ada : 0.0);
      dV_in[c] = dV_up + (lada_grads_to_input ? dV_ada : 0.0);
    }

    // Input gradient through the direct path and through the per-task
    // statistics of the sample's own slice.
    Tensor3 dx(x.n, x.c, x.d, 0.0);
    for (int n = 0; n < x.n; ++n) {
      const int s = cache.slices.slot_of_sample[n];
      const double w = cache.weights[s];
      const double per = w / (static_cast<double>(cache.slices.counts[s]) * dcount);
      for (int c = 0; c < nC; ++c) {
        const double mu_s = cache.slices.stats[s].mean[c];
        for (int d = 0; d < x.d; ++d) {
          dx.at(n, c, d) = dap.at(n, c, d) * inv_std[c] +
                           per * (dM_in[c] + 2.0 * dV_in[c] * (x.at(n, c, d) - mu_s));
        }
      }
    }

    // Concentration gradient through the weight simplex.
    if (adaptive && cache.slices.present() > 0) {
      const int present = cache.slices.present();
      std::vector<double> K(present, 0.0);
      double kbar = 0.0;
      for (int s = 0; s < present; ++s) {
        double k = 0.0;
        for (int c = 0; c < nC; ++c)
          k += dM_psi[c] * cache.slices.stats[s].mean[c] +
               dV_psi[c] * cache.slices.stats[s].var[c];
        K[s] = k;
        kbar += cache.weights[s] * k;
      }
      const double denom = cache.phibar_present + x.n;
      for (int s = 0; s < present; ++s) {
        const int id = cache.slices.ids[s];
        g.d_psi[id] = conc_.dphi(id) * (K[s] - kbar) / denom;
      }
    }

    if (cache.mode != NormMode::Cn) {
      g.d_input = std::move(dx);
      return g;
    }

    // Group-normalization stage: unit affine, per-sample per-group.
    const Tensor3& raw = cache.cn_raw;
    const GroupStats& gs = cache.cn_group;
    const int k = raw.c / gs.groups;
    const double slice = static_cast<double>(k) * raw.d;
    Tensor3 draw(raw.n, raw.c, raw.d, 0.0);
    for (int n = 0; n < raw.n; ++n)
      for (int grp = 0; grp < gs.groups; ++grp) {
        const double s = std::sqrt(gs.var_at(n, grp) + eps_);
        double mdx = 0.0, mdxx = 0.0;
        for (int j = 0; j < k; ++j)
          for (int d = 0; d < raw.d; ++d) {
            const double gd = dx.at(n, grp * k + j, d);
            mdx += gd;
            mdxx += gd * cache.input.at(n, grp * k + j, d);
          }
        mdx /= slice;
        mdxx /= slice;
        for (int j = 0; j < k; ++j)
          for (int d = 0; d < raw.d; ++d) {
            const double gd = dx.at(n, grp * k + j, d);
            const double xhat = cache.input.at(n, grp * k + j, d);
            draw.at(n, grp * k + j, d) = (gd - mdx - xhat * mdxx) / s;
          }
      }
    g.d_input = std::move(draw);
    return g;
  }

 private:
  // Plain batch normalization of `a`; also the BN stage of CN.
  TrainForward forward_bn_like(const Tensor3& a, const std::vector<int>& tasks,
                               const Stats& target) const {
    TrainForward r;
    r.mode = NormMode::Bn;
    r.input = a;
    r.mixture = bn_stats(a);
    r.target = target;
    r.a_prime = normalize(a, r.mixture, eps_);
    r.out = affine(r.a_prime, affine_);
    // Single pseudo-slice so the backward pass is mode-uniform.
    r.slices.ids = {tasks.empty() ? 0 : tasks[0]};
    r.slices.counts = {a.n};
    r.slices.stats = {r.mixture};
    r.slices.slot_of_sample.assign(a.n, 0);
    r.weights = {1.0};
    r.l_ada = 0.0;
    return r;
  }

  // Dirichlet-weighted per-task statistics, conditional-expectation
  // normalization and the alignment loss.
  TrainForward forward_adaptive(const Tensor3& a, const std::vector<int>& tasks,
                                const Stats& target) const {
    TrainForward r;
    r.mode = NormMode::AdaB2n;
    r.input = a;
    r.target = target;
    r.slices = task_conditional_stats(a, tasks);
    r.weights = dirichlet_weights(conc_, r.slices.ids, r.slices.counts, a.n);
    r.phibar_present = 0.0;
    for (int id : r.slices.ids) r.phibar_present += conc_.phi(id);

    r.mixture = Stats::zeros(a.c);
    for (int s = 0; s < r.slices.present(); ++s)
      for (int c = 0; c < a.c; ++c) {
        r.mixture.mean[c] += r.weights[s] * r.slices.stats[s].mean[c];
        r.mixture.var[c] += r.weights[s] * r.slices.stats[s].var[c];
      }

    r.a_prime = normalize(a, r.mixture, eps_);
    r.out = affine(r.a_prime, affine_);

    double l = 0.0;
    for (int c = 0; c < a.c; ++c) {
      const double dm = r.mixture.mean[c] - target.mean[c];
      const double dv = r.mixture.var[c] - target.var[c];
      l += dm * dm + dv * dv;
    }
    r.l_ada = l;
    return r;
  }

  NormMode mode_;
  int channels_;
  double eps_;
  int groups_;
  AffineParams affine_;
  Concentration conc_;
  PopulationStats pop_;
  MomentumSchedule sched_;
};

// Group-normalize (unit affine) then batch-normalize through the layer's
// standard machinery.
inline TrainForward cn_forward(NormLayer& layer, const Tensor3& a,
                               const std::vector<int>& tasks) {
  if (layer.mode() != NormMode::Cn)
    throw std::invalid_argument("cn_forward: layer is not in CN mode");
  return layer.forward_train(a, tasks);
}

}  // namespace adabn
