#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "adabn/norm_layer.hpp"

namespace adabn {

struct Sample {
  std::vector<double> x;
  int label = 0;
  int task = 0;
};

struct TaskData {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// A split benchmark: class label sets of distinct tasks are disjoint,
// task t owning labels [t * classes_per_task, (t+1) * classes_per_task).
struct TaskStream {
  std::vector<TaskData> tasks;
  int classes_per_task = 0;
  int dim = 0;

  int task_count() const { return static_cast<int>(tasks.size()); }
  int num_classes() const { return task_count() * classes_per_task; }
};

// Isotropic Gaussian blobs, one per class, with each task's centers pushed
// task_drift * t along a per-task random direction so boundaries shift the
// input statistics. Equal-sized train and test splits.
inline TaskStream make_gaussian_stream(Rng& rng, int tasks, int classes_per_task,
                                       int dim, int n_per_class, double mean_scale,
                                       double task_drift) {
  if (tasks < 1 || classes_per_task < 1 || dim < 1 || n_per_class < 1)
    throw std::invalid_argument("make_gaussian_stream: all counts must be >= 1");
  TaskStream stream;
  stream.classes_per_task = classes_per_task;
  stream.dim = dim;
  stream.tasks.resize(tasks);
  for (int t = 0; t < tasks; ++t) {
    std::vector<double> drift(dim, 0.0);
    double norm = 0.0;
    for (double& v : drift) {
      v = rng.next_gaussian();
      norm += v * v;
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (double& v : drift) v = v / norm * task_drift * t;

    for (int k = 0; k < classes_per_task; ++k) {
      const int label = t * classes_per_task + k;
      std::vector<double> center(dim, 0.0);
      for (int j = 0; j < dim; ++j)
        center[j] = mean_scale * rng.next_gaussian() + drift[j];
      auto draw = [&](std::vector<Sample>& sink) {
        for (int i = 0; i < n_per_class; ++i) {
          Sample s;
          s.label = label;
          s.task = t;
          s.x.resize(dim);
          for (int j = 0; j < dim; ++j) s.x[j] = center[j] + rng.next_gaussian();
          sink.push_back(std::move(s));
        }
      };
      draw(stream.tasks[t].train);
      draw(stream.tasks[t].test);
    }
  }
  return stream;
}

// Benchmark-style preprocessing: per-dimension z-score with statistics taken
// over the union of all training splits, applied to train and test alike.
inline void standardize_stream(TaskStream& stream) {
  std::vector<double> mu(stream.dim, 0.0), sd(stream.dim, 0.0);
  long count = 0;
  for (const TaskData& td : stream.tasks)
    for (const Sample& s : td.train) {
      for (int j = 0; j < stream.dim; ++j) mu[j] += s.x[j];
      ++count;
    }
  if (count == 0) throw std::invalid_argument("standardize_stream: empty stream");
  for (double& m : mu) m /= count;
  for (const TaskData& td : stream.tasks)
    for (const Sample& s : td.train)
      for (int j = 0; j < stream.dim; ++j) {
        const double d = s.x[j] - mu[j];
        sd[j] += d * d;
      }
  for (double& v : sd) v = std::sqrt(v / count) + 1e-12;
  for (TaskData& td : stream.tasks) {
    for (Sample& s : td.train)
      for (int j = 0; j < stream.dim; ++j) s.x[j] = (s.x[j] - mu[j]) / sd[j];
    for (Sample& s : td.test)
      for (int j = 0; j < stream.dim; ++j) s.x[j] = (s.x[j] - mu[j]) / sd[j];
  }
}

// All training data as one task (labels kept global): the joint-training
// reference stream.
inline TaskStream merge_stream(const TaskStream& stream) {
  TaskStream merged;
  merged.classes_per_task = stream.num_classes();
  merged.dim = stream.dim;
  merged.tasks.resize(1);
  for (const TaskData& td : stream.tasks) {
    for (Sample s : td.train) {
      s.task = 0;
      merged.tasks[0].train.push_back(std::move(s));
    }
    for (Sample s : td.test) {
      s.task = 0;
      merged.tasks[0].test.push_back(std::move(s));
    }
  }
  return merged;
}

// Bounded sample store. Reservoir keeps each offered item resident with
// probability capacity/seen; Ring keeps per-class FIFO slots whose counts
// differ by at most one once every class saturates.
class MemoryBuffer {
 public:
  enum class Policy { Reservoir, Ring };

  MemoryBuffer(Policy policy, int capacity) : policy_(policy), capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("MemoryBuffer: capacity must be >= 1");
  }

  Policy policy() const { return policy_; }
  int capacity() const { return capacity_; }
  long seen() const { return seen_; }
  int size() const { return static_cast<int>(entries_.size()); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Sample>& entries() const { return entries_; }

  void offer(const Sample& item, Rng& rng) {
    ++seen_;
    if (policy_ == Policy::Reservoir) {
      if (size() < capacity_) {
        entries_.push_back(item);
      } else {
        const std::uint64_t j = rng.next_below(static_cast<std::uint64_t>(seen_));
        if (j < static_cast<std::uint64_t>(capacity_)) entries_[j] = item;
      }
      return;
    }
    // Ring: evict the oldest sample of the most-over-represented class.
    if (size() < capacity_) {
      entries_.push_back(item);
      return;
    }
    std::map<int, int> counts;
    for (const Sample& s : entries_) ++counts[s.label];
    int victim_class = item.label;
    int victim_count = counts.count(item.label) ? counts[item.label] : 0;
    for (const auto& [cls, cnt] : counts)
      if (cnt > victim_count) {
        victim_class = cls;
        victim_count = cnt;
      }
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].label == victim_class) {
        entries_.erase(entries_.begin() + i);  // oldest of that class
        break;
      }
    entries_.push_back(item);
  }

 private:
  Policy policy_;
  int capacity_;
  long seen_ = 0;
  std::vector<Sample> entries_;
};

struct TaskBatch {
  Tensor3 x;
  std::vector<int> labels;
  std::vector<int> tasks;
  int n_cur = 0;
  int n_replay = 0;
  double r = 1.0;
};

namespace detail {

inline Tensor3 pack(const std::vector<const Sample*>& samples, int dim) {
  Tensor3 x(static_cast<int>(samples.size()), dim, 1, 0.0);
  for (std::size_t n = 0; n < samples.size(); ++n)
    for (int j = 0; j < dim; ++j) x.at(static_cast<int>(n), j, 0) = samples[n]->x[j];
  return x;
}

}  // namespace detail

// n_cur uniformly drawn current-task samples plus n_replay buffer samples,
// task-balanced across the tasks resident in the buffer where counts allow
// (without replacement; with replacement once the buffer is smaller than the
// request). An empty buffer falls back to a pure current-task batch.
inline TaskBatch sample_batch(const TaskStream& stream, int task,
                              const MemoryBuffer& buf, Rng& rng, int n_cur,
                              int n_replay) {
  if (task < 0 || task >= stream.task_count())
    throw std::invalid_argument("sample_batch: task out of range");
  if (n_cur < 1) throw std::invalid_argument("sample_batch: n_cur must be >= 1");
  const std::vector<Sample>& pool = stream.tasks[task].train;

  std::vector<const Sample*> picked;
  auto draw_current = [&](int k) {
    for (int i = 0; i < k; ++i)
      picked.push_back(&pool[rng.next_below(pool.size())]);
  };
  draw_current(n_cur);

  int replay_drawn = 0;
  if (n_replay > 0 && !buf.empty()) {
    const std::vector<Sample>& entries = buf.entries();
    if (buf.size() >= n_replay) {
      // Round-robin over tasks, each draw without replacement.
      std::map<int, std::vector<int>> by_task;
      for (int i = 0; i < buf.size(); ++i) by_task[entries[i].task].push_back(i);
      std::vector<std::vector<int>> groups;
      for (auto& [t, idx] : by_task) groups.push_back(std::move(idx));
      while (replay_drawn < n_replay) {
        bool any = false;
        for (auto& group : groups) {
          if (replay_drawn >= n_replay) break;
          if (group.empty()) continue;
          const std::size_t pos = rng.next_below(group.size());
          picked.push_back(&entries[group[pos]]);
          group[pos] = group.back();
          group.pop_back();
          ++replay_drawn;
          any = true;
        }
        if (!any) break;
      }
    }
    while (replay_drawn < n_replay) {
      picked.push_back(&entries[rng.next_below(entries.size())]);
      ++replay_drawn;
    }
  } else if (n_replay > 0) {
    // No stored past yet: keep the batch size by topping up with current.
    draw_current(n_replay);
  }

  TaskBatch batch;
  batch.x = detail::pack(picked, stream.dim);
  batch.labels.reserve(picked.size());
  batch.tasks.reserve(picked.size());
  for (const Sample* s : picked) {
    batch.labels.push_back(s->label);
    batch.tasks.push_back(s->task);
  }
  batch.n_cur = static_cast<int>(picked.size()) - replay_drawn;
  batch.n_replay = replay_drawn;
  batch.r = static_cast<double>(batch.n_cur) / picked.size();
  return batch;
}

// --- tiny classifier --------------------------------------------------------

struct Dense {
  int in = 0, out = 0;
  std::vector<double> w;  // [i * out + j]
  std::vector<double> b;

  static Dense init(Rng& rng, int in, int out) {
    Dense d;
    d.in = in;
    d.out = out;
    d.w.resize(static_cast<std::size_t>(in) * out);
    d.b.assign(out, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : d.w) v = scale * rng.next_gaussian();
    return d;
  }

  Tensor3 forward(const Tensor3& x) const {
    Tensor3 y(x.n, out, 1, 0.0);
    for (int n = 0; n < x.n; ++n)
      for (int j = 0; j < out; ++j) {
        double acc = b[j];
        for (int i = 0; i < in; ++i) acc += x.at(n, i, 0) * w[static_cast<std::size_t>(i) * out + j];
        y.at(n, j, 0) = acc;
      }
    return y;
  }

  Tensor3 backward(const Tensor3& x, const Tensor3& d_y, std::vector<double>& dw,
                   std::vector<double>& db) const {
    dw.assign(w.size(), 0.0);
    db.assign(b.size(), 0.0);
    Tensor3 dx(x.n, in, 1, 0.0);
    for (int n = 0; n < x.n; ++n)
      for (int j = 0; j < out; ++j) {
        const double g = d_y.at(n, j, 0);
        db[j] += g;
        for (int i = 0; i < in; ++i) {
          dw[static_cast<std::size_t>(i) * out + j] += x.at(n, i, 0) * g;
          dx.at(n, i, 0) += w[static_cast<std::size_t>(i) * out + j] * g;
        }
      }
    return dx;
  }
};

inline Tensor3 tanh_forward(const Tensor3& x) {
  Tensor3 y = x;
  for (double& v : y.data) v = std::tanh(v);
  return y;
}

inline Tensor3 tanh_backward(const Tensor3& y, const Tensor3& d_y) {
  Tensor3 dx = d_y;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    dx.data[i] *= 1.0 - y.data[i] * y.data[i];
  return dx;
}

struct CeLoss {
  double value = 0.0;
  Tensor3 d_logits;
};

// Mean cross-entropy with a numerically shifted softmax.
inline CeLoss cross_entropy(const Tensor3& logits, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != logits.n)
    throw std::invalid_argument("cross_entropy: one label per sample");
  CeLoss out;
  out.d_logits = Tensor3(logits.n, logits.c, 1, 0.0);
  const double inv_n = 1.0 / logits.n;
  for (int n = 0; n < logits.n; ++n) {
    double hi = logits.at(n, 0, 0);
    for (int c = 1; c < logits.c; ++c) hi = std::max(hi, logits.at(n, c, 0));
    double z = 0.0;
    for (int c = 0; c < logits.c; ++c) z += std::exp(logits.at(n, c, 0) - hi);
    const double logz = std::log(z) + hi;
    out.value += (logz - logits.at(n, labels[n], 0)) * inv_n;
    for (int c = 0; c < logits.c; ++c) {
      const double p = std::exp(logits.at(n, c, 0) - logz);
      out.d_logits.at(n, c, 0) = (p - (c == labels[n] ? 1.0 : 0.0)) * inv_n;
    }
  }
  return out;
}

struct ModelConfig {
  int input_dim = 16;
  int hidden = 32;
  int num_classes = 10;
  NormMode mode = NormMode::Bn;
  ScheduleKind sched_kind = ScheduleKind::Ema;
  double eta_tilde = 0.1;
  double kappa = 0.7;
  double eps = 1e-5;
  int groups = 8;
};

// Two hidden linear layers with a norm layer after each, tanh nonlinearity,
// and a shared linear head over all classes. Backward is hand-written and
// gated by finite differences.
class TinyModel {
 public:
  TinyModel(Rng& rng, const ModelConfig& cfg)
      : cfg_(cfg),
        l1_(Dense::init(rng, cfg.input_dim, cfg.hidden)),
        l2_(Dense::init(rng, cfg.hidden, cfg.hidden)),
        head_(Dense::init(rng, cfg.hidden, cfg.num_classes)),
        n1_(cfg.mode, cfg.hidden, cfg.sched_kind, cfg.eta_tilde, cfg.kappa, cfg.eps, cfg.groups),
        n2_(cfg.mode, cfg.hidden, cfg.sched_kind, cfg.eta_tilde, cfg.kappa, cfg.eps, cfg.groups) {}

  const ModelConfig& config() const { return cfg_; }
  NormLayer& norm1() { return n1_; }
  NormLayer& norm2() { return n2_; }
  const NormLayer& norm1() const { return n1_; }
  const NormLayer& norm2() const { return n2_; }
  Dense& dense1() { return l1_; }
  Dense& dense2() { return l2_; }
  Dense& head() { return head_; }

  struct Forward {
    Tensor3 x, z1, t1, z2, t2, logits;
    TrainForward c1, c2;
    double l_ada = 0.0;
  };

  // Training forward: advances both norm layers' schedules and populations.
  Forward forward_train(const Tensor3& x, const std::vector<int>& tasks) {
    Forward f;
    f.x = x;
    f.z1 = l1_.forward(x);
    f.c1 = n1_.forward_train(f.z1, tasks);
    f.t1 = tanh_forward(f.c1.out);
    f.z2 = l2_.forward(f.t1);
    f.c2 = n2_.forward_train(f.z2, tasks);
    f.t2 = tanh_forward(f.c2.out);
    f.logits = head_.forward(f.t2);
    f.l_ada = f.c1.l_ada + f.c2.l_ada;
    return f;
  }

  // Pure variant against fixed alignment targets; used by gradient checks.
  Forward forward_train_frozen(const Tensor3& x, const std::vector<int>& tasks,
                               const Stats& target1, const Stats& target2) const {
    Forward f;
    f.x = x;
    f.z1 = l1_.forward(x);
    f.c1 = n1_.forward_train_frozen(f.z1, tasks, target1);
    f.t1 = tanh_forward(f.c1.out);
    f.z2 = l2_.forward(f.t1);
    f.c2 = n2_.forward_train_frozen(f.z2, tasks, target2);
    f.t2 = tanh_forward(f.c2.out);
    f.logits = head_.forward(f.t2);
    f.l_ada = f.c1.l_ada + f.c2.l_ada;
    return f;
  }

  struct Grads {
    std::vector<double> w1, b1, w2, b2, wh, bh;
    std::vector<double> gamma1, beta1, psi1, gamma2, beta2, psi2;
    Tensor3 d_norm1_input, d_norm2_input;  // loss gradient at each norm input
    Tensor3 d_input;
  };

  Grads backward(const Forward& f, const Tensor3& d_logits, double lambda) const {
    Grads g;
    const Tensor3 d_t2 = head_.backward(f.t2, d_logits, g.wh, g.bh);
    const Tensor3 d_h2 = tanh_backward(f.t2, d_t2);
    const LayerGrads n2g = n2_.backward(f.c2, d_h2, lambda);
    g.gamma2 = n2g.d_gamma;
    g.beta2 = n2g.d_beta;
    g.psi2 = n2g.d_psi;
    g.d_norm2_input = n2g.d_input;
    const Tensor3 d_t1 = l2_.backward(f.t1, n2g.d_input, g.w2, g.b2);
    const Tensor3 d_h1 = tanh_backward(f.t1, d_t1);
    const LayerGrads n1g = n1_.backward(f.c1, d_h1, lambda);
    g.gamma1 = n1g.d_gamma;
    g.beta1 = n1g.d_beta;
    g.psi1 = n1g.d_psi;
    g.d_norm1_input = n1g.d_input;
    g.d_input = l1_.backward(f.x, n1g.d_input, g.w1, g.b1);
    return g;
  }

  void sgd(const Grads& g, double lr) {
    auto step = [lr](std::vector<double>& p, const std::vector<double>& d) {
      for (std::size_t i = 0; i < p.size() && i < d.size(); ++i) p[i] -= lr * d[i];
    };
    step(l1_.w, g.w1);
    step(l1_.b, g.b1);
    step(l2_.w, g.w2);
    step(l2_.b, g.b2);
    step(head_.w, g.wh);
    step(head_.b, g.bh);
    step(n1_.affine_params().gamma, g.gamma1);
    step(n1_.affine_params().beta, g.beta1);
    step(n1_.concentration().psi, g.psi1);
    step(n2_.affine_params().gamma, g.gamma2);
    step(n2_.affine_params().beta, g.beta2);
    step(n2_.concentration().psi, g.psi2);
  }

  Tensor3 forward_eval(const Tensor3& x) const {
    const Tensor3 t1 = tanh_forward(n1_.forward_eval(l1_.forward(x)));
    const Tensor3 t2 = tanh_forward(n2_.forward_eval(l2_.forward(t1)));
    return head_.forward(t2);
  }

 private:
  ModelConfig cfg_;
  Dense l1_, l2_, head_;
  NormLayer n1_, n2_;
};

// --- evaluation --------------------------------------------------------------

enum class Protocol { TaskIl, ClassIl };

// Accuracy (percent) on each task's test set. Task-IL restricts the argmax
// to the queried task's class block; Class-IL scores the full head.
inline std::vector<double> evaluate_tasks(const TinyModel& model, const TaskStream& stream,
                                          int tasks_seen, Protocol protocol) {
  if (tasks_seen < 1 || tasks_seen > stream.task_count())
    throw std::invalid_argument("evaluate_tasks: tasks_seen out of range");
  std::vector<double> acc(tasks_seen, 0.0);
  for (int t = 0; t < tasks_seen; ++t) {
    const std::vector<Sample>& test = stream.tasks[t].test;
    std::vector<const Sample*> ptrs;
    ptrs.reserve(test.size());
    for (const Sample& s : test) ptrs.push_back(&s);
    const Tensor3 logits = model.forward_eval(detail::pack(ptrs, stream.dim));
    const int lo = protocol == Protocol::TaskIl ? t * stream.classes_per_task : 0;
    const int hi = protocol == Protocol::TaskIl ? (t + 1) * stream.classes_per_task
                                                : logits.c;
    int correct = 0;
    for (int n = 0; n < logits.n; ++n) {
      int best = lo;
      for (int c = lo; c < hi; ++c)
        if (logits.at(n, c, 0) > logits.at(n, best, 0)) best = c;
      if (best == test[n].label) ++correct;
    }
    acc[t] = 100.0 * correct / std::max<std::size_t>(1, test.size());
  }
  return acc;
}

struct EvalReport {
  std::vector<std::vector<double>> per_task_acc;  // row j: after training task j
  double faa = 0.0;
  double forgetting = 0.0;

  void finalize() {
    if (per_task_acc.empty()) return;
    const auto& last = per_task_acc.back();
    double s = 0.0;
    for (double a : last) s += a;
    faa = s / last.size();
    const int tasks = static_cast<int>(per_task_acc.size());
    if (tasks < 2) {
      forgetting = 0.0;
      return;
    }
    double f = 0.0;
    for (int t = 0; t < tasks - 1; ++t) {
      double best = 0.0;
      for (int j = t; j < tasks - 1; ++j)
        best = std::max(best, per_task_acc[j][t]);
      f += best - last[t];
    }
    forgetting = f / (tasks - 1);
  }
};

// --- training loop ------------------------------------------------------------

struct TrainConfig {
  std::uint64_t seed = 1;
  NormMode mode = NormMode::Bn;
  ScheduleKind sched_kind = ScheduleKind::Ema;
  double eta_tilde = 0.1;
  double kappa = 0.7;
  double lambda = 0.0;
  double eps = 1e-5;
  int groups = 8;
  int hidden = 32;
  double lr = 0.05;
  int epochs = 1;
  int batch = 10;     // total batch size, replay included
  int n_replay = 0;
  int capacity = 200;
  MemoryBuffer::Policy policy = MemoryBuffer::Policy::Reservoir;
};

struct DiagRow {
  long step = 0;
  int task = 0;
  int layer = 0;
  double loss = 0.0;
  double grad_similarity = 0.0;
  double grad_magnitude = 0.0;
  double batch_stats_norm = 0.0;
  double pop_stats_norm = 0.0;
  double eta = 0.0;
};

struct TrainResult {
  EvalReport task_il;
  EvalReport class_il;
  std::vector<DiagRow> diagnostics;
  long total_steps = 0;
};

// Raised when the training loss stops being finite; carries the diagnostics
// recorded so far for the dump.
struct NumericalAbort : std::runtime_error {
  NumericalAbort(std::string msg, std::vector<DiagRow> rows)
      : std::runtime_error(std::move(msg)), diagnostics(std::move(rows)) {}
  std::vector<DiagRow> diagnostics;
};

namespace detail {

inline double tensor_norm(const Tensor3& t) {
  double s = 0.0;
  for (double v : t.data) s += v * v;
  return std::sqrt(s);
}

}  // namespace detail

// The full task/epoch/batch loop: sample a mixed batch, forward through the
// normalization layers (advancing their schedules and populations), take one
// SGD step on the cross-entropy plus weighted alignment losses, then store
// the batch's current-task samples in the buffer. Evaluates after every task
// under both protocols. Pure function of (stream, cfg).
inline TrainResult train_continual(const TaskStream& stream, const TrainConfig& cfg) {
  Rng root(cfg.seed);
  Rng rng_init = root.split(1);
  Rng rng_sample = root.split(2);
  Rng rng_buffer = root.split(3);

  ModelConfig mc;
  mc.input_dim = stream.dim;
  mc.hidden = cfg.hidden;
  mc.num_classes = stream.num_classes();
  mc.mode = cfg.mode;
  mc.sched_kind = cfg.sched_kind;
  mc.eta_tilde = cfg.eta_tilde;
  mc.kappa = cfg.kappa;
  mc.eps = cfg.eps;
  mc.groups = cfg.groups;
  TinyModel model(rng_init, mc);
  MemoryBuffer buffer(cfg.policy, cfg.capacity);

  const int n_cur = cfg.batch - cfg.n_replay;
  if (n_cur < 1)
    throw std::invalid_argument("train_continual: batch must exceed n_replay");

  TrainResult result;
  long step = 0;
  for (int t = 0; t < stream.task_count(); ++t) {
    const long per_epoch = static_cast<long>(stream.tasks[t].train.size()) / n_cur;
    const long steps = per_epoch * cfg.epochs;
    for (long s = 0; s < steps; ++s) {
      const TaskBatch batch =
          sample_batch(stream, t, buffer, rng_sample, n_cur, cfg.n_replay);
      TinyModel::Forward f = model.forward_train(batch.x, batch.tasks);
      const CeLoss ce = cross_entropy(f.logits, batch.labels);
      const double loss = ce.value + cfg.lambda * f.l_ada;
      if (!std::isfinite(loss))
        throw NumericalAbort("non-finite loss at step " + std::to_string(step),
                             std::move(result.diagnostics));
      const TinyModel::Grads g = model.backward(f, ce.d_logits, cfg.lambda);
      model.sgd(g, cfg.lr);

      const TrainForward* caches[2] = {&f.c1, &f.c2};
      const Tensor3* norm_grads[2] = {&g.d_norm1_input, &g.d_norm2_input};
      for (int layer = 0; layer < 2; ++layer) {
        DiagRow row;
        row.step = step;
        row.task = t;
        row.layer = layer;
        row.loss = loss;
        row.grad_similarity = gradient_similarity(*norm_grads[layer], caches[layer]->a_prime);
        row.grad_magnitude = detail::tensor_norm(*norm_grads[layer]);
        row.batch_stats_norm = caches[layer]->batch_stats_norm;
        row.pop_stats_norm = caches[layer]->pop_stats_norm;
        row.eta = caches[layer]->eta;
        result.diagnostics.push_back(row);
      }

      // Memory is refreshed after the step so a batch never replays itself.
      for (int i = 0; i < batch.n_cur; ++i) {
        Sample s2;
        s2.label = batch.labels[i];
        s2.task = batch.tasks[i];
        s2.x.resize(stream.dim);
        for (int j = 0; j < stream.dim; ++j) s2.x[j] = batch.x.at(i, j, 0);
        buffer.offer(s2, rng_buffer);
      }
      ++step;
    }
    result.task_il.per_task_acc.push_back(
        evaluate_tasks(model, stream, t + 1, Protocol::TaskIl));
    result.class_il.per_task_acc.push_back(
        evaluate_tasks(model, stream, t + 1, Protocol::ClassIl));
  }
  result.task_il.finalize();
  result.class_il.finalize();
  result.total_steps = step;
  return result;
}

}  // namespace adabn
