// Command-line front end: task-weight analyses, normalization-statistics
// dynamics, continual-learning training runs and the gradient-check gate.
// Exit codes: 0 success, 1 configuration error, 2 numerical abort.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "adabn/config.hpp"
#include "adabn/csv.hpp"
#include "adabn/gradcheck.hpp"
#include "adabn/task_weights.hpp"

namespace {

using namespace adabn;

std::string resolve_out_dir(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("ADABN_OUT_DIR"); env && *env) return env;
  return ".";
}

std::string ensure_out_dir(const std::string& configured) {
  const std::string dir = resolve_out_dir(configured);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string mode_name(NormMode m) {
  switch (m) {
    case NormMode::Bn: return "bn";
    case NormMode::Cn: return "cn";
    case NormMode::AdaB2n: return "adab2n";
  }
  return "?";
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd ms;
  if (xs.empty()) return ms;
  for (double x : xs) ms.mean += x;
  ms.mean /= xs.size();
  double sq = 0.0;
  for (double x : xs) sq += (x - ms.mean) * (x - ms.mean);
  ms.stddev = std::sqrt(sq / xs.size());
  return ms;
}

int cmd_weights(const ExperimentConfig& cfg) {
  validate(cfg);
  const std::string dir = ensure_out_dir(cfg.output);
  const ScheduleKind kind = schedule_kind_of(cfg.schedule.kind);
  std::vector<double> kappas = cfg.schedule.kappa_grid;
  if (kappas.empty() || kind != ScheduleKind::AdaB2n) kappas = {cfg.schedule.kappa};

  CsvSink csv(dir + "/weights.csv",
              {"task", "weight_closed", "weight_oracle", "abs_gap", "spread",
               "schedule_kind", "eta_tilde", "kappa", "T", "m1", "r"});
  for (double kappa : kappas) {
    const auto boundaries = equal_boundaries(cfg.schedule.tasks, cfg.schedule.m1);
    const BatchSchedule sched = make_schedule(kind, cfg.schedule.eta_tilde, kappa,
                                              boundaries, cfg.schedule.r);
    const TaskWeights closed = weights_closed_form(sched);
    const TaskWeights oracle = weights_oracle(sched, ReplaySplit::TotalTasks);
    const double spread = weight_spread(closed);
    for (int t = 0; t < cfg.schedule.tasks; ++t) {
      csv.row({csv_num(t + 1), csv_num(closed.weights[t]), csv_num(oracle.weights[t]),
               csv_num(std::abs(closed.weights[t] - oracle.weights[t])), csv_num(spread),
               cfg.schedule.kind, csv_num(cfg.schedule.eta_tilde), csv_num(kappa),
               csv_num(cfg.schedule.tasks), csv_num(cfg.schedule.m1),
               csv_num(cfg.schedule.r)});
    }
  }
  std::cout << "wrote " << dir << "/weights.csv\n";
  return 0;
}

void write_dynamics_rows(CsvSink& csv, const std::string& mode, int jt,
                         std::uint64_t seed, const std::vector<DiagRow>& rows) {
  for (const DiagRow& r : rows)
    csv.row({mode, csv_num(jt), csv_num(static_cast<long>(seed)), csv_num(r.step),
             csv_num(r.task), csv_num(r.layer), csv_num(r.loss),
             csv_num(r.grad_similarity), csv_num(r.grad_magnitude),
             csv_num(r.batch_stats_norm), csv_num(r.pop_stats_norm), csv_num(r.eta)});
}

int cmd_dynamics(const ExperimentConfig& cfg) {
  validate(cfg);
  const std::string dir = ensure_out_dir(cfg.output);
  CsvSink csv(dir + "/dynamics.csv",
              {"mode", "jt", "seed", "step", "task", "layer", "loss",
               "grad_similarity", "grad_magnitude", "batch_stats_norm",
               "pop_stats_norm", "eta"});

  for (std::uint64_t seed : seed_list(cfg)) {
    Rng stream_rng(seed);
    TaskStream stream = make_gaussian_stream(
        stream_rng, cfg.stream.tasks, cfg.stream.classes_per_task, cfg.stream.dim,
        cfg.stream.n_per_class, cfg.stream.mean_scale, cfg.stream.task_drift);
    if (cfg.stream.standardize) standardize_stream(stream);
    const TaskStream joint = merge_stream(stream);

    for (NormMode mode : {NormMode::Bn, NormMode::Cn, NormMode::AdaB2n}) {
      TrainConfig tc = train_config_of(cfg, seed);
      tc.mode = mode;
      tc.sched_kind =
          mode == NormMode::AdaB2n ? schedule_kind_of(cfg.schedule.kind) : ScheduleKind::Ema;
      tc.lambda = mode == NormMode::AdaB2n ? cfg.layer.lambda : 0.0;
      const TrainResult r = train_continual(stream, tc);
      write_dynamics_rows(csv, mode_name(mode), 0, seed, r.diagnostics);
    }

    TrainConfig jt = train_config_of(cfg, seed);
    jt.mode = NormMode::Bn;
    jt.sched_kind = ScheduleKind::Ema;
    jt.lambda = 0.0;
    const TrainResult rj = train_continual(joint, jt);
    write_dynamics_rows(csv, "bn", 1, seed, rj.diagnostics);
  }
  std::cout << "wrote " << dir << "/dynamics.csv\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  validate(cfg);
  const std::string dir = ensure_out_dir(cfg.output);
  CsvSink acc(dir + "/train_accuracy.csv",
              {"seed", "after_task", "task", "protocol", "accuracy"});
  CsvSink summary(dir + "/train_summary.csv",
                  {"seed", "protocol", "faa", "forgetting"});

  std::vector<double> faa_task, faa_class, forget_task, forget_class;
  for (std::uint64_t seed : seed_list(cfg)) {
    Rng stream_rng(seed);
    TaskStream stream = make_gaussian_stream(
        stream_rng, cfg.stream.tasks, cfg.stream.classes_per_task, cfg.stream.dim,
        cfg.stream.n_per_class, cfg.stream.mean_scale, cfg.stream.task_drift);
    if (cfg.stream.standardize) standardize_stream(stream);
    const TrainResult r = train_continual(stream, train_config_of(cfg, seed));

    auto emit = [&](const EvalReport& rep, const char* protocol) {
      for (std::size_t after = 0; after < rep.per_task_acc.size(); ++after)
        for (std::size_t t = 0; t < rep.per_task_acc[after].size(); ++t)
          acc.row({csv_num(static_cast<long>(seed)), csv_num(static_cast<long>(after) + 1),
                   csv_num(static_cast<long>(t) + 1), protocol,
                   csv_num(rep.per_task_acc[after][t])});
      summary.row({csv_num(static_cast<long>(seed)), protocol, csv_num(rep.faa),
                   csv_num(rep.forgetting)});
    };
    emit(r.task_il, "task_il");
    emit(r.class_il, "class_il");
    faa_task.push_back(r.task_il.faa);
    faa_class.push_back(r.class_il.faa);
    forget_task.push_back(r.task_il.forgetting);
    forget_class.push_back(r.class_il.forgetting);
  }

  const MeanStd ft = mean_std(faa_task), fc = mean_std(faa_class);
  const MeanStd gt = mean_std(forget_task), gc = mean_std(forget_class);
  std::cout << "mode=" << cfg.layer.mode << " seeds=" << faa_task.size() << "\n"
            << "  task-il  faa " << ft.mean << " +/- " << ft.stddev << "  forgetting "
            << gt.mean << " +/- " << gt.stddev << "\n"
            << "  class-il faa " << fc.mean << " +/- " << fc.stddev << "  forgetting "
            << gc.mean << " +/- " << gc.stddev << "\n"
            << "wrote " << dir << "/train_accuracy.csv, " << dir
            << "/train_summary.csv\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int instances) {
  const GradCheckReport layers = gradcheck_layers(seed, instances);
  const GradCheckReport model = gradcheck_model(seed + 1, std::max(2, instances / 20));
  bool ok = layers.passed && model.passed;
  std::cout << "layer backward vs central differences (" << layers.instances
            << " instances):\n";
  for (const auto& g : layers.groups)
    std::cout << "  " << g.name << "  max rel err " << csv_num(g.max_rel) << "\n";
  std::cout << "whole-model loss gradient (" << model.instances << " instances):\n";
  for (const auto& g : model.groups)
    std::cout << "  " << g.name << "  max rel err " << csv_num(g.max_rel) << "\n";
  std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << " (tolerance 1e-5)\n";
  return ok ? 0 : 1;
}

int dump_abort(const ExperimentConfig& cfg, const NumericalAbort& abort) {
  const std::string dir = ensure_out_dir(cfg.output);
  const std::string path = dir + "/abort_dump.csv";
  CsvSink csv(path, {"step", "task", "layer", "loss", "grad_similarity",
                     "grad_magnitude", "batch_stats_norm", "pop_stats_norm", "eta"});
  for (const DiagRow& r : abort.diagnostics)
    csv.row({csv_num(r.step), csv_num(r.task), csv_num(r.layer), csv_num(r.loss),
             csv_num(r.grad_similarity), csv_num(r.grad_magnitude),
             csv_num(r.batch_stats_norm), csv_num(r.pop_stats_norm), csv_num(r.eta)});
  std::cerr << "numerical abort: " << abort.what() << "\ndump: " << path << "\n";
  return 2;
}

std::vector<std::uint64_t> parse_seed_csv(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string tok = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!tok.empty()) seeds.push_back(std::stoull(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive-balance batch normalization experiments"};
  app.require_subcommand(1);

  // The config file is applied first so that explicit flags win.
  ExperimentConfig cfg;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") {
      try {
        cfg = load_config(argv[i + 1]);
      } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
      }
    }

  std::string config_path, seeds_csv, out_dir;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--out", out_dir, "output directory (default: $ADABN_OUT_DIR or .)");
  };
  auto add_schedule = [&](CLI::App* sub) {
    sub->add_option("--kind", cfg.schedule.kind, "schedule kind: ema|cma|adab2n");
    sub->add_option("--eta-tilde", cfg.schedule.eta_tilde, "base momentum in (0,1)");
    sub->add_option("--kappa", cfg.schedule.kappa, "balance exponent in [0,1]");
  };
  auto add_run_options = [&](CLI::App* sub) {
    add_schedule(sub);
    sub->add_option("--mode", cfg.layer.mode, "norm layer: bn|cn|adab2n");
    sub->add_option("--eps", cfg.layer.eps, "normalization epsilon");
    sub->add_option("--lambda", cfg.layer.lambda, "alignment loss weight");
    sub->add_option("--groups", cfg.layer.groups, "group count for cn");
    sub->add_option("--seed", cfg.training.seed, "run seed");
    sub->add_option("--seeds", seeds_csv, "comma-separated seed list");
    sub->add_option("--lr", cfg.training.lr, "learning rate");
    sub->add_option("--epochs", cfg.training.epochs, "epochs per task");
    sub->add_option("--batch", cfg.training.batch, "total batch size, replay included");
    sub->add_option("--n-replay", cfg.training.n_replay, "replay samples per batch");
    sub->add_option("--capacity", cfg.training.capacity, "memory buffer capacity");
    sub->add_option("--policy", cfg.training.policy, "buffer policy: reservoir|ring");
    sub->add_option("--hidden", cfg.training.hidden, "hidden width");
    sub->add_option("--tasks", cfg.stream.tasks, "number of stream tasks");
    sub->add_option("--classes-per-task", cfg.stream.classes_per_task, "classes per task");
    sub->add_option("--dim", cfg.stream.dim, "input dimension");
    sub->add_option("--n-per-class", cfg.stream.n_per_class, "train/test samples per class");
    sub->add_option("--task-drift", cfg.stream.task_drift, "per-task center drift");
    sub->add_option("--mean-scale", cfg.stream.mean_scale, "class center scale");
    sub->add_flag("--standardize", cfg.stream.standardize,
                  "z-score inputs with union-of-train statistics");
  };

  CLI::App* weights = app.add_subcommand("weights", "task statistical-weight analysis");
  add_common(weights);
  add_schedule(weights);
  std::string kappa_grid_csv;
  weights->add_option("--T", cfg.schedule.tasks, "task count");
  weights->add_option("--m1", cfg.schedule.m1, "batches per task segment");
  weights->add_option("--r", cfg.schedule.r, "current-task proportion");
  weights->add_option("--kappa-grid", kappa_grid_csv, "comma-separated kappa sweep");

  CLI::App* dynamics =
      app.add_subcommand("dynamics", "per-batch statistics dynamics for bn/cn/adab2n + jt");
  add_common(dynamics);
  add_run_options(dynamics);

  CLI::App* train = app.add_subcommand("train", "continual training run with evaluation");
  add_common(train);
  add_run_options(train);

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient gate");
  std::uint64_t gc_seed = 12345;
  int gc_instances = 100;
  gradcheck->add_option("--seed", gc_seed, "generator seed");
  gradcheck->add_option("--instances", gc_instances, "randomized layer instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (!out_dir.empty()) cfg.output = out_dir;
  if (!seeds_csv.empty()) cfg.training.seeds = parse_seed_csv(seeds_csv);
  if (!kappa_grid_csv.empty()) {
    cfg.schedule.kappa_grid.clear();
    std::size_t pos = 0;
    while (pos < kappa_grid_csv.size()) {
      const std::size_t comma = kappa_grid_csv.find(',', pos);
      const std::string tok =
          kappa_grid_csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
      if (!tok.empty()) cfg.schedule.kappa_grid.push_back(std::stod(tok));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }

  try {
    if (*weights) return cmd_weights(cfg);
    if (*dynamics) return cmd_dynamics(cfg);
    if (*train) return cmd_train(cfg);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_instances);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalAbort& e) {
    return dump_abort(cfg, e);
  }
  return 0;
}
