#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "adabn/continual.hpp"

namespace adabn {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScheduleConfig {
  std::string kind = "ema";
  double eta_tilde = 0.1;
  double kappa = 0.7;
  int tasks = 2;
  long m1 = 5;
  double r = 1.0;
  std::vector<double> kappa_grid;
};

struct LayerConfig {
  std::string mode = "bn";
  double eps = 1e-5;
  double lambda = 0.0;
  int groups = 8;
};

struct TrainingConfig {
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;  // optional seed list; overrides seed
  double lr = 0.05;
  int epochs = 1;
  int batch = 10;
  int n_replay = 0;
  int capacity = 200;
  std::string policy = "reservoir";
  int hidden = 32;
};

struct StreamConfig {
  int tasks = 5;
  int classes_per_task = 2;
  int dim = 16;
  int n_per_class = 100;
  double task_drift = 2.5;
  double mean_scale = 2.0;
  bool standardize = false;
};

struct ExperimentConfig {
  ScheduleConfig schedule;
  LayerConfig layer;
  TrainingConfig training;
  StreamConfig stream;
  std::string output;
};

inline ScheduleKind schedule_kind_of(const std::string& s) {
  if (s == "ema") return ScheduleKind::Ema;
  if (s == "cma") return ScheduleKind::Cma;
  if (s == "adab2n") return ScheduleKind::AdaB2n;
  throw ConfigError("unknown schedule kind: " + s);
}

inline NormMode norm_mode_of(const std::string& s) {
  if (s == "bn") return NormMode::Bn;
  if (s == "cn") return NormMode::Cn;
  if (s == "adab2n") return NormMode::AdaB2n;
  throw ConfigError("unknown layer mode: " + s);
}

inline MemoryBuffer::Policy buffer_policy_of(const std::string& s) {
  if (s == "reservoir") return MemoryBuffer::Policy::Reservoir;
  if (s == "ring") return MemoryBuffer::Policy::Ring;
  throw ConfigError("unknown buffer policy: " + s);
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const char* section,
                                std::initializer_list<const char*> known) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const char* k : known)
      if (key == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError(std::string("unknown key \"") + key + "\" in section " + section);
  }
}

template <typename T>
void read_into(const nlohmann::json& obj, const char* key, T& slot) {
  if (obj.contains(key)) slot = obj.at(key).get<T>();
}

}  // namespace detail

inline void validate(const ExperimentConfig& cfg) {
  schedule_kind_of(cfg.schedule.kind);
  norm_mode_of(cfg.layer.mode);
  buffer_policy_of(cfg.training.policy);
  if (!(cfg.schedule.eta_tilde > 0.0 && cfg.schedule.eta_tilde < 1.0))
    throw ConfigError("schedule.eta_tilde must be in (0,1)");
  if (cfg.schedule.kappa < 0.0 || cfg.schedule.kappa > 1.0)
    throw ConfigError("schedule.kappa must be in [0,1]");
  for (double k : cfg.schedule.kappa_grid)
    if (k < 0.0 || k > 1.0) throw ConfigError("schedule.kappa_grid entries must be in [0,1]");
  if (cfg.schedule.tasks < 1) throw ConfigError("schedule.T must be >= 1");
  if (cfg.schedule.m1 < 1) throw ConfigError("schedule.m1 must be >= 1");
  if (!(cfg.schedule.r > 0.0 && cfg.schedule.r <= 1.0))
    throw ConfigError("schedule.r must be in (0,1]");
  if (cfg.layer.eps <= 0.0) throw ConfigError("layer.eps must be > 0");
  if (cfg.layer.lambda < 0.0) throw ConfigError("layer.lambda must be >= 0");
  if (cfg.layer.groups < 1) throw ConfigError("layer.groups must be >= 1");
  if (cfg.training.lr <= 0.0) throw ConfigError("training.lr must be > 0");
  if (cfg.training.epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (cfg.training.batch < 1) throw ConfigError("training.batch must be >= 1");
  if (cfg.training.n_replay < 0) throw ConfigError("training.n_replay must be >= 0");
  if (cfg.training.n_replay >= cfg.training.batch)
    throw ConfigError("training.batch must exceed training.n_replay");
  if (cfg.training.capacity < 1) throw ConfigError("training.capacity must be >= 1");
  if (cfg.training.hidden < 1) throw ConfigError("training.hidden must be >= 1");
  if (cfg.stream.tasks < 1 || cfg.stream.classes_per_task < 1 || cfg.stream.dim < 1 ||
      cfg.stream.n_per_class < 1)
    throw ConfigError("stream counts must all be >= 1");
  if (norm_mode_of(cfg.layer.mode) == NormMode::Cn &&
      (cfg.layer.groups > cfg.training.hidden ||
       cfg.training.hidden % cfg.layer.groups != 0))
    throw ConfigError("layer.groups must divide training.hidden for cn mode");
}

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["schedule"] = {{"kind", cfg.schedule.kind},   {"eta_tilde", cfg.schedule.eta_tilde},
                   {"kappa", cfg.schedule.kappa}, {"T", cfg.schedule.tasks},
                   {"m1", cfg.schedule.m1},       {"r", cfg.schedule.r}};
  if (!cfg.schedule.kappa_grid.empty()) j["schedule"]["kappa_grid"] = cfg.schedule.kappa_grid;
  j["layer"] = {{"mode", cfg.layer.mode},
                {"eps", cfg.layer.eps},
                {"lambda", cfg.layer.lambda},
                {"groups", cfg.layer.groups}};
  j["training"] = {{"seed", cfg.training.seed},   {"lr", cfg.training.lr},
                   {"epochs", cfg.training.epochs}, {"batch", cfg.training.batch},
                   {"n_replay", cfg.training.n_replay}, {"capacity", cfg.training.capacity},
                   {"policy", cfg.training.policy}, {"hidden", cfg.training.hidden}};
  if (!cfg.training.seeds.empty()) j["training"]["seeds"] = cfg.training.seeds;
  j["stream"] = {{"T", cfg.stream.tasks},
                 {"classes_per_task", cfg.stream.classes_per_task},
                 {"dim", cfg.stream.dim},
                 {"n_per_class", cfg.stream.n_per_class},
                 {"task_drift", cfg.stream.task_drift},
                 {"mean_scale", cfg.stream.mean_scale},
                 {"standardize", cfg.stream.standardize}};
  if (!cfg.output.empty()) j["output"] = cfg.output;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::reject_unknown_keys(j, "root",
                              {"schedule", "layer", "training", "stream", "output"});
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    detail::reject_unknown_keys(s, "schedule",
                                {"kind", "eta_tilde", "kappa", "T", "m1", "r", "kappa_grid"});
    detail::read_into(s, "kind", cfg.schedule.kind);
    detail::read_into(s, "eta_tilde", cfg.schedule.eta_tilde);
    detail::read_into(s, "kappa", cfg.schedule.kappa);
    detail::read_into(s, "T", cfg.schedule.tasks);
    detail::read_into(s, "m1", cfg.schedule.m1);
    detail::read_into(s, "r", cfg.schedule.r);
    detail::read_into(s, "kappa_grid", cfg.schedule.kappa_grid);
  }
  if (j.contains("layer")) {
    const auto& s = j.at("layer");
    detail::reject_unknown_keys(s, "layer", {"mode", "eps", "lambda", "groups"});
    detail::read_into(s, "mode", cfg.layer.mode);
    detail::read_into(s, "eps", cfg.layer.eps);
    detail::read_into(s, "lambda", cfg.layer.lambda);
    detail::read_into(s, "groups", cfg.layer.groups);
  }
  if (j.contains("training")) {
    const auto& s = j.at("training");
    detail::reject_unknown_keys(s, "training",
                                {"seed", "seeds", "lr", "epochs", "batch", "n_replay",
                                 "capacity", "policy", "hidden"});
    detail::read_into(s, "seed", cfg.training.seed);
    detail::read_into(s, "seeds", cfg.training.seeds);
    detail::read_into(s, "lr", cfg.training.lr);
    detail::read_into(s, "epochs", cfg.training.epochs);
    detail::read_into(s, "batch", cfg.training.batch);
    detail::read_into(s, "n_replay", cfg.training.n_replay);
    detail::read_into(s, "capacity", cfg.training.capacity);
    detail::read_into(s, "policy", cfg.training.policy);
    detail::read_into(s, "hidden", cfg.training.hidden);
  }
  if (j.contains("stream")) {
    const auto& s = j.at("stream");
    detail::reject_unknown_keys(s, "stream",
                                {"T", "classes_per_task", "dim", "n_per_class",
                                 "task_drift", "mean_scale", "standardize"});
    detail::read_into(s, "T", cfg.stream.tasks);
    detail::read_into(s, "classes_per_task", cfg.stream.classes_per_task);
    detail::read_into(s, "dim", cfg.stream.dim);
    detail::read_into(s, "n_per_class", cfg.stream.n_per_class);
    detail::read_into(s, "task_drift", cfg.stream.task_drift);
    detail::read_into(s, "mean_scale", cfg.stream.mean_scale);
    detail::read_into(s, "standardize", cfg.stream.standardize);
  }
  detail::read_into(j, "output", cfg.output);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
}

// The training-side view of the experiment config.
inline TrainConfig train_config_of(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.seed = seed;
  tc.mode = norm_mode_of(cfg.layer.mode);
  tc.sched_kind = schedule_kind_of(cfg.schedule.kind);
  tc.eta_tilde = cfg.schedule.eta_tilde;
  tc.kappa = cfg.schedule.kappa;
  tc.lambda = cfg.layer.lambda;
  tc.eps = cfg.layer.eps;
  tc.groups = cfg.layer.groups;
  tc.hidden = cfg.training.hidden;
  tc.lr = cfg.training.lr;
  tc.epochs = cfg.training.epochs;
  tc.batch = cfg.training.batch;
  tc.n_replay = cfg.training.n_replay;
  tc.capacity = cfg.training.capacity;
  tc.policy = buffer_policy_of(cfg.training.policy);
  return tc;
}

inline std::vector<std::uint64_t> seed_list(const ExperimentConfig& cfg) {
  if (!cfg.training.seeds.empty()) return cfg.training.seeds;
  return {cfg.training.seed};
}

}  // namespace adabn
