#pragma once

#include <string>
#include <vector>

#include "npc/datasets.hpp"
#include "npc/model_spec.hpp"
#include "npc/strategies.hpp"

namespace npc {

struct StrategyConfig {
  StrategyKind kind = StrategyKind::npc;
  NpcConfig npc;        // alpha / beta / eta_max for npc and cpc
  double delta = 1e-3;  // importance combination coefficient
  // Default: importance decays by a fraction delta per step
  // (C <- (1-delta)*C + delta*cbar), the reading under which delta acts as
  // a decay rate and prior-task importance survives the task boundary.
  // swap_delta=false selects the other convention, C <- delta*C +
  // (1-delta)*cbar, which with small delta keeps almost no history and
  // measurably fails to consolidate anything across tasks.
  bool swap_delta = true;
  double lambda = -1.0;     // penalty strength; < 0 means strategy default
  double lr = 0.05;         // global SGD rate for penalty baselines / finetune
  double si_xi = 1e-3;
  i64 estimator_samples = 1024;  // EWC / MAS importance sample budget per task

  double resolved_lambda(const std::string& dataset) const;
  void validate() const;
};

struct RunConfig {
  ModelSpec model;
  StrategyConfig strategy;
  std::string dataset = "mnist";  // mnist | cifar100
  std::string data_dir;           // empty: $NPC_DATA_DIR
  std::string out_dir = "runs/out";
  i64 tasks = 5;
  i64 limit_tasks = 0;  // 0 = train all tasks
  i64 epochs_per_task = 30;
  i64 batch = 512;
  i64 eval_batch = 512;
  std::vector<std::uint64_t> seeds{1};
  i64 subsample_per_class = 0;  // 0 = full data
  i64 probe_samples = 256;
  bool timing = true;
  bool save_checkpoints = true;
  std::string precision = "f32";  // f32 | f64

  void validate() const;
  i64 trained_tasks() const { return limit_tasks > 0 ? std::min(limit_tasks, tasks) : tasks; }
  std::string run_id(std::uint64_t seed) const;
  std::string resolved_data_dir() const;
};

// Hyperparameter defaults tied to the benchmark.
double default_lambda(StrategyKind kind, const std::string& dataset);
double default_delta(const std::string& dataset);

// paper: full-size architecture and schedule; desk: reduced model sized to
// run the whole 5-task suite on a CPU in minutes.
void apply_profile(RunConfig& config, const std::string& name);

// Loads the configured dataset pair, applies per-class subsampling and the
// task split, and attaches the augmentation policy.
TaskStream load_task_stream(const RunConfig& config);

}  // namespace npc
