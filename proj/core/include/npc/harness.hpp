#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "npc/checkpoint.hpp"
#include "npc/config.hpp"
#include "npc/metrics.hpp"

namespace npc {

template <typename T>
struct TrainerState {
  Model<T> model;
  ImportanceState importance;  // neuron-level, tracked for every strategy
  CpcState cpc;
  PenaltyState<T> penalty;
  SiState si;

  static TrainerState create(const RunConfig& config, std::uint64_t seed) {
    auto model = Model<T>::init(config.model, seed);
    auto importance = ImportanceState::create(model.registry().neuron_count(),
                                              config.strategy.delta, config.strategy.swap_delta);
    auto cpc = CpcState::create(model.registry().param_shapes(), config.strategy.delta,
                                config.strategy.swap_delta);
    auto si = SiState::create(model.params(), config.strategy.si_xi);
    TrainerState state{std::move(model), std::move(importance), std::move(cpc),
                       PenaltyState<T>{}, std::move(si)};
    state.penalty.lambda = config.strategy.resolved_lambda(config.dataset);
    return state;
  }
};

// Step-level observation points, in execution order within one step:
// "forward", "loss", "backward", "importance", "update".
struct TrainHooks {
  std::function<void(i64 step, const char* event)> trace;
  // Applied right after the importance update; lets tests pin C.
  std::function<void(ImportanceState&)> importance_override;
};

namespace detail {

template <typename T>
Tensor<T> make_train_batch(const TaskStream& stream, const std::vector<i64>& idx, Rng& aug_rng,
                           std::vector<int>& labels) {
  const Dataset& d = stream.train;
  const i64 len = d.sample_len();
  std::vector<T> data(static_cast<std::size_t>(idx.size()) * len);
  labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    augment_into<T>(d.image(idx[i]), d.channels, d.height, d.width, stream.policy, aug_rng,
                    data.data() + i * len);
    labels[i] = d.labels[idx[i]];
  }
  return Tensor<T>::from_data({static_cast<i64>(idx.size()), d.channels, d.height, d.width},
                              std::move(data));
}

template <typename T>
Tensor<T> make_eval_batch(const Dataset& d, const std::vector<i64>& idx,
                          std::vector<int>& labels) {
  const i64 len = d.sample_len();
  std::vector<T> data(static_cast<std::size_t>(idx.size()) * len);
  labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    scale_into<T>(d.image(idx[i]), data.data() + i * len);
    labels[i] = d.labels[idx[i]];
  }
  return Tensor<T>::from_data({static_cast<i64>(idx.size()), d.channels, d.height, d.width},
                              std::move(data));
}

inline void trace(const TrainHooks& hooks, i64 step, const char* event) {
  if (hooks.trace) hooks.trace(step, event);
}

template <typename T>
std::string importance_diagnostics(const TrainerState<T>& state, const NpcConfig& cfg) {
  double cmin = 0, cmax = 0, emin = 0, emax = 0;
  if (!state.importance.C.empty()) {
    cmin = cmax = state.importance.C[0];
    emin = emax = npc_learning_rate(state.importance.C[0], cfg);
    for (double c : state.importance.C) {
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
      const double e = npc_learning_rate(c, cfg);
      emin = std::min(emin, e);
      emax = std::max(emax, e);
    }
  }
  std::ostringstream os;
  os << "eta range [" << emin << ", " << emax << "], C range [" << cmin << ", " << cmax << "]";
  return os.str();
}

}  // namespace detail

// Deterministic estimator batch for the task-end importance passes.
template <typename T>
Tensor<T> estimator_batch(const TaskStream& stream, const Task& task, i64 budget, Rng rng) {
  std::vector<i64> pool = task.train_indices;
  rng.shuffle(pool);
  if (static_cast<i64>(pool.size()) > budget) pool.resize(budget);
  std::vector<int> labels;
  return detail::make_eval_batch<T>(stream.train, pool, labels);
}

// One full task of Algorithm-1 training. Per step: forward, task loss (plus
// quadratic penalty for that family), backward, importance update, then the
// strategy's weight update. Runs `config.epochs_per_task` redefined epochs,
// invoking `on_epoch_end` after each; folds penalty-family importance and
// appends anchors at the task boundary.
template <typename T>
void train_task(TrainerState<T>& state, const TaskStream& stream, i64 task_index,
                const RunConfig& config, std::uint64_t seed, const TrainHooks& hooks = {},
                const std::function<void(i64 epoch)>& on_epoch_end = {}) {
  const Task& task = stream.tasks[task_index];
  const StrategyConfig& strat = config.strategy;
  const auto& registry = state.model.registry();
  // Purpose / task / epoch occupy disjoint bit ranges so no two streams
  // share a derivation tag.
  auto tag = [task_index](std::uint64_t purpose, i64 epoch = 0) {
    return (purpose << 32) | (static_cast<std::uint64_t>(task_index) << 16) |
           static_cast<std::uint64_t>(epoch);
  };
  Rng dropout_rng = Rng::derive(seed, tag(rng_tag::kDropout));
  Rng augment_rng = Rng::derive(seed, tag(rng_tag::kAugment));

  EpochPlan plan{stream.total_train_count(), config.batch};
  i64 step = 0;
  for (i64 epoch = 1; epoch <= config.epochs_per_task; ++epoch) {
    Rng order_rng = Rng::derive(seed, tag(rng_tag::kBatchOrder, epoch));
    EpochIterator batches(task, plan, order_rng);
    std::vector<i64> idx;
    std::vector<int> labels;
    while (batches.next(idx)) {
      detail::trace(hooks, step, "forward");
      Tensor<T> x = detail::make_train_batch<T>(stream, idx, augment_rng, labels);
      state.model.zero_grad();
      auto fwd = state.model.forward(x, true, &dropout_rng);

      detail::trace(hooks, step, "loss");
      Tensor<T> loss = masked_cross_entropy(fwd.logits, labels, task.classes);
      if (is_penalty_strategy(strat.kind) && !state.penalty.tasks.empty())
        loss = add(loss, penalty_loss(state.model.params(), state.penalty));
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value))
        throw NumericError("loss diverged at task " + std::to_string(task_index + 1) +
                           " epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                           "; " + detail::importance_diagnostics(state, strat.npc));

      detail::trace(hooks, step, "backward");
      loss.backward();

      detail::trace(hooks, step, "importance");
      update_importance(state.importance, registry, fwd);
      if (strat.kind == StrategyKind::cpc) cpc_update_importance(state.cpc, state.model.params());
      if (hooks.importance_override) hooks.importance_override(state.importance);

      detail::trace(hooks, step, "update");
      switch (strat.kind) {
        case StrategyKind::npc:
          npc_step(state.model.params(), registry, state.importance.C, strat.npc);
          break;
        case StrategyKind::cpc:
          cpc_step(state.model.params(), state.cpc, strat.npc);
          break;
        case StrategyKind::si:
          si_sgd_step(state.model.params(), state.si, strat.lr);
          break;
        case StrategyKind::ewc:
        case StrategyKind::mas:
        case StrategyKind::finetune:
          finetune_step(state.model.params(), strat.lr);
          break;
      }
      ++step;
    }
    if (on_epoch_end) on_epoch_end(epoch);
  }

  // Task-boundary importance folds for the penalty family.
  if (strat.kind == StrategyKind::ewc || strat.kind == StrategyKind::mas) {
    Rng est_rng = Rng::derive(seed, tag(rng_tag::kProbe));
    Tensor<T> inputs =
        estimator_batch<T>(stream, task, strat.estimator_samples, est_rng);
    auto weights = strat.kind == StrategyKind::ewc
                       ? ewc_importance(state.model, inputs, task.classes)
                       : mas_importance(state.model, inputs);
    append_anchor(state.penalty, state.model.params(), std::move(weights));
  } else if (strat.kind == StrategyKind::si) {
    append_anchor(state.penalty, state.model.params(), si_fold(state.si, state.model.params()));
  }
}

// Task-aware accuracy: argmax restricted to the task's own classes.
template <typename T>
double task_accuracy(const Model<T>& model, const TaskStream& stream, i64 task_index,
                     i64 eval_batch) {
  NoGradGuard no_grad;
  const Task& task = stream.tasks[task_index];
  i64 correct = 0;
  std::vector<i64> idx;
  std::vector<int> labels;
  for (std::size_t start = 0; start < task.val_indices.size();
       start += static_cast<std::size_t>(eval_batch)) {
    const auto end = std::min(task.val_indices.size(), start + eval_batch);
    idx.assign(task.val_indices.begin() + start, task.val_indices.begin() + end);
    Tensor<T> x = detail::make_eval_batch<T>(stream.validation, idx, labels);
    auto out = model.forward(x, false);
    const i64 k = out.logits.shape()[1];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const T* row = out.logits.value().data() + static_cast<i64>(r) * k;
      int best = task.classes[0];
      for (int c : task.classes)
        if (row[c] > row[best]) best = c;
      if (best == labels[r]) ++correct;
    }
  }
  return task.val_indices.empty()
             ? 0.0
             : static_cast<double>(correct) / static_cast<double>(task.val_indices.size());
}

template <typename T>
std::vector<double> evaluate(const Model<T>& model, const TaskStream& stream, i64 tasks_seen,
                             i64 eval_batch) {
  std::vector<double> acc;
  acc.reserve(static_cast<std::size_t>(tasks_seen));
  for (i64 t = 0; t < tasks_seen; ++t)
    acc.push_back(task_accuracy(model, stream, t, eval_batch));
  return acc;
}

// Trains the task sequence for one seed, evaluating every task seen so far
// at the end of each redefined epoch. Emits rows through `sink` as they are
// produced and drops a checkpoint after each task.
template <typename T>
std::vector<MetricsRow> run_sequence(const RunConfig& config, const TaskStream& stream,
                                     std::uint64_t seed,
                                     const std::function<void(const MetricsRow&)>& sink = {},
                                     const TrainHooks& hooks = {}) {
  namespace fs = std::filesystem;
  config.validate();
  const std::string run_id = config.run_id(seed);
  const fs::path run_dir = fs::path(config.out_dir) / run_id;
  if (config.save_checkpoints) fs::create_directories(run_dir);

  auto state = TrainerState<T>::create(config, seed);
  std::vector<MetricsRow> rows;
  const auto t0 = std::chrono::steady_clock::now();
  const i64 trained = config.trained_tasks();

  for (i64 task = 0; task < trained; ++task) {
    auto on_epoch = [&](i64 epoch) {
      auto acc = evaluate(state.model, stream, task + 1, config.eval_batch);
      const double avg = std::accumulate(acc.begin(), acc.end(), 0.0) / acc.size();
      const std::int64_t wall =
          config.timing
              ? std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count()
              : 0;
      for (i64 et = 0; et < static_cast<i64>(acc.size()); ++et) {
        MetricsRow row{run_id,
                       seed,
                       to_string(config.strategy.kind),
                       static_cast<int>(task + 1),
                       static_cast<int>(epoch),
                       static_cast<int>(et + 1),
                       acc[et],
                       avg,
                       wall};
        rows.push_back(row);
        if (sink) sink(row);
      }
    };
    train_task(state, stream, task, config, seed, hooks, on_epoch);
    if (config.save_checkpoints) {
      Checkpoint<T> ckpt;
      ckpt.spec = config.model;
      ckpt.strategy = config.strategy.kind;
      for (const auto& p : state.model.params())
        ckpt.params.emplace_back(p.value().begin(), p.value().end());
      ckpt.importance = state.importance;
      if (config.strategy.kind == StrategyKind::cpc) ckpt.cpc = state.cpc;
      if (is_penalty_strategy(config.strategy.kind)) ckpt.penalty = state.penalty;
      if (config.strategy.kind == StrategyKind::si) ckpt.si = state.si;
      save_checkpoint(ckpt, (run_dir / ("task" + std::to_string(task + 1) + ".npc")).string());
    }
  }
  if (config.save_checkpoints) {
    std::vector<int> layer_of(state.model.registry().neuron_count());
    for (const auto& rec : state.model.registry().neurons()) layer_of[rec.id] = rec.layer;
    write_importance_csv(state.importance.C, layer_of, (run_dir / "importance.csv").string());
  }
  return rows;
}

// Multi-seed driver: one sequence per seed, a continuously appended
// metrics.csv, and the summary table at the end.
template <typename T>
std::vector<MetricsRow> run_many(const RunConfig& config, const TaskStream& stream,
                                 const TrainHooks& hooks = {}) {
  namespace fs = std::filesystem;
  config.validate();
  fs::create_directories(config.out_dir);
  const std::string metrics_path = (fs::path(config.out_dir) / "metrics.csv").string();
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw DataError("cannot write " + metrics_path);
  metrics << kMetricsHeader << '\n';
  metrics.flush();

  std::vector<MetricsRow> all;
  for (std::uint64_t seed : config.seeds) {
    auto sink = [&](const MetricsRow& row) {
      metrics << format_metrics_row(row) << '\n';
      metrics.flush();
    };
    auto rows = run_sequence<T>(config, stream, seed, sink, hooks);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  write_summary_csv(summarize(all), (fs::path(config.out_dir) / "summary.csv").string());
  return all;
}

template <typename T>
struct ActivationChangeResult {
  std::vector<ActivationChangeRow> rows;  // neurons x probe samples
  i64 neurons = 0;
  i64 samples = 0;
  double mean_all = 0.0;
  double mean_top10 = 0.0;     // most important decile by C at `before`
  double mean_bottom10 = 0.0;  // least important decile
};

// Change in the penultimate-layer activations between two checkpoints,
// probed on fixed validation samples of the first task and paired with the
// neuron importance recorded at `before`.
template <typename T>
ActivationChangeResult<T> activation_change_analysis(const Checkpoint<T>& before,
                                                     const Checkpoint<T>& after,
                                                     const TaskStream& stream, i64 probe_samples,
                                                     std::uint64_t seed) {
  if (before.spec.digest() != after.spec.digest())
    throw ConfigError("checkpoints were produced from different model specs");
  if (probe_samples < 1) throw ConfigError("probe sample count must be positive");

  Model<T> model_before = before.restore_model();
  Model<T> model_after = after.restore_model();
  const auto& registry = model_before.registry();
  const std::size_t tap_layer = before.spec.layer_count() - 2;
  const i64 first_neuron = registry.layers()[tap_layer].first_neuron;
  const i64 units = registry.layers()[tap_layer].count;

  std::vector<i64> pool = stream.tasks.at(0).val_indices;
  Rng rng = Rng::derive(seed, rng_tag::kProbe);
  rng.shuffle(pool);
  if (static_cast<i64>(pool.size()) > probe_samples) pool.resize(probe_samples);
  std::vector<int> labels;
  Tensor<T> x = detail::make_eval_batch<T>(stream.validation, pool, labels);

  NoGradGuard no_grad;
  auto tap_b = model_before.forward(x, false).taps[tap_layer];
  auto tap_a = model_after.forward(x, false).taps[tap_layer];

  ActivationChangeResult<T> result;
  result.neurons = units;
  result.samples = static_cast<i64>(pool.size());
  result.rows.reserve(static_cast<std::size_t>(units * result.samples));
  for (i64 u = 0; u < units; ++u) {
    const double c = before.importance.C.empty()
                         ? 0.0
                         : before.importance.C[first_neuron + u];
    for (i64 s = 0; s < result.samples; ++s) {
      const double vb = static_cast<double>(tap_b.value()[s * units + u]);
      const double va = static_cast<double>(tap_a.value()[s * units + u]);
      result.rows.push_back({first_neuron + u, s, c, vb, va, std::abs(va - vb)});
    }
  }

  double total = 0.0;
  for (const auto& r : result.rows) total += r.abs_change;
  result.mean_all = total / static_cast<double>(result.rows.size());

  std::vector<i64> order(static_cast<std::size_t>(units));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](i64 a, i64 b) {
    const double ca = before.importance.C.empty() ? 0.0 : before.importance.C[first_neuron + a];
    const double cb = before.importance.C.empty() ? 0.0 : before.importance.C[first_neuron + b];
    return ca > cb;
  });
  const i64 decile = std::max<i64>(1, units / 10);
  auto group_mean = [&](i64 from, i64 count) {
    double acc = 0.0;
    for (i64 i = from; i < from + count; ++i) {
      const i64 u = order[i];
      for (i64 s = 0; s < result.samples; ++s)
        acc += result.rows[u * result.samples + s].abs_change;
    }
    return acc / static_cast<double>(count * result.samples);
  };
  result.mean_top10 = group_mean(0, decile);
  result.mean_bottom10 = group_mean(units - decile, decile);
  return result;
}

// metrics.csv + summary.csv (+ activation_change.csv when analysis rows are
// provided); header-only files for empty inputs.
inline void emit_metrics(const std::vector<MetricsRow>& rows,
                         const std::vector<ActivationChangeRow>& activation,
                         const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_metrics_csv(rows, (fs::path(out_dir) / "metrics.csv").string());
  write_summary_csv(summarize(rows), (fs::path(out_dir) / "summary.csv").string());
  write_activation_csv(activation, (fs::path(out_dir) / "activation_change.csv").string());
}

}  // namespace npc
