#include "npc/config.hpp"

#include <cstdlib>
#include <filesystem>

namespace npc {

namespace fs = std::filesystem;

double default_lambda(StrategyKind kind, const std::string& dataset) {
  const bool cifar = dataset == "cifar100";
  switch (kind) {
    case StrategyKind::ewc: return cifar ? 300.0 : 100.0;
    case StrategyKind::mas: return 1.0;
    case StrategyKind::si: return 0.1;
    default: return 0.0;
  }
}

double default_delta(const std::string& dataset) {
  return dataset == "cifar100" ? 5e-4 : 1e-3;
}

double StrategyConfig::resolved_lambda(const std::string& dataset) const {
  if (lambda >= 0.0) return lambda;
  return default_lambda(kind, dataset);
}

void StrategyConfig::validate() const {
  if (kind == StrategyKind::npc || kind == StrategyKind::cpc) npc.validate();
  if (delta <= 0.0 || delta >= 1.0) throw ConfigError("delta must lie in (0, 1)");
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (si_xi <= 0.0) throw ConfigError("si damping must be positive");
  if (estimator_samples < 1) throw ConfigError("estimator sample budget must be positive");
}

void RunConfig::validate() const {
  model.validate();
  strategy.validate();
  if (dataset != "mnist" && dataset != "cifar100")
    throw ConfigError("dataset must be mnist or cifar100, got '" + dataset + "'");
  if (tasks < 1 || epochs_per_task < 0 || batch < 1 || eval_batch < 1)
    throw ConfigError("tasks and batch sizes must be positive");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (probe_samples < 1) throw ConfigError("probe sample count must be positive");
  if (precision != "f32" && precision != "f64")
    throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
}

std::string RunConfig::run_id(std::uint64_t seed) const {
  return to_string(strategy.kind) + "-seed" + std::to_string(seed);
}

std::string RunConfig::resolved_data_dir() const {
  if (!data_dir.empty()) return data_dir;
  if (const char* env = std::getenv("NPC_DATA_DIR")) return env;
  throw ConfigError("no data directory: pass --data-dir or set NPC_DATA_DIR");
}

void apply_profile(RunConfig& config, const std::string& name) {
  if (name == "paper") {
    config.model.conv_channels = {64, 256, 128};
    config.model.dense_hidden = {512};
    config.model.dropout = 0.2;
    config.batch = 512;
    config.epochs_per_task = 30;
  } else if (name == "desk") {
    config.model.conv_channels = {16, 32, 32};
    config.model.dense_hidden = {128};
    config.model.dropout = 0.2;
    config.batch = 128;
    config.epochs_per_task = 5;
  } else {
    throw ConfigError("unknown profile '" + name + "' (expected paper or desk)");
  }
}

namespace {

std::string pick_existing(const std::string& base) {
  if (fs::exists(base)) return base;
  if (fs::exists(base + ".gz")) return base + ".gz";
  throw DataError("dataset file not found: " + base + " (nor .gz)");
}

}  // namespace

TaskStream load_task_stream(const RunConfig& config) {
  const std::string dir = config.resolved_data_dir();
  Dataset train, validation;
  AugmentPolicy policy;
  if (config.dataset == "mnist") {
    const std::string base = fs::exists(fs::path(dir) / "mnist") ? dir + "/mnist" : dir;
    train = load_mnist_idx(pick_existing(base + "/train-images-idx3-ubyte"),
                           pick_existing(base + "/train-labels-idx1-ubyte"));
    validation = load_mnist_idx(pick_existing(base + "/t10k-images-idx3-ubyte"),
                                pick_existing(base + "/t10k-labels-idx1-ubyte"));
    policy = {4, false};
  } else {
    const std::string base = fs::exists(fs::path(dir) / "cifar100") ? dir + "/cifar100" : dir;
    train = load_cifar100_bin(pick_existing(base + "/train.bin"));
    validation = load_cifar100_bin(pick_existing(base + "/test.bin"));
    policy = {4, true};
  }
  if (config.subsample_per_class > 0) {
    train = subsample_per_class(train, config.subsample_per_class);
    validation = subsample_per_class(
        validation, std::max<i64>(1, config.subsample_per_class / 5));
  }
  TaskStream stream = split_tasks(std::move(train), std::move(validation), config.tasks);
  stream.policy = policy;
  return stream;
}

}  // namespace npc
