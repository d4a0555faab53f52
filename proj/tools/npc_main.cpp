// Command-line harness: train / eval / analyze / sweep over the continual
// learning engine. Configuration comes from flags or a key=value config
// file (flags win). Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numerical abort.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "npc/harness.hpp"
#include "npc/runtime.hpp"

namespace fs = std::filesystem;
using npc::RunConfig;
using npc::StrategyKind;

namespace {

struct CliOptions {
  RunConfig config;
  std::string strategy = "npc";
  std::string profile;
  std::uint64_t seed = 1;
  std::string seeds_csv;
  bool no_timing = false;
  bool no_checkpoints = false;
  bool swap_delta = true;
  // analyze
  std::string before_path, after_path;
  // eval
  std::string checkpoint_path;
  // sweep
  std::string sweep_param = "lambda";
  std::string sweep_values;
  int jobs = 1;
};

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
  cmd->set_config("--config", "", "key=value configuration file; flags override it");
  cmd->add_option("--dataset", opt.config.dataset, "mnist or cifar100")
      ->check(CLI::IsMember({"mnist", "cifar100"}));
  cmd->add_option("--data-dir", opt.config.data_dir,
                  "directory with the dataset files (default: $NPC_DATA_DIR)");
  cmd->add_option("--tasks", opt.config.tasks, "number of sequential tasks");
  cmd->add_option("--limit-tasks", opt.config.limit_tasks, "train only the first N tasks");
  cmd->add_option("--out-dir", opt.config.out_dir, "output directory");
  cmd->add_option("--profile", opt.profile, "paper or desk preset")
      ->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--precision", opt.config.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--subsample-per-class", opt.config.subsample_per_class,
                  "cap training samples per class (0 = full)");
}

void add_train_flags(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--strategy", opt.strategy, "npc|cpc|ewc|mas|si|finetune")
      ->check(CLI::IsMember({"npc", "cpc", "ewc", "mas", "si", "finetune"}));
  cmd->add_option("--seed", opt.seed, "run seed");
  cmd->add_option("--seeds", opt.seeds_csv, "comma-separated seeds for repeated runs");
  cmd->add_option("--epochs", opt.config.epochs_per_task, "epochs per task");
  cmd->add_option("--batch", opt.config.batch, "mini-batch size");
  cmd->add_option("--eval-batch", opt.config.eval_batch, "evaluation batch size");
  cmd->add_option("--alpha", opt.config.strategy.npc.alpha, "plasticity rate scale");
  cmd->add_option("--beta", opt.config.strategy.npc.beta, "importance freeze threshold");
  cmd->add_option("--eta-max", opt.config.strategy.npc.eta_max, "learning-rate upper bound");
  cmd->add_option("--delta", opt.config.strategy.delta, "importance combination coefficient");
  cmd->add_flag("--swap-delta,!--no-swap-delta", opt.swap_delta,
                "importance decays by delta per step (default); --no-swap-delta applies "
                "the combination with the weights exchanged, which keeps almost no history");
  cmd->add_option("--lambda", opt.config.strategy.lambda, "quadratic penalty strength");
  cmd->add_option("--lr", opt.config.strategy.lr, "SGD learning rate (penalty baselines)");
  cmd->add_option("--si-xi", opt.config.strategy.si_xi, "path-integral damping");
  cmd->add_option("--estimator-samples", opt.config.strategy.estimator_samples,
                  "importance estimation sample budget per task");
  cmd->add_flag("--no-timing", opt.no_timing, "emit wall_ms as 0 for byte-stable metrics");
  cmd->add_flag("--no-checkpoints", opt.no_checkpoints, "skip per-task checkpoints");
}

// Strategy/flag compatibility: flags that another strategy family owns are
// rejected rather than silently ignored.
void check_strategy_flags(const CLI::App* cmd, StrategyKind kind) {
  auto given = [&](const std::string& name) { return cmd->count(name) > 0; };
  auto reject = [&](const std::string& name) {
    throw npc::ConfigError(name + " is not a parameter of strategy " + npc::to_string(kind));
  };
  const bool plasticity = kind == StrategyKind::npc || kind == StrategyKind::cpc;
  if (!plasticity) {
    for (const char* f : {"--alpha", "--beta", "--eta-max", "--delta", "--swap-delta"})
      if (given(f)) reject(f);
  } else {
    for (const char* f : {"--lambda", "--lr"})
      if (given(f)) reject(f);
  }
  if (kind != StrategyKind::si && given("--si-xi")) reject("--si-xi");
  if (kind != StrategyKind::ewc && kind != StrategyKind::mas && given("--estimator-samples"))
    reject("--estimator-samples");
  if (kind == StrategyKind::finetune && given("--lambda")) reject("--lambda");
}

void finalize_config(CliOptions& opt, const CLI::App* cmd) {
  if (!opt.profile.empty()) apply_profile(opt.config, opt.profile);
  opt.config.strategy.kind = npc::strategy_from_string(opt.strategy);
  opt.config.strategy.swap_delta = opt.swap_delta;
  opt.config.timing = !opt.no_timing;
  opt.config.save_checkpoints = !opt.no_checkpoints;
  if (cmd->count("--seeds") > 0) {
    opt.config.seeds.clear();
    for (const auto& s : split_list(opt.seeds_csv))
      opt.config.seeds.push_back(std::stoull(s));
  } else {
    opt.config.seeds = {opt.seed};
  }
  if (opt.config.dataset == "cifar100") {
    opt.config.model.in_channels = 3;
    opt.config.model.in_height = 32;
    opt.config.model.in_width = 32;
    opt.config.model.num_classes = 100;
    if (cmd->count("--tasks") == 0) opt.config.tasks = 10;
    if (cmd->count("--delta") == 0) opt.config.strategy.delta = npc::default_delta("cifar100");
  } else {
    opt.config.model.in_channels = 1;
    opt.config.model.in_height = 28;
    opt.config.model.in_width = 28;
    opt.config.model.num_classes = 10;
  }
  opt.config.validate();
}

template <typename T>
int run_train(const RunConfig& config) {
  auto stream = npc::load_task_stream(config);
  auto rows = npc::run_many<T>(config, stream);
  auto summary = npc::summarize(rows);
  std::printf("strategy %s: %zu rows -> %s/metrics.csv\n",
              npc::to_string(config.strategy.kind).c_str(), rows.size(),
              config.out_dir.c_str());
  for (const auto& s : summary) {
    if (s.eval_task == 0)
      std::printf("  average: %.4f (se %.4f, %d runs)\n", s.mean_accuracy, s.std_error, s.runs);
    else
      std::printf("  task %d: %.4f (se %.4f)\n", s.eval_task, s.mean_accuracy, s.std_error);
  }
  return 0;
}

template <typename T>
int run_eval(const RunConfig& config, const std::string& checkpoint_path) {
  auto ckpt = npc::load_checkpoint<T>(checkpoint_path);
  RunConfig cfg = config;
  cfg.model = ckpt.spec;
  auto stream = npc::load_task_stream(cfg);
  auto model = ckpt.restore_model();
  auto acc = npc::evaluate(model, stream, stream.task_count(), cfg.eval_batch);
  double avg = 0.0;
  for (std::size_t t = 0; t < acc.size(); ++t) {
    std::printf("task %zu: %.4f\n", t + 1, acc[t]);
    avg += acc[t];
  }
  std::printf("average: %.4f\n", avg / acc.size());
  return 0;
}

template <typename T>
int run_analyze(const RunConfig& config, const std::string& before_path,
                const std::string& after_path) {
  auto before = npc::load_checkpoint<T>(before_path);
  auto after = npc::load_checkpoint<T>(after_path);
  RunConfig cfg = config;
  cfg.model = before.spec;
  auto stream = npc::load_task_stream(cfg);
  auto result =
      npc::activation_change_analysis(before, after, stream, cfg.probe_samples, cfg.seeds[0]);
  fs::create_directories(cfg.out_dir);
  npc::write_activation_csv(result.rows,
                            (fs::path(cfg.out_dir) / "activation_change.csv").string());
  std::printf("neurons %lld, samples %lld (%lld points)\n",
              static_cast<long long>(result.neurons), static_cast<long long>(result.samples),
              static_cast<long long>(result.neurons * result.samples));
  std::printf("mean |d activation| all:        %.4f\n", result.mean_all);
  std::printf("mean |d activation| top 10%%:    %.4f\n", result.mean_top10);
  std::printf("mean |d activation| bottom 10%%: %.4f\n", result.mean_bottom10);
  return 0;
}

template <typename T>
int run_sweep(const RunConfig& base, const std::string& param,
              const std::vector<std::string>& values, int jobs) {
  if (values.empty()) throw npc::ConfigError("sweep needs --values");
  if (param != "lambda" && param != "alpha" && param != "beta")
    throw npc::ConfigError("sweep parameter must be lambda, alpha or beta");
  std::vector<double> parsed;
  for (const auto& v : values) {
    try {
      parsed.push_back(std::stod(v));
    } catch (const std::exception&) {
      throw npc::ConfigError("sweep value '" + v + "' is not a number");
    }
  }
  auto stream = npc::load_task_stream(base);

  struct Result {
    std::string value;
    double mean = 0.0, se = 0.0;
    std::string error;
  };
  std::vector<Result> results(values.size());
  std::atomic<std::size_t> next{0};
  std::mutex print_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= values.size()) return;
      RunConfig config = base;
      if (param == "lambda")
        config.strategy.lambda = parsed[i];
      else if (param == "alpha")
        config.strategy.npc.alpha = parsed[i];
      else
        config.strategy.npc.beta = parsed[i];
      config.out_dir =
          (fs::path(base.out_dir) / "sweep" / (param + "=" + values[i])).string();
      results[i].value = values[i];
      try {
        auto rows = npc::run_many<T>(config, stream);
        for (const auto& s : npc::summarize(rows)) {
          if (s.eval_task == 0) {
            results[i].mean = s.mean_accuracy;
            results[i].se = s.std_error;
            std::lock_guard<std::mutex> lock(print_mutex);
            std::printf("%s=%s -> average %.4f (se %.4f)\n", param.c_str(), values[i].c_str(),
                        s.mean_accuracy, s.std_error);
          }
        }
      } catch (const npc::Error& e) {
        // A diverging grid point is a result, not a reason to stop the grid.
        results[i].error = e.what();
        std::lock_guard<std::mutex> lock(print_mutex);
        std::printf("%s=%s -> failed: %s\n", param.c_str(), values[i].c_str(), e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(values.size())));
  for (int i = 0; i < n - 1; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(base.out_dir);
  std::ofstream out(fs::path(base.out_dir) / "sweep_summary.csv", std::ios::binary);
  out << param << ",mean_avg_accuracy,std_error,status\n";
  for (const auto& r : results) {
    out << r.value << ',' << r.mean << ',' << r.se << ','
        << (r.error.empty() ? "ok" : "failed") << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  npc::init_runtime();
  CLI::App app{"continual-learning engine with neuron-level plasticity control"};
  app.require_subcommand(1);
  CliOptions opt;

  CLI::App* train = app.add_subcommand("train", "train a task sequence");
  add_common_flags(train, opt);
  add_train_flags(train, opt);

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on every task");
  add_common_flags(eval, opt);
  eval->add_option("--checkpoint", opt.checkpoint_path, "checkpoint to score")->required();

  CLI::App* analyze =
      app.add_subcommand("analyze", "activation change between two checkpoints");
  add_common_flags(analyze, opt);
  analyze->add_option("--before", opt.before_path, "checkpoint before the subsequent task")
      ->required();
  analyze->add_option("--after", opt.after_path, "checkpoint after the subsequent task")
      ->required();
  analyze->add_option("--probe-samples", opt.config.probe_samples, "probe sample count");
  analyze->add_option("--seed", opt.seed, "probe sampling seed");

  CLI::App* sweep = app.add_subcommand("sweep", "grid search one hyperparameter");
  add_common_flags(sweep, opt);
  add_train_flags(sweep, opt);
  sweep->add_option("--param", opt.sweep_param, "lambda, alpha or beta");
  sweep->add_option("--values", opt.sweep_values, "comma-separated grid values")->required();
  sweep->add_option("--jobs", opt.jobs, "parallel runs");

  try {
    app.parse(argc, argv);
    CLI::App* cmd = app.get_subcommands().front();
    if (cmd == train || cmd == sweep) {
      finalize_config(opt, cmd);
      check_strategy_flags(cmd, opt.config.strategy.kind);
    } else {
      opt.config.seeds = {opt.seed};
    }
    const bool f64 = opt.config.precision == "f64";
    if (cmd == train)
      return f64 ? run_train<double>(opt.config) : run_train<float>(opt.config);
    if (cmd == eval)
      return f64 ? run_eval<double>(opt.config, opt.checkpoint_path)
                 : run_eval<float>(opt.config, opt.checkpoint_path);
    if (cmd == analyze)
      return f64 ? run_analyze<double>(opt.config, opt.before_path, opt.after_path)
                 : run_analyze<float>(opt.config, opt.before_path, opt.after_path);
    if (cmd == sweep)
      return f64 ? run_sweep<double>(opt.config, opt.sweep_param, split_list(opt.sweep_values),
                                     opt.jobs)
                 : run_sweep<float>(opt.config, opt.sweep_param, split_list(opt.sweep_values),
                                    opt.jobs);
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const npc::NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const npc::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const npc::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const npc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
