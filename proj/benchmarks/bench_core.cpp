#include <benchmark/benchmark.h>

#include "npc/harness.hpp"
#include "npc/runtime.hpp"

// Microbenchmarks for the training-path hot spots at the reduced-profile
// shapes (batch 128, 28x28 inputs, conv channels 16/32/32, dense 128).

namespace {

using npc::i64;
using npc::Tensor;

template <typename T>
Tensor<T> random_tensor(npc::Shape shape, npc::Rng& rng, bool requires_grad = false) {
  std::vector<T> data(static_cast<std::size_t>(npc::numel_of(shape)));
  for (auto& v : data) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return Tensor<T>::from_data(std::move(shape), std::move(data), requires_grad);
}

npc::RunConfig desk_config() {
  npc::RunConfig config;
  config.model.in_channels = 1;
  config.model.in_height = 28;
  config.model.in_width = 28;
  npc::apply_profile(config, "desk");
  config.model.num_classes = 10;
  return config;
}

// Synthetic batch shaped like the benchmark data; avoids a dataset
// dependency for the microbenchmarks.
template <typename T>
Tensor<T> fake_batch(i64 n, npc::Rng& rng) {
  std::vector<T> data(static_cast<std::size_t>(n) * 28 * 28);
  for (auto& v : data) v = static_cast<T>(rng.next_below(256)) / T(255);
  return Tensor<T>::from_data({n, 1, 28, 28}, std::move(data));
}

void BM_gemm_conv2_shape(benchmark::State& state) {
  npc::Rng rng(1);
  std::vector<float> a(25088 * 144), b(144 * 32), c(25088 * 32);
  for (auto& v : a) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto _ : state) {
    npc::detail::gemm<float>(false, false, 25088, 32, 144, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * 25088LL * 144 * 32);
}
BENCHMARK(BM_gemm_conv2_shape);

void BM_conv2d_forward(benchmark::State& state) {
  npc::Rng rng(2);
  auto x = random_tensor<float>({128, 16, 14, 14}, rng);
  auto k = random_tensor<float>({32, 16, 3, 3}, rng);
  auto b = random_tensor<float>({32}, rng);
  npc::NoGradGuard no_grad;
  for (auto _ : state) {
    auto y = npc::conv2d(x, k, b, 1, 1);
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_conv2d_forward);

void BM_instance_norm(benchmark::State& state) {
  npc::Rng rng(3);
  auto x = random_tensor<float>({128, 16, 28, 28}, rng);
  npc::NoGradGuard no_grad;
  for (auto _ : state) {
    auto y = npc::instance_norm2d(x);
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_instance_norm);

void BM_model_forward_eval(benchmark::State& state) {
  auto config = desk_config();
  auto model = npc::Model<float>::init(config.model, 1);
  npc::Rng rng(4);
  auto x = fake_batch<float>(config.batch, rng);
  npc::NoGradGuard no_grad;
  for (auto _ : state) {
    auto out = model.forward(x, false);
    benchmark::DoNotOptimize(out.logits.value().data());
  }
  state.SetItemsProcessed(state.iterations() * config.batch);
}
BENCHMARK(BM_model_forward_eval);

void BM_training_step_npc(benchmark::State& state) {
  auto config = desk_config();
  auto trainer = npc::TrainerState<float>::create(config, 1);
  npc::Rng rng(5);
  npc::Rng dropout_rng(6);
  auto x = fake_batch<float>(config.batch, rng);
  std::vector<int> labels(config.batch);
  for (auto& l : labels) l = static_cast<int>(rng.next_below(2));
  const std::vector<int> classes{0, 1};
  for (auto _ : state) {
    trainer.model.zero_grad();
    auto fwd = trainer.model.forward(x, true, &dropout_rng);
    auto loss = npc::masked_cross_entropy(fwd.logits, labels, classes);
    loss.backward();
    npc::update_importance(trainer.importance, trainer.model.registry(), fwd);
    npc::npc_step(trainer.model.params(), trainer.model.registry(), trainer.importance.C,
                  config.strategy.npc);
    benchmark::DoNotOptimize(trainer.model.params()[0].value().data());
  }
  state.SetItemsProcessed(state.iterations() * config.batch);
}
BENCHMARK(BM_training_step_npc);

void BM_importance_update(benchmark::State& state) {
  auto config = desk_config();
  auto trainer = npc::TrainerState<float>::create(config, 1);
  npc::Rng rng(7);
  npc::Rng dropout_rng(8);
  auto x = fake_batch<float>(config.batch, rng);
  std::vector<int> labels(config.batch, 0);
  trainer.model.zero_grad();
  auto fwd = trainer.model.forward(x, true, &dropout_rng);
  auto loss = npc::masked_cross_entropy(fwd.logits, labels, {0, 1});
  loss.backward();
  for (auto _ : state) {
    npc::update_importance(trainer.importance, trainer.model.registry(), fwd);
    benchmark::DoNotOptimize(trainer.importance.C.data());
  }
}
BENCHMARK(BM_importance_update);

}  // namespace

int main(int argc, char** argv) {
  npc::init_runtime();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  return 0;
}
