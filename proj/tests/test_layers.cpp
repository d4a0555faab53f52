#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "npc/grad_check.hpp"
#include "npc/model.hpp"

using npc::ModelSpec;
using npc::Shape;
using npc::Tensor;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, npc::Rng& rng, bool requires_grad = true) {
  std::vector<double> data(static_cast<std::size_t>(npc::numel_of(shape)));
  for (auto& v : data) v = rng.uniform(-1.0, 1.0);
  return TD::from_data(std::move(shape), std::move(data), requires_grad);
}

ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.in_channels = 1;
  spec.in_height = 8;
  spec.in_width = 8;
  spec.conv_channels = {3, 4};
  spec.dense_hidden = {6};
  spec.num_classes = 4;
  spec.dropout = 0.0;
  return spec;
}

}  // namespace

TEST_CASE("instance norm zeroes a constant channel") {
  TD x = TD::full({1, 1, 2, 3}, 5.0);
  TD y = npc::instance_norm2d(x);
  for (double v : y.value()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("instance norm symmetric pair") {
  TD x = TD::from_data({1, 1, 1, 2}, {1.0, 3.0});
  TD y = npc::instance_norm2d(x);
  CHECK(y.value()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.value()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("instance norm output is standardized per sample-channel") {
  npc::Rng rng(5);
  TD x = random_tensor({3, 4, 5, 7}, rng, false);
  TD y = npc::instance_norm2d(x);
  const npc::i64 hw = 35;
  for (npc::i64 p = 0; p < 12; ++p) {
    double m = 0, v = 0;
    for (npc::i64 i = 0; i < hw; ++i) m += y.value()[p * hw + i];
    m /= hw;
    for (npc::i64 i = 0; i < hw; ++i) {
      double d = y.value()[p * hw + i] - m;
      v += d * d;
    }
    v /= hw;
    CHECK(std::abs(m) < 1e-6);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator
  }
}

TEST_CASE("instance norm gradient vs central differences") {
  npc::Rng rng(13);
  TD x = random_tensor({2, 3, 4, 4}, rng);
  std::vector<TD> params{x};
  double err = npc::grad_check<double>(
      [&] { return npc::mean(npc::abs(npc::instance_norm2d(x))); }, params);
  CHECK(err < 1e-4);
}

TEST_CASE("fused norm-relu equals the composition of the two ops") {
  npc::Rng rng(31);
  TD x = random_tensor({2, 3, 4, 5}, rng);
  TD x2 = TD::from_data(x.shape(),
                        std::vector<double>(x.value().begin(), x.value().end()), true);
  TD fused = npc::instance_norm_relu(x);
  TD composed = npc::relu(npc::instance_norm2d(x2));
  for (std::size_t i = 0; i < fused.value().size(); ++i)
    CHECK(fused.value()[i] == doctest::Approx(composed.value()[i]).epsilon(1e-14));
  npc::mean(fused).backward();
  npc::mean(composed).backward();
  for (std::size_t i = 0; i < x.value().size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(x2.grad()[i]).epsilon(1e-12));
}

TEST_CASE("fused norm-relu gradient vs central differences") {
  npc::Rng rng(37);
  TD x = random_tensor({2, 2, 3, 4}, rng);
  std::vector<TD> params{x};
  double err = npc::grad_check<double>(
      [&] { return npc::mean(npc::instance_norm_relu(x)); }, params, 1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("dropout rate zero and eval mode are the identity") {
  npc::Rng rng(1);
  TD x = TD::from_data({4}, {1, 2, 3, 4});
  TD a = npc::dropout(x, 0.0, true, rng);
  TD b = npc::dropout(x, 0.9, false, rng);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.value()[i] == x.value()[i]);
    CHECK(b.value()[i] == x.value()[i]);
  }
}

TEST_CASE("dropout is unbiased over many masks") {
  npc::Rng rng(99);
  const double rate = 0.2;
  const double x = 2.0;
  const int draws = 10000;
  TD xt = TD::scalar(x);
  double acc = 0;
  for (int i = 0; i < draws; ++i) acc += npc::dropout(xt, rate, true, rng).value()[0];
  const double mc_mean = acc / draws;
  const double sigma = x * std::sqrt(rate / (1.0 - rate) / draws);
  CHECK(std::abs(mc_mean - x) < 3.0 * sigma);
}

TEST_CASE("masked cross entropy equals ln 2 for equal two-class logits") {
  TD logits = TD::zeros({1, 10});
  TD loss = npc::masked_cross_entropy(logits, {0}, {0, 1});
  CHECK(loss.item() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("masked cross entropy vanishes at large margin") {
  TD logits = TD::from_data({1, 4}, {20.0, 0.0, -5.0, -5.0});
  TD loss = npc::masked_cross_entropy(logits, {0}, {0, 1});
  CHECK(loss.item() < 1e-8);
  CHECK(loss.item() > 0.0);
}

TEST_CASE("masked cross entropy zeroes out-of-task gradients") {
  npc::Rng rng(3);
  TD logits = random_tensor({3, 10}, rng);
  TD loss = npc::masked_cross_entropy(logits, {2, 3, 2}, {2, 3});
  loss.backward();
  for (npc::i64 r = 0; r < 3; ++r)
    for (npc::i64 c = 0; c < 10; ++c)
      if (c != 2 && c != 3) CHECK(logits.grad()[r * 10 + c] == 0.0);
}

TEST_CASE("masked cross entropy rejects labels outside the task") {
  TD logits = TD::zeros({1, 10});
  CHECK_THROWS_AS(npc::masked_cross_entropy(logits, {5}, {0, 1}), npc::DataError);
}

TEST_CASE("masked cross entropy gradient vs central differences") {
  npc::Rng rng(17);
  TD logits = random_tensor({4, 6}, rng);
  std::vector<TD> params{logits};
  double err = npc::grad_check<double>(
      [&] { return npc::masked_cross_entropy(logits, {1, 4, 4, 1}, {1, 4}); }, params);
  CHECK(err < 1e-5);
}

TEST_CASE("registry counts and layout") {
  ModelSpec spec;
  spec.in_channels = 1;
  spec.in_height = 28;
  spec.in_width = 28;
  spec.conv_channels = {16, 32, 32};
  spec.dense_hidden = {128};
  spec.num_classes = 10;
  auto reg = npc::build_registry(spec);
  CHECK(reg.neuron_count() == 16 + 32 + 32 + 128 + 10);
  CHECK(reg.layer_count() == 5);
  CHECK(reg.layers()[0].count == 16);
  CHECK(reg.layers()[4].count == 10);
  // Conv filter slices: whole filter plus its bias element.
  const auto& rec = reg.neurons()[1];
  CHECK(rec.layer == 0);
  CHECK(rec.slices.size() == 2);
  CHECK(rec.slices[0].begin == 9);
  CHECK(rec.slices[0].end == 18);
  CHECK(rec.slices[1].begin == 1);
  reg.validate_partition();
}

TEST_CASE("registry partitions parameters for varied specs") {
  npc::Rng rng(7);
  for (int i = 0; i < 8; ++i) {
    ModelSpec spec;
    spec.in_channels = 1 + static_cast<npc::i64>(rng.next_below(3));
    spec.in_height = spec.in_width = 16;
    spec.conv_channels = {static_cast<npc::i64>(1 + rng.next_below(8)),
                          static_cast<npc::i64>(1 + rng.next_below(8))};
    spec.dense_hidden = {static_cast<npc::i64>(1 + rng.next_below(16))};
    spec.num_classes = 2 + static_cast<npc::i64>(rng.next_below(9));
    auto reg = npc::build_registry(spec);
    reg.validate_partition();
    npc::i64 covered = 0;
    for (const auto& rec : reg.neurons())
      for (const auto& sl : rec.slices) covered += sl.end - sl.begin;
    CHECK(covered == spec.total_params());
  }
}

TEST_CASE("model forward with zero weights gives zero logits") {
  ModelSpec spec = tiny_spec();
  auto model = npc::Model<double>::init(spec, 1);
  for (auto& p : model.params())
    for (auto& v : p.value()) v = 0.0;
  TD x = TD::full({2, 1, 8, 8}, 0.0);
  auto out = model.forward(x, false);
  for (double v : out.logits.value()) CHECK(v == 0.0);
}

TEST_CASE("evaluation forward is a pure function of params and input") {
  ModelSpec spec = tiny_spec();
  spec.dropout = 0.5;  // must not fire in eval mode
  auto model = npc::Model<double>::init(spec, 3);
  npc::Rng rng(21);
  std::vector<double> img(64);
  for (auto& v : img) v = rng.uniform(0.0, 1.0);
  std::vector<double> batch;
  batch.insert(batch.end(), img.begin(), img.end());
  batch.insert(batch.end(), img.begin(), img.end());
  TD x = TD::from_data({2, 1, 8, 8}, std::move(batch));
  npc::NoGradGuard ng;
  auto out1 = model.forward(x, false);
  auto out2 = model.forward(x, false);
  for (npc::i64 c = 0; c < spec.num_classes; ++c) {
    CHECK(out1.logits.value()[c] == out1.logits.value()[spec.num_classes + c]);
    CHECK(out1.logits.value()[c] == out2.logits.value()[c]);
  }
}

TEST_CASE("model taps expose every activation site") {
  ModelSpec spec = tiny_spec();
  auto model = npc::Model<double>::init(spec, 5);
  TD x = TD::full({1, 1, 8, 8}, 0.3);
  auto out = model.forward(x, false);
  REQUIRE(out.taps.size() == spec.layer_count());
  CHECK(out.taps[0].shape() == Shape{1, 3, 8, 8});
  CHECK(out.taps[1].shape() == Shape{1, 4, 4, 4});
  CHECK(out.taps[2].shape() == Shape{1, 6});
  CHECK(out.taps[3].shape() == Shape{1, 4});
  CHECK(&out.second_top() == &out.taps[2]);
  CHECK(out.logits.shape() == Shape{1, 4});
}

TEST_CASE("full model loss gradient vs central differences") {
  ModelSpec spec = tiny_spec();
  auto model = npc::Model<double>::init(spec, 7);
  npc::Rng rng(23);
  TD x = random_tensor({2, 1, 8, 8}, rng, false);
  std::vector<TD> params = model.params();
  auto f = [&] {
    auto out = model.forward(x, false);
    return npc::masked_cross_entropy(out.logits, {0, 1}, {0, 1});
  };
  double err = npc::grad_check<double>(f, params, 1e-5);
  CHECK(err < 1e-3);
}
