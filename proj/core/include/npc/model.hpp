#pragma once

#include <string>
#include <vector>

#include "npc/layers.hpp"
#include "npc/registry.hpp"

namespace npc {

// Forward pass output: task logits plus the activation taps the importance
// pipeline and the activation-change analysis consume. taps[l] is neuron
// layer l's activation site: post-ReLU feature maps for conv blocks
// (before pooling), post-ReLU vectors for hidden dense layers (before
// dropout), raw logits for the classifier.
template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  std::vector<Tensor<T>> taps;

  // Penultimate activation, the layer just before the classifier.
  const Tensor<T>& second_top() const { return taps[taps.size() - 2]; }
};

template <typename T>
class Model {
 public:
  Model(ModelSpec spec, std::vector<Tensor<T>> params)
      : spec_(std::move(spec)), params_(std::move(params)) {
    registry_ = build_registry(spec_);
  }

  // Uniform init over +-sqrt(1/fan_in) per layer from a seeded stream,
  // weights then bias, layers in order.
  static Model init(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng = Rng::derive(seed, rng_tag::kInit);
    std::vector<Tensor<T>> params;
    for (std::size_t layer = 0; layer < spec.layer_count(); ++layer) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_fan_in(layer)));
      Shape ws = spec.weight_shape(layer);
      std::vector<T> w(static_cast<std::size_t>(numel_of(ws)));
      for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
      params.push_back(Tensor<T>::from_data(std::move(ws), std::move(w), true));
      std::vector<T> b(static_cast<std::size_t>(spec.layer_width(layer)));
      for (auto& v : b) v = static_cast<T>(rng.uniform(-bound, bound));
      params.push_back(Tensor<T>::from_data({spec.layer_width(layer)}, std::move(b), true));
    }
    return Model(spec, std::move(params));
  }

  const ModelSpec& spec() const { return spec_; }
  const NeuronRegistry& registry() const { return registry_; }
  std::vector<Tensor<T>>& params() { return params_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

  Tensor<T>& weight(std::size_t layer) { return params_[2 * layer]; }
  Tensor<T>& bias(std::size_t layer) { return params_[2 * layer + 1]; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  i64 param_count() const {
    i64 n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  ForwardResult<T> forward(Tensor<T> x, bool training, Rng* dropout_rng = nullptr) const {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || xs[1] != spec_.in_channels || xs[2] != spec_.in_height ||
        xs[3] != spec_.in_width)
      throw ShapeError("model input " + shape_str(xs) + " does not match spec input [" +
                       std::to_string(spec_.in_channels) + "x" + std::to_string(spec_.in_height) +
                       "x" + std::to_string(spec_.in_width) + "]");
    if (training && spec_.dropout > 0.0 && dropout_rng == nullptr)
      throw StateError("training forward needs a dropout RNG");

    ForwardResult<T> result;
    const i64 pad = spec_.kernel_size / 2;
    Tensor<T> h = std::move(x);
    std::size_t layer = 0;
    for (; layer < spec_.conv_channels.size(); ++layer) {
      Tensor<T> z = conv2d(h, params_[2 * layer], params_[2 * layer + 1], 1, pad);
      Tensor<T> a = instance_norm_relu(z);
      result.taps.push_back(a);
      h = maxpool2d(a);
    }
    h = reshape(h, {h.shape()[0], spec_.flatten_dim()});
    for (std::size_t d = 0; d < spec_.dense_hidden.size(); ++d, ++layer) {
      Tensor<T> a = relu(linear(h, params_[2 * layer], params_[2 * layer + 1]));
      result.taps.push_back(a);
      h = (training && spec_.dropout > 0.0) ? dropout(a, spec_.dropout, true, *dropout_rng) : a;
    }
    result.logits = linear(h, params_[2 * layer], params_[2 * layer + 1]);
    result.taps.push_back(result.logits);
    return result;
  }

 private:
  ModelSpec spec_;
  std::vector<Tensor<T>> params_;
  NeuronRegistry registry_;
};

}  // namespace npc
