#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npc/common.hpp"

namespace npc {

// Architecture description: a stack of conv blocks (conv / instance norm /
// ReLU / 2x2 max pool), then fully connected layers with dropout between
// hidden and classifier. Flattening between the stacks is channel-major
// row-major (plain NCHW order); checkpoints depend on it.
struct ModelSpec {
  i64 in_channels = 1;
  i64 in_height = 28;
  i64 in_width = 28;
  std::vector<i64> conv_channels{64, 256, 128};
  std::vector<i64> dense_hidden{512};
  i64 num_classes = 10;
  double dropout = 0.2;
  i64 kernel_size = 3;  // odd; padding keeps spatial size before pooling

  void validate() const {
    if (conv_channels.empty() || dense_hidden.empty())
      throw ConfigError("model spec requires at least one conv and one hidden dense layer");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("dropout rate must lie in [0, 1)");
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw ConfigError("kernel size must be odd and positive");
    if (num_classes < 2) throw ConfigError("need at least two classes");
    for (i64 c : conv_channels)
      if (c < 1) throw ConfigError("conv channel counts must be positive");
    for (i64 d : dense_hidden)
      if (d < 1) throw ConfigError("dense widths must be positive");
  }

  // Spatial size after each conv block (same-padded conv, then 2x2 pool).
  std::pair<i64, i64> spatial_after(std::size_t blocks) const {
    i64 h = in_height, w = in_width;
    for (std::size_t i = 0; i < blocks; ++i) {
      h /= 2;
      w /= 2;
      if (h == 0 || w == 0)
        throw ConfigError("input too small for " + std::to_string(conv_channels.size()) +
                          " pooling stages");
    }
    return {h, w};
  }

  i64 flatten_dim() const {
    auto [h, w] = spatial_after(conv_channels.size());
    return conv_channels.back() * h * w;
  }

  // Neuron layers: conv blocks, dense hidden layers, classifier head.
  std::size_t layer_count() const { return conv_channels.size() + dense_hidden.size() + 1; }

  i64 layer_width(std::size_t layer) const {
    if (layer < conv_channels.size()) return conv_channels[layer];
    std::size_t d = layer - conv_channels.size();
    if (d < dense_hidden.size()) return dense_hidden[d];
    return num_classes;
  }

  bool layer_is_conv(std::size_t layer) const { return layer < conv_channels.size(); }

  std::string layer_name(std::size_t layer) const {
    if (layer_is_conv(layer)) return "conv" + std::to_string(layer + 1);
    std::size_t d = layer - conv_channels.size();
    if (d < dense_hidden.size()) return "fc" + std::to_string(d + 1);
    return "head";
  }

  // Fan-in of one neuron in the given layer.
  i64 layer_fan_in(std::size_t layer) const {
    if (layer_is_conv(layer)) {
      i64 c = layer == 0 ? in_channels : conv_channels[layer - 1];
      return c * kernel_size * kernel_size;
    }
    std::size_t d = layer - conv_channels.size();
    if (d == 0) return flatten_dim();
    return d <= dense_hidden.size() ? dense_hidden[d - 1] : dense_hidden.back();
  }

  // Weight tensor shape of a layer, [out x fan_in] flattened for dense,
  // [F x C x kh x kw] for conv.
  Shape weight_shape(std::size_t layer) const {
    if (layer_is_conv(layer)) {
      i64 c = layer == 0 ? in_channels : conv_channels[layer - 1];
      return {conv_channels[layer], c, kernel_size, kernel_size};
    }
    return {layer_width(layer), layer_fan_in(layer)};
  }

  i64 total_neurons() const {
    i64 n = 0;
    for (std::size_t l = 0; l < layer_count(); ++l) n += layer_width(l);
    return n;
  }

  i64 total_params() const {
    i64 n = 0;
    for (std::size_t l = 0; l < layer_count(); ++l)
      n += layer_width(l) * layer_fan_in(l) + layer_width(l);
    return n;
  }

  // FNV-1a over the fields; stored in checkpoints to reject mismatched specs.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ull;
      }
    };
    mix(static_cast<std::uint64_t>(in_channels));
    mix(static_cast<std::uint64_t>(in_height));
    mix(static_cast<std::uint64_t>(in_width));
    for (i64 c : conv_channels) mix(static_cast<std::uint64_t>(c));
    mix(0xABCDull);
    for (i64 d : dense_hidden) mix(static_cast<std::uint64_t>(d));
    mix(static_cast<std::uint64_t>(num_classes));
    mix(static_cast<std::uint64_t>(kernel_size));
    mix(static_cast<std::uint64_t>(dropout * 1e6));
    return h;
  }
};

}  // namespace npc
