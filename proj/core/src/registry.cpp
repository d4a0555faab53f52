#include "npc/registry.hpp"

#include <algorithm>

namespace npc {

NeuronRegistry build_registry(const ModelSpec& spec) {
  spec.validate();
  NeuronRegistry reg;
  i64 next_id = 0;
  for (std::size_t layer = 0; layer < spec.layer_count(); ++layer) {
    const i64 width = spec.layer_width(layer);
    const i64 fan_in = spec.layer_fan_in(layer);
    const int weight_param = static_cast<int>(2 * layer);
    const int bias_param = weight_param + 1;
    reg.layers_.push_back({next_id, width});
    for (i64 u = 0; u < width; ++u) {
      NeuronRecord rec;
      rec.id = next_id++;
      rec.layer = static_cast<int>(layer);
      rec.index_in_layer = u;
      rec.slices.push_back({weight_param, u * fan_in, (u + 1) * fan_in});
      rec.slices.push_back({bias_param, u, u + 1});
      reg.neurons_.push_back(std::move(rec));
    }
    reg.param_shapes_.push_back(spec.weight_shape(layer));
    reg.param_shapes_.push_back({width});
  }
  return reg;
}

NeuronRegistry build_dense_registry(const std::vector<std::pair<i64, i64>>& layers) {
  NeuronRegistry reg;
  i64 next_id = 0;
  for (std::size_t layer = 0; layer < layers.size(); ++layer) {
    const auto [width, fan_in] = layers[layer];
    if (width < 1 || fan_in < 1) throw ConfigError("dense registry needs positive dimensions");
    const int weight_param = static_cast<int>(2 * layer);
    reg.layers_.push_back({next_id, width});
    for (i64 u = 0; u < width; ++u) {
      NeuronRecord rec;
      rec.id = next_id++;
      rec.layer = static_cast<int>(layer);
      rec.index_in_layer = u;
      rec.slices.push_back({weight_param, u * fan_in, (u + 1) * fan_in});
      rec.slices.push_back({weight_param + 1, u, u + 1});
      reg.neurons_.push_back(std::move(rec));
    }
    reg.param_shapes_.push_back({width, fan_in});
    reg.param_shapes_.push_back({width});
  }
  return reg;
}

void NeuronRegistry::validate_partition() const {
  // Cover + disjoint: per parameter tensor, mark every element once.
  std::vector<std::vector<char>> seen;
  seen.reserve(param_shapes_.size());
  for (const auto& s : param_shapes_)
    seen.emplace_back(static_cast<std::size_t>(numel_of(s)), 0);
  for (const auto& rec : neurons_) {
    for (const auto& sl : rec.slices) {
      if (sl.param < 0 || sl.param >= static_cast<int>(seen.size()))
        throw StateError("neuron slice references unknown parameter tensor");
      auto& marks = seen[sl.param];
      if (sl.begin < 0 || sl.end > static_cast<i64>(marks.size()) || sl.begin >= sl.end)
        throw StateError("neuron slice out of bounds");
      for (i64 i = sl.begin; i < sl.end; ++i) {
        if (marks[i]) throw StateError("parameter element covered by two neurons");
        marks[i] = 1;
      }
    }
  }
  for (const auto& marks : seen)
    if (std::find(marks.begin(), marks.end(), 0) != marks.end())
      throw StateError("parameter element not covered by any neuron");
}

}  // namespace npc
