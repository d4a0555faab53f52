#pragma once

#include <vector>

#include "npc/model_spec.hpp"

namespace npc {

// Half-open range of elements inside one parameter tensor.
struct ParamSlice {
  int param;  // index into the model's parameter list (registry order)
  i64 begin;
  i64 end;
};

// One logical neuron: a conv filter or a dense unit (classifier units
// included). Its incoming parameters are the filter tensor / weight row
// plus the bias element.
struct NeuronRecord {
  i64 id;              // global index, contiguous by layer
  int layer;           // neuron-layer index
  i64 index_in_layer;  // filter / unit index within the layer
  std::vector<ParamSlice> slices;
};

struct LayerRange {
  i64 first_neuron;
  i64 count;
};

// Maps every trainable parameter to exactly one neuron. The parameter list
// order is fixed: weight then bias for each layer, layers in forward order.
class NeuronRegistry {
 public:
  const std::vector<NeuronRecord>& neurons() const { return neurons_; }
  const std::vector<LayerRange>& layers() const { return layers_; }
  i64 neuron_count() const { return static_cast<i64>(neurons_.size()); }
  int layer_count() const { return static_cast<int>(layers_.size()); }
  const std::vector<Shape>& param_shapes() const { return param_shapes_; }

  // Throws StateError unless the slices exactly partition the parameters.
  void validate_partition() const;

  friend NeuronRegistry build_registry(const ModelSpec& spec);
  friend NeuronRegistry build_dense_registry(const std::vector<std::pair<i64, i64>>& layers);

 private:
  std::vector<NeuronRecord> neurons_;
  std::vector<LayerRange> layers_;
  std::vector<Shape> param_shapes_;
};

NeuronRegistry build_registry(const ModelSpec& spec);

// Registry over a bare stack of dense (width, fan_in) layers with the same
// weight/bias parameter layout; used for reduced nets outside the CNN.
NeuronRegistry build_dense_registry(const std::vector<std::pair<i64, i64>>& layers);

}  // namespace npc
