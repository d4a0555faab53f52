#pragma once

#include <span>
#include <vector>

#include "npc/model.hpp"

// Per-neuron importance: raw Taylor criterion from activation taps, layer
// normalization by the arithmetic mean, and the running per-step
// combination. All accounting is in double regardless of the training
// scalar type; the layer-mean invariant is tighter than float affords.

namespace npc {

struct ImportanceState {
  std::vector<double> C;
  std::vector<double> last_raw;
  std::vector<double> last_normalized;
  double delta = 1e-3;
  // The literal combination is C <- delta*C + (1-delta)*cbar. With the
  // small published deltas that keeps almost no history; swap_delta applies
  // the reversed convention C <- (1-delta)*C + delta*cbar instead.
  bool swap_delta = false;
  i64 step = 0;

  static ImportanceState create(i64 neuron_count, double delta = 1e-3,
                                bool swap_delta = false) {
    if (delta <= 0.0 || delta >= 1.0) throw ConfigError("importance delta must lie in (0, 1)");
    ImportanceState s;
    s.C.assign(static_cast<std::size_t>(neuron_count), 0.0);
    s.last_raw.assign(static_cast<std::size_t>(neuron_count), 0.0);
    s.last_normalized.assign(static_cast<std::size_t>(neuron_count), 0.0);
    s.delta = delta;
    s.swap_delta = swap_delta;
    return s;
  }

  i64 size() const { return static_cast<i64>(C.size()); }
};

// Raw criterion for one layer's activation tap. Dense taps [N x U]: batch
// mean of |n * dL/dn| per unit. Conv taps [N x F x H x W]: the signed
// product is averaged over spatial positions first, then the absolute
// value is taken, then the batch mean.
template <typename T>
void taylor_raw_into(const Tensor<T>& tap, std::span<double> out) {
  if (!tap.has_grad()) throw StateError("backward not run: activation tap has no gradient");
  const Shape& s = tap.shape();
  const T* x = tap.value().data();
  const T* g = tap.grad().data();
  if (s.size() == 2) {
    const i64 n = s[0], units = s[1];
    if (static_cast<i64>(out.size()) != units) throw ShapeError("taylor_raw output size mismatch");
    for (i64 u = 0; u < units; ++u) out[u] = 0.0;
    for (i64 r = 0; r < n; ++r) {
      const T* xr = x + r * units;
      const T* gr = g + r * units;
      for (i64 u = 0; u < units; ++u)
        out[u] += std::abs(static_cast<double>(xr[u]) * static_cast<double>(gr[u]));
    }
    for (i64 u = 0; u < units; ++u) out[u] /= static_cast<double>(n);
  } else if (s.size() == 4) {
    const i64 n = s[0], filters = s[1], hw = s[2] * s[3];
    if (static_cast<i64>(out.size()) != filters)
      throw ShapeError("taylor_raw output size mismatch");
    for (i64 f = 0; f < filters; ++f) out[f] = 0.0;
    for (i64 r = 0; r < n; ++r) {
      for (i64 f = 0; f < filters; ++f) {
        const T* xp = x + (r * filters + f) * hw;
        const T* gp = g + (r * filters + f) * hw;
        const double acc = detail::lane_dot<double>(xp, gp, hw);
        out[f] += std::abs(acc / static_cast<double>(hw));
      }
    }
    for (i64 f = 0; f < filters; ++f) out[f] /= static_cast<double>(n);
  } else {
    throw ShapeError("taylor_raw expects a dense [NxU] or conv [NxFxHxW] tap, got " +
                     shape_str(s));
  }
}

template <typename T>
std::vector<double> taylor_raw(const Tensor<T>& tap) {
  const Shape& s = tap.shape();
  if (s.size() != 2 && s.size() != 4)
    throw ShapeError("taylor_raw expects a dense [NxU] or conv [NxFxHxW] tap, got " +
                     shape_str(s));
  std::vector<double> out(static_cast<std::size_t>(s[1]));
  taylor_raw_into(tap, out);
  return out;
}

constexpr double kLayerNormEps = 1e-12;

// cbar_i = c_i / (layer mean of c). The eps guard engages only for an
// all-zero layer (which maps to all zeros rather than NaN); a positive
// mean divides exactly, keeping the normalization scale-free to rounding.
inline std::vector<double> layer_normalize(const std::vector<double>& raw,
                                           const std::vector<LayerRange>& layers) {
  std::vector<double> out(raw.size());
  for (const auto& lr : layers) {
    if (lr.count < 1) throw ConfigError("layer with no neurons");
    double mean = 0.0;
    for (i64 i = 0; i < lr.count; ++i) mean += raw[lr.first_neuron + i];
    mean /= static_cast<double>(lr.count);
    const double denom = mean > 0.0 ? mean : kLayerNormEps;
    for (i64 i = 0; i < lr.count; ++i)
      out[lr.first_neuron + i] = raw[lr.first_neuron + i] / denom;
  }
  return out;
}

inline void ema_update(ImportanceState& state, const std::vector<double>& normalized) {
  if (normalized.size() != state.C.size()) throw ShapeError("importance size mismatch");
  const double keep = state.swap_delta ? 1.0 - state.delta : state.delta;
  const double take = 1.0 - keep;
  for (std::size_t i = 0; i < state.C.size(); ++i)
    state.C[i] = keep * state.C[i] + take * normalized[i];
  state.last_normalized = normalized;
  ++state.step;
}

// One importance update from a forward pass whose loss has been
// backpropagated: raw criterion per layer, normalize, combine.
template <typename T>
void update_importance(ImportanceState& state, const NeuronRegistry& registry,
                       const ForwardResult<T>& fwd) {
  if (state.size() != registry.neuron_count())
    throw ShapeError("importance state does not match registry");
  std::vector<double> raw(state.C.size());
  const auto& layers = registry.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    taylor_raw_into(fwd.taps[l],
                    std::span<double>(raw.data() + layers[l].first_neuron,
                                      static_cast<std::size_t>(layers[l].count)));
  }
  state.last_raw = raw;
  ema_update(state, layer_normalize(raw, layers));
}

}  // namespace npc
