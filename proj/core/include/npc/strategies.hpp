#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "npc/importance.hpp"
#include "npc/layers.hpp"
#include "npc/model.hpp"

namespace npc {

enum class StrategyKind { npc, cpc, ewc, mas, si, finetune };

inline std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::npc: return "npc";
    case StrategyKind::cpc: return "cpc";
    case StrategyKind::ewc: return "ewc";
    case StrategyKind::mas: return "mas";
    case StrategyKind::si: return "si";
    case StrategyKind::finetune: return "finetune";
  }
  throw ConfigError("unknown strategy kind");
}

inline StrategyKind strategy_from_string(const std::string& s) {
  if (s == "npc") return StrategyKind::npc;
  if (s == "cpc") return StrategyKind::cpc;
  if (s == "ewc") return StrategyKind::ewc;
  if (s == "mas") return StrategyKind::mas;
  if (s == "si") return StrategyKind::si;
  if (s == "finetune") return StrategyKind::finetune;
  throw ConfigError("unknown strategy '" + s + "'");
}

inline bool is_penalty_strategy(StrategyKind k) {
  return k == StrategyKind::ewc || k == StrategyKind::mas || k == StrategyKind::si;
}

// ---------------------------------------------------------------------------
// Neuron-level plasticity control
// ---------------------------------------------------------------------------

struct NpcConfig {
  double alpha = 0.1;
  double beta = 0.7;
  double eta_max = 0.1;

  void validate() const {
    if (alpha <= 0 || beta <= 0 || eta_max <= 0)
      throw ConfigError("alpha, beta and eta_max must be strictly positive");
  }
};

// Per-neuron learning rate from its importance:
//   eta = min(eta_max, alpha * sqrt(max(sqrt(beta/C) - 1, 0)))
// Monotone non-increasing in C, continuous at C == beta, and the C -> 0
// divergence is clamped to eta_max.
inline double npc_learning_rate(double c, const NpcConfig& cfg) {
  if (c <= 0.0) return cfg.eta_max;
  const double inner = std::sqrt(cfg.beta / c) - 1.0;
  if (inner <= 0.0) return 0.0;
  return std::min(cfg.eta_max, cfg.alpha * std::sqrt(inner));
}

// SGD update where every incoming parameter of neuron i (weights and bias)
// moves with that neuron's rate. The registry slices partition the
// parameters, so each element is touched exactly once.
template <typename T>
void npc_step(std::vector<Tensor<T>>& params, const NeuronRegistry& registry,
              std::span<const double> importance, const NpcConfig& cfg) {
  if (static_cast<i64>(importance.size()) != registry.neuron_count())
    throw StateError("importance vector does not match registry");
  for (const auto& rec : registry.neurons()) {
    const double eta = npc_learning_rate(importance[rec.id], cfg);
    if (eta == 0.0) continue;
    for (const auto& sl : rec.slices) {
      auto value = params[sl.param].value();
      auto grad = params[sl.param].grad();
      for (i64 i = sl.begin; i < sl.end; ++i)
        value[i] = static_cast<T>(static_cast<double>(value[i]) -
                                  eta * static_cast<double>(grad[i]));
    }
  }
}

// ---------------------------------------------------------------------------
// Connection-level variant: same criterion/normalization/rate machinery at
// parameter granularity, normalized over each layer's parameter set.
// ---------------------------------------------------------------------------

struct CpcState {
  std::vector<std::vector<double>> C;  // one flat array per parameter tensor
  std::vector<std::vector<double>> last_raw;
  std::vector<std::vector<double>> last_normalized;
  double delta = 1e-3;
  bool swap_delta = false;
  i64 step = 0;

  static CpcState create(const std::vector<Shape>& param_shapes, double delta = 1e-3,
                         bool swap_delta = false) {
    if (delta <= 0.0 || delta >= 1.0) throw ConfigError("importance delta must lie in (0, 1)");
    CpcState s;
    for (const auto& shape : param_shapes) {
      s.C.emplace_back(static_cast<std::size_t>(numel_of(shape)), 0.0);
      s.last_raw.emplace_back(static_cast<std::size_t>(numel_of(shape)), 0.0);
      s.last_normalized.emplace_back(static_cast<std::size_t>(numel_of(shape)), 0.0);
    }
    s.delta = delta;
    s.swap_delta = swap_delta;
    return s;
  }

  i64 total() const {
    i64 n = 0;
    for (const auto& v : C) n += static_cast<i64>(v.size());
    return n;
  }
};

// Raw criterion |theta * dL/dtheta| per parameter, arithmetic-mean
// normalization over each group's parameters, then the same running
// combination as the neuron-level state. The default grouping is one group
// per layer (weights and bias together), mirroring the per-layer neuron
// normalization.
template <typename T>
void cpc_update_importance(CpcState& state, const std::vector<Tensor<T>>& params,
                           const std::vector<std::vector<int>>& groups) {
  if (state.C.size() != params.size()) throw StateError("cpc state does not match params");
  const double keep = state.swap_delta ? 1.0 - state.delta : state.delta;
  const double take = 1.0 - keep;
  for (const auto& group : groups) {
    double mean = 0.0;
    i64 count = 0;
    for (int p : group) {
      auto value = params[p].value();
      auto grad = params[p].grad();
      auto& raw = state.last_raw[p];
      for (std::size_t i = 0; i < value.size(); ++i) {
        raw[i] = std::abs(static_cast<double>(value[i]) * static_cast<double>(grad[i]));
        mean += raw[i];
      }
      count += static_cast<i64>(value.size());
    }
    mean /= static_cast<double>(count);
    const double denom = mean > 0.0 ? mean : kLayerNormEps;
    for (int p : group) {
      auto& raw = state.last_raw[p];
      auto& norm = state.last_normalized[p];
      auto& c = state.C[p];
      for (std::size_t i = 0; i < raw.size(); ++i) {
        norm[i] = raw[i] / denom;
        c[i] = keep * c[i] + take * norm[i];
      }
    }
  }
  ++state.step;
}

template <typename T>
void cpc_update_importance(CpcState& state, const std::vector<Tensor<T>>& params) {
  std::vector<std::vector<int>> groups;
  for (std::size_t l = 0; 2 * l + 1 < params.size(); ++l)
    groups.push_back({static_cast<int>(2 * l), static_cast<int>(2 * l + 1)});
  cpc_update_importance(state, params, groups);
}

template <typename T>
void cpc_step(std::vector<Tensor<T>>& params, const CpcState& state, const NpcConfig& cfg) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto value = params[p].value();
    auto grad = params[p].grad();
    const auto& c = state.C[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double eta = npc_learning_rate(c[i], cfg);
      if (eta == 0.0) continue;
      value[i] = static_cast<T>(static_cast<double>(value[i]) -
                                eta * static_cast<double>(grad[i]));
    }
  }
}

// ---------------------------------------------------------------------------
// Quadratic-penalty family (EWC / MAS / SI) and plain fine-tuning
// ---------------------------------------------------------------------------

template <typename T>
struct PenaltyState {
  struct TaskAnchor {
    std::vector<std::vector<T>> params;        // values at task end
    std::vector<std::vector<double>> weights;  // importance per element
  };
  double lambda = 1.0;
  std::vector<TaskAnchor> tasks;

  i64 anchor_count() const { return static_cast<i64>(tasks.size()); }
};

// lambda * sum_k sum_i W_{i,k} (theta_i - theta_{i,k})^2 as a graph node;
// its gradient vanishes exactly at the anchors.
template <typename T>
Tensor<T> penalty_loss(const std::vector<Tensor<T>>& params, const PenaltyState<T>& state) {
  if (state.tasks.empty()) return Tensor<T>::scalar(T(0));
  double acc = 0.0;
  for (const auto& task : state.tasks) {
    if (task.params.size() != params.size())
      throw StateError("penalty anchor does not match parameter list");
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto value = params[p].value();
      const auto& anchor = task.params[p];
      const auto& w = task.weights[p];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double d = static_cast<double>(value[i]) - static_cast<double>(anchor[i]);
        acc += w[i] * d * d;
      }
    }
  }
  const double lambda = state.lambda;
  std::vector<Tensor<T>> handles(params.begin(), params.end());
  // Copying the anchors into the closure keeps the node valid even if the
  // strategy state is destroyed before the graph.
  auto snapshot = std::make_shared<PenaltyState<T>>(state);
  auto backward = [handles, snapshot, lambda](typename Tensor<T>::Node& self) mutable {
    const double g = static_cast<double>(self.grad[0]) * lambda * 2.0;
    for (const auto& task : snapshot->tasks) {
      for (std::size_t p = 0; p < handles.size(); ++p) {
        if (!handles[p].requires_grad()) continue;
        auto value = handles[p].value();
        auto grad = handles[p].grad();
        const auto& anchor = task.params[p];
        const auto& w = task.weights[p];
        for (std::size_t i = 0; i < value.size(); ++i) {
          const double d = static_cast<double>(value[i]) - static_cast<double>(anchor[i]);
          grad[i] += static_cast<T>(g * w[i] * d);
        }
      }
    }
  };
  return Tensor<T>::make_op({1}, {static_cast<T>(lambda * acc)}, std::move(handles),
                            std::move(backward));
}

// Expected Fisher diagonal under the model's own predictive distribution,
// restricted to the task's classes: mean over samples of
// sum_y p(y|x) (d log p(y|x) / d theta)^2. `forward` maps one sample index
// to the [1 x K] logits tensor, rebuilding the graph each call.
template <typename T, typename ForwardFn>
std::vector<std::vector<double>> fisher_diagonal(ForwardFn&& forward, i64 samples,
                                                 std::vector<Tensor<T>> params,
                                                 const std::vector<int>& classes) {
  if (samples < 1) throw DataError("fisher estimation needs a non-empty sample set");
  std::vector<std::vector<double>> fisher;
  for (const auto& p : params) fisher.emplace_back(p.value().size(), 0.0);

  for (i64 n = 0; n < samples; ++n) {
    std::vector<double> probs(classes.size());
    {
      NoGradGuard ng;
      Tensor<T> logits = forward(n);
      double zmax = static_cast<double>(logits.value()[classes[0]]);
      for (int c : classes) zmax = std::max(zmax, static_cast<double>(logits.value()[c]));
      double denom = 0.0;
      for (std::size_t j = 0; j < classes.size(); ++j) {
        probs[j] = std::exp(static_cast<double>(logits.value()[classes[j]]) - zmax);
        denom += probs[j];
      }
      for (auto& p : probs) p /= denom;
    }
    for (std::size_t j = 0; j < classes.size(); ++j) {
      for (auto& p : params) p.zero_grad();
      Tensor<T> logits = forward(n);
      // -log p(y|x) over the task's classes
      Tensor<T> nll = masked_cross_entropy(logits, {classes[j]}, classes);
      nll.backward();
      for (std::size_t p = 0; p < fisher.size(); ++p) {
        auto grad = params[p].grad();
        for (std::size_t i = 0; i < grad.size(); ++i) {
          const double g = static_cast<double>(grad[i]);
          fisher[p][i] += probs[j] * g * g;
        }
      }
    }
  }
  for (auto& f : fisher)
    for (auto& v : f) v /= static_cast<double>(samples);
  for (auto& p : params) p.zero_grad();
  return fisher;
}

// Mean over samples of |d ||f(x)||^2 / d theta| with f the full output
// vector.
template <typename T, typename ForwardFn>
std::vector<std::vector<double>> output_norm_sensitivity(ForwardFn&& forward, i64 samples,
                                                         std::vector<Tensor<T>> params) {
  if (samples < 1) throw DataError("sensitivity estimation needs a non-empty sample set");
  std::vector<std::vector<double>> weights;
  for (const auto& p : params) weights.emplace_back(p.value().size(), 0.0);

  for (i64 n = 0; n < samples; ++n) {
    for (auto& p : params) p.zero_grad();
    Tensor<T> out = forward(n);
    Tensor<T> norm2 = sum(mul(out, out));
    norm2.backward();
    for (std::size_t p = 0; p < weights.size(); ++p) {
      auto grad = params[p].grad();
      for (std::size_t i = 0; i < grad.size(); ++i)
        weights[p][i] += std::abs(static_cast<double>(grad[i]));
    }
  }
  for (auto& w : weights)
    for (auto& v : w) v /= static_cast<double>(samples);
  for (auto& p : params) p.zero_grad();
  return weights;
}

namespace detail {
template <typename T>
Tensor<T> slice_sample(const Tensor<T>& inputs, i64 n) {
  const Shape& s = inputs.shape();
  const i64 len = s[1] * s[2] * s[3];
  std::vector<T> one(inputs.value().begin() + n * len, inputs.value().begin() + (n + 1) * len);
  return Tensor<T>::from_data({1, s[1], s[2], s[3]}, std::move(one));
}
}  // namespace detail

template <typename T>
std::vector<std::vector<double>> ewc_importance(Model<T>& model, const Tensor<T>& inputs,
                                                const std::vector<int>& classes) {
  const Shape& s = inputs.shape();
  if (s.size() != 4 || s[0] < 1) throw DataError("ewc_importance needs a non-empty sample batch");
  auto forward = [&](i64 n) {
    return model.forward(detail::slice_sample(inputs, n), false).logits;
  };
  return fisher_diagonal<T>(forward, s[0], model.params(), classes);
}

template <typename T>
std::vector<std::vector<double>> mas_importance(Model<T>& model, const Tensor<T>& inputs) {
  const Shape& s = inputs.shape();
  if (s.size() != 4 || s[0] < 1) throw DataError("mas_importance needs a non-empty sample batch");
  auto forward = [&](i64 n) {
    return model.forward(detail::slice_sample(inputs, n), false).logits;
  };
  return output_norm_sensitivity<T>(forward, s[0], model.params());
}

// Path-integral accumulator: omega_i += -g_i * dtheta_i per step; folded
// into per-task anchor weights at task boundaries.
struct SiState {
  std::vector<std::vector<double>> omega;
  std::vector<std::vector<double>> start;
  double xi = 1e-3;

  template <typename T>
  static SiState create(const std::vector<Tensor<T>>& params, double xi = 1e-3) {
    SiState s;
    s.xi = xi;
    for (const auto& p : params) {
      s.omega.emplace_back(p.value().size(), 0.0);
      s.start.emplace_back(p.value().begin(), p.value().end());
    }
    return s;
  }

  template <typename T>
  void begin_task(const std::vector<Tensor<T>>& params) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      std::fill(omega[p].begin(), omega[p].end(), 0.0);
      start[p].assign(params[p].value().begin(), params[p].value().end());
    }
  }
};

// Plain SGD step that also integrates the loss-change contribution:
// dtheta = -lr*g, omega += -g*dtheta = lr*g^2.
template <typename T>
void si_sgd_step(std::vector<Tensor<T>>& params, SiState& state, double lr) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto value = params[p].value();
    auto grad = params[p].grad();
    auto& omega = state.omega[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      omega[i] += lr * g * g;
      value[i] = static_cast<T>(static_cast<double>(value[i]) - lr * g);
    }
  }
}

// W = max(omega, 0) / ((theta_end - theta_start)^2 + xi); resets the
// accumulator for the next task.
template <typename T>
std::vector<std::vector<double>> si_fold(SiState& state, const std::vector<Tensor<T>>& params) {
  std::vector<std::vector<double>> weights;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto value = params[p].value();
    auto& w = weights.emplace_back(value.size(), 0.0);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double d = static_cast<double>(value[i]) - state.start[p][i];
      w[i] = std::max(state.omega[p][i], 0.0) / (d * d + state.xi);
    }
  }
  state.begin_task(params);
  return weights;
}

template <typename T>
void finetune_step(std::vector<Tensor<T>>& params, double lr) {
  for (auto& p : params) {
    auto value = p.value();
    auto grad = p.grad();
    for (std::size_t i = 0; i < value.size(); ++i)
      value[i] = static_cast<T>(static_cast<double>(value[i]) -
                                lr * static_cast<double>(grad[i]));
  }
}

template <typename T>
void append_anchor(PenaltyState<T>& state, const std::vector<Tensor<T>>& params,
                   std::vector<std::vector<double>> weights) {
  typename PenaltyState<T>::TaskAnchor anchor;
  for (const auto& p : params)
    anchor.params.emplace_back(p.value().begin(), p.value().end());
  anchor.weights = std::move(weights);
  state.tasks.push_back(std::move(anchor));
}

}  // namespace npc
