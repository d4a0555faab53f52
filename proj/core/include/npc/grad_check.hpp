#pragma once

#include <functional>
#include <span>

#include "npc/tensor.hpp"

namespace npc {

// Central-difference gradient verification. `f` rebuilds the scalar loss
// from the current parameter values on every call; the analytic gradients
// come from one reverse sweep, the numeric ones from re-evaluating f at
// perturbed parameters. Returns the max over all parameter elements of
//   |analytic - central| / max(1, |central|).
template <typename T>
T grad_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> params,
             T eps = T(1e-5)) {
  for (auto& p : params) p.zero_grad();
  Tensor<T> loss = f();
  if (loss.numel() != 1) throw StateError("grad_check expects a scalar-valued expression");
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  T max_err = T(0);
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto vals = params[pi].value();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const T saved = vals[i];
      vals[i] = saved + eps;
      const T up = f().item();
      vals[i] = saved - eps;
      const T down = f().item();
      vals[i] = saved;
      const T central = (up - down) / (T(2) * eps);
      const T err = std::abs(analytic[pi][i] - central) /
                    std::max(T(1), std::abs(central));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace npc
