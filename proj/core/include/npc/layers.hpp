#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "npc/ops.hpp"
#include "npc/rng.hpp"

namespace npc {

// Per-sample, per-channel normalization over spatial positions only, no
// learned scale/shift, identical in training and evaluation.
template <typename T>
Tensor<T> instance_norm2d(Tensor<T> x, T eps = T(1e-5)) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("instance_norm2d expects NCHW, got " + shape_str(xs));
  const i64 planes = xs[0] * xs[1];
  const i64 hw = xs[2] * xs[3];
  std::vector<T> out(x.value().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(planes));
  const T* xp = x.value().data();
  const T inv_hw = T(1) / static_cast<T>(hw);
  for (i64 p = 0; p < planes; ++p) {
    const T* src = xp + p * hw;
    const T m = detail::lane_sum<T>(src, hw) * inv_hw;
    T var = T(0);
    {
      T lanes[8] = {};
      i64 i = 0;
      for (; i + 8 <= hw; i += 8)
        for (int l = 0; l < 8; ++l) {
          const T d = src[i + l] - m;
          lanes[l] += d * d;
        }
      for (int l = 0; i + l < hw; ++l) {
        const T d = src[i + l] - m;
        lanes[l] += d * d;
      }
      var = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
            ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    }
    var *= inv_hw;
    const T s = T(1) / std::sqrt(var + eps);
    (*inv_std)[p] = s;
    T* dst = out.data() + p * hw;
    for (i64 i = 0; i < hw; ++i) dst[i] = (src[i] - m) * s;
  }
  auto backward = [x, inv_std, planes, hw, inv_hw](typename Tensor<T>::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto xg = x.grad();
    const T* y = self.value.data();
    const T* g = self.grad.data();
    for (i64 p = 0; p < planes; ++p) {
      const T* yp = y + p * hw;
      const T* gp = g + p * hw;
      const T gmean = detail::lane_sum<T>(gp, hw) * inv_hw;
      const T gymean = detail::lane_dot<T>(gp, yp, hw) * inv_hw;
      const T s = (*inv_std)[p];
      T* dst = xg.data() + p * hw;
      for (i64 i = 0; i < hw; ++i) dst[i] += s * (gp[i] - gmean - yp[i] * gymean);
    }
  };
  return Tensor<T>::make_op(x.shape(), std::move(out), {x}, std::move(backward));
}

// instance_norm2d followed by relu as one node: one saved buffer for the
// pre-relu normalized values and a single per-plane backward pass. The
// training path uses this; the standalone ops keep the same semantics.
template <typename T>
Tensor<T> instance_norm_relu(Tensor<T> x, T eps = T(1e-5)) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("instance_norm_relu expects NCHW, got " + shape_str(xs));
  const i64 planes = xs[0] * xs[1];
  const i64 hw = xs[2] * xs[3];
  std::vector<T> out(x.value().size());
  auto normed = std::make_shared<detail::Scratch<T>>(planes * hw);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(planes));
  const T* xp = x.value().data();
  const T inv_hw = T(1) / static_cast<T>(hw);
  for (i64 p = 0; p < planes; ++p) {
    const T* src = xp + p * hw;
    const T m = detail::lane_sum<T>(src, hw) * inv_hw;
    T lanes[8] = {};
    i64 i = 0;
    for (; i + 8 <= hw; i += 8)
      for (int l = 0; l < 8; ++l) {
        const T d = src[i + l] - m;
        lanes[l] += d * d;
      }
    for (int l = 0; i + l < hw; ++l) {
      const T d = src[i + l] - m;
      lanes[l] += d * d;
    }
    const T var = (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                   ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))) *
                  inv_hw;
    const T s = T(1) / std::sqrt(var + eps);
    (*inv_std)[p] = s;
    T* y = normed->get() + p * hw;
    T* o = out.data() + p * hw;
    for (i64 j = 0; j < hw; ++j) {
      const T v = (src[j] - m) * s;
      y[j] = v;
      o[j] = v > T(0) ? v : T(0);
    }
  }
  auto backward = [x, normed, inv_std, planes, hw,
                   inv_hw](typename Tensor<T>::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto xg = x.grad();
    const T* g = self.grad.data();
    for (i64 p = 0; p < planes; ++p) {
      const T* yp = normed->get() + p * hw;
      const T* gp = g + p * hw;
      // relu mask folds into the plane sums
      T ls[8] = {}, ld[8] = {};
      i64 i = 0;
      for (; i + 8 <= hw; i += 8)
        for (int l = 0; l < 8; ++l) {
          const T gm = yp[i + l] > T(0) ? gp[i + l] : T(0);
          ls[l] += gm;
          ld[l] += gm * yp[i + l];
        }
      for (int l = 0; i + l < hw; ++l) {
        const T gm = yp[i + l] > T(0) ? gp[i + l] : T(0);
        ls[l] += gm;
        ld[l] += gm * yp[i + l];
      }
      const T gmean = ((((ls[0] + ls[1]) + (ls[2] + ls[3])) +
                        ((ls[4] + ls[5]) + (ls[6] + ls[7])))) *
                      inv_hw;
      const T gymean = ((((ld[0] + ld[1]) + (ld[2] + ld[3])) +
                         ((ld[4] + ld[5]) + (ld[6] + ld[7])))) *
                       inv_hw;
      const T s = (*inv_std)[p];
      T* dst = xg.data() + p * hw;
      for (i64 j = 0; j < hw; ++j) {
        const T gm = yp[j] > T(0) ? gp[j] : T(0);
        dst[j] += s * (gm - gmean - yp[j] * gymean);
      }
    }
  };
  return Tensor<T>::make_op(x.shape(), std::move(out), {x}, std::move(backward));
}

// Inverted dropout: training scales surviving activations by 1/(1-rate) so
// evaluation is the identity.
template <typename T>
Tensor<T> dropout(Tensor<T> x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.value().size());
  std::vector<T> out(x.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T m = rng.bernoulli(rate) ? T(0) : keep_scale;
    (*mask)[i] = m;
    out[i] = x.value()[i] * m;
  }
  auto backward = [x, mask](typename Tensor<T>::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto xg = x.grad();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xg[i] += g[i] * (*mask)[i];
  };
  return Tensor<T>::make_op(x.shape(), std::move(out), {x}, std::move(backward));
}

// Mean negative log-likelihood with the softmax restricted to `classes`;
// logits outside the set receive exactly zero gradient.
template <typename T>
Tensor<T> masked_cross_entropy(Tensor<T> logits, const std::vector<int>& labels,
                               const std::vector<int>& classes) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2) throw ShapeError("masked_cross_entropy expects [N x K] logits");
  const i64 n = ls[0], k = ls[1];
  if (static_cast<i64>(labels.size()) != n)
    throw ShapeError("label count does not match batch size");
  if (classes.empty()) throw ConfigError("task class set is empty");
  for (int c : classes)
    if (c < 0 || c >= k) throw ConfigError("task class index out of range: " + std::to_string(c));
  std::vector<int> class_pos(static_cast<std::size_t>(k), -1);
  for (std::size_t j = 0; j < classes.size(); ++j) class_pos[classes[j]] = static_cast<int>(j);
  for (int lab : labels)
    if (lab < 0 || lab >= k || class_pos[lab] < 0)
      throw DataError("label " + std::to_string(lab) + " is outside the current task's classes");

  const std::size_t m = classes.size();
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * m);
  const T* zp = logits.value().data();
  T loss = T(0);
  for (i64 r = 0; r < n; ++r) {
    const T* row = zp + r * k;
    T zmax = row[classes[0]];
    for (std::size_t j = 1; j < m; ++j) zmax = std::max(zmax, row[classes[j]]);
    T denom = T(0);
    for (std::size_t j = 0; j < m; ++j) denom += std::exp(row[classes[j]] - zmax);
    const T lse = zmax + std::log(denom);
    for (std::size_t j = 0; j < m; ++j)
      (*probs)[r * m + j] = std::exp(row[classes[j]] - lse);
    loss += lse - row[labels[r]];
  }
  loss /= static_cast<T>(n);

  auto backward = [logits, probs, labels, classes, class_pos, n, k,
                   m](typename Tensor<T>::Node& self) mutable {
    if (!logits.requires_grad()) return;
    auto lg = logits.grad();
    const T g = self.grad[0] / static_cast<T>(n);
    for (i64 r = 0; r < n; ++r) {
      T* grow = lg.data() + r * k;
      const T* prow = probs->data() + r * m;
      for (std::size_t j = 0; j < m; ++j) grow[classes[j]] += g * prow[j];
      grow[labels[r]] -= g;
    }
  };
  return Tensor<T>::make_op({1}, {loss}, {logits}, std::move(backward));
}

}  // namespace npc
