#pragma once

// Brute-force reference implementations used as independent oracles. They
// recompute forward passes, gradients, importance criteria and updates with
// plain per-sample loops in definitional order, sharing no code with the
// engine under test.

#include <algorithm>
#include <cmath>
#include <vector>

#include "npc/common.hpp"

namespace oracle {

using npc::i64;

// Two-layer dense net: x[N x I] -> relu(W1 x + b1)[N x U] -> W2 h + b2
// [N x K] -> masked cross entropy over `classes`.
struct DenseNet {
  i64 n, in, units, classes_total;
  std::vector<double> x;            // N x I
  std::vector<double> w1, b1;       // U x I, U
  std::vector<double> w2, b2;       // K x U, K
  std::vector<int> labels;          // N
  std::vector<int> classes;         // task subset

  std::vector<double> h_pre, h, z;  // forward intermediates
  std::vector<double> dh, dz;       // gradients at the taps
  std::vector<double> dw1, db1, dw2, db2;
  double loss = 0.0;

  void forward_backward() {
    h_pre.assign(n * units, 0.0);
    h.assign(n * units, 0.0);
    z.assign(n * classes_total, 0.0);
    for (i64 r = 0; r < n; ++r) {
      for (i64 u = 0; u < units; ++u) {
        double acc = 0.0;
        for (i64 i = 0; i < in; ++i) acc += x[r * in + i] * w1[u * in + i];
        double v = acc;
        v += b1[u];
        h_pre[r * units + u] = v;
        h[r * units + u] = v > 0.0 ? v : 0.0;
      }
      for (i64 k = 0; k < classes_total; ++k) {
        double acc = 0.0;
        for (i64 u = 0; u < units; ++u) acc += h[r * units + u] * w2[k * units + u];
        double v = acc;
        v += b2[k];
        z[r * classes_total + k] = v;
      }
    }
    // masked cross entropy, batch mean
    loss = 0.0;
    dz.assign(n * classes_total, 0.0);
    const double g = 1.0 / static_cast<double>(n);
    for (i64 r = 0; r < n; ++r) {
      const double* zr = z.data() + r * classes_total;
      double zmax = zr[classes[0]];
      for (std::size_t j = 1; j < classes.size(); ++j) zmax = std::max(zmax, zr[classes[j]]);
      double denom = 0.0;
      for (std::size_t j = 0; j < classes.size(); ++j) denom += std::exp(zr[classes[j]] - zmax);
      const double lse = zmax + std::log(denom);
      for (std::size_t j = 0; j < classes.size(); ++j)
        dz[r * classes_total + classes[j]] += g * std::exp(zr[classes[j]] - lse);
      dz[r * classes_total + labels[r]] -= g;
      loss += lse - zr[labels[r]];
    }
    loss /= static_cast<double>(n);
    // backprop
    dh.assign(n * units, 0.0);
    dw2.assign(classes_total * units, 0.0);
    db2.assign(classes_total, 0.0);
    for (i64 r = 0; r < n; ++r)
      for (i64 u = 0; u < units; ++u) {
        double acc = 0.0;
        for (i64 k = 0; k < classes_total; ++k)
          acc += dz[r * classes_total + k] * w2[k * units + u];
        dh[r * units + u] = acc;
      }
    for (i64 k = 0; k < classes_total; ++k) {
      double acc_b = 0.0;
      for (i64 u = 0; u < units; ++u) {
        double acc = 0.0;
        for (i64 r = 0; r < n; ++r) acc += dz[r * classes_total + k] * h[r * units + u];
        dw2[k * units + u] = acc;
      }
      for (i64 r = 0; r < n; ++r) acc_b += dz[r * classes_total + k];
      db2[k] = acc_b;
    }
    dw1.assign(units * in, 0.0);
    db1.assign(units, 0.0);
    for (i64 u = 0; u < units; ++u) {
      for (i64 i = 0; i < in; ++i) {
        double acc = 0.0;
        for (i64 r = 0; r < n; ++r) {
          const double dpre = h_pre[r * units + u] > 0.0 ? dh[r * units + u] : 0.0;
          acc += dpre * x[r * in + i];
        }
        dw1[u * in + i] = acc;
      }
      double acc_b = 0.0;
      for (i64 r = 0; r < n; ++r)
        acc_b += h_pre[r * units + u] > 0.0 ? dh[r * units + u] : 0.0;
      db1[u] = acc_b;
    }
  }

  // Dense-tap raw criterion: batch mean of |n * dL/dn| per unit.
  std::vector<double> raw_hidden() const {
    std::vector<double> out(units, 0.0);
    for (i64 r = 0; r < n; ++r)
      for (i64 u = 0; u < units; ++u)
        out[u] += std::abs(h[r * units + u] * dh[r * units + u]);
    for (i64 u = 0; u < units; ++u) out[u] /= static_cast<double>(n);
    return out;
  }

  std::vector<double> raw_output() const {
    std::vector<double> out(classes_total, 0.0);
    for (i64 r = 0; r < n; ++r)
      for (i64 k = 0; k < classes_total; ++k)
        out[k] += std::abs(z[r * classes_total + k] * dz[r * classes_total + k]);
    for (i64 k = 0; k < classes_total; ++k) out[k] /= static_cast<double>(n);
    return out;
  }
};

// Conv-tap raw criterion on explicit arrays: per sample the signed product
// is averaged over positions, then |.|, then the batch mean.
inline std::vector<double> conv_raw(const std::vector<double>& tap,
                                    const std::vector<double>& grad, i64 n, i64 f, i64 hw) {
  std::vector<double> out(f, 0.0);
  for (i64 r = 0; r < n; ++r)
    for (i64 c = 0; c < f; ++c) {
      double acc = 0.0;
      for (i64 i = 0; i < hw; ++i)
        acc += tap[(r * f + c) * hw + i] * grad[(r * f + c) * hw + i];
      out[c] += std::abs(acc / static_cast<double>(hw));
    }
  for (i64 c = 0; c < f; ++c) out[c] /= static_cast<double>(n);
  return out;
}

inline std::vector<double> normalize(const std::vector<double>& raw,
                                     const std::vector<std::pair<i64, i64>>& layers,
                                     double eps = 1e-12) {
  std::vector<double> out(raw.size());
  for (auto [first, count] : layers) {
    double mean = 0.0;
    for (i64 i = 0; i < count; ++i) mean += raw[first + i];
    mean /= static_cast<double>(count);
    const double denom = mean > 0.0 ? mean : eps;
    for (i64 i = 0; i < count; ++i) out[first + i] = raw[first + i] / denom;
  }
  return out;
}

inline double learning_rate(double c, double alpha, double beta, double eta_max) {
  if (c <= 0.0) return eta_max;
  const double inner = std::sqrt(beta / c) - 1.0;
  if (inner <= 0.0) return 0.0;
  return std::min(eta_max, alpha * std::sqrt(inner));
}

// theta <- theta - eta * g element by element, double arithmetic.
template <typename T>
void sgd_update(std::vector<T>& values, const std::vector<T>& grads, double eta) {
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = static_cast<T>(static_cast<double>(values[i]) -
                               eta * static_cast<double>(grads[i]));
}

}  // namespace oracle
