#pragma once

#include <Eigen/Core>

#include <memory>

#include "npc/common.hpp"

namespace npc::detail {

// Uninitialized scratch block; every element is written before being read.
template <typename T>
class Scratch {
 public:
  explicit Scratch(i64 n) : data_(new T[static_cast<std::size_t>(n)]) {}
  T* get() { return data_.get(); }
  const T* get() const { return data_.get(); }

 private:
  std::unique_ptr<T[]> data_;
};

// Fixed eight-lane accumulation: breaks the sequential dependence so the
// loop vectorizes, with a lane structure that is identical on every run.
template <typename Acc, typename T>
Acc lane_sum(const T* p, i64 n) {
  Acc lanes[8] = {};
  i64 i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) lanes[l] += static_cast<Acc>(p[i + l]);
  for (int l = 0; i + l < n; ++l) lanes[l] += static_cast<Acc>(p[i + l]);
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

template <typename Acc, typename T>
Acc lane_dot(const T* a, const T* b, i64 n) {
  Acc lanes[8] = {};
  i64 i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) lanes[l] += static_cast<Acc>(a[i + l]) * static_cast<Acc>(b[i + l]);
  for (int l = 0; i + l < n; ++l) lanes[l] += static_cast<Acc>(a[i + l]) * static_cast<Acc>(b[i + l]);
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

// C[M x N] = alpha * op(A) * op(B) + beta * C, row-major, single-threaded.
// Backed by Eigen so the heavy lifting uses packed SIMD kernels; results are
// deterministic for fixed shapes.
template <typename T>
void gemm(bool trans_a, bool trans_b, i64 m, i64 n, i64 k, T alpha, const T* a, i64 lda,
          const T* b, i64 ldb, T beta, T* c, i64 ldc) {
  if (m * n * k <= 4096) {
    // Plain k-ascending accumulation; faster than packed kernels at these
    // sizes and gives loop-level reproducible arithmetic for tiny nets.
    for (i64 i = 0; i < m; ++i) {
      for (i64 j = 0; j < n; ++j) {
        T acc = T(0);
        for (i64 p = 0; p < k; ++p) {
          const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
          const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
          acc += av * bv;
        }
        c[i * ldc + j] = alpha * acc + (beta == T(0) ? T(0) : beta * c[i * ldc + j]);
      }
    }
    return;
  }
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
  using MapMut = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;

  Map A(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  Map B(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  MapMut C(c, m, n, Eigen::OuterStride<>(ldc));

  auto apply = [&](const auto& prod) {
    if (beta == T(0)) {
      if (alpha == T(1))
        C.noalias() = prod;
      else
        C.noalias() = alpha * prod;
    } else {
      // Callers only use beta in {0, 1}.
      if (alpha == T(1))
        C.noalias() += prod;
      else
        C.noalias() += alpha * prod;
    }
  };

  if (!trans_a && !trans_b)
    apply(A * B);
  else if (trans_a && !trans_b)
    apply(A.transpose() * B);
  else if (!trans_a && trans_b)
    apply(A * B.transpose());
  else
    apply(A.transpose() * B.transpose());
}

template <typename T>
void gemm(bool trans_a, bool trans_b, i64 m, i64 n, i64 k, const T* a, const T* b, T* c,
          T beta = T(0)) {
  gemm<T>(trans_a, trans_b, m, n, k, T(1), a, trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

}  // namespace npc::detail
