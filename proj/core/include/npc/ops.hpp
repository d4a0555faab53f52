#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "npc/gemm.hpp"
#include "npc/tensor.hpp"

// Operations required by the CNN plus the reductions the losses need.
// Convolution is cross-correlation with zero padding, lowered to a matrix
// multiply over an im2col buffer; the buffer layout is
// [N*H'*W' rows x C*kh*kw cols] so the GEMM runs tall, which the packed
// kernels handle far better than the squat orientation.

namespace npc {

namespace detail {

template <typename T>
void im2col(const T* x, i64 n, i64 c, i64 h, i64 w, i64 kh, i64 kw, i64 stride, i64 pad,
            i64 ho, i64 wo, T* cols) {
  const i64 patch = c * kh * kw;
  for (i64 in = 0; in < n; ++in) {
    const T* xs = x + in * c * h * w;
    T* row = cols + in * ho * wo * patch;
    for (i64 oy = 0; oy < ho; ++oy) {
      for (i64 ox = 0; ox < wo; ++ox, row += patch) {
        const i64 iy0 = oy * stride - pad;
        const i64 ix0 = ox * stride - pad;
        T* dst = row;
        for (i64 ic = 0; ic < c; ++ic) {
          const T* xc = xs + ic * h * w;
          for (i64 dy = 0; dy < kh; ++dy, dst += kw) {
            const i64 iy = iy0 + dy;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + kw, T(0));
              continue;
            }
            const T* xrow = xc + iy * w;
            for (i64 dx = 0; dx < kw; ++dx) {
              const i64 ix = ix0 + dx;
              dst[dx] = (ix >= 0 && ix < w) ? xrow[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, i64 n, i64 c, i64 h, i64 w, i64 kh, i64 kw, i64 stride, i64 pad,
                i64 ho, i64 wo, T* dx) {
  const i64 patch = c * kh * kw;
  for (i64 in = 0; in < n; ++in) {
    T* xs = dx + in * c * h * w;
    const T* row = cols + in * ho * wo * patch;
    for (i64 oy = 0; oy < ho; ++oy) {
      for (i64 ox = 0; ox < wo; ++ox, row += patch) {
        const i64 iy0 = oy * stride - pad;
        const i64 ix0 = ox * stride - pad;
        const T* src = row;
        for (i64 ic = 0; ic < c; ++ic) {
          T* xc = xs + ic * h * w;
          for (i64 dy = 0; dy < kh; ++dy, src += kw) {
            const i64 iy = iy0 + dy;
            if (iy < 0 || iy >= h) continue;
            T* xrow = xc + iy * w;
            for (i64 dx_ = 0; dx_ < kw; ++dx_) {
              const i64 ix = ix0 + dx_;
              if (ix >= 0 && ix < w) xrow[ix] += src[dx_];
            }
          }
        }
      }
    }
  }
}

// [rows x f] -> per-sample [f x hw] blocks, adding the per-channel bias on
// the way through.
template <typename T>
void split_to_nchw_biased(const T* m, i64 n, i64 f, i64 hw, const T* bias, T* out) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  Eigen::Map<const Vec> b(bias, f);
  for (i64 in = 0; in < n; ++in) {
    Eigen::Map<Mat> dst(out + in * f * hw, f, hw);
    Eigen::Map<const Mat> src(m + in * hw * f, hw, f);
    dst.noalias() = (src.transpose().colwise() + b);
  }
}

template <typename T>
void nchw_to_rows(const T* x, i64 n, i64 f, i64 hw, T* m) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  for (i64 in = 0; in < n; ++in) {
    Eigen::Map<Mat> dst(m + in * hw * f, hw, f);
    Eigen::Map<const Mat> src(x + in * f * hw, f, hw);
    dst.noalias() = src.transpose();
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const i64 m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::gemm<T>(false, false, m, n, k, a.value().data(), b.value().data(), out.data());
  auto backward = [a, b, m, k, n](typename Tensor<T>::Node& self) mutable {
    if (a.requires_grad())
      detail::gemm<T>(false, true, m, k, n, self.grad.data(), b.value().data(), a.grad().data(),
                      T(1));
    if (b.requires_grad())
      detail::gemm<T>(true, false, k, n, m, a.value().data(), self.grad.data(), b.grad().data(),
                      T(1));
  };
  return Tensor<T>::make_op({m, n}, std::move(out), {a, b}, std::move(backward));
}

// y = x * W^T + bias, with W stored [out x in] so each row is one unit's
// incoming weights.
template <typename T>
Tensor<T> linear(Tensor<T> x, Tensor<T> w, Tensor<T> bias) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[1])
    throw ShapeError("linear shape mismatch: " + shape_str(x.shape()) + " x W" +
                     shape_str(w.shape()));
  const i64 n = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  if (bias.numel() != out) throw ShapeError("linear bias length mismatch");
  std::vector<T> y(static_cast<std::size_t>(n * out));
  detail::gemm<T>(false, true, n, out, in, x.value().data(), w.value().data(), y.data());
  const T* bp = bias.value().data();
  for (i64 r = 0; r < n; ++r) {
    T* yr = y.data() + r * out;
    for (i64 u = 0; u < out; ++u) yr[u] += bp[u];
  }
  auto backward = [x, w, bias, n, in, out](typename Tensor<T>::Node& self) mutable {
    const T* g = self.grad.data();
    if (x.requires_grad())
      detail::gemm<T>(false, false, n, in, out, g, w.value().data(), x.grad().data(), T(1));
    if (w.requires_grad())
      detail::gemm<T>(true, false, out, in, n, g, x.value().data(), w.grad().data(), T(1));
    if (bias.requires_grad()) {
      T* db = bias.grad().data();
      for (i64 r = 0; r < n; ++r) {
        const T* gr = g + r * out;
        for (i64 u = 0; u < out; ++u) db[u] += gr[u];
      }
    }
  };
  return Tensor<T>::make_op({n, out}, std::move(y), {x, w, bias}, std::move(backward));
}

template <typename T>
Tensor<T> conv2d(Tensor<T> x, Tensor<T> kernel, Tensor<T> bias, i64 stride = 1, i64 pad = 0) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4 || xs[1] != ks[1])
    throw ShapeError("conv2d shape mismatch: input " + shape_str(xs) + ", kernel " +
                     shape_str(ks));
  if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
  const i64 n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const i64 f = ks[0], kh = ks[2], kw = ks[3];
  if (bias.numel() != f) throw ShapeError("conv2d bias length mismatch");
  if (kh > h + 2 * pad || kw > w + 2 * pad)
    throw ShapeError("conv2d kernel larger than padded input");
  if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0)
    throw ConfigError("conv2d output size is not integral for input " + shape_str(xs) +
                      ", kernel " + shape_str(ks) + ", stride " + std::to_string(stride) +
                      ", pad " + std::to_string(pad));
  const i64 ho = (h + 2 * pad - kh) / stride + 1;
  const i64 wo = (w + 2 * pad - kw) / stride + 1;
  const i64 rows = n * ho * wo, patch = c * kh * kw;

  auto cols = std::make_shared<detail::Scratch<T>>(rows * patch);
  detail::im2col(x.value().data(), n, c, h, w, kh, kw, stride, pad, ho, wo, cols->get());

  detail::Scratch<T> out2(rows * f);
  detail::gemm<T>(false, true, rows, f, patch, cols->get(), kernel.value().data(), out2.get());
  std::vector<T> out(static_cast<std::size_t>(rows * f));
  detail::split_to_nchw_biased(out2.get(), n, f, ho * wo, bias.value().data(), out.data());

  auto backward = [x, kernel, bias, cols, n, c, h, w, f, kh, kw, stride, pad, ho, wo, rows,
                   patch](typename Tensor<T>::Node& self) mutable {
    detail::Scratch<T> g2(rows * f);
    detail::nchw_to_rows(self.grad.data(), n, f, ho * wo, g2.get());
    if (bias.requires_grad()) {
      T* db = bias.grad().data();
      for (i64 r = 0; r < rows; ++r) {
        const T* gr = g2.get() + r * f;
        for (i64 u = 0; u < f; ++u) db[u] += gr[u];
      }
    }
    if (kernel.requires_grad())
      detail::gemm<T>(true, false, f, patch, rows, g2.get(), cols->get(), kernel.grad().data(),
                      T(1));
    if (x.requires_grad()) {
      detail::Scratch<T> dcols(rows * patch);
      detail::gemm<T>(false, false, rows, patch, f, g2.get(), kernel.value().data(),
                      dcols.get());
      detail::col2im_add(dcols.get(), n, c, h, w, kh, kw, stride, pad, ho, wo, x.grad().data());
    }
  };
  return Tensor<T>::make_op({n, f, ho, wo}, std::move(out), {x, kernel, bias},
                            std::move(backward));
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
  std::vector<T> out(x.value().begin(), x.value().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  auto backward = [x](typename Tensor<T>::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto xv = x.value();
    auto xg = x.grad();
    const T* g = self.grad.data();
    // Subgradient 0 at exactly 0.
    for (std::size_t i = 0; i < xv.size(); ++i) xg[i] += xv[i] > T(0) ? g[i] : T(0);
  };
  return Tensor<T>::make_op(x.shape(), std::move(out), {x}, std::move(backward));
}

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
// Gradient routes to the argmax; ties go to the first element in row-major
// window scan order.
template <typename T>
Tensor<T> maxpool2d(Tensor<T> x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("maxpool2d expects NCHW, got " + shape_str(xs));
  const i64 n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const i64 ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw ShapeError("maxpool2d input too small: " + shape_str(xs));
  std::vector<T> out(static_cast<std::size_t>(n * c * ho * wo));
  auto argmax = std::make_shared<std::vector<i64>>(out.size());
  const T* xp = x.value().data();
  for (i64 img = 0; img < n * c; ++img) {
    const T* plane = xp + img * h * w;
    T* op = out.data() + img * ho * wo;
    i64* ap = argmax->data() + img * ho * wo;
    for (i64 oy = 0; oy < ho; ++oy) {
      for (i64 ox = 0; ox < wo; ++ox) {
        i64 best = (2 * oy) * w + 2 * ox;
        T bv = plane[best];
        const i64 cand[3] = {best + 1, best + w, best + w + 1};
        for (i64 k : cand) {
          if (plane[k] > bv) {
            bv = plane[k];
            best = k;
          }
        }
        op[oy * wo + ox] = bv;
        ap[oy * wo + ox] = img * h * w + best;
      }
    }
  }
  auto backward = [x, argmax](typename Tensor<T>::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto xg = x.grad();
    const T* g = self.grad.data();
    const i64* ap = argmax->data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xg[ap[i]] += g[i];
  };
  return Tensor<T>::make_op({n, c, ho, wo}, std::move(out), {x}, std::move(backward));
}

template <typename T>
Tensor<T> reshape(Tensor<T> x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  std::vector<T> out(x.value().begin(), x.value().end());
  auto backward = [x](typename Tensor<T>::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto xg = x.grad();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xg[i] += g[i];
  };
  return Tensor<T>::make_op(std::move(shape), std::move(out), {x}, std::move(backward));
}

namespace detail {
template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}
}  // namespace detail

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto backward = [a, b](typename Tensor<T>::Node& self) mutable {
    const T* g = self.grad.data();
    if (a.requires_grad()) {
      auto ag = a.grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ag[i] += g[i];
    }
    if (b.requires_grad()) {
      auto bg = b.grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bg[i] += g[i];
    }
  };
  return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, std::move(backward));
}

template <typename T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto backward = [a, b](typename Tensor<T>::Node& self) mutable {
    const T* g = self.grad.data();
    if (a.requires_grad()) {
      auto ag = a.grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ag[i] += g[i];
    }
    if (b.requires_grad()) {
      auto bg = b.grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bg[i] -= g[i];
    }
  };
  return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, std::move(backward));
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto backward = [a, b](typename Tensor<T>::Node& self) mutable {
    const T* g = self.grad.data();
    if (a.requires_grad()) {
      auto ag = a.grad();
      auto bv = b.value();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ag[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto bg = b.grad();
      auto av = a.value();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bg[i] += g[i] * av[i];
    }
  };
  return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, std::move(backward));
}

template <typename T>
Tensor<T> scale(Tensor<T> x, T s) {
  std::vector<T> out(x.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * s;
  auto backward = [x, s](typename Tensor<T>::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto xg = x.grad();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xg[i] += g[i] * s;
  };
  return Tensor<T>::make_op(x.shape(), std::move(out), {x}, std::move(backward));
}

template <typename T>
Tensor<T> abs(Tensor<T> x) {
  std::vector<T> out(x.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x.value()[i]);
  auto backward = [x](typename Tensor<T>::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto xg = x.grad();
    auto xv = x.value();
    const T* g = self.grad.data();
    // sign(x), 0 at x == 0
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (xv[i] > T(0))
        xg[i] += g[i];
      else if (xv[i] < T(0))
        xg[i] -= g[i];
    }
  };
  return Tensor<T>::make_op(x.shape(), std::move(out), {x}, std::move(backward));
}

template <typename T>
Tensor<T> sum(Tensor<T> x) {
  T acc = T(0);
  for (T v : x.value()) acc += v;
  auto backward = [x](typename Tensor<T>::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto xg = x.grad();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += g;
  };
  return Tensor<T>::make_op({1}, {acc}, {x}, std::move(backward));
}

template <typename T>
Tensor<T> mean(Tensor<T> x) {
  T acc = T(0);
  for (T v : x.value()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  auto backward = [x, inv](typename Tensor<T>::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto xg = x.grad();
    const T g = self.grad[0] * inv;
    for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += g;
  };
  return Tensor<T>::make_op({1}, {acc * inv}, {x}, std::move(backward));
}

template <typename T>
Tensor<T> operator+(Tensor<T> a, Tensor<T> b) {
  return add(std::move(a), std::move(b));
}
template <typename T>
Tensor<T> operator-(Tensor<T> a, Tensor<T> b) {
  return sub(std::move(a), std::move(b));
}
template <typename T>
Tensor<T> operator*(Tensor<T> a, Tensor<T> b) {
  return mul(std::move(a), std::move(b));
}

}  // namespace npc
