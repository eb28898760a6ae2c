#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mcaoan/tape.hpp"
#include "mcaoan/tensor.hpp"

namespace mcaoan::ops {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k,
             std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    T* c = C + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = a[p];
      const T* b = B + p * n;
      for (std::int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k,
             std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    T* c = C + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const T* b = B + j * k;
      T acc = T(0);
      for (std::int64_t p = 0; p < k; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k,
             std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    const T* b = B + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = a[p];
      T* c = C + p * n;
      for (std::int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

inline void check_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shapes differ: " + shape_str(a) +
                     " vs " + shape_str(b));
}

template <typename T>
bool should_record(const Tape<T>& tp, std::initializer_list<int> nodes) {
  if (!tp.recording()) return false;
  for (int n : nodes)
    if (n >= 0) return true;
  return false;
}

}  // namespace detail

inline constexpr double kMaskFill = -1e9;

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// a: [..., r, k] times b: [k, c]; leading axes of `a` are treated as rows.
template <typename T>
Tensor<T> matmul(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape.back() != b.shape[0])
    throw ShapeError("matmul: inner extents differ: " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  const std::int64_t k = b.shape[0], c = b.shape[1];
  const std::int64_t rows = a.size() / k;
  Shape out_shape = a.shape;
  out_shape.back() = c;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  detail::gemm_nn(a.ptr(), b.ptr(), out.ptr(), rows, k, c);
  if (detail::should_record(tp, {a.node, b.node})) {
    auto ad = a.data, bd = b.data;
    int an = a.node, bn = b.node;
    out.node = tp.push(out.size(), [=](Tape<T>& t, const std::vector<T>& gy) {
      if (an >= 0)
        detail::gemm_nt(gy.data(), bd->data(),
                        t.grad_buf(an, rows * k).data(), rows, c, k);
      if (bn >= 0)
        detail::gemm_tn(ad->data(), gy.data(), t.grad_buf(bn, k * c).data(),
                        rows, k, c);
    });
  }
  return out;
}

// Batched product over matching leading axes: a [..., r, k] with
// b [..., k, c], or b [..., c, k] when trans_b.
template <typename T>
Tensor<T> bmm(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b,
              bool trans_b = false) {
  if (a.rank() < 2 || b.rank() != a.rank())
    throw ShapeError("bmm: ranks differ: " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  Shape lead_a(a.shape.begin(), a.shape.end() - 2);
  Shape lead_b(b.shape.begin(), b.shape.end() - 2);
  const std::int64_t r = a.shape[a.rank() - 2], k = a.shape.back();
  const std::int64_t bk = trans_b ? b.shape.back() : b.shape[b.rank() - 2];
  const std::int64_t c = trans_b ? b.shape[b.rank() - 2] : b.shape.back();
  if (lead_a != lead_b || bk != k)
    throw ShapeError("bmm: incompatible shapes: " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape) +
                     (trans_b ? " (rhs transposed)" : ""));
  const std::int64_t batch = numel(lead_a);
  Shape out_shape = lead_a;
  out_shape.push_back(r);
  out_shape.push_back(c);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (std::int64_t s = 0; s < batch; ++s) {
    const T* A = a.ptr() + s * r * k;
    const T* B = b.ptr() + s * k * c;
    T* C = out.ptr() + s * r * c;
    if (trans_b)
      detail::gemm_nt(A, B, C, r, k, c);
    else
      detail::gemm_nn(A, B, C, r, k, c);
  }
  if (detail::should_record(tp, {a.node, b.node})) {
    auto ad = a.data, bd = b.data;
    int an = a.node, bn = b.node;
    out.node = tp.push(out.size(), [=](Tape<T>& t, const std::vector<T>& gy) {
      std::vector<T>* ga = an >= 0 ? &t.grad_buf(an, batch * r * k) : nullptr;
      std::vector<T>* gb = bn >= 0 ? &t.grad_buf(bn, batch * k * c) : nullptr;
      for (std::int64_t s = 0; s < batch; ++s) {
        const T* A = ad->data() + s * r * k;
        const T* B = bd->data() + s * k * c;
        const T* G = gy.data() + s * r * c;
        if (trans_b) {
          // y = A * B^T with B stored [c, k]
          if (ga) detail::gemm_nn(G, B, ga->data() + s * r * k, r, c, k);
          if (gb) detail::gemm_tn(G, A, gb->data() + s * k * c, r, c, k);
        } else {
          if (ga) detail::gemm_nt(G, B, ga->data() + s * r * k, r, c, k);
          if (gb) detail::gemm_tn(A, G, gb->data() + s * k * c, r, k, c);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a.shape, b.shape);
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (detail::should_record(tp, {a.node, b.node})) {
    int an = a.node, bn = b.node;
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      if (an >= 0) {
        auto& g = t.grad_buf(an, n);
        for (std::int64_t i = 0; i < n; ++i) g[i] += gy[i];
      }
      if (bn >= 0) {
        auto& g = t.grad_buf(bn, n);
        for (std::int64_t i = 0; i < n; ++i) g[i] += gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a.shape, b.shape);
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  if (detail::should_record(tp, {a.node, b.node})) {
    int an = a.node, bn = b.node;
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      if (an >= 0) {
        auto& g = t.grad_buf(an, n);
        for (std::int64_t i = 0; i < n; ++i) g[i] += gy[i];
      }
      if (bn >= 0) {
        auto& g = t.grad_buf(bn, n);
        for (std::int64_t i = 0; i < n; ++i) g[i] -= gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a.shape, b.shape);
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  if (detail::should_record(tp, {a.node, b.node})) {
    auto ad = a.data, bd = b.data;
    int an = a.node, bn = b.node;
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      if (an >= 0) {
        auto& g = t.grad_buf(an, n);
        for (std::int64_t i = 0; i < n; ++i) g[i] += gy[i] * (*bd)[i];
      }
      if (bn >= 0) {
        auto& g = t.grad_buf(bn, n);
        for (std::int64_t i = 0; i < n; ++i) g[i] += gy[i] * (*ad)[i];
      }
    });
  }
  return out;
}

// m*x + c with scalar constants.
template <typename T>
Tensor<T> affine(Tape<T>& tp, const Tensor<T>& x, T m, T c) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = m * x[i] + c;
  if (detail::should_record(tp, {x.node})) {
    int xn = x.node;
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      for (std::int64_t i = 0; i < n; ++i) g[i] += m * gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tp, const Tensor<T>& x, T s) {
  return affine(tp, x, s, T(0));
}

// x: [..., d] plus bias b: [d], broadcast over leading axes.
template <typename T>
Tensor<T> add_bias(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() < 1 || b.rank() != 1 || x.shape.back() != b.shape[0])
    throw ShapeError("add_bias: cannot broadcast " + shape_str(b.shape) +
                     " over " + shape_str(x.shape));
  const std::int64_t d = b.shape[0];
  const std::int64_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] + b[j];
  if (detail::should_record(tp, {x.node, b.node})) {
    int xn = x.node, bn = b.node;
    out.node =
        tp.push(out.size(), [=](Tape<T>& t, const std::vector<T>& gy) {
          if (xn >= 0) {
            auto& g = t.grad_buf(xn, rows * d);
            for (std::int64_t i = 0; i < rows * d; ++i) g[i] += gy[i];
          }
          if (bn >= 0) {
            auto& g = t.grad_buf(bn, d);
            for (std::int64_t r = 0; r < rows; ++r)
              for (std::int64_t j = 0; j < d; ++j) g[j] += gy[r * d + j];
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tp, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  if (detail::should_record(tp, {x.node})) {
    auto xd = x.data;
    int xn = x.node;
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      for (std::int64_t i = 0; i < n; ++i)
        if ((*xd)[i] > T(0)) g[i] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tp, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  if (detail::should_record(tp, {x.node})) {
    auto yd = out.data;
    int xn = x.node;
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      for (std::int64_t i = 0; i < n; ++i) {
        const T y = (*yd)[i];
        g[i] += gy[i] * y * (T(1) - y);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>& tp, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
  if (detail::should_record(tp, {x.node})) {
    auto yd = out.data;
    int xn = x.node;
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      for (std::int64_t i = 0; i < n; ++i) {
        const T y = (*yd)[i];
        g[i] += gy[i] * (T(1) - y * y);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> log(Tape<T>& tp, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::log(x[i]);
  if (detail::should_record(tp, {x.node})) {
    auto xd = x.data;
    int xn = x.node;
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      for (std::int64_t i = 0; i < n; ++i) g[i] += gy[i] / (*xd)[i];
    });
  }
  return out;
}

// Gradient passes only through strictly interior values.
template <typename T>
Tensor<T> clamp(Tape<T>& tp, const Tensor<T>& x, T lo, T hi) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i)
    out[i] = std::min(std::max(x[i], lo), hi);
  if (detail::should_record(tp, {x.node})) {
    auto xd = x.data;
    int xn = x.node;
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      for (std::int64_t i = 0; i < n; ++i)
        if ((*xd)[i] > lo && (*xd)[i] < hi) g[i] += gy[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Softmax along `axis`, stabilized by max-subtraction. The optional mask is
// additive (0 for live positions, about -1e9 for dead ones) and is only
// supported along the last axis; its rows broadcast over row blocks of x
// (e.g. mask [b,1,1,k] against scores [b,h,q,k]). A slice whose positions
// are all masked has no well-defined distribution and raises
// DegenerateSliceError.
template <typename T>
Tensor<T> softmax(Tape<T>& tp, const Tensor<T>& x, int axis = -1,
                  const Tensor<T>* mask = nullptr) {
  const std::int64_t rank = x.rank();
  if (axis < 0) axis += static_cast<int>(rank);
  if (axis < 0 || axis >= rank)
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " invalid for " + shape_str(x.shape));
  const std::int64_t L = x.shape[axis];
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape[i];
  for (std::int64_t i = axis + 1; i < rank; ++i) inner *= x.shape[i];

  std::int64_t mask_rows = 0, block = 0;
  if (mask) {
    if (axis != rank - 1)
      throw ShapeError("softmax: mask is only supported on the last axis");
    if (mask->rank() < 1 || mask->shape.back() != L ||
        mask->size() % L != 0 || outer % (mask->size() / L) != 0)
      throw ShapeError("softmax: mask " + shape_str(mask->shape) +
                       " does not broadcast over " + shape_str(x.shape));
    mask_rows = mask->size() / L;
    block = outer / mask_rows;
  }

  Tensor<T> out = Tensor<T>::zeros(x.shape);
  std::vector<T> z(L);
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* mrow = mask ? mask->ptr() + (o / block) * L : nullptr;
    if (mrow) {
      bool any_live = false;
      for (std::int64_t p = 0; p < L; ++p)
        if (mrow[p] > T(kMaskFill / 2)) any_live = true;
      if (!any_live)
        throw DegenerateSliceError(
            "softmax: every position masked in slice " + std::to_string(o));
    }
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = (o * L) * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t p = 0; p < L; ++p) {
        z[p] = x[base + p * inner] + (mrow ? mrow[p] : T(0));
        mx = std::max(mx, z[p]);
      }
      T sum = T(0);
      for (std::int64_t p = 0; p < L; ++p) {
        z[p] = std::exp(z[p] - mx);
        sum += z[p];
      }
      for (std::int64_t p = 0; p < L; ++p) out[base + p * inner] = z[p] / sum;
    }
  }

  if (detail::should_record(tp, {x.node})) {
    auto yd = out.data;
    int xn = x.node;
    const std::int64_t n = out.size();
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = (o * L) * inner + in;
          T dot = T(0);
          for (std::int64_t p = 0; p < L; ++p)
            dot += gy[base + p * inner] * (*yd)[base + p * inner];
          for (std::int64_t p = 0; p < L; ++p) {
            const std::int64_t at = base + p * inner;
            g[at] += (*yd)[at] * (gy[at] - dot);
          }
        }
      }
    });
  }
  return out;
}

// 0/1 validity row(s) -> additive mask rows.
template <typename T>
Tensor<T> additive_mask(const Tensor<T>& valid) {
  Tensor<T> m = Tensor<T>::zeros(valid.shape);
  for (std::int64_t i = 0; i < valid.size(); ++i)
    m[i] = valid[i] > T(0.5) ? T(0) : T(kMaskFill);
  return m;
}

// ---------------------------------------------------------------------------
// Layer normalization (fused, so gamma/beta gradients come for free)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-6)) {
  if (x.rank() < 1 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.shape[0] != x.shape.back() || beta.shape[0] != x.shape.back())
    throw ShapeError("layer_norm: params " + shape_str(gamma.shape) + "/" +
                     shape_str(beta.shape) + " do not match " +
                     shape_str(x.shape));
  const std::int64_t d = x.shape.back();
  const std::int64_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = x.ptr() + r * d;
    T mean = T(0);
    for (std::int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = T(0);
    for (std::int64_t j = 0; j < d; ++j) {
      const T c = row[j] - mean;
      var += c * c;
    }
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::int64_t j = 0; j < d; ++j) {
      const T xh = (row[j] - mean) * inv;
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = gamma[j] * xh + beta[j];
    }
  }
  if (detail::should_record(tp, {x.node, gamma.node, beta.node})) {
    auto gd = gamma.data;
    int xn = x.node, gn = gamma.node, bn = beta.node;
    out.node =
        tp.push(out.size(), [=](Tape<T>& t, const std::vector<T>& gy) {
          std::vector<T>* gx = xn >= 0 ? &t.grad_buf(xn, rows * d) : nullptr;
          std::vector<T>* gg = gn >= 0 ? &t.grad_buf(gn, d) : nullptr;
          std::vector<T>* gb = bn >= 0 ? &t.grad_buf(bn, d) : nullptr;
          for (std::int64_t r = 0; r < rows; ++r) {
            const T* xh = xhat->data() + r * d;
            const T* gyr = gy.data() + r * d;
            if (gg || gb) {
              for (std::int64_t j = 0; j < d; ++j) {
                if (gg) (*gg)[j] += gyr[j] * xh[j];
                if (gb) (*gb)[j] += gyr[j];
              }
            }
            if (gx) {
              T m1 = T(0), m2 = T(0);
              for (std::int64_t j = 0; j < d; ++j) {
                const T dxh = gyr[j] * (*gd)[j];
                m1 += dxh;
                m2 += dxh * xh[j];
              }
              m1 /= T(d);
              m2 /= T(d);
              const T inv = (*inv_std)[r];
              T* gxr = gx->data() + r * d;
              for (std::int64_t j = 0; j < d; ++j) {
                const T dxh = gyr[j] * (*gd)[j];
                gxr[j] += inv * (dxh - m1 - xh[j] * m2);
              }
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gather / scatter and layout ops
// ---------------------------------------------------------------------------

// Row gather: out[..., :] = table[ids[...], :]. The gradient scatters
// additively into the table, so repeated ids accumulate. Rows equal to
// `frozen_row` receive no gradient (reserved padding row).
template <typename T>
Tensor<T> embed_rows(Tape<T>& tp, const Tensor<T>& table,
                     const std::vector<std::int64_t>& ids, Shape ids_shape,
                     std::int64_t frozen_row = -1) {
  if (table.rank() != 2)
    throw ShapeError("embed_rows: table must be 2-d, got " +
                     shape_str(table.shape));
  if (numel(ids_shape) != static_cast<std::int64_t>(ids.size()))
    throw ShapeError("embed_rows: ids shape " + shape_str(ids_shape) +
                     " does not match " + std::to_string(ids.size()) +
                     " ids");
  const std::int64_t V = table.shape[0], e = table.shape[1];
  for (auto id : ids)
    if (id < 0 || id >= V)
      throw LookupError("embedding lookup: id " + std::to_string(id) +
                        " out of range [0, " + std::to_string(V) + ")");
  Shape out_shape = ids_shape;
  out_shape.push_back(e);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (std::size_t p = 0; p < ids.size(); ++p)
    std::copy_n(table.ptr() + ids[p] * e, e, out.ptr() + p * e);
  if (detail::should_record(tp, {table.node})) {
    int tn = table.node;
    out.node =
        tp.push(out.size(), [=](Tape<T>& t, const std::vector<T>& gy) {
          auto& g = t.grad_buf(tn, V * e);
          for (std::size_t p = 0; p < ids.size(); ++p) {
            if (ids[p] == frozen_row) continue;
            T* row = g.data() + ids[p] * e;
            const T* gr = gy.data() + p * e;
            for (std::int64_t j = 0; j < e; ++j) row[j] += gr[j];
          }
        });
  }
  return out;
}

// x: [b, n, e] -> step t as [b, e].
template <typename T>
Tensor<T> step_slice(Tape<T>& tp, const Tensor<T>& x, std::int64_t t_step) {
  if (x.rank() != 3 || t_step < 0 || t_step >= x.shape[1])
    throw ShapeError("step_slice: step " + std::to_string(t_step) +
                     " invalid for " + shape_str(x.shape));
  const std::int64_t b = x.shape[0], n = x.shape[1], e = x.shape[2];
  Tensor<T> out = Tensor<T>::zeros({b, e});
  for (std::int64_t i = 0; i < b; ++i)
    std::copy_n(x.ptr() + (i * n + t_step) * e, e, out.ptr() + i * e);
  if (detail::should_record(tp, {x.node})) {
    int xn = x.node;
    out.node =
        tp.push(out.size(), [=](Tape<T>& t, const std::vector<T>& gy) {
          auto& g = t.grad_buf(xn, b * n * e);
          for (std::int64_t i = 0; i < b; ++i) {
            T* dst = g.data() + (i * n + t_step) * e;
            const T* src = gy.data() + i * e;
            for (std::int64_t j = 0; j < e; ++j) dst[j] += src[j];
          }
        });
  }
  return out;
}

// n tensors of [b, d] -> [b, n, d].
template <typename T>
Tensor<T> step_stack(Tape<T>& tp, const std::vector<Tensor<T>>& steps) {
  if (steps.empty()) throw ContractError("step_stack: no steps");
  const std::int64_t b = steps[0].shape[0], d = steps[0].shape[1];
  const std::int64_t n = static_cast<std::int64_t>(steps.size());
  for (const auto& s : steps)
    detail::check_same_shape("step_stack", s.shape, steps[0].shape);
  Tensor<T> out = Tensor<T>::zeros({b, n, d});
  for (std::int64_t t_step = 0; t_step < n; ++t_step)
    for (std::int64_t i = 0; i < b; ++i)
      std::copy_n(steps[t_step].ptr() + i * d, d,
                  out.ptr() + (i * n + t_step) * d);
  bool any = false;
  for (const auto& s : steps) any = any || s.node >= 0;
  if (tp.recording() && any) {
    std::vector<int> nodes(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) nodes[i] = steps[i].node;
    out.node =
        tp.push(out.size(), [=](Tape<T>& t, const std::vector<T>& gy) {
          for (std::int64_t t_step = 0; t_step < n; ++t_step) {
            if (nodes[t_step] < 0) continue;
            auto& g = t.grad_buf(nodes[t_step], b * d);
            for (std::int64_t i = 0; i < b; ++i) {
              const T* src = gy.data() + (i * n + t_step) * d;
              T* dst = g.data() + i * d;
              for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> concat_last(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() < 1 ||
      !std::equal(a.shape.begin(), a.shape.end() - 1, b.shape.begin()))
    throw ShapeError("concat_last: shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape) + " differ off the last axis");
  const std::int64_t da = a.shape.back(), db = b.shape.back();
  const std::int64_t rows = a.size() / da;
  Shape out_shape = a.shape;
  out_shape.back() = da + db;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(a.ptr() + r * da, da, out.ptr() + r * (da + db));
    std::copy_n(b.ptr() + r * db, db, out.ptr() + r * (da + db) + da);
  }
  if (detail::should_record(tp, {a.node, b.node})) {
    int an = a.node, bn = b.node;
    out.node =
        tp.push(out.size(), [=](Tape<T>& t, const std::vector<T>& gy) {
          for (std::int64_t r = 0; r < rows; ++r) {
            if (an >= 0) {
              auto& g = t.grad_buf(an, rows * da);
              for (std::int64_t j = 0; j < da; ++j)
                g[r * da + j] += gy[r * (da + db) + j];
            }
            if (bn >= 0) {
              auto& g = t.grad_buf(bn, rows * db);
              for (std::int64_t j = 0; j < db; ++j)
                g[r * db + j] += gy[r * (da + db) + da + j];
            }
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> slice_last(Tape<T>& tp, const Tensor<T>& x, std::int64_t start,
                     std::int64_t len) {
  const std::int64_t d = x.shape.back();
  if (x.rank() < 1 || start < 0 || len < 1 || start + len > d)
    throw ShapeError("slice_last: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") invalid for " +
                     shape_str(x.shape));
  const std::int64_t rows = x.size() / d;
  Shape out_shape = x.shape;
  out_shape.back() = len;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy_n(x.ptr() + r * d + start, len, out.ptr() + r * len);
  if (detail::should_record(tp, {x.node})) {
    int xn = x.node;
    out.node =
        tp.push(out.size(), [=](Tape<T>& t, const std::vector<T>& gy) {
          auto& g = t.grad_buf(xn, rows * d);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < len; ++j)
              g[r * d + start + j] += gy[r * len + j];
        });
  }
  return out;
}

// x: [..., d] scaled per row by s: [..., 1].
template <typename T>
Tensor<T> row_scale(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& s) {
  Shape expect = x.shape;
  if (!expect.empty()) expect.back() = 1;
  if (s.shape != expect)
    throw ShapeError("row_scale: scale " + shape_str(s.shape) +
                     " does not match rows of " + shape_str(x.shape));
  const std::int64_t d = x.shape.back();
  const std::int64_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] * s[r];
  if (detail::should_record(tp, {x.node, s.node})) {
    auto xd = x.data, sd = s.data;
    int xn = x.node, sn = s.node;
    out.node =
        tp.push(out.size(), [=](Tape<T>& t, const std::vector<T>& gy) {
          if (xn >= 0) {
            auto& g = t.grad_buf(xn, rows * d);
            for (std::int64_t r = 0; r < rows; ++r)
              for (std::int64_t j = 0; j < d; ++j)
                g[r * d + j] += gy[r * d + j] * (*sd)[r];
          }
          if (sn >= 0) {
            auto& g = t.grad_buf(sn, rows);
            for (std::int64_t r = 0; r < rows; ++r) {
              T acc = T(0);
              for (std::int64_t j = 0; j < d; ++j)
                acc += gy[r * d + j] * (*xd)[r * d + j];
              g[r] += acc;
            }
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> permute(Tape<T>& tp, const Tensor<T>& x,
                  const std::vector<int>& perm) {
  const std::int64_t rank = x.rank();
  std::vector<bool> seen(rank, false);
  if (static_cast<std::int64_t>(perm.size()) != rank)
    throw ShapeError("permute: order has wrong rank for " +
                     shape_str(x.shape));
  for (int p : perm) {
    if (p < 0 || p >= rank || seen[p])
      throw ShapeError("permute: invalid axis order");
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::int64_t k = 0; k < rank; ++k) out_shape[k] = x.shape[perm[k]];
  auto out_str = row_major_strides(out_shape);
  // out position k draws from input axis perm[k]; walk the input in order
  // and scatter into the output.
  std::vector<std::int64_t> scatter(rank);  // input axis -> output stride
  for (std::int64_t k = 0; k < rank; ++k) scatter[perm[k]] = out_str[k];
  const std::int64_t n = x.size();
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t at = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[at] = x[i];
    for (std::int64_t k = rank - 1; k >= 0; --k) {
      at += scatter[k];
      if (++idx[k] < x.shape[k]) break;
      at -= idx[k] * scatter[k];
      idx[k] = 0;
    }
  }
  if (detail::should_record(tp, {x.node})) {
    int xn = x.node;
    Shape in_shape = x.shape;
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      std::vector<std::int64_t> ix(rank, 0);
      std::int64_t pos = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        g[i] += gy[pos];
        for (std::int64_t k = rank - 1; k >= 0; --k) {
          pos += scatter[k];
          if (++ix[k] < in_shape[k]) break;
          pos -= ix[k] * scatter[k];
          ix[k] = 0;
        }
      }
    });
  }
  return out;
}

// Shares storage; only the shape changes.
template <typename T>
Tensor<T> reshape(Tape<T>& tp, const Tensor<T>& x, Shape new_shape) {
  if (numel(new_shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " +
                     shape_str(new_shape));
  Tensor<T> out(std::move(new_shape), x.data);
  if (detail::should_record(tp, {x.node})) {
    int xn = x.node;
    const std::int64_t n = x.size();
    out.node = tp.push(n, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      for (std::int64_t i = 0; i < n; ++i) g[i] += gy[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(Tape<T>& tp, const Tensor<T>& x) {
  T acc = T(0);
  for (std::int64_t i = 0; i < x.size(); ++i) acc += x[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::should_record(tp, {x.node})) {
    int xn = x.node;
    const std::int64_t n = x.size();
    out.node = tp.push(1, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      for (std::int64_t i = 0; i < n; ++i) g[i] += gy[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(Tape<T>& tp, const Tensor<T>& x) {
  const std::int64_t n = x.size();
  if (n == 0) throw ContractError("mean_all: empty tensor");
  T acc = T(0);
  for (std::int64_t i = 0; i < n; ++i) acc += x[i];
  Tensor<T> out = Tensor<T>::scalar(acc / T(n));
  if (detail::should_record(tp, {x.node})) {
    int xn = x.node;
    out.node = tp.push(1, [=](Tape<T>& t, const std::vector<T>& gy) {
      auto& g = t.grad_buf(xn, n);
      const T gv = gy[0] / T(n);
      for (std::int64_t i = 0; i < n; ++i) g[i] += gv;
    });
  }
  return out;
}

}  // namespace mcaoan::ops
