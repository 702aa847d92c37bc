#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <cblas.h>

#include "tamer/nn/tensor.hpp"

namespace tamer::nn {

/// Fill value used by masked_fill ahead of a softmax. Finite, so masked
/// entries give exp(...) == 0 without inf - inf in the backward pass.
inline constexpr double kMaskValue = -1e30;

namespace kernel {

// Row-major dgemm wrappers. OpenBLAS is pinned to one thread so results are
// reproducible run to run.
inline void pin_blas_threads() {
  static const bool pinned = (openblas_set_num_threads(1), true);
  (void)pinned;
}

inline void dgemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t M, std::size_t N, std::size_t K,
                  const double* A, std::size_t lda, const double* B, std::size_t ldb, double* C, std::size_t ldc) {
  if (M == 0 || N == 0 || K == 0) return;
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, ta, tb, static_cast<blasint>(M), static_cast<blasint>(N), static_cast<blasint>(K), 1.0, A,
              static_cast<blasint>(lda), B, static_cast<blasint>(ldb), 1.0, C, static_cast<blasint>(ldc));
}

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B, double* C) {
  dgemm(CblasNoTrans, CblasNoTrans, M, N, K, A, K, B, N, C, N);
}

// C[K,N] += A[M,K]^T * G[M,N]
inline void gemm_tn(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* G, double* C) {
  dgemm(CblasTrans, CblasNoTrans, K, N, M, A, K, G, N, C, N);
}

// C[M,K] += G[M,N] * B[K,N]^T
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* G, const double* B, double* C) {
  dgemm(CblasNoTrans, CblasTrans, M, K, N, G, N, B, N, C, K);
}

}  // namespace kernel

namespace detail {

inline void accumulate(TensorImpl& t, std::span<const double> g) {
  auto& dst = t.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    fail(ErrorKind::ShapeMismatch, std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                                       std::to_string(rank));
  return static_cast<std::size_t>(axis);
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

/// Matrix product over the last two axes. `b` may be a 2-D weight shared by
/// every leading index of `a`, or a batch with the same leading dims as `a`.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 1 || bs.size() < 2) shape_mismatch("matmul", as, bs);

  if (bs.size() == 2) {
    const std::size_t K = as.back();
    if (bs[0] != K) shape_mismatch("matmul", as, bs);
    const std::size_t N = bs[1];
    const std::size_t M = a.numel() / std::max<std::size_t>(K, 1);
    Shape os(as.begin(), as.end() - 1);
    os.push_back(N);
    Tensor out = Tensor::zeros(os);
    kernel::gemm_nn(M, K, N, a.data().data(), b.data().data(), out.mutable_data().data());
    if (Tape* tape = detail::recording({&a, &b})) {
      tape->record(out, [ai = a.impl(), bi = b.impl(), o = out.impl().get(), M, K, N] {
        if (ai->requires_grad) kernel::gemm_nt(M, N, K, o->grad.data(), bi->data.data(), ai->ensure_grad().data());
        if (bi->requires_grad) kernel::gemm_tn(M, K, N, ai->data.data(), o->grad.data(), bi->ensure_grad().data());
      });
    }
    return out;
  }

  if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()) || as.back() != bs[bs.size() - 2])
    shape_mismatch("matmul", as, bs);
  const std::size_t M = as[as.size() - 2], K = as.back(), N = bs.back();
  const std::size_t batch = a.numel() / std::max<std::size_t>(M * K, 1);
  Shape os(as.begin(), as.end() - 1);
  os.push_back(N);
  Tensor out = Tensor::zeros(os);
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.mutable_data().data();
    for (std::size_t t = 0; t < batch; ++t) kernel::gemm_nn(M, K, N, A + t * M * K, B + t * K * N, C + t * M * N);
  }
  if (Tape* tape = detail::recording({&a, &b})) {
    tape->record(out, [ai = a.impl(), bi = b.impl(), o = out.impl().get(), M, K, N, batch] {
      const double* G = o->grad.data();
      if (ai->requires_grad) {
        double* dA = ai->ensure_grad().data();
        for (std::size_t t = 0; t < batch; ++t)
          kernel::gemm_nt(M, N, K, G + t * M * N, bi->data.data() + t * K * N, dA + t * M * K);
      }
      if (bi->requires_grad) {
        double* dB = bi->ensure_grad().data();
        for (std::size_t t = 0; t < batch; ++t)
          kernel::gemm_tn(M, K, N, ai->data.data() + t * M * K, G + t * M * N, dB + t * K * N);
      }
    });
  }
  return out;
}

/// Elementwise sum with numpy-style broadcasting (shapes aligned from the
/// right, size-1 or missing axes stretch).
inline Tensor add(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t rank = std::max(as.size(), bs.size());
  Shape os(rank), sa(rank, 1), sb(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    if (i < as.size()) sa[rank - as.size() + i] = as[i];
    if (i < bs.size()) sb[rank - bs.size() + i] = bs[i];
  }
  for (std::size_t i = 0; i < rank; ++i) {
    if (sa[i] != sb[i] && sa[i] != 1 && sb[i] != 1) shape_mismatch("add", as, bs);
    os[i] = std::max(sa[i], sb[i]);
  }
  Tensor out = Tensor::zeros(os);
  const std::size_t n = out.numel();
  double* O = out.mutable_data().data();
  const double* A = a.data().data();
  const double* B = b.data().data();

  // Index of the a/b element feeding each output element.
  std::vector<std::size_t> ia, ib;
  const bool same = (a.numel() == n && b.numel() == n);
  const bool suffix = (a.numel() == n && n % std::max<std::size_t>(b.numel(), 1) == 0 &&
                       std::equal(bs.begin(), bs.end(), os.end() - static_cast<long>(bs.size())));
  if (same) {
    for (std::size_t i = 0; i < n; ++i) O[i] = A[i] + B[i];
  } else if (suffix) {
    const std::size_t m = b.numel();
    for (std::size_t i = 0; i < n; ++i) O[i] = A[i] + B[i % m];
  } else {
    ia.resize(n);
    ib.resize(n);
    std::vector<std::size_t> stra(rank), strb(rank), idx(rank, 0);
    std::size_t s1 = 1, s2 = 1;
    for (std::size_t i = rank; i-- > 0;) {
      stra[i] = sa[i] == 1 ? 0 : s1;
      strb[i] = sb[i] == 1 ? 0 : s2;
      s1 *= sa[i];
      s2 *= sb[i];
    }
    std::size_t pa = 0, pb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ia[i] = pa;
      ib[i] = pb;
      O[i] = A[pa] + B[pb];
      for (std::size_t d = rank; d-- > 0;) {
        pa += stra[d];
        pb += strb[d];
        if (++idx[d] < os[d]) break;
        pa -= stra[d] * os[d];
        pb -= strb[d] * os[d];
        idx[d] = 0;
      }
    }
  }
  if (Tape* tape = detail::recording({&a, &b})) {
    tape->record(out, [ai = a.impl(), bi = b.impl(), o = out.impl().get(), same, suffix, ia = std::move(ia),
                       ib = std::move(ib)] {
      const std::vector<double>& G = o->grad;
      if (same || suffix) {
        if (ai->requires_grad) detail::accumulate(*ai, G);
        if (bi->requires_grad) {
          auto& gb = bi->ensure_grad();
          const std::size_t m = gb.size();
          for (std::size_t i = 0; i < G.size(); ++i) gb[i % m] += G[i];
        }
        return;
      }
      if (ai->requires_grad) {
        auto& ga = ai->ensure_grad();
        for (std::size_t i = 0; i < G.size(); ++i) ga[ia[i]] += G[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->ensure_grad();
        for (std::size_t i = 0; i < G.size(); ++i) gb[ib[i]] += G[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) o[i] = c * d[i];
  if (Tape* tape = detail::recording({&x})) {
    tape->record(out, [xi = x.impl(), oi = out.impl().get(), c] {
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * oi->grad[i];
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) o[i] = d[i] > 0.0 ? d[i] : 0.0;
  if (Tape* tape = detail::recording({&x})) {
    tape->record(out, [xi = x.impl(), oi = out.impl().get()] {
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xi->data[i] > 0.0) g[i] += oi->grad[i];
    });
  }
  return out;
}

inline Tensor softmax(const Tensor& x, long axis = -1) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto [outer, n, inner] = detail::split_at(x.shape(), ax);
  Tensor out = Tensor::zeros(x.shape());
  const double* X = x.data().data();
  double* Y = out.mutable_data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, X[base + k * inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        double e = std::exp(X[base + k * inner] - mx);
        Y[base + k * inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < n; ++k) Y[base + k * inner] /= sum;
    }
  }
  if (Tape* tape = detail::recording({&x})) {
    tape->record(out, [xi = x.impl(), oi = out.impl().get(), outer, n, inner] {
      auto& g = xi->ensure_grad();
      const auto& y = oi->data;
      const auto& gy = oi->grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          double dot = 0.0;
          for (std::size_t k = 0; k < n; ++k) dot += gy[base + k * inner] * y[base + k * inner];
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = base + k * inner;
            g[i] += y[i] * (gy[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

inline Tensor log_softmax(const Tensor& x, long axis = -1) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "log_softmax");
  const auto [outer, n, inner] = detail::split_at(x.shape(), ax);
  Tensor out = Tensor::zeros(x.shape());
  const double* X = x.data().data();
  double* Y = out.mutable_data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, X[base + k * inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) sum += std::exp(X[base + k * inner] - mx);
      const double lse = mx + std::log(sum);
      for (std::size_t k = 0; k < n; ++k) Y[base + k * inner] = X[base + k * inner] - lse;
    }
  }
  if (Tape* tape = detail::recording({&x})) {
    tape->record(out, [xi = x.impl(), oi = out.impl().get(), outer, n, inner] {
      auto& g = xi->ensure_grad();
      const auto& y = oi->data;
      const auto& gy = oi->grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          double total = 0.0;
          for (std::size_t k = 0; k < n; ++k) total += gy[base + k * inner];
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = base + k * inner;
            g[i] += gy[i] - std::exp(y[i]) * total;
          }
        }
      }
    });
  }
  return out;
}

/// Normalizes over the last axis, then applies gain and bias. `eps` floors the
/// variance so a constant row stays finite in both passes.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t D = x.shape().back();
  if (gamma.numel() != D || beta.numel() != D) shape_mismatch("layer_norm", x.shape(), gamma.shape());
  const std::size_t rows = x.numel() / std::max<std::size_t>(D, 1);
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(x.numel()), rstd(rows);
  const double* X = x.data().data();
  const double* Gm = gamma.data().data();
  const double* Bt = beta.data().data();
  double* Y = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X + r * D;
    double mean = 0.0;
    for (std::size_t k = 0; k < D; ++k) mean += xr[k];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t k = 0; k < D; ++k) var += (xr[k] - mean) * (xr[k] - mean);
    var /= static_cast<double>(D);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < D; ++k) {
      const double h = (xr[k] - mean) * rstd[r];
      xhat[r * D + k] = h;
      Y[r * D + k] = h * Gm[k] + Bt[k];
    }
  }
  if (Tape* tape = detail::recording({&x, &gamma, &beta})) {
    tape->record(out, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl().get(),
                       xhat = std::move(xhat), rstd = std::move(rstd), rows, D] {
      const auto& gy = oi->grad;
      if (gi->requires_grad || bi->requires_grad) {
        auto& gg = gi->ensure_grad();
        auto& gb = bi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < D; ++k) {
            gg[k] += gy[r * D + k] * xhat[r * D + k];
            gb[k] += gy[r * D + k];
          }
      }
      if (!xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      const double inv_d = 1.0 / static_cast<double>(D);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t k = 0; k < D; ++k) {
          const double dh = gy[r * D + k] * gi->data[k];
          m1 += dh;
          m2 += dh * xhat[r * D + k];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for (std::size_t k = 0; k < D; ++k) {
          const double dh = gy[r * D + k] * gi->data[k];
          gx[r * D + k] += rstd[r] * (dh - m1 - xhat[r * D + k] * m2);
        }
      }
    });
  }
  return out;
}

/// Rows of `table` (V x d) selected by `ids`; output shape is `lead` + (d).
inline Tensor embedding(const Tensor& table, std::span<const int> ids, Shape lead) {
  if (table.rank() != 2) shape_mismatch("embedding", table.shape(), lead);
  if (numel(lead) != ids.size()) shape_mismatch("embedding", lead, Shape{ids.size()});
  const std::size_t V = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= V)
      fail(ErrorKind::ShapeMismatch, "embedding: id " + std::to_string(id) + " outside table of " + std::to_string(V));
  Shape os = lead;
  os.push_back(d);
  Tensor out = Tensor::zeros(os);
  double* O = out.mutable_data().data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, O + i * d);
  if (Tape* tape = detail::recording({&table})) {
    tape->record(out, [ti = table.impl(), oi = out.impl().get(), ids = std::vector<int>(ids.begin(), ids.end()), d] {
      auto& g = ti->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t k = 0; k < d; ++k) g[static_cast<std::size_t>(ids[i]) * d + k] += oi->grad[i * d + k];
    });
  }
  return out;
}

/// Swaps two axes.
inline Tensor transpose(const Tensor& x, long axis0 = -2, long axis1 = -1) {
  const std::size_t r = x.rank();
  const std::size_t a0 = detail::normalize_axis(axis0, r, "transpose");
  const std::size_t a1 = detail::normalize_axis(axis1, r, "transpose");
  Shape os = x.shape();
  std::swap(os[a0], os[a1]);
  // in_stride[d] = stride in x of output axis d
  std::vector<std::size_t> xstride(r), in_stride(r);
  {
    std::size_t s = 1;
    for (std::size_t d = r; d-- > 0;) {
      xstride[d] = s;
      s *= x.shape()[d];
    }
  }
  for (std::size_t d = 0; d < r; ++d) in_stride[d] = xstride[d];
  std::swap(in_stride[a0], in_stride[a1]);
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t p = 0;
    for (std::size_t i = 0; i < n; ++i) {
      src[i] = p;
      for (std::size_t d = r; d-- > 0;) {
        p += in_stride[d];
        if (++idx[d] < os[d]) break;
        p -= in_stride[d] * os[d];
        idx[d] = 0;
      }
    }
  }
  Tensor out = Tensor::zeros(os);
  double* O = out.mutable_data().data();
  const double* X = x.data().data();
  for (std::size_t i = 0; i < n; ++i) O[i] = X[src[i]];
  if (Tape* tape = detail::recording({&x})) {
    tape->record(out, [xi = x.impl(), oi = out.impl().get(), src = std::move(src)] {
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += oi->grad[i];
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  Tensor out = Tensor::from(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (Tape* tape = detail::recording({&x})) {
    tape->record(out, [xi = x.impl(), oi = out.impl().get()] { detail::accumulate(*xi, oi->grad); });
  }
  return out;
}

/// Replaces entries where `mask` is nonzero by `value`. The mask covers every
/// element of `x`.
inline Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value = kMaskValue) {
  if (mask.size() != x.numel()) shape_mismatch("masked_fill", x.shape(), Shape{mask.size()});
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) o[i] = mask[i] ? value : d[i];
  if (Tape* tape = detail::recording({&x})) {
    tape->record(out, [xi = x.impl(), oi = out.impl().get(), m = std::vector<std::uint8_t>(mask.begin(), mask.end())] {
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!m[i]) g[i] += oi->grad[i];
    });
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, long axis) {
  if (parts.empty()) fail(ErrorKind::ShapeMismatch, "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = detail::normalize_axis(axis, s0.size(), "concat");
  Shape os = s0;
  os[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_mismatch("concat", s0, s);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != ax && s[d] != s0[d]) shape_mismatch("concat", s0, s);
    os[ax] += s[ax];
  }
  const auto [outer, total, inner] = detail::split_at(os, ax);
  Tensor out = Tensor::zeros(os);
  double* O = out.mutable_data().data();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t n = p.shape()[ax];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * n * inner, n * inner, O + (o * total + off) * inner);
    off += n;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  Tape* tape = Tape::active();
  if (tape && any) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    tape->record(out, [impls = std::move(impls), offsets, oi = out.impl().get(), ax, outer = outer, total = total,
                       inner = inner] {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (!impls[k]->requires_grad) continue;
        auto& g = impls[k]->ensure_grad();
        const std::size_t n = impls[k]->shape[ax];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < n * inner; ++i) g[o * n * inner + i] += oi->grad[(o * total + offsets[k]) * inner + i];
      }
    });
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (Tape* tape = detail::recording({&x})) {
    tape->record(out, [xi = x.impl(), oi = out.impl().get()] {
      auto& g = xi->ensure_grad();
      for (double& v : g) v += oi->grad[0];
    });
  }
  return out;
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) fail(ErrorKind::EmptyLoss, "mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// Mean negative log-likelihood of `targets` under softmax(`logits`) over the
/// last axis. Positions whose target equals `ignore_index` do not count.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index = -100) {
  const std::size_t V = logits.shape().back();
  const std::size_t rows = logits.numel() / std::max<std::size_t>(V, 1);
  if (targets.size() != rows) shape_mismatch("cross_entropy", logits.shape(), Shape{targets.size()});
  const double* X = logits.data().data();
  std::vector<double> probs(logits.numel(), 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V)
      fail(ErrorKind::ShapeMismatch, "cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(V) +
                                         " classes");
    const double* x = X + r * V;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < V; ++k) mx = std::max(mx, x[k]);
    double s = 0.0;
    for (std::size_t k = 0; k < V; ++k) s += std::exp(x[k] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t k = 0; k < V; ++k) probs[r * V + k] = std::exp(x[k] - lse);
    total += lse - x[static_cast<std::size_t>(t)];
    ++count;
  }
  if (count == 0) fail(ErrorKind::EmptyLoss, "cross_entropy: every target is ignored");
  Tensor out = Tensor::scalar(total / static_cast<double>(count));
  if (Tape* tape = detail::recording({&logits})) {
    tape->record(out, [li = logits.impl(), oi = out.impl().get(), probs = std::move(probs),
                       tg = std::vector<int>(targets.begin(), targets.end()), V, count, ignore_index] {
      auto& g = li->ensure_grad();
      const double w = oi->grad[0] / static_cast<double>(count);
      for (std::size_t r = 0; r < tg.size(); ++r) {
        if (tg[r] == ignore_index) continue;
        for (std::size_t k = 0; k < V; ++k) g[r * V + k] += w * probs[r * V + k];
        g[r * V + static_cast<std::size_t>(tg[r])] -= w;
      }
    });
  }
  return out;
}

inline void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) fail(ErrorKind::NotOnTape, "backward() needs an active tape");
  tape->backward(loss);
}

}  // namespace tamer::nn
