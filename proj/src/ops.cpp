// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>

#include "gfit/error.hpp"

namespace gfit::ops {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

using ImplPtr = std::shared_ptr<TensorImpl>;

template <class T>
CMatMap<T> cmat(const TensorImpl& t, std::size_t rows, std::size_t cols) {
  return CMatMap<T>(buffer_as<T>(t.data).data(), static_cast<Eigen::Index>(rows),
                    static_cast<Eigen::Index>(cols));
}
template <class T>
MatMap<T> mat(std::span<T> s, std::size_t rows, std::size_t cols) {
  return MatMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
MatMap<T> gmat(TensorImpl& t, std::size_t rows, std::size_t cols) {
  return mat<T>(detail::grad_buffer<T>(t), rows, cols);
}
template <class T>
std::span<const T> cdata(const TensorImpl& t) {
  return buffer_as<T>(t.data);
}
template <class T>
std::span<const T> cgrad(const TensorImpl& t) {
  return buffer_as<T>(t.grad);
}

void require_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) {
    throw DimensionError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  require_same_dtype(op, a, b);
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void record(const char* kind, std::initializer_list<const Tensor*> inputs, const Tensor& out, BackwardFn fn) {
  std::vector<ImplPtr> ins;
  ins.reserve(inputs.size());
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined()) ins.push_back(t->impl());
  }
  tape().record(kind, std::move(ins), out.impl(), std::move(fn));
}

bool wants(const ImplPtr& p) { return p && p->requires_grad; }

template <class T>
void accumulate(TensorImpl& dst, std::span<const T> src) {
  auto g = detail::grad_buffer<T>(dst);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  });
  if (detail::needs_grad({&a, &b})) {
    record("add", {&a, &b}, out, [ai = a.impl(), bi = b.impl()](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        if (wants(ai)) accumulate<T>(*ai, cgrad<T>(o));
        if (wants(bi)) accumulate<T>(*bi, cgrad<T>(o));
      });
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  });
  if (detail::needs_grad({&a, &b})) {
    record("sub", {&a, &b}, out, [ai = a.impl(), bi = b.impl()](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        auto g = cgrad<T>(o);
        if (wants(ai)) accumulate<T>(*ai, g);
        if (wants(bi)) {
          auto gb = detail::grad_buffer<T>(*bi);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
        }
      });
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  });
  if (detail::needs_grad({&a, &b})) {
    record("mul", {&a, &b}, out, [ai = a.impl(), bi = b.impl()](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        auto g = cgrad<T>(o);
        auto x = cdata<T>(*ai);
        auto y = cdata<T>(*bi);
        if (wants(ai)) {
          auto ga = detail::grad_buffer<T>(*ai);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (wants(bi)) {
          auto gb = detail::grad_buffer<T>(*bi);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * x[i];
        }
      });
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>();
    auto o = out.mutable_data<T>();
    const T k = static_cast<T>(s);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * k;
  });
  if (detail::needs_grad({&a})) {
    record("scale", {&a}, out, [ai = a.impl(), s](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        auto g = cgrad<T>(o);
        auto ga = detail::grad_buffer<T>(*ai);
        const T k = static_cast<T>(s);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * k;
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  require_same_dtype("matmul", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  }
  Tensor out({m, n}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    mat<T>(out.mutable_data<T>(), m, n).noalias() = cmat<T>(*a.impl(), m, k) * cmat<T>(*b.impl(), k, n);
  });
  if (detail::needs_grad({&a, &b})) {
    record("matmul", {&a, &b}, out, [ai = a.impl(), bi = b.impl(), m, k, n](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        CMatMap<T> dc(cgrad<T>(o).data(), m, n);
        if (wants(ai)) gmat<T>(*ai, m, k).noalias() += dc * cmat<T>(*bi, k, n).transpose();
        if (wants(bi)) gmat<T>(*bi, k, n).noalias() += cmat<T>(*ai, m, k).transpose() * dc;
      });
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank("matmul_nt", a, 2);
  require_rank("matmul_nt", b, 2);
  require_same_dtype("matmul_nt", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()) + "^T");
  }
  Tensor out({m, n}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    mat<T>(out.mutable_data<T>(), m, n).noalias() = cmat<T>(*a.impl(), m, k) * cmat<T>(*b.impl(), n, k).transpose();
  });
  if (detail::needs_grad({&a, &b})) {
    record("matmul_nt", {&a, &b}, out, [ai = a.impl(), bi = b.impl(), m, k, n](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        CMatMap<T> dc(cgrad<T>(o).data(), m, n);
        if (wants(ai)) gmat<T>(*ai, m, k).noalias() += dc * cmat<T>(*bi, n, k);
        if (wants(bi)) gmat<T>(*bi, n, k).noalias() += dc.transpose() * cmat<T>(*ai, m, k);
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Broadcast bias

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_row_bias", x, 2);
  require_same_dtype("add_row_bias", x, bias);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) {
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " for " + shape_str(x.shape()));
  }
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto bd = bias.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) o[i * n + j] = xd[i * n + j] + bd[j];
  });
  if (detail::needs_grad({&x, &bias})) {
    record("add_row_bias", {&x, &bias}, out, [xi = x.impl(), bi = bias.impl(), m, n](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        auto g = cgrad<T>(o);
        if (wants(xi)) accumulate<T>(*xi, g);
        if (wants(bi)) {
          auto gb = detail::grad_buffer<T>(*bi);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      });
    });
  }
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 1) throw DimensionError("add_channel_bias: scalar input");
  require_same_dtype("add_channel_bias", x, bias);
  const std::size_t c = x.dim(0), inner = x.numel() / std::max<std::size_t>(c, 1);
  if (bias.numel() != c) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " for " + shape_str(x.shape()));
  }
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto bd = bias.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) o[ch * inner + i] = xd[ch * inner + i] + bd[ch];
  });
  if (detail::needs_grad({&x, &bias})) {
    record("add_channel_bias", {&x, &bias}, out, [xi = x.impl(), bi = bias.impl(), c, inner](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        auto g = cgrad<T>(o);
        if (wants(xi)) accumulate<T>(*xi, g);
        if (wants(bi)) {
          auto gb = detail::grad_buffer<T>(*bi);
          for (std::size_t ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (std::size_t i = 0; i < inner; ++i) acc += g[ch * inner + i];
            gb[ch] += acc;
          }
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.shape().back() < 1) throw DimensionError("softmax_lastdim: empty last extent");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* in = xd.data() + r * n;
      T* y = o.data() + r * n;
      T mx = in[0];
      for (std::size_t j = 0; j < n; ++j) {
        if (!std::isfinite(in[j])) throw NumericError("softmax_lastdim: non-finite input");
        mx = std::max(mx, in[j]);
      }
      T z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        y[j] = std::exp(in[j] - mx);
        z += y[j];
      }
      for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
  });
  if (detail::needs_grad({&x})) {
    record("softmax_lastdim", {&x}, out, [xi = x.impl(), rows, n](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        auto y = cdata<T>(o);
        auto g = cgrad<T>(o);
        auto gx = detail::grad_buffer<T>(*xi);
        for (std::size_t r = 0; r < rows; ++r) {
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
          for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
        }
      });
    });
  }
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] / (T(1) + std::exp(-xd[i]));
  });
  if (detail::needs_grad({&x})) {
    record("silu", {&x}, out, [xi = x.impl()](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        auto xd = cdata<T>(*xi);
        auto g = cgrad<T>(o);
        auto gx = detail::grad_buffer<T>(*xi);
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const T s = T(1) / (T(1) + std::exp(-xd[i]));
          gx[i] += g[i] * s * (T(1) + xd[i] * (T(1) - s));
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Group normalization

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t groups, double eps) {
  if (x.rank() < 1) throw DimensionError("group_norm: scalar input");
  const std::size_t c = x.dim(0);
  if (groups == 0 || c % groups != 0) {
    throw DimensionError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(c) +
                         " channels");
  }
  if (gamma.defined() && gamma.numel() != c) throw DimensionError("group_norm: gamma extent");
  if (beta.defined() && beta.numel() != c) throw DimensionError("group_norm: beta extent");
  const std::size_t inner = x.numel() / c;
  const std::size_t cpg = c / groups;
  const std::size_t per_group = cpg * inner;
  Tensor out(x.shape(), x.dtype());
  auto stats = std::make_shared<std::vector<double>>(2 * groups);  // mean, rstd
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    const T* gm = gamma.defined() ? gamma.data<T>().data() : nullptr;
    const T* bt = beta.defined() ? beta.data<T>().data() : nullptr;
    for (std::size_t g = 0; g < groups; ++g) {
      const T* in = xd.data() + g * per_group;
      double s = 0;
      for (std::size_t i = 0; i < per_group; ++i) s += in[i];
      const double mu = s / static_cast<double>(per_group);
      double v = 0;
      for (std::size_t i = 0; i < per_group; ++i) v += (in[i] - mu) * (in[i] - mu);
      v /= static_cast<double>(per_group);
      const double rstd = 1.0 / std::sqrt(v + eps);
      (*stats)[2 * g] = mu;
      (*stats)[2 * g + 1] = rstd;
      for (std::size_t cc = 0; cc < cpg; ++cc) {
        const std::size_t ch = g * cpg + cc;
        const T gg = gm ? gm[ch] : T(1);
        const T bb = bt ? bt[ch] : T(0);
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t idx = ch * inner + i;
          o[idx] = static_cast<T>((xd[idx] - mu) * rstd) * gg + bb;
        }
      }
    }
  });
  if (detail::needs_grad({&x, &gamma, &beta})) {
    record("group_norm", {&x, &gamma, &beta}, out,
           [xi = x.impl(), gi = gamma.defined() ? gamma.impl() : nullptr,
            bi = beta.defined() ? beta.impl() : nullptr, stats, groups, cpg, inner, per_group](TensorImpl& o) {
             dispatch(o.dtype, [&]<class T>() {
               auto xd = cdata<T>(*xi);
               auto g = cgrad<T>(o);
               const T* gm = gi ? cdata<T>(*gi).data() : nullptr;
               std::span<T> gx = wants(xi) ? detail::grad_buffer<T>(*xi) : std::span<T>{};
               std::span<T> gg = wants(gi) ? detail::grad_buffer<T>(*gi) : std::span<T>{};
               std::span<T> gb = wants(bi) ? detail::grad_buffer<T>(*bi) : std::span<T>{};
               for (std::size_t grp = 0; grp < groups; ++grp) {
                 const double mu = (*stats)[2 * grp];
                 const double rstd = (*stats)[2 * grp + 1];
                 double sum_dxhat = 0, sum_dxhat_xhat = 0;
                 for (std::size_t cc = 0; cc < cpg; ++cc) {
                   const std::size_t ch = grp * cpg + cc;
                   const double gam = gm ? gm[ch] : 1.0;
                   double dgam = 0, dbet = 0;
                   for (std::size_t i = 0; i < inner; ++i) {
                     const std::size_t idx = ch * inner + i;
                     const double xhat = (xd[idx] - mu) * rstd;
                     const double dxhat = g[idx] * gam;
                     sum_dxhat += dxhat;
                     sum_dxhat_xhat += dxhat * xhat;
                     dgam += g[idx] * xhat;
                     dbet += g[idx];
                   }
                   if (!gg.empty()) gg[ch] += static_cast<T>(dgam);
                   if (!gb.empty()) gb[ch] += static_cast<T>(dbet);
                 }
                 if (gx.empty()) continue;
                 const double mean_dxhat = sum_dxhat / static_cast<double>(per_group);
                 const double mean_dxhat_xhat = sum_dxhat_xhat / static_cast<double>(per_group);
                 for (std::size_t cc = 0; cc < cpg; ++cc) {
                   const std::size_t ch = grp * cpg + cc;
                   const double gam = gm ? gm[ch] : 1.0;
                   for (std::size_t i = 0; i < inner; ++i) {
                     const std::size_t idx = ch * inner + i;
                     const double xhat = (xd[idx] - mu) * rstd;
                     const double dxhat = g[idx] * gam;
                     gx[idx] += static_cast<T>(rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat));
                   }
                 }
               }
             });
           });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)

namespace {

struct ConvGeom {
  std::size_t cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return ho * wo; }
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t np = g.pixels();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((ci * g.k + ky) * g.k + kx) * np;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] = inside ? x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const std::size_t np = g.pixels();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((ci * g.k + ky) * g.k + kx) * np;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", kernel, 4);
  require_same_dtype("conv2d", x, kernel);
  if (kernel.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input is " + shape_str(x.shape()));
  }
  if (kernel.dim(2) != kernel.dim(3)) throw DimensionError("conv2d: kernel must be square");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), kernel.dim(0), kernel.dim(2), stride, padding, 0, 0};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) throw DimensionError("conv2d: kernel larger than padded input");
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (bias.defined()) {
    require_same_dtype("conv2d", x, bias);
    if (bias.numel() != g.cout) throw DimensionError("conv2d: bias extent " + shape_str(bias.shape()));
  }
  Tensor out({g.cout, g.ho, g.wo}, x.dtype());
  const bool grad = detail::needs_grad({&x, &kernel, &bias});
  auto cols = std::make_shared<Buffer>();
  dispatch(x.dtype(), [&]<class T>() {
    AlignedVector<T> c(g.patch() * g.pixels());
    im2col<T>(x.data<T>().data(), g, c.data());
    auto o = mat<T>(out.mutable_data<T>(), g.cout, g.pixels());
    o.noalias() = cmat<T>(*kernel.impl(), g.cout, g.patch()) * CMatMap<T>(c.data(), g.patch(), g.pixels());
    if (bias.defined()) {
      auto b = bias.data<T>();
      for (std::size_t co = 0; co < g.cout; ++co) o.row(co).array() += b[co];
    }
    if (grad) *cols = std::move(c);
  });
  if (grad) {
    record("conv2d", {&x, &kernel, &bias}, out,
           [xi = x.impl(), ki = kernel.impl(), bi = bias.defined() ? bias.impl() : nullptr, cols, g](TensorImpl& o) {
             dispatch(o.dtype, [&]<class T>() {
               CMatMap<T> dout(cgrad<T>(o).data(), g.cout, g.pixels());
               const auto& c = buffer_as<T>(*cols);
               if (wants(ki)) {
                 gmat<T>(*ki, g.cout, g.patch()).noalias() += dout * CMatMap<T>(c.data(), g.patch(), g.pixels()).transpose();
               }
               if (wants(bi)) {
                 auto gb = detail::grad_buffer<T>(*bi);
                 for (std::size_t co = 0; co < g.cout; ++co) gb[co] += dout.row(co).sum();
               }
               if (wants(xi)) {
                 RowMat<T> dcols = cmat<T>(*ki, g.cout, g.patch()).transpose() * dout;
                 col2im_add<T>(dcols.data(), g, detail::grad_buffer<T>(*xi).data());
               }
             });
           });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.dtype());
  out.impl()->data = x.impl()->data;
  if (detail::needs_grad({&x})) {
    record("reshape", {&x}, out, [xi = x.impl()](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() { accumulate<T>(*xi, cgrad<T>(o)); });
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({n, m}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() { mat<T>(out.mutable_data<T>(), n, m) = cmat<T>(*x.impl(), m, n).transpose(); });
  if (detail::needs_grad({&x})) {
    record("transpose", {&x}, out, [xi = x.impl(), m, n](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        gmat<T>(*xi, m, n) += CMatMap<T>(cgrad<T>(o).data(), n, m).transpose();
      });
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis " + std::to_string(axis) + " for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require_same_dtype("concat", parts[0], p);
    if (p.rank() != ref.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (d != axis && p.dim(d) != ref[d]) {
        throw DimensionError("concat: " + shape_str(p.shape()) + " vs " + shape_str(ref) + " off axis " +
                             std::to_string(axis));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  const std::size_t out_axis = out_shape[axis];
  Tensor out(out_shape, parts[0].dtype());
  dispatch(out.dtype(), [&]<class T>() {
    auto o = out.mutable_data<T>();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.dim(axis) * inner;
      auto pd = p.data<T>();
      for (std::size_t i = 0; i < outer; ++i) {
        std::copy_n(pd.data() + i * len, len, o.data() + i * out_axis * inner + offset);
      }
      offset += len;
    }
  });
  bool grad = false;
  for (const auto& p : parts) grad = grad || detail::needs_grad({&p});
  if (grad) {
    std::vector<ImplPtr> ins;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
      ins.push_back(p.impl());
      lens.push_back(p.dim(axis) * inner);
    }
    tape().record("concat", ins, out.impl(), [ins, lens, outer, out_axis, inner](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        auto g = cgrad<T>(o);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ins.size(); ++k) {
          if (wants(ins[k])) {
            auto gp = detail::grad_buffer<T>(*ins[k]);
            for (std::size_t i = 0; i < outer; ++i)
              for (std::size_t j = 0; j < lens[k]; ++j) gp[i * lens[k] + j] += g[i * out_axis * inner + offset + j];
          }
          offset += lens[k];
        }
      });
    });
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_rank("upsample_nearest2x", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, 2 * h, 2 * w}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          o[(ch * 2 * h + y) * 2 * w + xx] = xd[(ch * h + y / 2) * w + xx / 2];
  });
  if (detail::needs_grad({&x})) {
    record("upsample_nearest2x", {&x}, out, [xi = x.impl(), c, h, w](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        auto g = cgrad<T>(o);
        auto gx = detail::grad_buffer<T>(*xi);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
              gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
      });
    });
  }
  return out;
}

namespace {

// Index map between [C x H x W] and [C*p*p x H/p x W/p]: fills `src_of_dst`.
std::vector<std::size_t> depth_permutation(std::size_t c, std::size_t h, std::size_t w, std::size_t p) {
  const std::size_t ho = h / p, wo = w / p;
  std::vector<std::size_t> idx(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t dy = 0; dy < p; ++dy)
      for (std::size_t dx = 0; dx < p; ++dx)
        for (std::size_t y = 0; y < ho; ++y)
          for (std::size_t xx = 0; xx < wo; ++xx) {
            const std::size_t oc = ch * p * p + dy * p + dx;
            idx[(oc * ho + y) * wo + xx] = (ch * h + y * p + dy) * w + xx * p + dx;
          }
  return idx;
}

Tensor permute_gather(const Tensor& x, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> src,
                      bool inverse, const char* kind) {
  Tensor out(std::move(out_shape), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    const auto& s = *src;
    if (!inverse) {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[s[i]];
    } else {
      for (std::size_t i = 0; i < o.size(); ++i) o[s[i]] = xd[i];
    }
  });
  if (detail::needs_grad({&x})) {
    record(kind, {&x}, out, [xi = x.impl(), src, inverse](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        auto g = cgrad<T>(o);
        auto gx = detail::grad_buffer<T>(*xi);
        const auto& s = *src;
        if (!inverse) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[s[i]] += g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[s[i]];
        }
      });
    });
  }
  return out;
}

}  // namespace

Tensor space_to_depth(const Tensor& x, std::size_t p) {
  require_rank("space_to_depth", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (p == 0 || h % p || w % p) throw DimensionError("space_to_depth: " + shape_str(x.shape()) + " by " + std::to_string(p));
  auto idx = std::make_shared<const std::vector<std::size_t>>(depth_permutation(c, h, w, p));
  return permute_gather(x, {c * p * p, h / p, w / p}, idx, false, "space_to_depth");
}

Tensor depth_to_space(const Tensor& x, std::size_t p) {
  require_rank("depth_to_space", x, 3);
  const std::size_t cp = x.dim(0), ho = x.dim(1), wo = x.dim(2);
  if (p == 0 || cp % (p * p)) throw DimensionError("depth_to_space: " + shape_str(x.shape()) + " by " + std::to_string(p));
  const std::size_t c = cp / (p * p);
  auto idx = std::make_shared<const std::vector<std::size_t>>(depth_permutation(c, ho * p, wo * p, p));
  return permute_gather(x, {c, ho * p, wo * p}, idx, true, "depth_to_space");
}

Tensor to_tokens(const Tensor& x) {
  require_rank("to_tokens", x, 3);
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width) {
  require_rank("from_tokens", tokens, 2);
  if (tokens.dim(0) != height * width) {
    throw DimensionError("from_tokens: " + shape_str(tokens.shape()) + " is not " + std::to_string(height) + "x" +
                         std::to_string(width) + " tokens");
  }
  return reshape(transpose(tokens), {tokens.dim(1), height, width});
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  Tensor out(Shape{}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    double s = 0;
    for (T v : x.data<T>()) s += v;  // fixed left-to-right order
    out.mutable_data<T>()[0] = static_cast<T>(s);
  });
  if (detail::needs_grad({&x})) {
    record("sum", {&x}, out, [xi = x.impl()](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        const T g = cgrad<T>(o)[0];
        for (auto& v : detail::grad_buffer<T>(*xi)) v += g;
      });
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape("mse", a, b);
  if (a.numel() == 0) throw DimensionError("mse: empty tensor");
  const double inv_n = 1.0 / static_cast<double>(a.numel());
  Tensor out(Shape{}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
      s += d * d;
    }
    out.mutable_data<T>()[0] = static_cast<T>(s * inv_n);
  });
  if (detail::needs_grad({&a, &b})) {
    record("mse", {&a, &b}, out, [ai = a.impl(), bi = b.impl(), inv_n](TensorImpl& o) {
      dispatch(o.dtype, [&]<class T>() {
        const double g = cgrad<T>(o)[0];
        auto x = cdata<T>(*ai);
        auto y = cdata<T>(*bi);
        const double k = 2.0 * g * inv_n;
        if (wants(ai)) {
          auto ga = detail::grad_buffer<T>(*ai);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += static_cast<T>(k * (x[i] - y[i]));
        }
        if (wants(bi)) {
          auto gb = detail::grad_buffer<T>(*bi);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= static_cast<T>(k * (x[i] - y[i]));
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require_rank("attention", q, 2);
  require_rank("attention", k, 2);
  require_rank("attention", v, 2);
  require_same_dtype("attention", q, k);
  require_same_dtype("attention", q, v);
  const std::size_t n = q.dim(0), d = q.dim(1), m = k.dim(0);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != m) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()));
  }
  if (heads == 0 || d % heads) {
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  }
  if (m == 0) throw DimensionError("attention: no keys");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({n, d}, q.dtype());
  const bool grad = detail::needs_grad({&q, &k, &v});
  auto probs = std::make_shared<Buffer>();
  dispatch(q.dtype(), [&]<class T>() {
    auto Q = cmat<T>(*q.impl(), n, d);
    auto K = cmat<T>(*k.impl(), m, d);
    auto V = cmat<T>(*v.impl(), m, d);
    auto O = mat<T>(out.mutable_data<T>(), n, d);
    AlignedVector<T> saved(grad ? heads * n * m : 0);
    RowMat<T> s(n, m);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h * dh);
      const auto w = static_cast<Eigen::Index>(dh);
      s.noalias() = Q.middleCols(c0, w) * K.middleCols(c0, w).transpose();
      s *= static_cast<T>(sc);
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        auto row = s.row(r);
        if (!row.allFinite()) throw NumericError("attention: non-finite score");
        const T mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
      }
      O.middleCols(c0, w).noalias() = s * V.middleCols(c0, w);
      if (grad) std::copy_n(s.data(), n * m, saved.data() + h * n * m);
    }
    if (grad) *probs = std::move(saved);
  });
  if (grad) {
    record("attention", {&q, &k, &v}, out,
           [qi = q.impl(), ki = k.impl(), vi = v.impl(), probs, n, m, d, dh, heads, sc](TensorImpl& o) {
             dispatch(o.dtype, [&]<class T>() {
               auto Q = cmat<T>(*qi, n, d);
               auto K = cmat<T>(*ki, m, d);
               auto V = cmat<T>(*vi, m, d);
               CMatMap<T> dO(cgrad<T>(o).data(), n, d);
               const auto& P_all = buffer_as<T>(*probs);
               std::optional<MatMap<T>> dQ, dK, dV;
               if (wants(qi)) dQ.emplace(gmat<T>(*qi, n, d));
               if (wants(ki)) dK.emplace(gmat<T>(*ki, m, d));
               if (wants(vi)) dV.emplace(gmat<T>(*vi, m, d));
               RowMat<T> dP(n, m);
               for (std::size_t h = 0; h < heads; ++h) {
                 const auto c0 = static_cast<Eigen::Index>(h * dh);
                 const auto w = static_cast<Eigen::Index>(dh);
                 CMatMap<T> P(P_all.data() + h * n * m, n, m);
                 if (dV) dV->middleCols(c0, w).noalias() += P.transpose() * dO.middleCols(c0, w);
                 if (!dQ && !dK) continue;
                 dP.noalias() = dO.middleCols(c0, w) * V.middleCols(c0, w).transpose();
                 for (Eigen::Index r = 0; r < dP.rows(); ++r) {
                   const T dot = dP.row(r).dot(P.row(r));
                   dP.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)) * static_cast<T>(sc);
                 }
                 if (dQ) dQ->middleCols(c0, w).noalias() += dP * K.middleCols(c0, w);
                 if (dK) dK->middleCols(c0, w).noalias() += dP.transpose() * Q.middleCols(c0, w);
               }
             });
           });
  }
  return out;
}

}  // namespace gfit::ops
