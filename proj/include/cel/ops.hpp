#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "cel/autograd.hpp"
#include "cel/kern/im2col.hpp"
#include "cel/kern/kernels.hpp"
#include "cel/tensor.hpp"

// Differentiable ops over [B,C,*spatial] tensors, rank 2 or 3 spatial.
// Convolution backward re-materializes im2col columns instead of caching
// them; activations dominate memory as is.

namespace cel::ops {

struct ConvSpec {
  int stride = 1;
  int dilation = 1;
  int pad = 0;
};

inline int64_t conv_out_extent(int64_t s, int k, const ConvSpec& cs) {
  int64_t eff = static_cast<int64_t>(k - 1) * cs.dilation + 1;
  int64_t o = (s + 2 * static_cast<int64_t>(cs.pad) - eff) / cs.stride + 1;
  check(o >= 1, cat("conv: extent ", s, " too small for kernel ", k, " dil ", cs.dilation,
                    " pad ", cs.pad));
  return o;
}

namespace detail {

inline int spatial_rank(const Shape& s) {
  int r = static_cast<int>(s.size()) - 2;
  check(r == 2 || r == 3, cat("expected 2 or 3 spatial dims, got shape ", shape_str(s)));
  return r;
}

template <class T>
void run_im2col(int r, const T* x, const Shape& sp, const Shape& osp, int64_t C, int k,
                const ConvSpec& cs, T* cols) {
  if (r == 2)
    kern::im2col_2d(x, C, sp[0], sp[1], k, cs.stride, cs.dilation, cs.pad, osp[0], osp[1], cols);
  else
    kern::im2col_3d(x, C, sp[0], sp[1], sp[2], k, cs.stride, cs.dilation, cs.pad, osp[0], osp[1],
                    osp[2], cols);
}

template <class T>
void run_col2im(int r, const T* cols, const Shape& sp, const Shape& osp, int64_t C, int k,
                const ConvSpec& cs, T* x_accum) {
  if (r == 2)
    kern::col2im_2d(cols, C, sp[0], sp[1], k, cs.stride, cs.dilation, cs.pad, osp[0], osp[1],
                    x_accum);
  else
    kern::col2im_3d(cols, C, sp[0], sp[1], sp[2], k, cs.stride, cs.dilation, cs.pad, osp[0],
                    osp[1], osp[2], x_accum);
}

}  // namespace detail

// x [B,Ci,*sp], w [Co,Ci,k..k], b [Co]. Output [B,Co,*osp].
template <class T>
VarT<T> conv(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, ConvSpec cs = {}) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  int r = detail::spatial_rank(xs);
  check(static_cast<int>(ws.size()) == r + 2, cat("conv: weight rank mismatch ", shape_str(ws),
                                                  " for input ", shape_str(xs)));
  const int64_t B = xs[0], Ci = xs[1], Co = ws[0];
  check(ws[1] == Ci, cat("conv: weight expects ", ws[1], " input channels, got ", Ci));
  const int k = static_cast<int>(ws[2]);
  for (int i = 2; i < static_cast<int>(ws.size()); ++i)
    check(ws[i] == k, cat("conv: kernel must be cubic, got ", shape_str(ws)));
  check(b.shape() == Shape{Co}, cat("conv: bias shape ", shape_str(b.shape()), " want [", Co, "]"));

  Shape sp = spatial_of(xs), osp(sp.size());
  for (size_t i = 0; i < sp.size(); ++i) osp[i] = conv_out_extent(sp[i], k, cs);
  const int64_t Pin = numel(sp), P = numel(osp);
  int64_t CiK = Ci;
  for (int i = 0; i < r; ++i) CiK *= k;
  const bool direct = (k == 1 && cs.stride == 1 && cs.pad == 0);

  Shape oshape{B, Co};
  oshape.insert(oshape.end(), osp.begin(), osp.end());
  TensorT<T> out(oshape);

  std::vector<T> cols;
  if (!direct) cols.resize(static_cast<size_t>(CiK * P));
  for (int64_t bi = 0; bi < B; ++bi) {
    const T* xb = x.val().data() + bi * Ci * Pin;
    const T* cb = xb;
    if (!direct) {
      detail::run_im2col(r, xb, sp, osp, Ci, k, cs, cols.data());
      cb = cols.data();
    }
    T* ob = out.data() + bi * Co * P;
    kern::gemm_nn<T>(Co, P, CiK, w.val().data(), cb, ob, false);
    for (int64_t co = 0; co < Co; ++co) kern::shift<T>(P, b.val()[co], ob + co * P);
  }

  return make_op<T>(
      std::move(out), {x, w, b},
      [x, w, b, cs, r, B, Ci, Co, k, sp, osp, Pin, P, CiK, direct](NodeT<T>& n) {
        const T* g = n.grad.data();
        if (b.requires_grad()) {
          TensorT<T>& db = b.grad();
          for (int64_t co = 0; co < Co; ++co) {
            double s = 0.0;
            for (int64_t bi = 0; bi < B; ++bi)
              s += kern::sum<T>(P, g + (bi * Co + co) * P);
            db[co] += static_cast<T>(s);
          }
        }
        const bool need_w = w.requires_grad(), need_x = x.requires_grad();
        if (!need_w && !need_x) return;
        std::vector<T> cols, dcols, wt;
        if (!direct) {
          cols.resize(static_cast<size_t>(CiK * P));
          if (need_x) dcols.resize(static_cast<size_t>(CiK * P));
        }
        // direct path: columns are the input itself, so dX accumulates straight
        // from the GEMM
        if (need_x) {
          wt.resize(static_cast<size_t>(CiK * Co));
          const T* wd = w.val().data();
          for (int64_t co = 0; co < Co; ++co)
            for (int64_t j = 0; j < CiK; ++j) wt[j * Co + co] = wd[co * CiK + j];
        }
        for (int64_t bi = 0; bi < B; ++bi) {
          const T* gb = g + bi * Co * P;
          if (need_w) {
            const T* cb = x.val().data() + bi * Ci * Pin;
            if (!direct) {
              detail::run_im2col(r, cb, sp, osp, Ci, k, cs, cols.data());
              cb = cols.data();
            }
            kern::gemm_nt<T>(Co, CiK, P, gb, cb, w.grad().data(), true);
          }
          if (need_x) {
            T* dxb = x.grad().data() + bi * Ci * Pin;
            if (direct) {
              kern::gemm_nn<T>(CiK, P, Co, wt.data(), gb, dxb, true);
            } else {
              kern::gemm_nn<T>(CiK, P, Co, wt.data(), gb, dcols.data(), false);
              detail::run_col2im(r, dcols.data(), sp, osp, Ci, k, cs, dxb);
            }
          }
        }
      });
}

template <class T>
VarT<T> relu(const VarT<T>& x) {
  TensorT<T> out(x.shape());
  kern::relu<T>(x.val().numel(), x.val().data(), out.data());
  return make_op<T>(std::move(out), {x}, [x](NodeT<T>& n) {
    kern::relu_bwd<T>(n.val.numel(), n.val.data(), n.grad.data(), x.grad().data());
  });
}

template <class T>
VarT<T> sigmoid(const VarT<T>& x) {
  TensorT<T> out(x.shape());
  const int64_t nn = x.val().numel();
  const T* xd = x.val().data();
  for (int64_t i = 0; i < nn; ++i) out[i] = T(1) / (T(1) + std::exp(-xd[i]));
  return make_op<T>(std::move(out), {x}, [x](NodeT<T>& n) {
    T* dx = x.grad().data();
    const T* y = n.val.data();
    const T* g = n.grad.data();
    for (int64_t i = 0; i < n.val.numel(); ++i) dx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <class T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
  check(a.shape() == b.shape(), cat("add: shape mismatch ", shape_str(a.shape()), " vs ",
                                    shape_str(b.shape())));
  TensorT<T> out(a.shape());
  kern::add<T>(out.numel(), a.val().data(), b.val().data(), out.data());
  return make_op<T>(std::move(out), {a, b}, [a, b](NodeT<T>& n) {
    if (a.requires_grad()) kern::axpy<T>(n.val.numel(), T(1), n.grad.data(), a.grad().data());
    if (b.requires_grad()) kern::axpy<T>(n.val.numel(), T(1), n.grad.data(), b.grad().data());
  });
}

template <class T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
  check(a.shape() == b.shape(), cat("mul: shape mismatch ", shape_str(a.shape()), " vs ",
                                    shape_str(b.shape())));
  TensorT<T> out(a.shape());
  kern::mul<T>(out.numel(), a.val().data(), b.val().data(), out.data());
  return make_op<T>(std::move(out), {a, b}, [a, b](NodeT<T>& n) {
    const T* g = n.grad.data();
    if (a.requires_grad()) {
      T* da = a.grad().data();
      const T* bv = b.val().data();
      for (int64_t i = 0; i < n.val.numel(); ++i) da[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      T* db = b.grad().data();
      const T* av = a.val().data();
      for (int64_t i = 0; i < n.val.numel(); ++i) db[i] += g[i] * av[i];
    }
  });
}

template <class T>
VarT<T> scale(const VarT<T>& x, T s) {
  TensorT<T> out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.val()[i] * s;
  return make_op<T>(std::move(out), {x}, [x, s](NodeT<T>& n) {
    kern::axpy<T>(n.val.numel(), s, n.grad.data(), x.grad().data());
  });
}

template <class T>
VarT<T> mean_all(const VarT<T>& x) {
  const int64_t n = x.val().numel();
  check(n > 0, "mean_all: empty input");
  TensorT<T> out(Shape{1},
                 static_cast<T>(kern::sum<T>(n, x.val().data()) / static_cast<double>(n)));
  return make_op<T>(std::move(out), {x}, [x, n](NodeT<T>& nd) {
    kern::shift<T>(n, nd.grad[0] / static_cast<T>(n), x.grad().data());
  });
}

// Channel concatenation; all inputs share batch and spatial dims.
template <class T>
VarT<T> concat_c(const std::vector<VarT<T>>& xs) {
  check(!xs.empty(), "concat_c: no inputs");
  const Shape& s0 = xs[0].shape();
  Shape sp = spatial_of(s0);
  const int64_t B = s0[0], P = numel(sp);
  int64_t C = 0;
  for (const auto& xv : xs) {
    check(xv.shape()[0] == B && spatial_of(xv.shape()) == sp,
          cat("concat_c: incompatible shape ", shape_str(xv.shape())));
    C += xv.shape()[1];
  }
  Shape oshape{B, C};
  oshape.insert(oshape.end(), sp.begin(), sp.end());
  TensorT<T> out(oshape);
  for (int64_t bi = 0; bi < B; ++bi) {
    T* ob = out.data() + bi * C * P;
    for (const auto& xv : xs) {
      const int64_t ci = xv.shape()[1] * P;
      std::memcpy(ob, xv.val().data() + bi * ci, static_cast<size_t>(ci) * sizeof(T));
      ob += ci;
    }
  }
  return make_op<T>(std::move(out), xs, [xs, B, C, P](NodeT<T>& n) {
    for (int64_t bi = 0; bi < B; ++bi) {
      const T* gb = n.grad.data() + bi * C * P;
      for (const auto& xv : xs) {
        const int64_t ci = xv.shape()[1] * P;
        if (xv.requires_grad()) kern::axpy<T>(ci, T(1), gb, xv.grad().data() + bi * ci);
        gb += ci;
      }
    }
  });
}

// 2x max pooling, stride 2, all spatial extents must be even. Ties keep the
// first tap in scan order so backward routing is deterministic.
template <class T>
VarT<T> maxpool2(const VarT<T>& x) {
  const Shape& xs = x.shape();
  int r = detail::spatial_rank(xs);
  Shape sp = spatial_of(xs), osp(sp.size());
  for (size_t i = 0; i < sp.size(); ++i) {
    check(sp[i] % 2 == 0, cat("maxpool2: odd extent in ", shape_str(xs)));
    osp[i] = sp[i] / 2;
  }
  const int64_t B = xs[0], C = xs[1], Pin = numel(sp), P = numel(osp);
  Shape oshape{B, C};
  oshape.insert(oshape.end(), osp.begin(), osp.end());
  TensorT<T> out(oshape);
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * C * P));

  const T* xd = x.val().data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* s = xd + bc * Pin;
    T* o = out.data() + bc * P;
    int64_t* ix = idx->data() + bc * P;
    if (r == 2) {
      const int64_t H = sp[0], W = sp[1], OW = osp[1];
      for (int64_t oy = 0; oy < osp[0]; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          int64_t base = (oy * 2) * W + ox * 2;
          int64_t best = base;
          T bv = s[base];
          const int64_t taps[3] = {base + 1, base + W, base + W + 1};
          for (int64_t t : taps)
            if (s[t] > bv) bv = s[t], best = t;
          o[oy * OW + ox] = bv;
          ix[oy * OW + ox] = bc * Pin + best;
        }
    } else {
      const int64_t D = sp[0], H = sp[1], W = sp[2], OH = osp[1], OW = osp[2];
      (void)D;
      for (int64_t oz = 0; oz < osp[0]; ++oz)
        for (int64_t oy = 0; oy < OH; ++oy)
          for (int64_t ox = 0; ox < OW; ++ox) {
            int64_t base = ((oz * 2) * H + oy * 2) * W + ox * 2;
            int64_t best = base;
            T bv = s[base];
            const int64_t taps[7] = {base + 1,         base + W,         base + W + 1,
                                     base + H * W,     base + H * W + 1, base + H * W + W,
                                     base + H * W + W + 1};
            for (int64_t t : taps)
              if (s[t] > bv) bv = s[t], best = t;
            o[(oz * OH + oy) * OW + ox] = bv;
            ix[(oz * OH + oy) * OW + ox] = bc * Pin + best;
          }
    }
  }
  return make_op<T>(std::move(out), {x}, [x, idx](NodeT<T>& n) {
    T* dx = x.grad().data();
    const T* g = n.grad.data();
    const int64_t* ix = idx->data();
    for (int64_t i = 0; i < n.val.numel(); ++i) dx[ix[i]] += g[i];
  });
}

// Mean over spatial dims; output keeps them as 1s.
template <class T>
VarT<T> global_avg_pool(const VarT<T>& x) {
  const Shape& xs = x.shape();
  Shape sp = spatial_of(xs);
  const int64_t B = xs[0], C = xs[1], P = numel(sp);
  Shape oshape{B, C};
  for (size_t i = 0; i < sp.size(); ++i) oshape.push_back(1);
  TensorT<T> out(oshape);
  const T inv = T(1) / static_cast<T>(P);
  for (int64_t bc = 0; bc < B * C; ++bc)
    out[bc] = static_cast<T>(kern::sum<T>(P, x.val().data() + bc * P)) * inv;
  return make_op<T>(std::move(out), {x}, [x, P, inv](NodeT<T>& n) {
    T* dx = x.grad().data();
    const T* g = n.grad.data();
    for (int64_t bc = 0; bc < n.val.numel(); ++bc) kern::shift<T>(P, g[bc] * inv, dx + bc * P);
  });
}

// Broadcast [B,C,1..1] over the given spatial dims.
template <class T>
VarT<T> tile_spatial(const VarT<T>& x, const Shape& sp) {
  const Shape& xs = x.shape();
  check(spatial_numel(xs) == 1, cat("tile_spatial: input must be [B,C,1..], got ", shape_str(xs)));
  check(sp.size() + 2 == xs.size(), "tile_spatial: rank mismatch");
  const int64_t B = xs[0], C = xs[1], P = numel(sp);
  Shape oshape{B, C};
  oshape.insert(oshape.end(), sp.begin(), sp.end());
  TensorT<T> out(oshape);
  for (int64_t bc = 0; bc < B * C; ++bc)
    std::fill_n(out.data() + bc * P, static_cast<size_t>(P), x.val()[bc]);
  return make_op<T>(std::move(out), {x}, [x, P](NodeT<T>& n) {
    T* dx = x.grad().data();
    for (int64_t bc = 0; bc < x.val().numel(); ++bc)
      dx[bc] += static_cast<T>(kern::sum<T>(P, n.grad.data() + bc * P));
  });
}

namespace detail {

template <class T>
struct AxisTap {
  int64_t i0, i1;
  T w1;
};

// Half-pixel-center source mapping, clamped at the borders.
template <class T>
std::vector<AxisTap<T>> linear_taps(int64_t in, int64_t out) {
  std::vector<AxisTap<T>> taps(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t i = 0; i < out; ++i) {
    double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    if (s > static_cast<double>(in - 1)) s = static_cast<double>(in - 1);
    int64_t i0 = static_cast<int64_t>(s);
    if (i0 > in - 1) i0 = in - 1;
    taps[static_cast<size_t>(i)] = {i0, std::min<int64_t>(i0 + 1, in - 1),
                                    static_cast<T>(s - static_cast<double>(i0))};
  }
  return taps;
}

}  // namespace detail

// Separable multilinear resize of the spatial dims (bilinear / trilinear).
template <class T>
VarT<T> resize_linear(const VarT<T>& x, const Shape& out_sp) {
  const Shape& xs = x.shape();
  int r = detail::spatial_rank(xs);
  check(static_cast<int>(out_sp.size()) == r, "resize_linear: rank mismatch");
  for (int64_t e : out_sp) check(e >= 1, "resize_linear: empty output");
  Shape sp = spatial_of(xs);
  if (sp == out_sp) return x;  // identity; no node needed
  const int64_t B = xs[0], C = xs[1], Pin = numel(sp), P = numel(out_sp);
  Shape oshape{B, C};
  oshape.insert(oshape.end(), out_sp.begin(), out_sp.end());
  TensorT<T> out(oshape);

  using Tap = detail::AxisTap<T>;
  auto taps = std::make_shared<std::vector<std::vector<Tap>>>();
  for (int i = 0; i < r; ++i) taps->push_back(detail::linear_taps<T>(sp[i], out_sp[i]));

  const T* xd = x.val().data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* s = xd + bc * Pin;
    T* o = out.data() + bc * P;
    if (r == 2) {
      const auto& ty = (*taps)[0];
      const auto& tx = (*taps)[1];
      const int64_t W = sp[1], OW = out_sp[1];
      for (int64_t oy = 0; oy < out_sp[0]; ++oy) {
        const Tap& a = ty[static_cast<size_t>(oy)];
        const T* r0 = s + a.i0 * W;
        const T* r1 = s + a.i1 * W;
        for (int64_t ox = 0; ox < OW; ++ox) {
          const Tap& bT = tx[static_cast<size_t>(ox)];
          T v0 = r0[bT.i0] + bT.w1 * (r0[bT.i1] - r0[bT.i0]);
          T v1 = r1[bT.i0] + bT.w1 * (r1[bT.i1] - r1[bT.i0]);
          o[oy * OW + ox] = v0 + a.w1 * (v1 - v0);
        }
      }
    } else {
      const auto& tz = (*taps)[0];
      const auto& ty = (*taps)[1];
      const auto& tx = (*taps)[2];
      const int64_t H = sp[1], W = sp[2], OH = out_sp[1], OW = out_sp[2];
      for (int64_t oz = 0; oz < out_sp[0]; ++oz) {
        const Tap& c = tz[static_cast<size_t>(oz)];
        for (int64_t oy = 0; oy < OH; ++oy) {
          const Tap& a = ty[static_cast<size_t>(oy)];
          const T* r00 = s + (c.i0 * H + a.i0) * W;
          const T* r01 = s + (c.i0 * H + a.i1) * W;
          const T* r10 = s + (c.i1 * H + a.i0) * W;
          const T* r11 = s + (c.i1 * H + a.i1) * W;
          T* orow = o + (oz * OH + oy) * OW;
          for (int64_t ox = 0; ox < OW; ++ox) {
            const Tap& bT = tx[static_cast<size_t>(ox)];
            T v00 = r00[bT.i0] + bT.w1 * (r00[bT.i1] - r00[bT.i0]);
            T v01 = r01[bT.i0] + bT.w1 * (r01[bT.i1] - r01[bT.i0]);
            T v10 = r10[bT.i0] + bT.w1 * (r10[bT.i1] - r10[bT.i0]);
            T v11 = r11[bT.i0] + bT.w1 * (r11[bT.i1] - r11[bT.i0]);
            T v0 = v00 + a.w1 * (v01 - v00);
            T v1 = v10 + a.w1 * (v11 - v10);
            orow[ox] = v0 + c.w1 * (v1 - v0);
          }
        }
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [x, taps, sp, out_sp, Pin, P, r](NodeT<T>& n) {
    using Tap2 = detail::AxisTap<T>;
    T* dxall = x.grad().data();
    const T* gall = n.grad.data();
    const int64_t BC = n.val.numel() / P;
    for (int64_t bc = 0; bc < BC; ++bc) {
      T* dx = dxall + bc * Pin;
      const T* g = gall + bc * P;
      if (r == 2) {
        const auto& ty = (*taps)[0];
        const auto& tx = (*taps)[1];
        const int64_t W = sp[1], OW = out_sp[1];
        for (int64_t oy = 0; oy < out_sp[0]; ++oy) {
          const Tap2& a = ty[static_cast<size_t>(oy)];
          T* r0 = dx + a.i0 * W;
          T* r1 = dx + a.i1 * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            const Tap2& bT = tx[static_cast<size_t>(ox)];
            const T gv = g[oy * OW + ox];
            const T g0 = gv * (T(1) - a.w1), g1 = gv * a.w1;
            r0[bT.i0] += g0 * (T(1) - bT.w1);
            r0[bT.i1] += g0 * bT.w1;
            r1[bT.i0] += g1 * (T(1) - bT.w1);
            r1[bT.i1] += g1 * bT.w1;
          }
        }
      } else {
        const auto& tz = (*taps)[0];
        const auto& ty = (*taps)[1];
        const auto& tx = (*taps)[2];
        const int64_t H = sp[1], W = sp[2], OH = out_sp[1], OW = out_sp[2];
        for (int64_t oz = 0; oz < out_sp[0]; ++oz) {
          const Tap2& c = tz[static_cast<size_t>(oz)];
          for (int64_t oy = 0; oy < OH; ++oy) {
            const Tap2& a = ty[static_cast<size_t>(oy)];
            T* r00 = dx + (c.i0 * H + a.i0) * W;
            T* r01 = dx + (c.i0 * H + a.i1) * W;
            T* r10 = dx + (c.i1 * H + a.i0) * W;
            T* r11 = dx + (c.i1 * H + a.i1) * W;
            const T* grow = g + (oz * OH + oy) * OW;
            for (int64_t ox = 0; ox < OW; ++ox) {
              const Tap2& bT = tx[static_cast<size_t>(ox)];
              const T gv = grow[ox];
              const T gz0 = gv * (T(1) - c.w1), gz1 = gv * c.w1;
              const T g00 = gz0 * (T(1) - a.w1), g01 = gz0 * a.w1;
              const T g10 = gz1 * (T(1) - a.w1), g11 = gz1 * a.w1;
              r00[bT.i0] += g00 * (T(1) - bT.w1);
              r00[bT.i1] += g00 * bT.w1;
              r01[bT.i0] += g01 * (T(1) - bT.w1);
              r01[bT.i1] += g01 * bT.w1;
              r10[bT.i0] += g10 * (T(1) - bT.w1);
              r10[bT.i1] += g10 * bT.w1;
              r11[bT.i0] += g11 * (T(1) - bT.w1);
              r11[bT.i1] += g11 * bT.w1;
            }
          }
        }
      }
    }
  });
}

// Group normalization over (channels/group, spatial) per sample.
// Stats accumulate in double; backward recomputes xhat from stored mean/rstd.
template <class T>
VarT<T> group_norm(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta, int64_t groups,
                   double eps = 1e-5) {
  const Shape& xs = x.shape();
  const int64_t B = xs[0], C = xs[1], P = spatial_numel(xs);
  check(groups >= 1 && C % groups == 0, cat("group_norm: ", C, " channels not divisible by ",
                                            groups, " groups"));
  check(gamma.shape() == Shape{C} && beta.shape() == Shape{C}, "group_norm: affine shape mismatch");
  const int64_t Cg = C / groups, GN = Cg * P;

  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(B * groups * 2));
  TensorT<T> out(xs);
  const T* xd = x.val().data();
  const T* gm = gamma.val().data();
  const T* bt = beta.val().data();
  for (int64_t bi = 0; bi < B; ++bi)
    for (int64_t gi = 0; gi < groups; ++gi) {
      const T* s = xd + (bi * C + gi * Cg) * P;
      double sm, ss;
      kern::sum2<T>(GN, s, &sm, &ss);
      const double mu = sm / GN;
      double var = ss / GN - mu * mu;
      if (var < 0) var = 0;
      const double rstd = 1.0 / std::sqrt(var + eps);
      (*stats)[static_cast<size_t>((bi * groups + gi) * 2)] = mu;
      (*stats)[static_cast<size_t>((bi * groups + gi) * 2 + 1)] = rstd;
      T* o = out.data() + (bi * C + gi * Cg) * P;
      for (int64_t c = 0; c < Cg; ++c) {
        const T a = static_cast<T>(rstd) * gm[gi * Cg + c];
        const T sh = bt[gi * Cg + c] - static_cast<T>(mu * rstd) * gm[gi * Cg + c];
        const T* sc = s + c * P;
        T* oc = o + c * P;
        for (int64_t p = 0; p < P; ++p) oc[p] = a * sc[p] + sh;
      }
    }

  return make_op<T>(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, stats, B, C, P, groups, Cg, GN](NodeT<T>& n) {
    const T* xd = x.val().data();
    const T* gm = gamma.val().data();
    const T* g = n.grad.data();
    for (int64_t bi = 0; bi < B; ++bi)
      for (int64_t gi = 0; gi < groups; ++gi) {
        const double mu = (*stats)[static_cast<size_t>((bi * groups + gi) * 2)];
        const double rstd = (*stats)[static_cast<size_t>((bi * groups + gi) * 2 + 1)];
        const int64_t off = (bi * C + gi * Cg) * P;
        if (gamma.requires_grad() || beta.requires_grad()) {
          for (int64_t c = 0; c < Cg; ++c) {
            const T* gc = g + off + c * P;
            const T* sc = xd + off + c * P;
            double dg = 0.0, db = 0.0;
            for (int64_t p = 0; p < P; ++p) {
              const double xhat = (static_cast<double>(sc[p]) - mu) * rstd;
              dg += static_cast<double>(gc[p]) * xhat;
              db += static_cast<double>(gc[p]);
            }
            if (gamma.requires_grad()) gamma.grad()[gi * Cg + c] += static_cast<T>(dg);
            if (beta.requires_grad()) beta.grad()[gi * Cg + c] += static_cast<T>(db);
          }
        }
        if (x.requires_grad()) {
          double m1 = 0.0, m2 = 0.0;
          for (int64_t c = 0; c < Cg; ++c) {
            const T* gc = g + off + c * P;
            const T* sc = xd + off + c * P;
            const double gw = static_cast<double>(gm[gi * Cg + c]);
            for (int64_t p = 0; p < P; ++p) {
              const double dxh = static_cast<double>(gc[p]) * gw;
              m1 += dxh;
              m2 += dxh * (static_cast<double>(sc[p]) - mu) * rstd;
            }
          }
          m1 /= GN;
          m2 /= GN;
          T* dx = x.grad().data() + off;
          for (int64_t c = 0; c < Cg; ++c) {
            const T* gc = g + off + c * P;
            const T* sc = xd + off + c * P;
            const double gw = static_cast<double>(gm[gi * Cg + c]);
            T* dxc = dx + c * P;
            for (int64_t p = 0; p < P; ++p) {
              const double xhat = (static_cast<double>(sc[p]) - mu) * rstd;
              const double dxh = static_cast<double>(gc[p]) * gw;
              dxc[p] += static_cast<T>(rstd * (dxh - m1 - xhat * m2));
            }
          }
        }
      }
  });
}

// Plain-tensor resize helpers for data handling (no autograd).

template <class T>
TensorT<T> resize_linear_plain(const TensorT<T>& x, const Shape& out_sp) {
  Shape xs{1, 1};
  xs.insert(xs.end(), x.shape.begin(), x.shape.end());
  TensorT<T> lifted(xs, x.v);
  NoGrad ng;
  VarT<T> v(std::move(lifted), false);
  TensorT<T> r = resize_linear<T>(v, out_sp).val();
  return TensorT<T>(out_sp, std::move(r.v));
}

// Nearest-neighbor resize with the same half-pixel mapping; for label maps.
template <class T>
TensorT<T> resize_nearest_plain(const TensorT<T>& x, const Shape& out_sp) {
  const Shape& sp = x.shape;
  const int r = static_cast<int>(sp.size());
  check(static_cast<int>(out_sp.size()) == r && (r == 2 || r == 3), "resize_nearest: rank");
  std::vector<std::vector<int64_t>> ix(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    ix[i].resize(static_cast<size_t>(out_sp[i]));
    const double scale = static_cast<double>(sp[i]) / static_cast<double>(out_sp[i]);
    for (int64_t o = 0; o < out_sp[i]; ++o) {
      int64_t s = static_cast<int64_t>((static_cast<double>(o) + 0.5) * scale);
      ix[i][static_cast<size_t>(o)] = std::min(std::max<int64_t>(s, 0), sp[i] - 1);
    }
  }
  TensorT<T> out(out_sp);
  if (r == 2) {
    for (int64_t oy = 0; oy < out_sp[0]; ++oy)
      for (int64_t ox = 0; ox < out_sp[1]; ++ox)
        out[oy * out_sp[1] + ox] = x[ix[0][oy] * sp[1] + ix[1][ox]];
  } else {
    for (int64_t oz = 0; oz < out_sp[0]; ++oz)
      for (int64_t oy = 0; oy < out_sp[1]; ++oy)
        for (int64_t ox = 0; ox < out_sp[2]; ++ox)
          out[(oz * out_sp[1] + oy) * out_sp[2] + ox] =
              x[(ix[0][oz] * sp[1] + ix[1][oy]) * sp[2] + ix[2][ox]];
  }
  return out;
}

}  // namespace cel::ops
