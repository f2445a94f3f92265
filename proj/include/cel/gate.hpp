#pragma once

#include "cel/ops.hpp"

// The logical gate: intersection term plus union context,
// G = Conv(E + O*E), with O broadcast across E's channels.

namespace cel {

inline thread_local int64_t g_gate_combine_calls = 0;
inline int64_t gate_combine_count() { return g_gate_combine_calls; }
inline void reset_gate_combine_count() { g_gate_combine_calls = 0; }

// out[b,c,p] = E[b,c,p] * (1 + O[b,0,p]). O is a single-channel map.
template <class T>
VarT<T> gate_combine(const VarT<T>& E, const VarT<T>& O) {
  const Shape& es = E.shape();
  const Shape& os = O.shape();
  check(os.size() == es.size() && os[0] == es[0] && os[1] == 1 &&
            spatial_of(os) == spatial_of(es),
        cat("gate_combine: O must be [B,1,*spatial] matching E, got E=", shape_str(es),
            " O=", shape_str(os)));
  ++g_gate_combine_calls;
  const int64_t B = es[0], C = es[1], P = spatial_numel(es);
  TensorT<T> out(es);
  for (int64_t bi = 0; bi < B; ++bi) {
    const T* ob = O.val().data() + bi * P;
    for (int64_t c = 0; c < C; ++c) {
      const int64_t off = (bi * C + c) * P;
      kern::gate<T>(P, E.val().data() + off, ob, out.data() + off);
    }
  }
  return make_op<T>(std::move(out), {E, O}, [E, O, B, C, P](NodeT<T>& n) {
    const T* g = n.grad.data();
    for (int64_t bi = 0; bi < B; ++bi) {
      const T* ov = O.val().data() + bi * P;
      for (int64_t c = 0; c < C; ++c) {
        const int64_t off = (bi * C + c) * P;
        if (E.requires_grad()) {
          T* de = E.grad().data() + off;
          for (int64_t p = 0; p < P; ++p) de[p] += g[off + p] * (T(1) + ov[p]);
        }
        if (O.requires_grad()) {
          T* dov = O.grad().data() + bi * P;
          const T* ev = E.val().data() + off;
          for (int64_t p = 0; p < P; ++p) dov[p] += g[off + p] * ev[p];
        }
      }
    }
  });
}

// G = Conv(E + O*E). Odd kernel, size-preserving.
template <class T>
VarT<T> logical_gate(const VarT<T>& E, const VarT<T>& O, const VarT<T>& w, const VarT<T>& b) {
  const int k = static_cast<int>(w.shape()[2]);
  check(k % 2 == 1, cat("logical_gate: kernel must be odd, got ", k));
  return ops::conv(gate_combine(E, O), w, b, {1, 1, (k - 1) / 2});
}

// Three-input refinement gate. D_E and D_O are resampled to F's resolution;
// D_E enters through a 1x1 projection added to F, D_O drives the gate.
template <class T>
VarT<T> refine_gate(const VarT<T>& F, const VarT<T>& d_e, const VarT<T>& d_o,
                    const VarT<T>& proj_w, const VarT<T>& proj_b, const VarT<T>& w,
                    const VarT<T>& b) {
  Shape sp = spatial_of(F.shape());
  VarT<T> e_res = ops::resize_linear(d_e, sp);
  VarT<T> o_res = ops::resize_linear(d_o, sp);
  VarT<T> e_tilde = ops::add(F, ops::conv(e_res, proj_w, proj_b));
  return logical_gate(e_tilde, o_res, w, b);
}

// Every edge voxel must lie inside the object mask.
inline bool check_subset(const ByteTensor& edge, const ByteTensor& object) {
  check(edge.shape == object.shape, "check_subset: shape mismatch");
  for (int64_t i = 0; i < edge.numel(); ++i)
    if (edge[i] && !object[i]) return false;
  return true;
}

}  // namespace cel
