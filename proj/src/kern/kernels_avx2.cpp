// AVX2/FMA kernel variants. Compiled with -mavx2 -mfma; only reachable when
// the dispatcher has verified CPU support at runtime.

#include "cel/kern/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#include <algorithm>

namespace cel::kern::avx2 {

namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
  return _mm_cvtss_f32(s);
}

inline __m256i tail_mask(int64_t n) {
  alignas(32) static const int32_t idx[8] = {0, 1, 2, 3, 4, 5, 6, 7};
  __m256i iv = _mm256_load_si256(reinterpret_cast<const __m256i*>(idx));
  return _mm256_cmpgt_epi32(_mm256_set1_epi32(static_cast<int32_t>(n)), iv);
}

// ---- gemm_nn: C[M,N] (+)= A[M,K] * B[K,N] ------------------------------

template <int MR>
inline void nn_tile16(int64_t K, const float* A, int64_t lda, const float* B, int64_t ldb,
                      float* C, int64_t ldc, bool acc) {
  __m256 c[MR][2];
  for (int i = 0; i < MR; ++i) {
    if (acc) {
      c[i][0] = _mm256_loadu_ps(C + i * ldc);
      c[i][1] = _mm256_loadu_ps(C + i * ldc + 8);
    } else {
      c[i][0] = _mm256_setzero_ps();
      c[i][1] = _mm256_setzero_ps();
    }
  }
  for (int64_t k = 0; k < K; ++k) {
    __m256 b0 = _mm256_loadu_ps(B + k * ldb);
    __m256 b1 = _mm256_loadu_ps(B + k * ldb + 8);
    for (int i = 0; i < MR; ++i) {
      __m256 a = _mm256_set1_ps(A[i * lda + k]);
      c[i][0] = _mm256_fmadd_ps(a, b0, c[i][0]);
      c[i][1] = _mm256_fmadd_ps(a, b1, c[i][1]);
    }
  }
  for (int i = 0; i < MR; ++i) {
    _mm256_storeu_ps(C + i * ldc, c[i][0]);
    _mm256_storeu_ps(C + i * ldc + 8, c[i][1]);
  }
}

template <int MR>
inline void nn_tile8(int64_t K, const float* A, int64_t lda, const float* B, int64_t ldb, float* C,
                     int64_t ldc, bool acc, int64_t ncols) {
  const bool partial = ncols < 8;
  const __m256i mask = tail_mask(ncols);
  __m256 c[MR];
  for (int i = 0; i < MR; ++i) {
    if (acc)
      c[i] = partial ? _mm256_maskload_ps(C + i * ldc, mask) : _mm256_loadu_ps(C + i * ldc);
    else
      c[i] = _mm256_setzero_ps();
  }
  for (int64_t k = 0; k < K; ++k) {
    __m256 b0 = partial ? _mm256_maskload_ps(B + k * ldb, mask) : _mm256_loadu_ps(B + k * ldb);
    for (int i = 0; i < MR; ++i)
      c[i] = _mm256_fmadd_ps(_mm256_set1_ps(A[i * lda + k]), b0, c[i]);
  }
  for (int i = 0; i < MR; ++i) {
    if (partial)
      _mm256_maskstore_ps(C + i * ldc, mask, c[i]);
    else
      _mm256_storeu_ps(C + i * ldc, c[i]);
  }
}

template <int MR>
inline void nn_rows(int64_t N, int64_t K, const float* A, const float* B, float* C, int64_t ldb,
                    int64_t ldc, bool acc) {
  int64_t n = 0;
  for (; n + 16 <= N; n += 16) nn_tile16<MR>(K, A, K, B + n, ldb, C + n, ldc, acc);
  for (; n < N; n += 8) nn_tile8<MR>(K, A, K, B + n, ldb, C + n, ldc, acc, std::min<int64_t>(8, N - n));
}

void a_gemm_nn(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
               bool acc) {
  int64_t m = 0;
  for (; m + 6 <= M; m += 6) nn_rows<6>(N, K, A + m * K, B, C + m * N, N, N, acc);
  switch (M - m) {
    case 5: nn_rows<5>(N, K, A + m * K, B, C + m * N, N, N, acc); break;
    case 4: nn_rows<4>(N, K, A + m * K, B, C + m * N, N, N, acc); break;
    case 3: nn_rows<3>(N, K, A + m * K, B, C + m * N, N, N, acc); break;
    case 2: nn_rows<2>(N, K, A + m * K, B, C + m * N, N, N, acc); break;
    case 1: nn_rows<1>(N, K, A + m * K, B, C + m * N, N, N, acc); break;
    default: break;
  }
}

// ---- gemm_nt: C[M,N] (+)= A[M,K] * B[N,K]^T ----------------------------

inline float dotK(int64_t K, const float* a, const float* b) {
  __m256 acc0 = _mm256_setzero_ps(), acc1 = _mm256_setzero_ps();
  int64_t k = 0;
  for (; k + 16 <= K; k += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k + 8), _mm256_loadu_ps(b + k + 8), acc1);
  }
  for (; k + 8 <= K; k += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), acc0);
  float s = hsum8(_mm256_add_ps(acc0, acc1));
  for (; k < K; ++k) s += a[k] * b[k];
  return s;
}

void a_gemm_nt(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
               bool acc) {
  int64_t m = 0;
  for (; m + 4 <= M; m += 4) {
    int64_t n = 0;
    for (; n + 4 <= N; n += 4) {
      __m256 c2[4][4];
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) c2[i][j] = _mm256_setzero_ps();
      const float* a0 = A + m * K;
      const float* b0 = B + n * K;
      int64_t k = 0;
      for (; k + 8 <= K; k += 8) {
        __m256 av[4], bv[4];
        for (int i = 0; i < 4; ++i) av[i] = _mm256_loadu_ps(a0 + i * K + k);
        for (int j = 0; j < 4; ++j) bv[j] = _mm256_loadu_ps(b0 + j * K + k);
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) c2[i][j] = _mm256_fmadd_ps(av[i], bv[j], c2[i][j]);
      }
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
          float s = hsum8(c2[i][j]);
          for (int64_t kk = k; kk < K; ++kk) s += a0[i * K + kk] * b0[j * K + kk];
          float* cp = C + (m + i) * N + (n + j);
          *cp = acc ? *cp + s : s;
        }
      }
    }
    for (; n < N; ++n) {
      for (int i = 0; i < 4; ++i) {
        float s = dotK(K, A + (m + i) * K, B + n * K);
        float* cp = C + (m + i) * N + n;
        *cp = acc ? *cp + s : s;
      }
    }
  }
  for (; m < M; ++m) {
    for (int64_t n = 0; n < N; ++n) {
      float s = dotK(K, A + m * K, B + n * K);
      float* cp = C + m * N + n;
      *cp = acc ? *cp + s : s;
    }
  }
}

// ---- elementwise -------------------------------------------------------

void a_axpy(int64_t n, float a, const float* x, float* y) {
  __m256 av = _mm256_set1_ps(a);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void a_add(int64_t n, const float* a, const float* b, float* out) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void a_mul(int64_t n, const float* a, const float* b, float* out) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void a_scale(int64_t n, float a, float* x) {
  __m256 av = _mm256_set1_ps(a);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

void a_shift(int64_t n, float a, float* x) {
  __m256 av = _mm256_set1_ps(a);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(x + i, _mm256_add_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] += a;
}

void a_relu(int64_t n, const float* x, float* y) {
  __m256 z = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(z, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void a_relu_bwd(int64_t n, const float* y, const float* dy, float* dx) {
  __m256 z = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 m = _mm256_cmp_ps(_mm256_loadu_ps(y + i), z, _CMP_GT_OQ);
    __m256 g = _mm256_and_ps(m, _mm256_loadu_ps(dy + i));
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), g));
  }
  for (; i < n; ++i)
    if (y[i] > 0.0f) dx[i] += dy[i];
}

void a_gate(int64_t n, const float* e, const float* o, float* out) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 ev = _mm256_loadu_ps(e + i);
    _mm256_storeu_ps(out + i, _mm256_fmadd_ps(_mm256_loadu_ps(o + i), ev, ev));
  }
  for (; i < n; ++i) out[i] = e[i] + o[i] * e[i];
}

double a_sum(int64_t n, const float* x) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 v = _mm256_loadu_ps(x + i);
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
  }
  __m256d a = _mm256_add_pd(acc0, acc1);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, a);
  double s = lanes[0] + lanes[1] + lanes[2] + lanes[3];
  for (; i < n; ++i) s += static_cast<double>(x[i]);
  return s;
}

void a_sum2(int64_t n, const float* x, double* s, double* ss) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  __m256d q0 = _mm256_setzero_pd(), q1 = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 v = _mm256_loadu_ps(x + i);
    __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
    __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
    s0 = _mm256_add_pd(s0, lo);
    s1 = _mm256_add_pd(s1, hi);
    q0 = _mm256_fmadd_pd(lo, lo, q0);
    q1 = _mm256_fmadd_pd(hi, hi, q1);
  }
  alignas(32) double ls[4], lq[4];
  _mm256_store_pd(ls, _mm256_add_pd(s0, s1));
  _mm256_store_pd(lq, _mm256_add_pd(q0, q1));
  double a = ls[0] + ls[1] + ls[2] + ls[3];
  double b = lq[0] + lq[1] + lq[2] + lq[3];
  for (; i < n; ++i) {
    double xv = static_cast<double>(x[i]);
    a += xv;
    b += xv * xv;
  }
  *s = a;
  *ss = b;
}

}  // namespace

const FloatKernels kernels = {
    a_gemm_nn, a_gemm_nt, a_axpy, a_add,  a_mul,  a_scale,
    a_shift,   a_relu,    a_relu_bwd, a_gate, a_sum, a_sum2,
};

}  // namespace cel::kern::avx2

#else  // non-x86: no AVX2 variant, dispatcher falls back to scalar

namespace cel::kern::avx2 {
const FloatKernels kernels = {};
}

#endif
