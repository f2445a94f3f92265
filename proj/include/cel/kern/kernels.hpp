#pragma once

#include <cstdint>

// Arithmetic inner loops. Every float kernel has a scalar reference
// implementation and an AVX2 variant; the active backend is picked once at
// startup (CPUID + the CEL_SIMD env var) and can be forced for tests.
// Double-precision callers (gradient checks) always take the scalar path.

namespace cel::kern {

enum class Backend { scalar, avx2 };

Backend active_backend();
void set_backend(Backend b);  // test hook; also honours CEL_SIMD=scalar|avx2|auto
bool avx2_supported();
const char* backend_name(Backend b);

// Row-major, fully packed operands.
//   gemm_nn: C[M,N] (+)= A[M,K] * B[K,N]
//   gemm_nt: C[M,N] (+)= A[M,K] * B[N,K]^T   (contraction over the last axis of both)
struct FloatKernels {
  void (*gemm_nn)(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
                  bool accumulate);
  void (*gemm_nt)(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
                  bool accumulate);
  void (*axpy)(int64_t n, float a, const float* x, float* y);  // y += a*x
  void (*add)(int64_t n, const float* a, const float* b, float* out);
  void (*mul)(int64_t n, const float* a, const float* b, float* out);
  void (*scale)(int64_t n, float a, float* x);
  void (*shift)(int64_t n, float a, float* x);  // x += a
  void (*relu)(int64_t n, const float* x, float* y);
  void (*relu_bwd)(int64_t n, const float* y, const float* dy, float* dx);  // dx += dy*(y>0)
  void (*gate)(int64_t n, const float* e, const float* o, float* out);      // out = e + o*e
  double (*sum)(int64_t n, const float* x);
  void (*sum2)(int64_t n, const float* x, double* s, double* ss);
};

const FloatKernels& active();

namespace scalar {
extern const FloatKernels kernels;
}
namespace avx2 {
extern const FloatKernels kernels;  // entries null when not compiled in
}

// ---------------------------------------------------------------------------
// Generic scalar templates. float specialisations route through the dispatch
// table; other types always run the reference code below.

template <class T>
inline void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool acc) {
  for (int64_t m = 0; m < M; ++m) {
    T* c = C + m * N;
    if (!acc)
      for (int64_t n = 0; n < N; ++n) c[n] = T(0);
    const T* a = A + m * K;
    for (int64_t k = 0; k < K; ++k) {
      T av = a[k];
      const T* b = B + k * N;
      for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

template <class T>
inline void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool acc) {
  for (int64_t m = 0; m < M; ++m) {
    const T* a = A + m * K;
    T* c = C + m * N;
    for (int64_t n = 0; n < N; ++n) {
      const T* b = B + n * K;
      T s = acc ? c[n] : T(0);
      for (int64_t k = 0; k < K; ++k) s += a[k] * b[k];
      c[n] = s;
    }
  }
}

template <class T>
inline void axpy(int64_t n, T a, const T* x, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
inline void add(int64_t n, const T* a, const T* b, T* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
inline void mul(int64_t n, const T* a, const T* b, T* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
inline void scale(int64_t n, T a, T* x) {
  for (int64_t i = 0; i < n; ++i) x[i] *= a;
}

template <class T>
inline void shift(int64_t n, T a, T* x) {
  for (int64_t i = 0; i < n; ++i) x[i] += a;
}

template <class T>
inline void relu(int64_t n, const T* x, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
inline void relu_bwd(int64_t n, const T* y, const T* dy, T* dx) {
  for (int64_t i = 0; i < n; ++i)
    if (y[i] > T(0)) dx[i] += dy[i];
}

template <class T>
inline void gate(int64_t n, const T* e, const T* o, T* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = e[i] + o[i] * e[i];
}

template <class T>
inline double sum(int64_t n, const T* x) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(x[i]);
  return s;
}

template <class T>
inline void sum2(int64_t n, const T* x, double* s, double* ss) {
  double a = 0.0, b = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double xv = static_cast<double>(x[i]);
    a += xv;
    b += xv * xv;
  }
  *s = a;
  *ss = b;
}

// float -> dispatch table
template <>
inline void gemm_nn<float>(int64_t M, int64_t N, int64_t K, const float* A, const float* B,
                           float* C, bool acc) {
  active().gemm_nn(M, N, K, A, B, C, acc);
}
template <>
inline void gemm_nt<float>(int64_t M, int64_t N, int64_t K, const float* A, const float* B,
                           float* C, bool acc) {
  active().gemm_nt(M, N, K, A, B, C, acc);
}
template <>
inline void axpy<float>(int64_t n, float a, const float* x, float* y) {
  active().axpy(n, a, x, y);
}
template <>
inline void add<float>(int64_t n, const float* a, const float* b, float* out) {
  active().add(n, a, b, out);
}
template <>
inline void mul<float>(int64_t n, const float* a, const float* b, float* out) {
  active().mul(n, a, b, out);
}
template <>
inline void scale<float>(int64_t n, float a, float* x) {
  active().scale(n, a, x);
}
template <>
inline void shift<float>(int64_t n, float a, float* x) {
  active().shift(n, a, x);
}
template <>
inline void relu<float>(int64_t n, const float* x, float* y) {
  active().relu(n, x, y);
}
template <>
inline void relu_bwd<float>(int64_t n, const float* y, const float* dy, float* dx) {
  active().relu_bwd(n, y, dy, dx);
}
template <>
inline void gate<float>(int64_t n, const float* e, const float* o, float* out) {
  active().gate(n, e, o, out);
}
template <>
inline double sum<float>(int64_t n, const float* x) {
  return active().sum(n, x);
}
template <>
inline void sum2<float>(int64_t n, const float* x, double* s, double* ss) {
  active().sum2(n, x, s, ss);
}

}  // namespace cel::kern
