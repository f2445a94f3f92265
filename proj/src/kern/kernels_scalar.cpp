// Reference kernels. This translation unit is compiled with fp-contract off
// so the scalar results are plain two-rounding mul+add, independent of the
// host's FMA support; the AVX2 variants are checked against these within a
// floating tolerance.

#include "cel/kern/kernels.hpp"

namespace cel::kern::scalar {

namespace {

void s_gemm_nn(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
               bool acc) {
  for (int64_t m = 0; m < M; ++m) {
    float* c = C + m * N;
    if (!acc)
      for (int64_t n = 0; n < N; ++n) c[n] = 0.0f;
    const float* a = A + m * K;
    for (int64_t k = 0; k < K; ++k) {
      float av = a[k];
      const float* b = B + k * N;
      for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

void s_gemm_nt(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
               bool acc) {
  for (int64_t m = 0; m < M; ++m) {
    const float* a = A + m * K;
    float* c = C + m * N;
    for (int64_t n = 0; n < N; ++n) {
      const float* b = B + n * K;
      float s = acc ? c[n] : 0.0f;
      for (int64_t k = 0; k < K; ++k) s += a[k] * b[k];
      c[n] = s;
    }
  }
}

void s_axpy(int64_t n, float a, const float* x, float* y) {
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_add(int64_t n, const float* a, const float* b, float* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_mul(int64_t n, const float* a, const float* b, float* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(int64_t n, float a, float* x) {
  for (int64_t i = 0; i < n; ++i) x[i] *= a;
}

void s_shift(int64_t n, float a, float* x) {
  for (int64_t i = 0; i < n; ++i) x[i] += a;
}

void s_relu(int64_t n, const float* x, float* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void s_relu_bwd(int64_t n, const float* y, const float* dy, float* dx) {
  for (int64_t i = 0; i < n; ++i)
    if (y[i] > 0.0f) dx[i] += dy[i];
}

void s_gate(int64_t n, const float* e, const float* o, float* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = e[i] + o[i] * e[i];
}

double s_sum(int64_t n, const float* x) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(x[i]);
  return s;
}

void s_sum2(int64_t n, const float* x, double* s, double* ss) {
  double a = 0.0, b = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double xv = static_cast<double>(x[i]);
    a += xv;
    b += xv * xv;
  }
  *s = a;
  *ss = b;
}

}  // namespace

const FloatKernels kernels = {
    s_gemm_nn, s_gemm_nt, s_axpy, s_add,  s_mul,  s_scale,
    s_shift,   s_relu,    s_relu_bwd, s_gate, s_sum, s_sum2,
};

}  // namespace cel::kern::scalar
