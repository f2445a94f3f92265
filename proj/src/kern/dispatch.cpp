#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "cel/kern/kernels.hpp"

namespace cel::kern {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend resolve_initial() {
  const char* env = std::getenv("CEL_SIMD");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (cpu_has_avx2()) return Backend::avx2;
      std::fprintf(stderr, "CEL_SIMD=avx2 requested but CPU lacks AVX2+FMA; using scalar\n");
      return Backend::scalar;
    }
    if (std::strcmp(env, "auto") != 0)
      std::fprintf(stderr, "unknown CEL_SIMD value '%s'; using auto\n", env);
  }
  return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend g_backend = resolve_initial();

}  // namespace

bool avx2_supported() { return cpu_has_avx2(); }

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !cpu_has_avx2())
    throw std::runtime_error("set_backend: AVX2 not supported on this CPU");
  g_backend = b;
}

const char* backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

const FloatKernels& active() {
  return g_backend == Backend::avx2 ? avx2::kernels : scalar::kernels;
}

}  // namespace cel::kern
