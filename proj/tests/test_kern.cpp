#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <vector>

#include "cel/kern/im2col.hpp"
#include "cel/kern/kernels.hpp"
#include "cel/rng.hpp"

using namespace cel;

namespace {

std::vector<float> random_vec(Rng& rng, int64_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

void expect_close(const std::vector<float>& a, const std::vector<float>& b, double rel) {
  REQUIRE(a.size() == b.size());
  double max_abs = 0.0;
  for (float x : b) max_abs = std::max(max_abs, std::abs(static_cast<double>(x)));
  double tol = rel * std::max(1.0, max_abs);
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) <= tol);
  }
}

}  // namespace

TEST_CASE("gemm_nn scalar matches double-precision triple loop") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    int64_t M = rng.uniform_int(1, 17), N = rng.uniform_int(1, 40), K = rng.uniform_int(1, 33);
    auto A = random_vec(rng, M * K), B = random_vec(rng, K * N);
    std::vector<float> C(static_cast<size_t>(M * N), 7.0f);
    kern::scalar::kernels.gemm_nn(M, N, K, A.data(), B.data(), C.data(), false);
    for (int64_t m = 0; m < M; ++m)
      for (int64_t n = 0; n < N; ++n) {
        double s = 0;
        for (int64_t k = 0; k < K; ++k)
          s += static_cast<double>(A[m * K + k]) * static_cast<double>(B[k * N + n]);
        REQUIRE(std::abs(C[m * N + n] - s) < 1e-4);
      }
  }
}

TEST_CASE("gemm_nt scalar matches definition") {
  Rng rng(12);
  int64_t M = 9, N = 13, K = 31;
  auto A = random_vec(rng, M * K), B = random_vec(rng, N * K);
  std::vector<float> C(static_cast<size_t>(M * N), 0.0f);
  kern::scalar::kernels.gemm_nt(M, N, K, A.data(), B.data(), C.data(), false);
  for (int64_t m = 0; m < M; ++m)
    for (int64_t n = 0; n < N; ++n) {
      double s = 0;
      for (int64_t k = 0; k < K; ++k)
        s += static_cast<double>(A[m * K + k]) * static_cast<double>(B[n * K + k]);
      REQUIRE(std::abs(C[m * N + n] - s) < 1e-4);
    }
}

TEST_CASE("avx2 kernels match scalar reference" * doctest::skip(!kern::avx2_supported())) {
  Rng rng(13);
  const auto& sc = kern::scalar::kernels;
  const auto& av = kern::avx2::kernels;

  SUBCASE("gemm_nn over odd shapes and accumulate") {
    for (int trial = 0; trial < 25; ++trial) {
      int64_t M = rng.uniform_int(1, 23), N = rng.uniform_int(1, 70), K = rng.uniform_int(1, 130);
      bool acc = trial % 2 == 0;
      auto A = random_vec(rng, M * K), B = random_vec(rng, K * N);
      auto C0 = random_vec(rng, M * N);
      auto C1 = C0;
      sc.gemm_nn(M, N, K, A.data(), B.data(), C0.data(), acc);
      av.gemm_nn(M, N, K, A.data(), B.data(), C1.data(), acc);
      expect_close(C0, C1, 1e-5);
    }
  }

  SUBCASE("gemm_nt over odd shapes and accumulate") {
    for (int trial = 0; trial < 25; ++trial) {
      int64_t M = rng.uniform_int(1, 19), N = rng.uniform_int(1, 33), K = rng.uniform_int(1, 200);
      bool acc = trial % 2 == 1;
      auto A = random_vec(rng, M * K), B = random_vec(rng, N * K);
      auto C0 = random_vec(rng, M * N);
      auto C1 = C0;
      sc.gemm_nt(M, N, K, A.data(), B.data(), C0.data(), acc);
      av.gemm_nt(M, N, K, A.data(), B.data(), C1.data(), acc);
      expect_close(C0, C1, 1e-5);
    }
  }

  SUBCASE("elementwise") {
    for (int64_t n : {1, 7, 8, 9, 64, 1003}) {
      auto x = random_vec(rng, n), y = random_vec(rng, n);
      auto o0 = random_vec(rng, n);
      auto o1 = o0;

      sc.add(n, x.data(), y.data(), o0.data());
      av.add(n, x.data(), y.data(), o1.data());
      expect_close(o0, o1, 1e-6);

      sc.mul(n, x.data(), y.data(), o0.data());
      av.mul(n, x.data(), y.data(), o1.data());
      expect_close(o0, o1, 1e-6);

      sc.gate(n, x.data(), y.data(), o0.data());
      av.gate(n, x.data(), y.data(), o1.data());
      expect_close(o0, o1, 1e-5);

      auto y0 = y, y1 = y;
      sc.axpy(n, 0.37f, x.data(), y0.data());
      av.axpy(n, 0.37f, x.data(), y1.data());
      expect_close(y0, y1, 1e-5);

      sc.relu(n, x.data(), o0.data());
      av.relu(n, x.data(), o1.data());
      expect_close(o0, o1, 0.0);

      auto d0 = random_vec(rng, n);
      auto d1 = d0;
      sc.relu_bwd(n, o0.data(), x.data(), d0.data());
      av.relu_bwd(n, o1.data(), x.data(), d1.data());
      expect_close(d0, d1, 1e-6);

      double s0 = sc.sum(n, x.data()), s1 = av.sum(n, x.data());
      REQUIRE(std::abs(s0 - s1) < 1e-6 * std::max(1.0, std::abs(s0)));

      double a0, b0, a1, b1;
      sc.sum2(n, x.data(), &a0, &b0);
      av.sum2(n, x.data(), &a1, &b1);
      REQUIRE(std::abs(a0 - a1) < 1e-6 * std::max(1.0, std::abs(a0)));
      REQUIRE(std::abs(b0 - b1) < 1e-6 * std::max(1.0, std::abs(b0)));
    }
  }
}

TEST_CASE("backend dispatch is switchable and restores") {
  auto prev = kern::active_backend();
  kern::set_backend(kern::Backend::scalar);
  CHECK(kern::active_backend() == kern::Backend::scalar);
  float x[3] = {1, -2, 3}, y[3];
  kern::relu<float>(3, x, y);
  CHECK(y[1] == 0.0f);
  kern::set_backend(prev);
}

TEST_CASE("im2col/col2im round trip accounts every tap") {
  // Sum over cols of im2col equals conv of ones; col2im of ones counts taps.
  Rng rng(14);
  int64_t C = 3, H = 7, W = 6;
  int k = 3, stride = 1, dil = 1, pad = 1;
  int64_t OH = H, OW = W;
  auto x = random_vec(rng, C * H * W);
  std::vector<float> cols(static_cast<size_t>(C * k * k * OH * OW));
  kern::im2col_2d(x.data(), C, H, W, k, stride, dil, pad, OH, OW, cols.data());
  // spot-check: center tap row equals x itself
  for (int64_t c = 0; c < C; ++c) {
    const float* row = cols.data() + (c * 9 + 4) * OH * OW;
    for (int64_t i = 0; i < H * W; ++i) REQUIRE(row[i] == x[static_cast<size_t>(c * H * W + i)]);
  }
  std::vector<float> back(static_cast<size_t>(C * H * W), 0.0f);
  kern::col2im_2d(cols.data(), C, H, W, k, stride, dil, pad, OH, OW, back.data());
  // each interior pixel is touched 9 times
  for (int64_t c = 0; c < C; ++c)
    for (int64_t yy = 1; yy + 1 < H; ++yy)
      for (int64_t xx = 1; xx + 1 < W; ++xx) {
        size_t i = static_cast<size_t>(c * H * W + yy * W + xx);
        REQUIRE(std::abs(back[i] - 9.0f * x[i]) < 1e-4f);
      }
}

TEST_CASE("gemm throughput readout") {
  // informational only; prints the single-core GFLOP/s of the active backend
  int64_t M = 256, N = 4096, K = 288;
  Rng rng(15);
  auto A = random_vec(rng, M * K), B = random_vec(rng, K * N);
  std::vector<float> C(static_cast<size_t>(M * N));
  auto t0 = std::chrono::steady_clock::now();
  int reps = 5;
  for (int r = 0; r < reps; ++r)
    kern::gemm_nn<float>(M, N, K, A.data(), B.data(), C.data(), false);
  auto t1 = std::chrono::steady_clock::now();
  double sec = std::chrono::duration<double>(t1 - t0).count();
  double gflops = 2.0 * M * N * K * reps / sec / 1e9;
  std::printf("[kern] %s gemm_nn %lldx%lldx%lld: %.1f GFLOP/s\n",
              kern::backend_name(kern::active_backend()), static_cast<long long>(M),
              static_cast<long long>(N), static_cast<long long>(K), gflops);
  CHECK(sec > 0.0);
}
