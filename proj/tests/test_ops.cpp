#include <doctest.h>

#include <cmath>

#include "cel/ops.hpp"
#include "cel/rng.hpp"
#include "conv_oracle.hpp"
#include "grad_check.hpp"

using namespace cel;
using ops::ConvSpec;

namespace {

void expect_allclose(const DTensor& got, const DTensor& want, double tol) {
  REQUIRE(got.shape == want.shape);
  double worst = 0.0;
  for (int64_t i = 0; i < got.numel(); ++i)
    worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(1.0, std::abs(want[i])));
  CHECK(worst <= tol);
}

DVar randn_var(const Shape& s, Rng& rng, bool req = true, double sd = 0.5) {
  DTensor t(s);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * sd;
  return DVar(std::move(t), req);
}

}  // namespace

TEST_CASE("conv matches direct sliding-window oracle") {
  Rng rng(11);
  struct Case {
    Shape xs, ws;
    ConvSpec cs;
  };
  const Case cases2d[] = {
      {{2, 3, 7, 9}, {4, 3, 3, 3}, {1, 1, 1}},
      {{1, 2, 8, 8}, {3, 2, 3, 3}, {2, 1, 1}},
      {{1, 2, 9, 9}, {2, 2, 3, 3}, {1, 2, 2}},
      {{1, 3, 9, 9}, {2, 3, 3, 3}, {1, 4, 4}},
      {{2, 4, 6, 5}, {3, 4, 1, 1}, {1, 1, 0}},
      {{1, 2, 9, 8}, {2, 2, 5, 5}, {1, 1, 2}},
      {{1, 1, 6, 6}, {1, 1, 3, 3}, {2, 1, 0}},
  };
  for (const auto& c : cases2d) {
    DTensor x(c.xs), w(c.ws), b({c.ws[0]});
    fill_uniform(x, rng, -1, 1);
    fill_uniform(w, rng, -1, 1);
    fill_uniform(b, rng, -1, 1);
    DVar got = ops::conv(DVar(x, false), DVar(w, false), DVar(b, false), c.cs);
    expect_allclose(got.val(), naive_conv2d(x, w, b, c.cs), 1e-12);
  }
  const Case cases3d[] = {
      {{1, 2, 5, 6, 7}, {3, 2, 3, 3, 3}, {1, 1, 1}},
      {{2, 2, 4, 4, 4}, {2, 2, 3, 3, 3}, {2, 1, 1}},
      {{1, 3, 5, 5, 5}, {2, 3, 1, 1, 1}, {1, 1, 0}},
      {{1, 1, 7, 7, 7}, {1, 1, 3, 3, 3}, {1, 2, 2}},
  };
  for (const auto& c : cases3d) {
    DTensor x(c.xs), w(c.ws), b({c.ws[0]});
    fill_uniform(x, rng, -1, 1);
    fill_uniform(w, rng, -1, 1);
    fill_uniform(b, rng, -1, 1);
    DVar got = ops::conv(DVar(x, false), DVar(w, false), DVar(b, false), c.cs);
    expect_allclose(got.val(), naive_conv3d(x, w, b, c.cs), 1e-12);
  }
}

TEST_CASE("conv rejects malformed shapes") {
  DVar x(DTensor({1, 2, 6, 6}), false);
  CHECK_THROWS(ops::conv(x, DVar(DTensor({3, 1, 3, 3}), false), DVar(DTensor({3}), false)));
  CHECK_THROWS(ops::conv(x, DVar(DTensor({3, 2, 3, 3}), false), DVar(DTensor({2}), false)));
  CHECK_THROWS(ops::conv(DVar(DTensor({1, 1, 2, 2}), false),
                         DVar(DTensor({1, 1, 5, 5}), false), DVar(DTensor({1}), false)));
}

TEST_CASE("conv gradients (2d, stride, dilation, 1x1, 3d)") {
  Rng rng(21);
  struct Case {
    Shape xs, ws;
    ConvSpec cs;
  };
  const Case cases[] = {
      {{1, 2, 5, 6}, {3, 2, 3, 3}, {1, 1, 1}},
      {{1, 2, 6, 6}, {2, 2, 3, 3}, {2, 1, 1}},
      {{1, 2, 7, 7}, {2, 2, 3, 3}, {1, 2, 2}},
      {{2, 3, 4, 5}, {2, 3, 1, 1}, {1, 1, 0}},
      {{1, 2, 4, 4, 4}, {2, 2, 3, 3, 3}, {1, 1, 1}},
      {{1, 2, 3, 4, 4}, {3, 2, 1, 1, 1}, {1, 1, 0}},
  };
  for (const auto& c : cases) {
    DVar x = randn_var(c.xs, rng), w = randn_var(c.ws, rng), b = randn_var({c.ws[0]}, rng);
    auto f = weighted_mean_of([=] { return ops::conv(x, w, b, c.cs); }, rng);
    fd_gradcheck({x, w, b}, f);
  }
}

TEST_CASE("maxpool2 forward picks block maxima") {
  DTensor x({1, 1, 4, 4});
  for (int64_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i + 1);
  DVar y = ops::maxpool2(DVar(x, false));
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.val()[0] == 6);
  CHECK(y.val()[1] == 8);
  CHECK(y.val()[2] == 14);
  CHECK(y.val()[3] == 16);

  DTensor x3({1, 1, 2, 2, 2});
  for (int64_t i = 0; i < 8; ++i) x3[i] = static_cast<double>(8 - i);
  DVar y3 = ops::maxpool2(DVar(x3, false));
  CHECK(y3.shape() == Shape{1, 1, 1, 1, 1});
  CHECK(y3.val()[0] == 8);

  CHECK_THROWS(ops::maxpool2(DVar(DTensor({1, 1, 3, 4}), false)));
}

TEST_CASE("maxpool2 gradients route to the argmax") {
  Rng rng(31);
  for (const Shape& s : {Shape{1, 2, 6, 4}, Shape{1, 1, 4, 4, 4}}) {
    DTensor xt(s);
    // distinct values, comfortably separated relative to the fd step
    std::vector<int64_t> perm(static_cast<size_t>(xt.numel()));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    for (int64_t i = 0; i < xt.numel(); ++i)
      xt[i] = 0.01 * static_cast<double>(perm[static_cast<size_t>(i)]) + rng.uniform(0, 1e-3);
    DVar x(xt, true);
    auto f = weighted_mean_of([=] { return ops::maxpool2(x); }, rng);
    fd_gradcheck({x}, f);
  }
}

TEST_CASE("global_avg_pool and tile_spatial") {
  Rng rng(41);
  DTensor x({2, 3, 4, 4});
  fill_uniform(x, rng, -1, 1);
  DVar v(x, true);
  DVar g = ops::global_avg_pool(v);
  CHECK(g.shape() == Shape{2, 3, 1, 1});
  for (int64_t bc = 0; bc < 6; ++bc) {
    double want = 0;
    for (int64_t p = 0; p < 16; ++p) want += x[bc * 16 + p];
    CHECK(std::abs(g.val()[bc] - want / 16.0) < 1e-14);
  }
  DVar t = ops::tile_spatial(g, {4, 4});
  CHECK(t.shape() == x.shape);
  CHECK(t.val()[5] == g.val()[0]);
  CHECK(t.val()[16 + 3] == g.val()[1]);

  auto f = weighted_mean_of([=] { return ops::tile_spatial(ops::global_avg_pool(v), {4, 4}); }, rng);
  fd_gradcheck({v}, f);
}

TEST_CASE("resize_linear identity and constant preservation") {
  Rng rng(51);
  DTensor x({1, 2, 5, 7});
  fill_uniform(x, rng, -1, 1);
  DVar v(x, false);
  DVar same = ops::resize_linear(v, {5, 7});
  CHECK(same.val().v == x.v);

  DTensor c({1, 1, 4, 4}, 0.37);
  DVar up = ops::resize_linear(DVar(c, false), {8, 8});
  for (int64_t i = 0; i < up.val().numel(); ++i) CHECK(up.val()[i] == doctest::Approx(0.37));
}

TEST_CASE("resize_linear matches half-pixel tap oracle") {
  // independent re-derivation: out(i) interpolates src at (i+0.5)*in/out-0.5,
  // clamped to the valid range
  Rng rng(61);
  DTensor x({1, 1, 3, 5});
  fill_uniform(x, rng, -1, 1);
  const Shape osp{4, 7};
  DVar got = ops::resize_linear(DVar(x, false), osp);
  auto axis = [](int64_t in, int64_t out, int64_t i, int64_t& i0, int64_t& i1, double& w) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / out - 0.5;
    s = std::min(std::max(s, 0.0), static_cast<double>(in - 1));
    i0 = static_cast<int64_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    w = s - static_cast<double>(i0);
  };
  for (int64_t oy = 0; oy < osp[0]; ++oy)
    for (int64_t ox = 0; ox < osp[1]; ++ox) {
      int64_t y0, y1, x0, x1;
      double wy, wx;
      axis(3, osp[0], oy, y0, y1, wy);
      axis(5, osp[1], ox, x0, x1, wx);
      double v0 = (1 - wx) * x[y0 * 5 + x0] + wx * x[y0 * 5 + x1];
      double v1 = (1 - wx) * x[y1 * 5 + x0] + wx * x[y1 * 5 + x1];
      double want = (1 - wy) * v0 + wy * v1;
      CHECK(got.val()[oy * osp[1] + ox] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("resize_linear gradients (up and down, 2d and 3d)") {
  Rng rng(71);
  struct Case {
    Shape xs, osp;
  };
  const Case cases[] = {
      {{1, 2, 4, 4}, {8, 8}},
      {{1, 2, 8, 6}, {4, 3}},
      {{1, 1, 3, 5}, {5, 4}},
      {{1, 1, 4, 4, 4}, {8, 8, 8}},
      {{1, 1, 6, 4, 4}, {3, 2, 2}},
  };
  for (const auto& c : cases) {
    DVar x = randn_var(c.xs, rng);
    auto f = weighted_mean_of([=] { return ops::resize_linear(x, c.osp); }, rng);
    fd_gradcheck({x}, f);
  }
}

TEST_CASE("group_norm normalizes per group") {
  Rng rng(81);
  DTensor x({2, 4, 6, 6});
  fill_uniform(x, rng, -3, 5);
  DVar gamma(DTensor({4}, 1.0), false);
  DVar beta(DTensor({4}, 0.0), false);
  DVar y = ops::group_norm(DVar(x, false), gamma, beta, 2);
  const int64_t gsz = 2 * 36;
  for (int64_t bi = 0; bi < 2; ++bi)
    for (int64_t gi = 0; gi < 2; ++gi) {
      double s = 0, ss = 0;
      const double* d = y.val().data() + (bi * 4 + gi * 2) * 36;
      for (int64_t i = 0; i < gsz; ++i) s += d[i], ss += d[i] * d[i];
      CHECK(std::abs(s / gsz) < 1e-10);
      CHECK(ss / gsz == doctest::Approx(1.0).epsilon(1e-4));  // eps shrinks var slightly
    }

  // affine params scale and shift per channel
  DVar g2(DTensor({4}, std::vector<double>{2, 3, 4, 5}), false);
  DVar b2(DTensor({4}, std::vector<double>{1, -1, 0, 2}), false);
  DVar y2 = ops::group_norm(DVar(x, false), g2, b2, 2);
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t p = 0; p < 36; p += 7)
      CHECK(y2.val()[c * 36 + p] ==
            doctest::Approx(y.val()[c * 36 + p] * g2.val()[c] + b2.val()[c]).epsilon(1e-10));

  CHECK_THROWS(ops::group_norm(DVar(x, false), gamma, beta, 3));
}

TEST_CASE("group_norm gradients") {
  Rng rng(91);
  DVar x = randn_var({2, 4, 3, 4}, rng, true, 1.0);
  DVar gamma = randn_var({4}, rng, true, 0.3);
  for (int64_t i = 0; i < 4; ++i) gamma.val()[i] += 1.0;
  DVar beta = randn_var({4}, rng, true, 0.3);
  auto f = weighted_mean_of([=] { return ops::group_norm(x, gamma, beta, 2); }, rng);
  fd_gradcheck({x, gamma, beta}, f, 1e-5, 5e-6);
}

TEST_CASE("concat_c layout and gradients") {
  Rng rng(101);
  DTensor a({2, 1, 2, 2}), b({2, 2, 2, 2});
  fill_uniform(a, rng, -1, 1);
  fill_uniform(b, rng, -1, 1);
  DVar av(a, true), bv(b, true);
  DVar y = ops::concat_c<double>({av, bv});
  CHECK(y.shape() == Shape{2, 3, 2, 2});
  CHECK(y.val()[0] == a[0]);
  CHECK(y.val()[4] == b[0]);
  CHECK(y.val()[12] == a[4]);   // batch 1 starts with a's channel
  CHECK(y.val()[16] == b[8]);

  auto f = weighted_mean_of([=] { return ops::concat_c<double>({av, bv}); }, rng);
  fd_gradcheck({av, bv}, f);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(111);
  DTensor xt({2, 2, 3, 3});
  fill_signed_away_from_zero(xt, rng);
  DVar x(xt, true);
  DVar y = randn_var({2, 2, 3, 3}, rng);

  auto f_relu = weighted_mean_of([=] { return ops::relu(x); }, rng);
  fd_gradcheck({x}, f_relu);
  auto f_sig = weighted_mean_of([=] { return ops::sigmoid(x); }, rng);
  fd_gradcheck({x}, f_sig);
  auto f_mix = weighted_mean_of(
      [=] { return ops::add(ops::mul(x, y), ops::scale(y, 0.7)); }, rng);
  fd_gradcheck({x, y}, f_mix);
}

TEST_CASE("relu forward clamps negatives") {
  DTensor x({1, 1, 2, 2}, std::vector<double>{-1.5, 0.0, 2.5, -0.1});
  DVar y = ops::relu(DVar(x, false));
  CHECK(y.val().v == std::vector<double>{0, 0, 2.5, 0});
}

TEST_CASE("backward accumulates over shared subexpressions") {
  // d/dx of mean(x + x) = 2/n
  DVar x(DTensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}), true);
  DVar loss = ops::mean_all(ops::add(x, x));
  backward(loss);
  for (int64_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(0.5));
}

TEST_CASE("no_grad builds no graph") {
  DVar x(DTensor({1, 1, 2, 2}, 1.0), true);
  NoGrad ng;
  DVar y = ops::relu(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}
