#include <doctest.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <unistd.h>
#include <vector>

#include "cel/metrics.hpp"
#include "cel/rng.hpp"

using namespace cel;
using doctest::Approx;

namespace {

// Exhaustive maximum matching over bitmasks of used gt points. Independent of
// the production matcher; only valid for small sets.
int brute_max_matching(const std::vector<Point3>& pred, const std::vector<Point3>& gt,
                       double radius) {
  const int np = static_cast<int>(pred.size());
  const int ng = static_cast<int>(gt.size());
  REQUIRE(ng <= 12);
  const double r2 = radius * radius;
  std::vector<uint32_t> ok(np, 0);
  for (int i = 0; i < np; ++i)
    for (int j = 0; j < ng; ++j) {
      const double dz = static_cast<double>(pred[i].z - gt[j].z);
      const double dy = static_cast<double>(pred[i].y - gt[j].y);
      const double dx = static_cast<double>(pred[i].x - gt[j].x);
      if (dz * dz + dy * dy + dx * dx <= r2) ok[i] |= 1u << j;
    }
  std::vector<std::vector<int>> memo(np + 1, std::vector<int>(1 << ng, -1));
  std::function<int(int, uint32_t)> go = [&](int i, uint32_t used) -> int {
    if (i == np) return 0;
    int& m = memo[i][used];
    if (m >= 0) return m;
    int best = go(i + 1, used);
    for (int j = 0; j < ng; ++j)
      if ((ok[i] >> j & 1) && !(used >> j & 1))
        best = std::max(best, 1 + go(i + 1, used | (1u << j)));
    return m = best;
  };
  return go(0, 0);
}

std::vector<Point3> random_distinct_points(Rng& rng, int count, int extent, bool three_d) {
  std::set<std::array<int64_t, 3>> seen;
  std::vector<Point3> pts;
  while (static_cast<int>(pts.size()) < count) {
    Point3 p;
    p.z = three_d ? rng.uniform_int(0, extent - 1) : 0;
    p.y = rng.uniform_int(0, extent - 1);
    p.x = rng.uniform_int(0, extent - 1);
    if (seen.insert({p.z, p.y, p.x}).second) pts.push_back(p);
  }
  return pts;
}

// Plain pairwise Hausdorff: per-point nearest distance via sqrt per pair, no
// early exit. Different evaluation order from the production code.
double hd_oracle(const std::vector<Point3>& a, const std::vector<Point3>& b) {
  double worst = 0;
  auto directed = [&](const std::vector<Point3>& s, const std::vector<Point3>& t) {
    double mx = 0;
    for (const auto& p : s) {
      double mn = std::numeric_limits<double>::infinity();
      for (const auto& q : t) {
        const double dz = static_cast<double>(p.z - q.z);
        const double dy = static_cast<double>(p.y - q.y);
        const double dx = static_cast<double>(p.x - q.x);
        mn = std::min(mn, std::sqrt(dz * dz + dy * dy + dx * dx));
      }
      mx = std::max(mx, mn);
    }
    return mx;
  };
  worst = std::max(directed(a, b), directed(b, a));
  return worst;
}

Tensor prob_map_2d(int64_t h, int64_t w, const std::vector<std::pair<Point3, float>>& hits) {
  Tensor m({h, w});
  for (const auto& [p, v] : hits) m.v[p.y * w + p.x] = v;
  return m;
}

ByteTensor mask_2d(int64_t h, int64_t w, const std::vector<Point3>& pts) {
  ByteTensor m({h, w});
  for (const auto& p : pts) m.v[p.y * w + p.x] = 1;
  return m;
}

struct TempDir {
  std::string path;
  TempDir() {
    char buf[128];
    std::snprintf(buf, sizeof buf, "/tmp/cel_metrics_%d_%ld", ::getpid(),
                  static_cast<long>(std::chrono::steady_clock::now().time_since_epoch().count()));
    path = buf;
    REQUIRE(std::filesystem::create_directories(path));
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("mask_points enumerates set voxels in scan order") {
  ByteTensor m({3, 4});
  m.v[0 * 4 + 1] = 1;
  m.v[2 * 4 + 3] = 1;
  auto pts = mask_points(m);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].z == 0);
  CHECK(pts[0].y == 0);
  CHECK(pts[0].x == 1);
  CHECK(pts[1].y == 2);
  CHECK(pts[1].x == 3);

  ByteTensor v({2, 2, 2});
  v.v[7] = 1;
  auto p3 = mask_points(v);
  REQUIRE(p3.size() == 1);
  CHECK(p3[0].z == 1);
  CHECK(p3[0].y == 1);
  CHECK(p3[0].x == 1);

  CHECK_THROWS(mask_points(ByteTensor({4})));
}

TEST_CASE("binarize includes the boundary") {
  Tensor m({1, 3});
  m.v = {0.4f, 0.5f, 0.6f};
  ByteTensor b = binarize(m, 0.5);
  CHECK(b.v[0] == 0);
  CHECK(b.v[1] == 1);
  CHECK(b.v[2] == 1);
}

TEST_CASE("image diagonal") {
  CHECK(image_diagonal({3, 4}) == Approx(5.0));
  CHECK(image_diagonal({64, 64}) == Approx(std::sqrt(8192.0)));
  CHECK(image_diagonal({2, 3, 6}) == Approx(7.0));
}

TEST_CASE("match_edges requires maximum-cardinality matching, not greedy") {
  // A greedy scan pairs pred(0,1) with gt(0,1) and strands pred(0,0).
  std::vector<Point3> pred = {{0, 0, 0}, {0, 0, 1}};
  std::vector<Point3> gt = {{0, 0, 1}, {0, 0, 2}};
  MatchCounts c = match_edges(pred, gt, 1.0);
  CHECK(c.tp_pred == 2);
  CHECK(c.tp_gt == 2);
  CHECK(c.n_pred == 2);
  CHECK(c.n_gt == 2);
}

TEST_CASE("match_edges basics") {
  std::vector<Point3> a = {{0, 2, 2}};
  std::vector<Point3> b = {{0, 2, 3}};
  CHECK(match_edges(a, b, 1.0).tp_pred == 1);
  CHECK(match_edges(a, b, 0.5).tp_pred == 0);
  CHECK(match_edges(a, b, 0.0).tp_pred == 0);
  CHECK(match_edges(a, a, 0.0).tp_pred == 1);

  MatchCounts e = match_edges({}, b, 1.0);
  CHECK(e.tp_pred == 0);
  CHECK(e.n_pred == 0);
  CHECK(e.n_gt == 1);
  CHECK_THROWS(match_edges(a, b, -1.0));
}

TEST_CASE("match_edges equals exhaustive assignment on random small sets") {
  Rng rng(404);
  const double radii[] = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.5};
  for (int trial = 0; trial < 500; ++trial) {
    const bool three_d = trial % 2 == 1;
    const int np = static_cast<int>(rng.uniform_int(0, 8));
    const int ng = static_cast<int>(rng.uniform_int(0, 8));
    auto pred = random_distinct_points(rng, np, 7, three_d);
    auto gt = random_distinct_points(rng, ng, 7, three_d);
    const double r = radii[rng.uniform_int(0, 6)];
    MatchCounts c = match_edges(pred, gt, r);
    const int want = brute_max_matching(pred, gt, r);
    CHECK_MESSAGE(c.tp_pred == want, "trial ", trial, " r=", r, " got ", c.tp_pred, " want ", want);
    CHECK(c.tp_pred == c.tp_gt);
    CHECK(c.tp_pred <= c.n_pred);
    CHECK(c.tp_gt <= c.n_gt);
    // Symmetry: swapping sides preserves the matching cardinality.
    CHECK(match_edges(gt, pred, r).tp_pred == c.tp_pred);
  }
}

TEST_CASE("match_edges handles dense clusters") {
  // Every pred within radius of every gt: matching saturates the smaller side.
  std::vector<Point3> pred, gt;
  for (int i = 0; i < 5; ++i) pred.push_back({0, 0, i});
  for (int i = 0; i < 3; ++i) gt.push_back({0, 1, i});
  MatchCounts c = match_edges(pred, gt, 10.0);
  CHECK(c.tp_pred == 3);
}

TEST_CASE("pr_f empty-side conventions") {
  CHECK(pr_f({0, 0, 0, 0}).precision == 1.0);
  CHECK(pr_f({0, 0, 0, 0}).recall == 1.0);
  CHECK(pr_f({0, 0, 0, 0}).f == 1.0);
  CHECK(pr_f({0, 0, 0, 5}).f == 0.0);   // nothing predicted, edges exist
  CHECK(pr_f({0, 5, 0, 0}).f == 0.0);   // predictions, no edges
  CHECK(pr_f({0, 5, 0, 5}).f == 0.0);   // nothing matched at all
  PRF r = pr_f({3, 4, 3, 6});
  CHECK(r.precision == Approx(0.75));
  CHECK(r.recall == Approx(0.5));
  CHECK(r.f == Approx(0.6));
}

TEST_CASE("ods picks the lowest threshold among ties") {
  // Single 16x16 image, radius ~0.17 so only exact hits match. One true edge
  // pixel at 0.9, one spurious at 0.4: F jumps to 1 once t clears 0.40 and
  // stays 1 until 0.9 drops out, so the scan must return 0.41.
  Tensor pred = prob_map_2d(16, 16, {{{0, 2, 2}, 0.9f}, {{0, 10, 10}, 0.4f}});
  ByteTensor gt = mask_2d(16, 16, {{0, 2, 2}});
  EvalConfig cfg;
  OdsOis r = ods_ois({pred}, {gt}, cfg);
  CHECK(r.ods.threshold == Approx(0.41));
  CHECK(r.ods.prf.f == Approx(1.0));
  CHECK(r.ods.prf.precision == Approx(1.0));
  CHECK(r.ods.prf.recall == Approx(1.0));
  // One image: per-image best coincides with the dataset best.
  CHECK(r.ois.f == Approx(1.0));
}

TEST_CASE("ods on exact predictions and on empty predictions") {
  Rng rng(11);
  ByteTensor gt({16, 16});
  for (int i = 0; i < 20; ++i) gt.v[rng.uniform_int(0, 255)] = 1;
  Tensor perfect({16, 16});
  for (int i = 0; i < 256; ++i) perfect.v[i] = gt.v[i] ? 1.0f : 0.0f;
  EvalConfig cfg;
  OdsOis r = ods_ois({perfect}, {gt}, cfg);
  CHECK(r.ods.prf.f == Approx(1.0));
  CHECK(r.ods.threshold == Approx(0.01));  // F is 1 on the whole grid
  CHECK(r.ois.f == Approx(1.0));

  Tensor zero({16, 16});
  OdsOis z = ods_ois({zero}, {gt}, cfg);
  CHECK(z.ods.prf.f == 0.0);
  CHECK(z.ods.prf.precision == 1.0);  // empty prediction set
  CHECK(z.ods.prf.recall == 0.0);
  CHECK(z.ois.f == 0.0);
}

TEST_CASE("ods input validation") {
  EvalConfig cfg;
  CHECK_THROWS(ods_ois({}, {}, cfg));
  Tensor p({4, 4});
  ByteTensor g({4, 8});
  CHECK_THROWS(ods_ois({p}, {g}, cfg));
  CHECK_THROWS(ods_ois({p}, {ByteTensor({4, 4}), ByteTensor({4, 4})}, cfg));
}

TEST_CASE("eval config validation") {
  EvalConfig cfg;
  CHECK(cfg.d == Approx(0.0075));
  REQUIRE(cfg.thresholds.size() == 99);
  CHECK(cfg.thresholds.front() == Approx(0.01));
  CHECK(cfg.thresholds.back() == Approx(0.99));
  CHECK_NOTHROW(cfg.validate());

  EvalConfig bad = cfg;
  bad.d = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.thresholds = {0.5, 0.5};
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.thresholds = {0.2, 1.0};
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.thresholds.clear();
  CHECK_THROWS(bad.validate());
}

TEST_CASE("ois aggregates per-image optimal thresholds and dominates ods") {
  // Image 1 prefers a high threshold (spurious blob at 0.6); image 2 has its
  // true hit at 0.3, so a shared threshold cannot serve both.
  Tensor p1 = prob_map_2d(16, 16, {{{0, 2, 2}, 0.9f}, {{0, 8, 8}, 0.6f}});
  ByteTensor g1 = mask_2d(16, 16, {{0, 2, 2}});
  Tensor p2 = prob_map_2d(16, 16, {{{0, 3, 3}, 0.3f}, {{0, 12, 12}, 0.7f}});
  ByteTensor g2 = mask_2d(16, 16, {{0, 3, 3}});
  EvalConfig cfg;
  OdsOis r = ods_ois({p1, p2}, {g1, g2}, cfg);
  CHECK(r.ods.prf.f == Approx(2.0 / 3.0));
  CHECK(r.ods.threshold == Approx(0.01));
  // Per-image bests: (1,1,1,1) and (1,2,1,1) -> P=2/3, R=1, F=0.8.
  CHECK(r.ois.f == Approx(0.8));
  CHECK(r.ois.f >= r.ods.prf.f);
}

TEST_CASE("per-image best threshold dominates the shared one") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> preds;
    std::vector<ByteTensor> gts;
    for (int i = 0; i < 4; ++i) {
      Tensor p({16, 16});
      for (auto& v : p.v) v = static_cast<float>(rng.uniform());
      ByteTensor g({16, 16});
      for (int k = 0; k < 12; ++k) g.v[rng.uniform_int(0, 255)] = 1;
      preds.push_back(std::move(p));
      gts.push_back(std::move(g));
    }
    EvalConfig cfg;
    cfg.d = 0.02;
    OdsOis r = ods_ois(preds, gts, cfg);
    // Recompute per image through the public pieces.
    for (size_t i = 0; i < preds.size(); ++i) {
      const double radius = cfg.d * image_diagonal(gts[i].shape);
      const auto gt_pts = mask_points(gts[i]);
      double best = -1, at_ods = -1;
      for (double t : cfg.thresholds) {
        const double f = pr_f(match_edges(mask_points(binarize(preds[i], t)), gt_pts, radius)).f;
        best = std::max(best, f);
        if (t == r.ods.threshold) at_ods = f;
      }
      REQUIRE(at_ods >= 0);
      CHECK(best >= at_ods);
    }
  }
}

TEST_CASE("match radius scales with the image diagonal") {
  // Same structure, two resolutions, same d: the offset-by-one prediction
  // counts as a hit only where d * diagonal reaches 1 pixel.
  EvalConfig cfg;  // d = 0.0075
  Tensor big = prob_map_2d(96, 96, {{{0, 5, 6}, 1.0f}});
  ByteTensor big_gt = mask_2d(96, 96, {{0, 5, 5}});
  CHECK(ods({big}, {big_gt}, cfg).prf.f == Approx(1.0));  // radius ~1.02

  Tensor small = prob_map_2d(32, 32, {{{0, 5, 6}, 1.0f}});
  ByteTensor small_gt = mask_2d(32, 32, {{0, 5, 5}});
  CHECK(ods({small}, {small_gt}, cfg).prf.f == 0.0);  // radius ~0.34
}

TEST_CASE("dice analytic cases") {
  ByteTensor a({2, 2}), b({2, 2});
  CHECK(dice(a, b) == 1.0);  // both empty
  a.v = {1, 1, 0, 0};
  b.v = {0, 1, 1, 0};
  CHECK(dice(a, b) == Approx(0.5));
  CHECK(dice(b, a) == Approx(0.5));
  CHECK(dice(a, a) == 1.0);
  b.v = {0, 0, 1, 1};
  CHECK(dice(a, b) == 0.0);
  CHECK_THROWS(dice(a, ByteTensor({4})));
}

TEST_CASE("hausdorff analytic cases") {
  std::vector<Point3> origin = {{0, 0, 0}};
  std::vector<Point3> p34 = {{0, 3, 4}};
  CHECK(hausdorff(origin, p34, 99.0) == Approx(5.0));
  CHECK(hausdorff(p34, origin, 99.0) == Approx(5.0));
  CHECK(hausdorff({}, {}, 99.0) == 0.0);
  CHECK(hausdorff(origin, {}, 7.5) == 7.5);
  CHECK(hausdorff({}, origin, 7.5) == 7.5);
  CHECK(hausdorff(origin, origin, 99.0) == 0.0);

  // Subset: the directed distance from the superset side dominates.
  std::vector<Point3> line = {{0, 0, 0}, {0, 0, 5}};
  CHECK(hausdorff(origin, line, 99.0) == Approx(5.0));
}

TEST_CASE("hausdorff equals pairwise oracle on random sets") {
  Rng rng(505);
  for (int trial = 0; trial < 200; ++trial) {
    const bool three_d = trial % 2 == 0;
    auto a = random_distinct_points(rng, static_cast<int>(rng.uniform_int(1, 10)), 9, three_d);
    auto b = random_distinct_points(rng, static_cast<int>(rng.uniform_int(1, 10)), 9, three_d);
    const double got = hausdorff(a, b, 0.0);
    CHECK(got == Approx(hd_oracle(a, b)).epsilon(1e-9));
    CHECK(hausdorff(b, a, 0.0) == Approx(got).epsilon(1e-12));
  }
}

TEST_CASE("hd empty value defaults to the image diagonal") {
  EvalConfig cfg;
  CHECK(hd_empty_for(cfg, {3, 4}) == Approx(5.0));
  cfg.hd_empty_value = 12.5;
  CHECK(hd_empty_for(cfg, {3, 4}) == 12.5);
}

TEST_CASE("crispness sweep validates its d list") {
  Tensor p({16, 16});
  ByteTensor g({16, 16});
  g.v[0] = 1;
  EvalConfig cfg;
  CHECK_THROWS(crispness_sweep({p}, {g}, {}, cfg));
  CHECK_THROWS(crispness_sweep({p}, {g}, {0.003, 0.0075}, cfg));  // ascending
  CHECK_THROWS(crispness_sweep({p}, {g}, {0.0075, 0.0075}, cfg));
  CHECK_THROWS(crispness_sweep({p}, {g}, {0.0075, 0.0}, cfg));
}

TEST_CASE("sweep F is non-increasing as the tolerance shrinks") {
  Rng rng(909);
  const std::vector<double> d_list = {0.05, 0.02, 0.0075, 0.003};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> preds;
    std::vector<ByteTensor> gts;
    for (int i = 0; i < 3; ++i) {
      Tensor p({16, 16});
      for (auto& v : p.v) v = static_cast<float>(rng.uniform());
      ByteTensor g({16, 16});
      for (int k = 0; k < 10; ++k) g.v[rng.uniform_int(0, 255)] = 1;
      preds.push_back(std::move(p));
      gts.push_back(std::move(g));
    }
    EvalConfig cfg;
    auto rows = crispness_sweep(preds, gts, d_list, cfg);
    REQUIRE(rows.size() == d_list.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].d == d_list[i]);
      if (i > 0) {
        CHECK(rows[i].ods_f <= rows[i - 1].ods_f + 1e-12);
        CHECK(rows[i].ois_f <= rows[i - 1].ois_f + 1e-12);
      }
    }
  }
}

TEST_CASE("sweep row at the base tolerance matches a direct evaluation") {
  Rng rng(303);
  Tensor p({16, 16});
  for (auto& v : p.v) v = static_cast<float>(rng.uniform());
  ByteTensor g({16, 16});
  for (int k = 0; k < 8; ++k) g.v[rng.uniform_int(0, 255)] = 1;
  EvalConfig cfg;
  auto rows = crispness_sweep({p}, {g}, {0.01, 0.0075, 0.005, 0.003}, cfg);
  OdsOis direct = ods_ois({p}, {g}, cfg);
  CHECK(rows[1].ods_f == direct.ods.prf.f);
  CHECK(rows[1].ois_f == direct.ois.f);
}

TEST_CASE("report csv format") {
  std::vector<ReportRow> rows(2);
  rows[0] = {"ods", "test", "phase1_fusion", 0.0075, 0.41, {1.0, 1.0, 1.0}, 0.875, 2.0};
  rows[1] = {"ois", "test", "phase1_fusion", 0.0075, std::nullopt, {0.9, 0.8, 0.8470588235294118},
             std::nullopt, std::nullopt};
  const std::string got = format_report_csv(rows);
  const std::string want =
      "metric,dataset,phase,d,threshold,precision,recall,f,dsc,hd\n"
      "ods,test,phase1_fusion,0.007500,0.410000,1.000000,1.000000,1.000000,0.875000,2.000000\n"
      "ois,test,phase1_fusion,0.007500,,0.900000,0.800000,0.847059,,\n";
  CHECK(got == want);
}

TEST_CASE("report csv writes byte-identically") {
  TempDir td;
  std::vector<ReportRow> rows(1);
  rows[0] = {"final", "test", "final", 0.0075, 0.5, {0.5, 0.25, 1.0 / 3.0}, 0.42, 11.0};
  const std::string a = td.path + "/a.csv";
  const std::string b = td.path + "/b.csv";
  write_report_csv(a, rows);
  write_report_csv(b, rows);
  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a).find("0.333333") != std::string::npos);
  CHECK_THROWS(write_report_csv(td.path + "/no/such/dir/x.csv", rows));
}
