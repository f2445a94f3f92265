#include "cel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <queue>
#include <unordered_map>

namespace cel {
namespace {

// Layered augmenting-path matching (Hopcroft-Karp). Left nodes with an empty
// candidate list are dropped by the caller, so sizes stay near the matched set.
struct BipartiteMatcher {
  int nl, nr;
  std::vector<std::vector<int>> adj;
  std::vector<int> ml, mr, dist;

  BipartiteMatcher(std::vector<std::vector<int>> adj_, int nr_)
      : nl(static_cast<int>(adj_.size())),
        nr(nr_),
        adj(std::move(adj_)),
        ml(nl, -1),
        mr(nr_, -1),
        dist(nl, -1) {}

  bool bfs() {
    std::queue<int> q;
    bool reachable_free = false;
    for (int u = 0; u < nl; ++u) {
      if (ml[u] < 0) {
        dist[u] = 0;
        q.push(u);
      } else {
        dist[u] = -1;
      }
    }
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : adj[u]) {
        int w = mr[v];
        if (w < 0) {
          reachable_free = true;
        } else if (dist[w] < 0) {
          dist[w] = dist[u] + 1;
          q.push(w);
        }
      }
    }
    return reachable_free;
  }

  bool dfs(int u) {
    for (int v : adj[u]) {
      int w = mr[v];
      if (w < 0 || (dist[w] == dist[u] + 1 && dfs(w))) {
        ml[u] = v;
        mr[v] = u;
        return true;
      }
    }
    dist[u] = -1;
    return false;
  }

  int solve() {
    int matched = 0;
    while (bfs()) {
      for (int u = 0; u < nl; ++u) {
        if (ml[u] < 0 && dfs(u)) ++matched;
      }
    }
    return matched;
  }
};

uint64_t cell_key(int64_t cz, int64_t cy, int64_t cx) {
  // Offset keeps neighbor lookups at -1 nonnegative; extents stay well under 2^20.
  return (static_cast<uint64_t>(cz + 1) << 42) | (static_cast<uint64_t>(cy + 1) << 21) |
         static_cast<uint64_t>(cx + 1);
}

std::string f6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Largest "max over a of min over b" squared distance; early exit once the
// running min cannot raise the current max.
double directed_max_min_sq(const std::vector<Point3>& a, const std::vector<Point3>& b) {
  double cur = 0;
  for (const auto& p : a) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      double dz = static_cast<double>(p.z - q.z);
      double dy = static_cast<double>(p.y - q.y);
      double dx = static_cast<double>(p.x - q.x);
      double d2 = dz * dz + dy * dy + dx * dx;
      if (d2 < m) {
        m = d2;
        if (m <= cur) break;
      }
    }
    if (m > cur) cur = m;
  }
  return cur;
}

// counts[i][t] for every image and threshold; shared by ODS and OIS.
std::vector<std::vector<MatchCounts>> count_matrix(const std::vector<Tensor>& preds,
                                                   const std::vector<ByteTensor>& gts,
                                                   const EvalConfig& cfg) {
  cfg.validate();
  check(!preds.empty(), "eval: empty dataset");
  check(preds.size() == gts.size(), "eval: prediction/ground-truth count mismatch");
  const size_t nt = cfg.thresholds.size();
  std::vector<std::vector<MatchCounts>> counts(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    check(preds[i].shape == gts[i].shape, "eval: prediction/ground-truth shape mismatch");
    const double radius = cfg.d * image_diagonal(gts[i].shape);
    const auto gt_pts = mask_points(gts[i]);
    counts[i].resize(nt);
    for (size_t t = 0; t < nt; ++t) {
      const auto pred_pts = mask_points(binarize(preds[i], cfg.thresholds[t]));
      counts[i][t] = match_edges(pred_pts, gt_pts, radius);
    }
  }
  return counts;
}

}  // namespace

EvalConfig::EvalConfig() {
  thresholds.reserve(99);
  for (int i = 1; i <= 99; ++i) thresholds.push_back(i / 100.0);
}

void EvalConfig::validate() const {
  check(d > 0, "eval: d must be positive");
  check(!thresholds.empty(), "eval: empty threshold grid");
  for (size_t i = 0; i < thresholds.size(); ++i) {
    check(thresholds[i] > 0 && thresholds[i] < 1, "eval: thresholds must lie in (0,1)");
    check(i == 0 || thresholds[i] > thresholds[i - 1], "eval: thresholds must be ascending");
  }
}

std::vector<Point3> mask_points(const ByteTensor& mask) {
  const auto& sp = mask.shape;
  check(sp.size() == 2 || sp.size() == 3, "mask_points: rank must be 2 or 3");
  std::vector<Point3> pts;
  if (sp.size() == 2) {
    const int64_t h = sp[0], w = sp[1];
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        if (mask.v[y * w + x]) pts.push_back({0, y, x});
  } else {
    const int64_t dz = sp[0], h = sp[1], w = sp[2];
    for (int64_t z = 0; z < dz; ++z)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          if (mask.v[(z * h + y) * w + x]) pts.push_back({z, y, x});
  }
  return pts;
}

double image_diagonal(const Shape& spatial) {
  double s = 0;
  for (int64_t e : spatial) s += static_cast<double>(e) * static_cast<double>(e);
  return std::sqrt(s);
}

ByteTensor binarize(const Tensor& prob, double t) {
  ByteTensor out(prob.shape);
  for (int64_t i = 0; i < prob.numel(); ++i)
    out.v[i] = static_cast<double>(prob.v[i]) >= t ? 1 : 0;
  return out;
}

MatchCounts match_edges(const std::vector<Point3>& pred, const std::vector<Point3>& gt,
                        double radius) {
  check(radius >= 0, "match_edges: negative radius");
  MatchCounts c;
  c.n_pred = static_cast<int64_t>(pred.size());
  c.n_gt = static_cast<int64_t>(gt.size());
  if (pred.empty() || gt.empty()) return c;

  const double r2 = radius * radius;
  const int64_t cell = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(radius)));
  std::unordered_map<uint64_t, std::vector<int>> grid;
  for (size_t j = 0; j < gt.size(); ++j)
    grid[cell_key(gt[j].z / cell, gt[j].y / cell, gt[j].x / cell)].push_back(
        static_cast<int>(j));

  // Preds without any candidate in range can never match; keep the matcher small.
  std::vector<std::vector<int>> adj;
  for (const auto& p : pred) {
    std::vector<int> cand;
    const int64_t cz = p.z / cell, cy = p.y / cell, cx = p.x / cell;
    for (int64_t dz = -1; dz <= 1; ++dz)
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx) {
          auto it = grid.find(cell_key(cz + dz, cy + dy, cx + dx));
          if (it == grid.end()) continue;
          for (int j : it->second) {
            const auto& q = gt[j];
            const double ez = static_cast<double>(p.z - q.z);
            const double ey = static_cast<double>(p.y - q.y);
            const double ex = static_cast<double>(p.x - q.x);
            if (ez * ez + ey * ey + ex * ex <= r2) cand.push_back(j);
          }
        }
    if (!cand.empty()) adj.push_back(std::move(cand));
  }
  BipartiteMatcher matcher(std::move(adj), static_cast<int>(gt.size()));
  const int64_t tp = matcher.solve();
  c.tp_pred = tp;
  c.tp_gt = tp;
  return c;
}

PRF pr_f(const MatchCounts& c) {
  PRF r;
  r.precision = c.n_pred == 0 ? 1.0 : static_cast<double>(c.tp_pred) / static_cast<double>(c.n_pred);
  r.recall = c.n_gt == 0 ? 1.0 : static_cast<double>(c.tp_gt) / static_cast<double>(c.n_gt);
  const double s = r.precision + r.recall;
  r.f = s == 0 ? 0.0 : 2.0 * r.precision * r.recall / s;
  return r;
}

OdsOis ods_ois(const std::vector<Tensor>& preds, const std::vector<ByteTensor>& gts,
               const EvalConfig& cfg) {
  const auto counts = count_matrix(preds, gts, cfg);
  const size_t nt = cfg.thresholds.size();

  OdsOis out;
  // Ascending scan with strict improvement: ties resolve to the lower threshold.
  double best_f = -1.0;
  for (size_t t = 0; t < nt; ++t) {
    MatchCounts agg;
    for (const auto& row : counts) agg += row[t];
    const PRF prf = pr_f(agg);
    if (prf.f > best_f) {
      best_f = prf.f;
      out.ods.threshold = cfg.thresholds[t];
      out.ods.prf = prf;
    }
  }

  MatchCounts agg;
  for (const auto& row : counts) {
    size_t best_t = 0;
    double best = -1.0;
    for (size_t t = 0; t < nt; ++t) {
      const double f = pr_f(row[t]).f;
      if (f > best) {
        best = f;
        best_t = t;
      }
    }
    agg += row[best_t];
  }
  out.ois = pr_f(agg);
  return out;
}

OdsResult ods(const std::vector<Tensor>& preds, const std::vector<ByteTensor>& gts,
              const EvalConfig& cfg) {
  return ods_ois(preds, gts, cfg).ods;
}

PRF ois(const std::vector<Tensor>& preds, const std::vector<ByteTensor>& gts,
        const EvalConfig& cfg) {
  return ods_ois(preds, gts, cfg).ois;
}

double dice(const ByteTensor& pred, const ByteTensor& gt) {
  check(pred.shape == gt.shape, "dice: shape mismatch");
  int64_t inter = 0, np = 0, ng = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
    inter += p && g;
    np += p;
    ng += g;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

double hausdorff(const std::vector<Point3>& a, const std::vector<Point3>& b, double empty_value) {
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) return empty_value;
  return std::sqrt(std::max(directed_max_min_sq(a, b), directed_max_min_sq(b, a)));
}

double hd_empty_for(const EvalConfig& cfg, const Shape& spatial) {
  return cfg.hd_empty_value < 0 ? image_diagonal(spatial) : cfg.hd_empty_value;
}

std::vector<SweepRow> crispness_sweep(const std::vector<Tensor>& preds,
                                      const std::vector<ByteTensor>& gts,
                                      const std::vector<double>& d_list, const EvalConfig& base) {
  check(!d_list.empty(), "sweep: empty d list");
  for (size_t i = 0; i < d_list.size(); ++i) {
    check(d_list[i] > 0, "sweep: d must be positive");
    check(i == 0 || d_list[i] < d_list[i - 1], "sweep: d list must be descending");
  }
  std::vector<SweepRow> rows;
  rows.reserve(d_list.size());
  for (double d : d_list) {
    EvalConfig cfg = base;
    cfg.d = d;
    const OdsOis r = ods_ois(preds, gts, cfg);
    rows.push_back({d, r.ods.prf.f, r.ois.f});
  }
  return rows;
}

const char* const kReportHeader = "metric,dataset,phase,d,threshold,precision,recall,f,dsc,hd";

std::string format_report_csv(const std::vector<ReportRow>& rows) {
  std::string out = kReportHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += r.metric;
    out += ',';
    out += r.dataset;
    out += ',';
    out += r.phase;
    out += ',';
    out += f6(r.d);
    out += ',';
    if (r.threshold) out += f6(*r.threshold);
    out += ',';
    out += f6(r.prf.precision);
    out += ',';
    out += f6(r.prf.recall);
    out += ',';
    out += f6(r.prf.f);
    out += ',';
    if (r.dsc) out += f6(*r.dsc);
    out += ',';
    if (r.hd) out += f6(*r.hd);
    out += '\n';
  }
  return out;
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), cat("cannot open for write: ", path));
  const std::string body = format_report_csv(rows);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  check(f.good(), cat("write failed: ", path));
}

}  // namespace cel
