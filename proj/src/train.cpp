#include "cel/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cel/gate.hpp"
#include "cel/rng.hpp"
#include "cel/volume_io.hpp"

namespace fs = std::filesystem;

namespace cel {
namespace {

// Flip over the last `r` dims; bit d of mask flips spatial dim d.
template <class T>
TensorT<T> flip_last(const TensorT<T>& t, int r, unsigned mask) {
  if (mask == 0) return t;
  TensorT<T> out(t.shape);
  const int nd = t.rank();
  Shape sp(t.shape.end() - r, t.shape.end());
  int64_t lead = 1;
  for (int i = 0; i < nd - r; ++i) lead *= t.shape[i];
  const int64_t sn = numel(sp);
  std::vector<int64_t> c(r, 0);
  for (int64_t l = 0; l < lead; ++l) {
    std::fill(c.begin(), c.end(), 0);
    for (int64_t i = 0; i < sn; ++i) {
      int64_t dst = 0;
      for (int d = 0; d < r; ++d) {
        const int64_t cd = (mask >> d & 1) ? sp[d] - 1 - c[d] : c[d];
        dst = dst * sp[d] + cd;
      }
      out.v[l * sn + dst] = t.v[l * sn + i];
      for (int d = r - 1; d >= 0; --d) {
        if (++c[d] < sp[d]) break;
        c[d] = 0;
      }
    }
  }
  return out;
}

Tensor squeeze_map(const Tensor& t) {
  Tensor out(spatial_of(t.shape));
  out.v = t.v;
  return out;
}

Var lift_map(const Tensor& sp_map) {
  Shape s{1, 1};
  s.insert(s.end(), sp_map.shape.begin(), sp_map.shape.end());
  Tensor t(s);
  t.v = sp_map.v;
  return Var(std::move(t));
}

Var lift_image(const Tensor& image) {
  Shape s{1};
  s.insert(s.end(), image.shape.begin(), image.shape.end());
  Tensor t(s);
  t.v = image.v;
  return Var(std::move(t));
}

struct Batch {
  Var image;
  Tensor obj_t, edge_t;
  Var d_e, d_o;  // phase 2 only
};

void copy_slot(Tensor& dst, int64_t slot, const Tensor& src) {
  std::copy(src.v.begin(), src.v.end(), dst.v.begin() + slot * src.numel());
}

Batch make_batch(const std::vector<Sample>& ds, const std::vector<int64_t>& idx,
                 const std::vector<unsigned>& flips, int rank, const Phase1Artifacts* caches) {
  const Sample& first = ds[static_cast<size_t>(idx[0])];
  const int64_t B = static_cast<int64_t>(idx.size());
  Shape ishape{B};
  ishape.insert(ishape.end(), first.image.shape.begin(), first.image.shape.end());
  Shape mshape{B, 1};
  mshape.insert(mshape.end(), first.edge_mask.shape.begin(), first.edge_mask.shape.end());

  Tensor img(ishape), obj(mshape), edg(mshape), de(mshape), dov(mshape);
  for (int64_t b = 0; b < B; ++b) {
    const Sample& s = ds[static_cast<size_t>(idx[b])];
    check(s.image.shape == first.image.shape, "batch: mixed sample shapes");
    const unsigned f = flips[static_cast<size_t>(b)];
    copy_slot(img, b, flip_last(s.image, rank, f));
    copy_slot(obj, b, flip_last(s.object_mask.cast<float>(), rank, f));
    copy_slot(edg, b, flip_last(s.edge_mask.cast<float>(), rank, f));
    if (caches) {
      copy_slot(de, b, flip_last(caches->d_e.at(s.id), rank, f));
      copy_slot(dov, b, flip_last(caches->d_o.at(s.id), rank, f));
    }
  }
  Batch out;
  out.image = Var(std::move(img));
  out.obj_t = std::move(obj);
  out.edge_t = std::move(edg);
  if (caches) {
    out.d_e = Var(std::move(de));
    out.d_o = Var(std::move(dov));
  }
  return out;
}

double scalar_loss(const Var& loss) { return static_cast<double>(loss.val().v[0]); }

void cache_maps(Phase1Artifacts& art, const std::vector<Sample>& ds) {
  NoGrad ng;
  for (const Sample& s : ds) {
    check(art.d_o.count(s.id) == 0, cat("duplicate sample id: ", s.id));
    Var img = lift_image(s.image);
    Var d_o = object_forward(art.object, img);
    Phase1Outputs p1 = edge_forward(art.edge, img, d_o);
    art.d_o.emplace(s.id, squeeze_map(d_o.val()));
    art.d_e.emplace(s.id, squeeze_map(p1.edge_fused.val()));
  }
}

ByteTensor threshold_strict(const Tensor& prob_spatial) {
  ByteTensor m(prob_spatial.shape);
  for (int64_t i = 0; i < prob_spatial.numel(); ++i) m.v[i] = prob_spatial.v[i] > 0.5f ? 1 : 0;
  return m;
}

}  // namespace

void TrainConfig::validate() const {
  check(epochs_phase1 >= 0 && epochs_phase2 >= 0, "train: epochs must be >= 0");
  check(batch_size >= 1, "train: batch_size must be >= 1");
  check(learning_rate > 0, "train: learning_rate must be positive");
  check(adam_beta1 >= 0 && adam_beta1 < 1, "train: adam_beta1 must be in [0,1)");
  check(adam_beta2 >= 0 && adam_beta2 < 1, "train: adam_beta2 must be in [0,1)");
  check(adam_eps > 0, "train: adam_eps must be positive");
  loss_phase1.validate();
  loss_phase2.validate();
}

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), cat("cannot open for write: ", path));
  f << "step,phase,loss\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%.6f\n", static_cast<long long>(r.step), r.phase,
                  r.loss);
    f << buf;
  }
  check(f.good(), cat("write failed: ", path));
}

void Adam::attach(ParamStore& ps) {
  for (const auto& name : ps.names) {
    Slot s;
    s.p = ps.at(name);
    s.m = Tensor(s.p.shape());
    s.v = Tensor(s.p.shape());
    slots.push_back(std::move(s));
  }
}

void Adam::step() {
  ++t;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (auto& s : slots) {
    Tensor& p = s.p.val();
    const Tensor& g = s.p.grad();
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g.v[i]);
      const double m = b1 * s.m.v[i] + (1.0 - b1) * gi;
      const double v = b2 * s.v.v[i] + (1.0 - b2) * gi * gi;
      s.m.v[i] = static_cast<float>(m);
      s.v.v[i] = static_cast<float>(v);
      p.v[i] -= static_cast<float>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
  }
}

Phase1Artifacts train_phase1(const std::vector<Sample>& train, const std::vector<Sample>& extra,
                             const TrainConfig& cfg, NetConfig net_cfg,
                             std::vector<TrainLogRow>* log) {
  cfg.validate();
  check(!train.empty(), "train_phase1: empty dataset");
  net_cfg.gate_enabled = cfg.gate_enabled;
  net_cfg.validate();

  Phase1Artifacts art;
  art.net_cfg = net_cfg;
  art.object = build_object_net(net_cfg, cfg.seed);
  art.edge = build_edge_net(net_cfg, cfg.seed);

  Adam opt(cfg);
  opt.attach(art.object.ps);
  opt.attach(art.edge.ps);
  const auto w6 = cfg.loss_phase1.weights_for(6);

  int64_t step = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs_phase1; ++epoch) {
    std::vector<int64_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(Rng::mix(cfg.seed, 0x1000 + static_cast<uint64_t>(epoch)));
    order_rng.shuffle(order);
    Rng aug_rng(Rng::mix(cfg.seed, 0x2000 + static_cast<uint64_t>(epoch)));
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
      std::vector<int64_t> idx(order.begin() + at, order.begin() + end);
      std::vector<unsigned> flips(idx.size(), 0);
      if (cfg.flip_augment)
        for (auto& f : flips)
          f = static_cast<unsigned>(aug_rng.uniform_int(0, (1 << net_cfg.rank) - 1));

      Batch b = make_batch(train, idx, flips, net_cfg.rank, nullptr);
      Var d_o = object_forward(art.object, b.image);
      Phase1Outputs p1 = edge_forward(art.edge, b.image, d_o);
      std::vector<Var> edge_outs = p1.edge_sides;
      edge_outs.push_back(p1.edge_fused);
      Var loss = ops::add(bce_loss(d_o, b.obj_t, cfg.loss_phase1.epsilon),
                          hybrid_loss(edge_outs, b.edge_t, w6, cfg.loss_phase1.focal_gamma,
                                      cfg.loss_phase1.focal_alpha_pos, cfg.loss_phase1.epsilon));
      const double lv = scalar_loss(loss);
      if (!std::isfinite(lv))
        fail(cat("phase 1 diverged: non-finite loss ", lv, " at step ", step + 1));
      ++step;
      if (log) log->push_back({step, 1, lv});

      art.object.ps.zero_grads();
      art.edge.ps.zero_grads();
      backward(loss);
      opt.step();
    }
  }

  cache_maps(art, train);
  cache_maps(art, extra);
  return art;
}

Phase2Artifacts train_phase2(const std::vector<Sample>& train, const Phase1Artifacts& p1,
                             const TrainConfig& cfg, std::vector<TrainLogRow>* log) {
  cfg.validate();
  check(!train.empty(), "train_phase2: empty dataset");
  for (const Sample& s : train)
    check(p1.d_o.count(s.id) != 0 && p1.d_e.count(s.id) != 0,
          cat("train_phase2: missing phase-1 cache for sample ", s.id));

  NetConfig net_cfg = p1.net_cfg;
  net_cfg.gate_enabled = cfg.gate_enabled;
  Phase2Artifacts art;
  art.net_cfg = net_cfg;
  art.refine = build_refine_net(net_cfg, cfg.seed);

  Adam opt(cfg);
  opt.attach(art.refine.ps);
  const auto w9 = cfg.loss_phase2.weights_for(9);

  int64_t step = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs_phase2; ++epoch) {
    std::vector<int64_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(Rng::mix(cfg.seed, 0x3000 + static_cast<uint64_t>(epoch)));
    order_rng.shuffle(order);
    Rng aug_rng(Rng::mix(cfg.seed, 0x4000 + static_cast<uint64_t>(epoch)));
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
      std::vector<int64_t> idx(order.begin() + at, order.begin() + end);
      std::vector<unsigned> flips(idx.size(), 0);
      if (cfg.flip_augment)
        for (auto& f : flips)
          f = static_cast<unsigned>(aug_rng.uniform_int(0, (1 << net_cfg.rank) - 1));

      Batch b = make_batch(train, idx, flips, net_cfg.rank, &p1);
      Phase2Outputs out = refine_forward(art.refine, b.image, b.d_e, b.d_o);
      std::vector<Var> outs = out.stage_maps;
      outs.push_back(out.fused);
      Var loss = hybrid_loss(outs, b.edge_t, w9, cfg.loss_phase2.focal_gamma,
                             cfg.loss_phase2.focal_alpha_pos, cfg.loss_phase2.epsilon);
      const double lv = scalar_loss(loss);
      if (!std::isfinite(lv))
        fail(cat("phase 2 diverged: non-finite loss ", lv, " at step ", step + 1));
      ++step;
      if (log) log->push_back({step, 2, lv});

      art.refine.ps.zero_grads();
      backward(loss);
      opt.step();
    }
  }
  return art;
}

ByteTensor predict(const Phase1Artifacts& p1, const Phase2Artifacts& p2, const Tensor& image) {
  NoGrad ng;
  check(image.rank() == p1.net_cfg.rank + 1,
        cat("predict: expected [C,*spatial] image, got ", shape_str(image.shape)));
  Var img = lift_image(image);
  Var d_o = object_forward(p1.object, img);
  Phase1Outputs ph1 = edge_forward(p1.edge, img, d_o);
  Phase2Outputs ph2 = refine_forward(p2.refine, img, ph1.edge_fused, d_o);
  return threshold_strict(squeeze_map(ph2.fused.val()));
}

std::vector<ReportRow> evaluate_run(const Phase1Artifacts& p1, const Phase2Artifacts& p2,
                                    const std::vector<Sample>& test, const EvalConfig& ecfg,
                                    const std::vector<double>& sweep_d) {
  ecfg.validate();
  check(!test.empty(), "evaluate_run: empty test set");
  NoGrad ng;

  const size_t n = test.size();
  std::vector<ByteTensor> gts;
  gts.reserve(n);
  std::vector<Tensor> p1_fused(n);
  std::vector<std::vector<Tensor>> p2_maps(9, std::vector<Tensor>(n));
  std::vector<ByteTensor> finals(n);
  for (size_t i = 0; i < n; ++i) {
    const Sample& s = test[i];
    gts.push_back(s.edge_mask);
    auto ito = p1.d_o.find(s.id);
    auto ite = p1.d_e.find(s.id);
    check(ito != p1.d_o.end() && ite != p1.d_e.end(),
          cat("evaluate_run: missing phase-1 cache for sample ", s.id));
    p1_fused[i] = ite->second;
    Phase2Outputs out =
        refine_forward(p2.refine, lift_image(s.image), lift_map(ite->second), lift_map(ito->second));
    for (size_t k = 0; k < 8; ++k) p2_maps[k][i] = squeeze_map(out.stage_maps[k].val());
    p2_maps[8][i] = squeeze_map(out.fused.val());
    finals[i] = threshold_strict(p2_maps[8][i]);
  }

  std::vector<ReportRow> rows;
  auto emit_pair = [&](const std::string& phase, const std::vector<Tensor>& preds) {
    const OdsOis r = ods_ois(preds, gts, ecfg);
    double dsc = 0, hd = 0;
    for (size_t i = 0; i < n; ++i) {
      const ByteTensor bin = binarize(preds[i], r.ods.threshold);
      dsc += dice(bin, gts[i]);
      hd += hausdorff(mask_points(bin), mask_points(gts[i]), hd_empty_for(ecfg, gts[i].shape));
    }
    const double dn = static_cast<double>(n);
    rows.push_back({"ods", "test", phase, ecfg.d, r.ods.threshold, r.ods.prf, dsc / dn, hd / dn});
    rows.push_back({"ois", "test", phase, ecfg.d, std::nullopt, r.ois, std::nullopt, std::nullopt});
  };

  emit_pair("phase1_fusion", p1_fused);
  for (size_t k = 0; k < 8; ++k) emit_pair(cat("phase2_side", k + 1), p2_maps[k]);
  emit_pair("phase2_fusion", p2_maps[8]);

  {
    MatchCounts agg;
    double dsc = 0, hd = 0;
    for (size_t i = 0; i < n; ++i) {
      const double radius = ecfg.d * image_diagonal(gts[i].shape);
      const auto pts = mask_points(finals[i]);
      const auto gt_pts = mask_points(gts[i]);
      agg += match_edges(pts, gt_pts, radius);
      dsc += dice(finals[i], gts[i]);
      hd += hausdorff(pts, gt_pts, hd_empty_for(ecfg, gts[i].shape));
    }
    const double dn = static_cast<double>(n);
    rows.push_back({"final", "test", "final", ecfg.d, 0.5, pr_f(agg), dsc / dn, hd / dn});
  }

  if (!sweep_d.empty()) {
    for (size_t i = 0; i < sweep_d.size(); ++i) {
      check(sweep_d[i] > 0, "sweep: d must be positive");
      check(i == 0 || sweep_d[i] < sweep_d[i - 1], "sweep: d list must be descending");
    }
    for (double d : sweep_d) {
      EvalConfig c2 = ecfg;
      c2.d = d;
      const OdsOis r = ods_ois(p2_maps[8], gts, c2);
      rows.push_back(
          {"ods", "test", "phase2_fusion", d, r.ods.threshold, r.ods.prf, std::nullopt, std::nullopt});
      rows.push_back({"ois", "test", "phase2_fusion", d, std::nullopt, r.ois, std::nullopt,
                      std::nullopt});
    }
  }
  return rows;
}

void save_phase1(const std::string& dir, const Phase1Artifacts& p1) {
  fs::create_directories(fs::path(dir) / "cache");
  save_checkpoint((fs::path(dir) / "phase1.ckpt").string(), p1.net_cfg,
                  {{"object", &p1.object.ps}, {"edge", &p1.edge.ps}});
  std::vector<std::string> ids;
  ids.reserve(p1.d_o.size());
  for (const auto& [id, m] : p1.d_o) {
    (void)m;
    ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    write_volume((fs::path(dir) / "cache" / (id + ".do.vol")).string(), p1.d_o.at(id));
    write_volume((fs::path(dir) / "cache" / (id + ".de.vol")).string(), p1.d_e.at(id));
  }
}

Phase1Artifacts load_phase1(const std::string& dir) {
  const std::string ckpt = (fs::path(dir) / "phase1.ckpt").string();
  Phase1Artifacts art;
  art.net_cfg = read_checkpoint_config(ckpt);
  art.object = build_object_net(art.net_cfg, 0);
  art.edge = build_edge_net(art.net_cfg, 0);
  load_checkpoint_params(ckpt, {{"object", &art.object.ps}, {"edge", &art.edge.ps}});

  const fs::path cache = fs::path(dir) / "cache";
  check(fs::is_directory(cache), cat("missing phase-1 cache directory: ", cache.string()));
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(cache)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  const std::string suff = ".do.vol";
  for (const auto& nm : names) {
    if (nm.size() <= suff.size() || nm.substr(nm.size() - suff.size()) != suff) continue;
    const std::string id = nm.substr(0, nm.size() - suff.size());
    art.d_o.emplace(id, read_volume_f32((cache / nm).string()));
    const fs::path de = cache / (id + ".de.vol");
    check(fs::exists(de), cat("missing cached edge map for sample ", id));
    art.d_e.emplace(id, read_volume_f32(de.string()));
  }
  check(!art.d_o.empty(), cat("no cached maps under ", cache.string()));
  return art;
}

void save_phase2(const std::string& dir, const Phase2Artifacts& p2) {
  fs::create_directories(dir);
  save_checkpoint((fs::path(dir) / "phase2.ckpt").string(), p2.net_cfg, {{"refine", &p2.refine.ps}});
}

Phase2Artifacts load_phase2(const std::string& dir) {
  const std::string ckpt = (fs::path(dir) / "phase2.ckpt").string();
  Phase2Artifacts art;
  art.net_cfg = read_checkpoint_config(ckpt);
  art.refine = build_refine_net(art.net_cfg, 0);
  load_checkpoint_params(ckpt, {{"refine", &art.refine.ps}});
  return art;
}

}  // namespace cel
