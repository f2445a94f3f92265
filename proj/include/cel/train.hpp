#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cel/data.hpp"
#include "cel/loss.hpp"
#include "cel/metrics.hpp"
#include "cel/net.hpp"

// Two-phase orchestration: phase 1 trains the object and edge nets jointly
// and caches their maps; phase 2 trains the refinement net against those
// cached maps with phase 1 frozen. Everything is deterministic given the seed.

namespace cel {

struct TrainConfig {
  uint64_t seed = 1;
  int64_t epochs_phase1 = 8;
  int64_t epochs_phase2 = 8;
  int64_t batch_size = 4;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossConfig loss_phase1;  // hybrid over the 6 edge outputs; epsilon shared with the object bce
  LossConfig loss_phase2;  // hybrid over the 9 refinement outputs
  bool gate_enabled = true;
  bool flip_augment = true;

  void validate() const;
};

struct TrainLogRow {
  int64_t step = 0;  // 1-based within each phase
  int phase = 0;
  double loss = 0;
};

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows);

struct Phase1Artifacts {
  NetConfig net_cfg;
  ObjectNet object;
  EdgeNet edge;
  // Full-resolution spatial maps in [0,1], keyed by sample id.
  std::unordered_map<std::string, Tensor> d_o;
  std::unordered_map<std::string, Tensor> d_e;
};

struct Phase2Artifacts {
  NetConfig net_cfg;
  RefineNet refine;
};

// Adam over one or more parameter stores, slot order fixed by store order.
struct Adam {
  double lr, b1, b2, eps;
  int64_t t = 0;
  struct Slot {
    Var p;
    Tensor m, v;
  };
  std::vector<Slot> slots;

  Adam(const TrainConfig& cfg)
      : lr(cfg.learning_rate), b1(cfg.adam_beta1), b2(cfg.adam_beta2), eps(cfg.adam_eps) {}
  void attach(ParamStore& ps);
  void step();
};

// Trains on `train`; caches D_O and the fused D_E for train and extra alike.
Phase1Artifacts train_phase1(const std::vector<Sample>& train, const std::vector<Sample>& extra,
                             const TrainConfig& cfg, NetConfig net_cfg,
                             std::vector<TrainLogRow>* log = nullptr);

Phase2Artifacts train_phase2(const std::vector<Sample>& train, const Phase1Artifacts& p1,
                             const TrainConfig& cfg, std::vector<TrainLogRow>* log = nullptr);

// Full pipeline on one image ([1,*spatial] in [0,1]); fused refinement map
// thresholded strictly above 0.5.
ByteTensor predict(const Phase1Artifacts& p1, const Phase2Artifacts& p2, const Tensor& image);

// Report rows over the held-out set: ODS+OIS for the phase-1 fusion, for each
// of the 9 phase-2 outputs, a fixed-threshold row for the binary prediction,
// and optionally sweep rows (both protocols per d) for the phase-2 fusion.
std::vector<ReportRow> evaluate_run(const Phase1Artifacts& p1, const Phase2Artifacts& p2,
                                    const std::vector<Sample>& test, const EvalConfig& ecfg,
                                    const std::vector<double>& sweep_d = {});

// Artifact layout under a run directory: phase1.ckpt, phase2.ckpt,
// cache/<id>.do.vol and cache/<id>.de.vol.
void save_phase1(const std::string& dir, const Phase1Artifacts& p1);
Phase1Artifacts load_phase1(const std::string& dir);
void save_phase2(const std::string& dir, const Phase2Artifacts& p2);
Phase2Artifacts load_phase2(const std::string& dir);

}  // namespace cel
