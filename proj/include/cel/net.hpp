#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cel/autograd.hpp"
#include "cel/ops.hpp"
#include "cel/tensor.hpp"

// The three networks: object detector (residual encoder-decoder + ASPP),
// edge module (16 convs in 5 stages with accumulated side features), and the
// refinement encoder-decoder whose stages are gated by the phase-1 maps.
// All builders work for spatial rank 2 and 3 from the same config.

namespace cel {

struct NetConfig {
  int rank = 2;
  int64_t in_channels = 1;
  int64_t base_width = 32;
  std::vector<int64_t> encoder_blocks = {4, 6, 6, 4};
  std::vector<int64_t> aspp_rates = {1, 2, 4, 8};
  int64_t gn_groups = 8;
  std::vector<int64_t> edge_stage_layers = {3, 3, 3, 3, 4};
  int64_t side_channels = 16;
  bool gate_enabled = true;

  void validate() const;
  // Stage widths double per level and cap at 8x base_width.
  int64_t width(int stage) const;
};

// Named parameters in insertion order; iteration order is the serialization
// order, so it must stay deterministic.
struct ParamStore {
  std::vector<std::string> names;
  std::unordered_map<std::string, Var> by_name;

  Var& add(const std::string& name, Tensor init);
  Var& at(const std::string& name);
  const Var& at(const std::string& name) const;
  bool has(const std::string& name) const { return by_name.count(name) != 0; }
  int64_t total_params() const;
  void zero_grads();
};

namespace netp {

struct Conv {
  Var w, b;
  ops::ConvSpec cs;
};

struct Norm {
  Var g, b;
  int64_t groups = 1;
};

struct Res {
  Conv c1, c2;
  Norm n1, n2;
  Conv skip;
  bool has_skip = false;
};

struct Gate {
  Conv proj;  // 1x1, lifts the 1-channel edge map to the stage width
  Conv conv;  // 3x3 gate convolution; doubles as the plain conv when gating is off
};

}  // namespace netp

struct Aspp {
  std::vector<netp::Conv> branch;
  netp::Conv proj;
  std::vector<int64_t> rates;
};

struct ObjectNet {
  NetConfig cfg;
  ParamStore ps;
  netp::Res stem;
  std::vector<netp::Conv> down;                // 4 stride-2 entries
  std::vector<std::vector<netp::Res>> enc;     // [4,6,6,4] blocks
  Aspp aspp;
  std::vector<netp::Conv> up_proj;             // channel align after each upsample
  std::vector<std::vector<netp::Res>> dec;     // 4 stages of 2 blocks
  netp::Conv head;
};

struct EdgeNet {
  NetConfig cfg;
  ParamStore ps;
  struct Stage {
    std::vector<netp::Conv> convs;   // 3x3, ReLU after each
    std::vector<netp::Conv> side;    // 1x1 per conv, accumulated
    netp::Conv stage_conv;           // 3x3 on the accumulated side features
    netp::Conv gate;                 // 3x3 gate convolution
    netp::Conv out;                  // 1x1 to one channel
  };
  std::vector<Stage> stages;         // 5
  netp::Conv fuse;                   // 1x1 over the 5 side logits
};

struct RefineNet {
  NetConfig cfg;
  ParamStore ps;
  struct Stage {
    netp::Conv c1, c2;
    netp::Norm n1, n2;
    netp::Gate gate;
    netp::Conv out;                  // 1x1 to one channel
  };
  std::vector<netp::Conv> down;      // 3, entering encoder stages 2..4
  std::vector<Stage> enc;            // 4
  Aspp aspp;
  std::vector<Stage> dec;            // 4 (first at 1/8, upsample before 2..4)
  netp::Conv fuse;                   // 1x1 over the 8 stage logits
};

struct Phase1Outputs {
  Var object_map;
  std::vector<Var> edge_sides;       // 5
  Var edge_fused;
};

struct Phase2Outputs {
  std::vector<Var> stage_maps;       // 8
  Var fused;
};

ObjectNet build_object_net(const NetConfig& cfg, uint64_t seed);
EdgeNet build_edge_net(const NetConfig& cfg, uint64_t seed);
RefineNet build_refine_net(const NetConfig& cfg, uint64_t seed);

Var object_forward(const ObjectNet& net, const Var& image);
Phase1Outputs edge_forward(const EdgeNet& net, const Var& image, const Var& d_o);
Phase2Outputs refine_forward(const RefineNet& net, const Var& image, const Var& d_e,
                             const Var& d_o);
Var aspp_forward(const Aspp& aspp, const Var& f);

// Spatial extents must divide by 16 (four halvings); no silent padding.
void check_net_input(const NetConfig& cfg, const Shape& image_shape);

// Checkpoint: magic line, JSON header (config + named shapes), raw f32
// payloads in header order. Round trips bit-exactly.
void save_checkpoint(const std::string& path, const NetConfig& cfg,
                     const std::vector<std::pair<std::string, const ParamStore*>>& stores);
NetConfig read_checkpoint_config(const std::string& path);
void load_checkpoint_params(const std::string& path,
                            const std::vector<std::pair<std::string, ParamStore*>>& stores);

}  // namespace cel
