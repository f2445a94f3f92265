#include "cel/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "cel/gate.hpp"
#include "cel/rng.hpp"

namespace cel {
namespace {

using ops::ConvSpec;

Var conv_f(const netp::Conv& c, const Var& x) { return ops::conv(x, c.w, c.b, c.cs); }
Var norm_f(const netp::Norm& n, const Var& x) { return ops::group_norm(x, n.g, n.b, n.groups); }

Var res_f(const netp::Res& r, const Var& x) {
  Var y = ops::relu(norm_f(r.n1, conv_f(r.c1, x)));
  y = norm_f(r.n2, conv_f(r.c2, y));
  Var s = r.has_skip ? conv_f(r.skip, x) : x;
  return ops::relu(ops::add(s, y));
}

netp::Conv add_conv(ParamStore& ps, Rng& rng, const std::string& name, int rank, int64_t ci,
                    int64_t co, int k, ConvSpec cs, double const_init = -1.0) {
  Shape ws{co, ci};
  int64_t fan_in = ci;
  for (int i = 0; i < rank; ++i) {
    ws.push_back(k);
    fan_in *= k;
  }
  Tensor w(ws);
  if (const_init >= 0) {
    w.fill(static_cast<float>(const_init));
  } else {
    const double stdv = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.v) v = static_cast<float>(rng.normal() * stdv);
  }
  netp::Conv c;
  c.w = ps.add(name + ".w", std::move(w));
  c.b = ps.add(name + ".b", Tensor({co}));
  c.cs = cs;
  return c;
}

netp::Norm add_norm(ParamStore& ps, const std::string& name, int64_t channels, int64_t groups) {
  Tensor g({channels});
  g.fill(1.0f);
  netp::Norm n;
  n.g = ps.add(name + ".g", std::move(g));
  n.b = ps.add(name + ".b", Tensor({channels}));
  n.groups = groups;
  return n;
}

netp::Res add_res(ParamStore& ps, Rng& rng, const std::string& name, int rank, int64_t ci,
                  int64_t co, int64_t groups) {
  netp::Res r;
  r.c1 = add_conv(ps, rng, name + ".c1", rank, ci, co, 3, {1, 1, 1});
  r.n1 = add_norm(ps, name + ".n1", co, groups);
  r.c2 = add_conv(ps, rng, name + ".c2", rank, co, co, 3, {1, 1, 1});
  r.n2 = add_norm(ps, name + ".n2", co, groups);
  if (ci != co) {
    r.skip = add_conv(ps, rng, name + ".skip", rank, ci, co, 1, {1, 1, 0});
    r.has_skip = true;
  }
  return r;
}

Aspp add_aspp(ParamStore& ps, Rng& rng, const std::string& name, int rank, int64_t channels,
              const std::vector<int64_t>& rates) {
  Aspp a;
  a.rates = rates;
  for (int64_t r : rates)
    a.branch.push_back(add_conv(ps, rng, cat(name, ".r", r), rank, channels, channels, 3,
                                {1, static_cast<int>(r), static_cast<int>(r)}));
  const int64_t cat_ch = channels * static_cast<int64_t>(rates.size() + 1);
  a.proj = add_conv(ps, rng, name + ".proj", rank, cat_ch, channels, 1, {1, 1, 0});
  return a;
}

void check_prob_map(const Var& m, const Shape& image_shape, const char* what) {
  check(m.defined(), cat(what, ": undefined map"));
  const Shape& s = m.shape();
  check(s.size() == image_shape.size() && s[0] == image_shape[0] && s[1] == 1 &&
            spatial_of(s) == spatial_of(image_shape),
        cat(what, ": expected [B,1,*spatial] matching the image, got ", shape_str(s)));
}

// Gate per the config: the gated path combines with the resampled object map
// before the convolution, the ablated path runs the same convolution alone.
Var edge_gate_f(const NetConfig& cfg, const netp::Conv& g, const Var& f, const Var& d_o) {
  if (!cfg.gate_enabled) return conv_f(g, f);
  return logical_gate(f, ops::resize_linear(d_o, spatial_of(f.shape())), g.w, g.b);
}

Var refine_gate_f(const NetConfig& cfg, const netp::Gate& g, const Var& f, const Var& d_e,
                  const Var& d_o) {
  if (!cfg.gate_enabled) return conv_f(g.conv, f);
  return refine_gate(f, d_e, d_o, g.proj.w, g.proj.b, g.conv.w, g.conv.b);
}

Var refine_stage_f(const RefineNet::Stage& st, Var x) {
  x = norm_f(st.n1, ops::relu(conv_f(st.c1, x)));
  x = norm_f(st.n2, ops::relu(conv_f(st.c2, x)));
  return x;
}

}  // namespace

void NetConfig::validate() const {
  check(rank == 2 || rank == 3, cat("net: rank must be 2 or 3, got ", rank));
  check(in_channels >= 1, "net: in_channels must be positive");
  check(base_width >= 1, "net: base_width must be positive");
  check(gn_groups >= 1, "net: gn_groups must be positive");
  check(base_width % gn_groups == 0, cat("net: base_width ", base_width,
                                         " not divisible by gn_groups ", gn_groups));
  check(encoder_blocks.size() == 4, "net: encoder_blocks must list 4 stages");
  for (int64_t n : encoder_blocks) check(n >= 1, "net: encoder stage needs at least one block");
  check(edge_stage_layers.size() == 5, "net: edge module has 5 stages");
  int64_t total = 0;
  for (int64_t n : edge_stage_layers) {
    check(n >= 1, "net: edge stage needs at least one conv");
    total += n;
  }
  check(total == 16, cat("net: edge stages must total 16 conv layers, got ", total));
  check(!aspp_rates.empty(), "net: aspp_rates must be nonempty");
  for (int64_t r : aspp_rates) check(r >= 1, cat("net: aspp rate must be >= 1, got ", r));
  check(side_channels >= 1, "net: side_channels must be positive");
}

int64_t NetConfig::width(int stage) const {
  return std::min(base_width << stage, 8 * base_width);
}

Var& ParamStore::add(const std::string& name, Tensor init) {
  check(!has(name), cat("param already registered: ", name));
  names.push_back(name);
  auto [it, ok] = by_name.emplace(name, Var(std::move(init), true));
  (void)ok;
  return it->second;
}

Var& ParamStore::at(const std::string& name) {
  auto it = by_name.find(name);
  check(it != by_name.end(), cat("unknown param: ", name));
  return it->second;
}

const Var& ParamStore::at(const std::string& name) const {
  auto it = by_name.find(name);
  check(it != by_name.end(), cat("unknown param: ", name));
  return it->second;
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& name : names) n += at(name).val().numel();
  return n;
}

void ParamStore::zero_grads() {
  for (const auto& name : names) {
    auto node = at(name).node();
    if (!node->grad.v.empty()) node->grad.zero();
  }
}

void check_net_input(const NetConfig& cfg, const Shape& image_shape) {
  check(static_cast<int>(image_shape.size()) == cfg.rank + 2,
        cat("net: expected [B,C,*spatial] of rank ", cfg.rank, ", got ",
            shape_str(image_shape)));
  check(image_shape[0] >= 1, "net: empty batch");
  check(image_shape[1] == cfg.in_channels, cat("net: expected ", cfg.in_channels,
                                               " input channels, got ", image_shape[1]));
  for (int64_t e : spatial_of(image_shape))
    check(e % 16 == 0,
          cat("net: spatial extent ", e, " not divisible by 16; pad the input first"));
}

ObjectNet build_object_net(const NetConfig& cfg, uint64_t seed) {
  cfg.validate();
  ObjectNet net;
  net.cfg = cfg;
  Rng rng(Rng::mix(seed, 101));
  ParamStore& ps = net.ps;
  const int rank = cfg.rank;

  net.stem = add_res(ps, rng, "stem", rank, cfg.in_channels, cfg.base_width, cfg.gn_groups);
  int64_t prev = cfg.base_width;
  for (int s = 1; s <= 4; ++s) {
    const int64_t w = cfg.width(s);
    net.down.push_back(add_conv(ps, rng, cat("down", s), rank, prev, w, 3, {2, 1, 1}));
    std::vector<netp::Res> blocks;
    for (int64_t i = 0; i < cfg.encoder_blocks[s - 1]; ++i)
      blocks.push_back(add_res(ps, rng, cat("enc", s, ".b", i), rank, w, w, cfg.gn_groups));
    net.enc.push_back(std::move(blocks));
    prev = w;
  }
  net.aspp = add_aspp(ps, rng, "aspp", rank, prev, cfg.aspp_rates);
  const int64_t skip_w[4] = {cfg.width(3), cfg.width(2), cfg.width(1), cfg.base_width};
  for (int d = 0; d < 4; ++d) {
    net.up_proj.push_back(
        add_conv(ps, rng, cat("dec", d + 1, ".proj"), rank, prev, skip_w[d], 1, {1, 1, 0}));
    std::vector<netp::Res> blocks;
    for (int i = 0; i < 2; ++i)
      blocks.push_back(
          add_res(ps, rng, cat("dec", d + 1, ".b", i), rank, skip_w[d], skip_w[d], cfg.gn_groups));
    net.dec.push_back(std::move(blocks));
    prev = skip_w[d];
  }
  net.head = add_conv(ps, rng, "head", rank, prev, 1, 1, {1, 1, 0});
  return net;
}

Var object_forward(const ObjectNet& net, const Var& image) {
  check_net_input(net.cfg, image.shape());
  Var x = res_f(net.stem, image);
  std::vector<Var> skips{x};
  for (int s = 0; s < 4; ++s) {
    // Stage-level skip on top of the per-block residuals.
    Var stage_in = conv_f(net.down[s], x);
    Var y = stage_in;
    for (const auto& b : net.enc[s]) y = res_f(b, y);
    x = ops::add(stage_in, y);
    if (s < 3) skips.push_back(x);
  }
  x = aspp_forward(net.aspp, x);
  for (int d = 0; d < 4; ++d) {
    const Var& skip = skips[3 - d];
    x = ops::resize_linear(x, spatial_of(skip.shape()));
    x = conv_f(net.up_proj[d], x);
    x = ops::add(x, skip);
    for (const auto& b : net.dec[d]) x = res_f(b, x);
  }
  return ops::sigmoid(conv_f(net.head, x));
}

EdgeNet build_edge_net(const NetConfig& cfg, uint64_t seed) {
  cfg.validate();
  EdgeNet net;
  net.cfg = cfg;
  Rng rng(Rng::mix(seed, 202));
  ParamStore& ps = net.ps;
  const int rank = cfg.rank;

  int64_t prev = cfg.in_channels;
  for (int s = 0; s < 5; ++s) {
    const int64_t w = cfg.width(s);
    EdgeNet::Stage st;
    for (int64_t l = 0; l < cfg.edge_stage_layers[s]; ++l) {
      const int64_t ci = l == 0 ? prev : w;
      st.convs.push_back(add_conv(ps, rng, cat("s", s + 1, ".c", l), rank, ci, w, 3, {1, 1, 1}));
      st.side.push_back(
          add_conv(ps, rng, cat("s", s + 1, ".side", l), rank, w, cfg.side_channels, 1, {1, 1, 0}));
    }
    st.stage_conv = add_conv(ps, rng, cat("s", s + 1, ".stage"), rank, cfg.side_channels,
                             cfg.side_channels, 3, {1, 1, 1});
    st.gate = add_conv(ps, rng, cat("s", s + 1, ".gate"), rank, cfg.side_channels,
                       cfg.side_channels, 3, {1, 1, 1});
    st.out = add_conv(ps, rng, cat("s", s + 1, ".out"), rank, cfg.side_channels, 1, 1, {1, 1, 0});
    net.stages.push_back(std::move(st));
    prev = w;
  }
  net.fuse = add_conv(ps, rng, "fuse", rank, 5, 1, 1, {1, 1, 0}, 1.0 / 5.0);
  return net;
}

Phase1Outputs edge_forward(const EdgeNet& net, const Var& image, const Var& d_o) {
  check_net_input(net.cfg, image.shape());
  check_prob_map(d_o, image.shape(), "edge_forward: D_O");
  const Shape full_sp = spatial_of(image.shape());

  Var x = image;
  std::vector<Var> logits;
  for (size_t s = 0; s < net.stages.size(); ++s) {
    const auto& st = net.stages[s];
    if (s > 0) x = ops::maxpool2(x);
    Var acc;
    for (size_t l = 0; l < st.convs.size(); ++l) {
      x = ops::relu(conv_f(st.convs[l], x));
      Var side = conv_f(st.side[l], x);
      acc = l == 0 ? side : ops::add(acc, side);
    }
    Var fs = conv_f(st.stage_conv, acc);
    Var fg = edge_gate_f(net.cfg, st.gate, fs, d_o);
    logits.push_back(ops::resize_linear(conv_f(st.out, fg), full_sp));
  }
  Var fused_logit = conv_f(net.fuse, ops::concat_c(logits));

  Phase1Outputs out;
  out.object_map = d_o;
  for (const auto& lg : logits) out.edge_sides.push_back(ops::sigmoid(lg));
  out.edge_fused = ops::sigmoid(fused_logit);
  return out;
}

RefineNet build_refine_net(const NetConfig& cfg, uint64_t seed) {
  cfg.validate();
  RefineNet net;
  net.cfg = cfg;
  Rng rng(Rng::mix(seed, 303));
  ParamStore& ps = net.ps;
  const int rank = cfg.rank;

  auto add_stage = [&](const std::string& name, int64_t ci, int64_t co) {
    RefineNet::Stage st;
    st.c1 = add_conv(ps, rng, name + ".c1", rank, ci, co, 3, {1, 1, 1});
    st.n1 = add_norm(ps, name + ".n1", co, cfg.gn_groups);
    st.c2 = add_conv(ps, rng, name + ".c2", rank, co, co, 3, {1, 1, 1});
    st.n2 = add_norm(ps, name + ".n2", co, cfg.gn_groups);
    st.gate.proj = add_conv(ps, rng, name + ".gate.proj", rank, 1, co, 1, {1, 1, 0});
    st.gate.conv = add_conv(ps, rng, name + ".gate.conv", rank, co, co, 3, {1, 1, 1});
    st.out = add_conv(ps, rng, name + ".out", rank, co, 1, 1, {1, 1, 0});
    return st;
  };

  const int64_t ew[4] = {cfg.width(0), cfg.width(1), cfg.width(2), cfg.width(3)};
  for (int s = 0; s < 4; ++s) {
    if (s > 0)
      net.down.push_back(
          add_conv(ps, rng, cat("down", s), rank, ew[s - 1], ew[s - 1], 3, {2, 1, 1}));
    net.enc.push_back(add_stage(cat("e", s + 1), s == 0 ? cfg.in_channels : ew[s - 1], ew[s]));
  }
  net.aspp = add_aspp(ps, rng, "aspp", rank, ew[3], cfg.aspp_rates);
  const int64_t dw[4] = {cfg.width(2), cfg.width(1), cfg.width(0), cfg.width(0)};
  for (int d = 0; d < 4; ++d)
    net.dec.push_back(add_stage(cat("d", d + 1), d == 0 ? ew[3] : dw[d - 1], dw[d]));
  net.fuse = add_conv(ps, rng, "fuse", rank, 8, 1, 1, {1, 1, 0}, 1.0 / 8.0);
  return net;
}

Phase2Outputs refine_forward(const RefineNet& net, const Var& image, const Var& d_e,
                             const Var& d_o) {
  check_net_input(net.cfg, image.shape());
  check_prob_map(d_e, image.shape(), "refine_forward: D_E");
  check_prob_map(d_o, image.shape(), "refine_forward: D_O");
  const Shape full_sp = spatial_of(image.shape());

  Var x = image;
  std::vector<Var> logits;
  auto emit = [&](const RefineNet::Stage& st, const Var& gated) {
    logits.push_back(ops::resize_linear(conv_f(st.out, gated), full_sp));
  };
  for (int s = 0; s < 4; ++s) {
    if (s > 0) x = conv_f(net.down[s - 1], x);
    x = refine_stage_f(net.enc[s], x);
    x = refine_gate_f(net.cfg, net.enc[s].gate, x, d_e, d_o);
    emit(net.enc[s], x);
  }
  x = aspp_forward(net.aspp, x);
  for (int d = 0; d < 4; ++d) {
    if (d > 0) {
      Shape up = spatial_of(x.shape());
      for (auto& e : up) e *= 2;
      x = ops::resize_linear(x, up);
    }
    x = refine_stage_f(net.dec[d], x);
    x = refine_gate_f(net.cfg, net.dec[d].gate, x, d_e, d_o);
    emit(net.dec[d], x);
  }

  Phase2Outputs out;
  Var fused_logit = conv_f(net.fuse, ops::concat_c(logits));
  for (const auto& lg : logits) out.stage_maps.push_back(ops::sigmoid(lg));
  out.fused = ops::sigmoid(fused_logit);
  return out;
}

Var aspp_forward(const Aspp& aspp, const Var& f) {
  std::vector<Var> parts;
  parts.reserve(aspp.branch.size() + 1);
  for (const auto& b : aspp.branch) parts.push_back(conv_f(b, f));
  parts.push_back(ops::tile_spatial(ops::global_avg_pool(f), spatial_of(f.shape())));
  return conv_f(aspp.proj, ops::concat_c(parts));
}

namespace {

nlohmann::json config_to_json(const NetConfig& c) {
  return {{"rank", c.rank},
          {"in_channels", c.in_channels},
          {"base_width", c.base_width},
          {"encoder_blocks", c.encoder_blocks},
          {"aspp_rates", c.aspp_rates},
          {"gn_groups", c.gn_groups},
          {"edge_stage_layers", c.edge_stage_layers},
          {"side_channels", c.side_channels},
          {"gate_enabled", c.gate_enabled}};
}

NetConfig config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.rank = j.at("rank").get<int>();
  c.in_channels = j.at("in_channels").get<int64_t>();
  c.base_width = j.at("base_width").get<int64_t>();
  c.encoder_blocks = j.at("encoder_blocks").get<std::vector<int64_t>>();
  c.aspp_rates = j.at("aspp_rates").get<std::vector<int64_t>>();
  c.gn_groups = j.at("gn_groups").get<int64_t>();
  c.edge_stage_layers = j.at("edge_stage_layers").get<std::vector<int64_t>>();
  c.side_channels = j.at("side_channels").get<int64_t>();
  c.gate_enabled = j.at("gate_enabled").get<bool>();
  return c;
}

constexpr char kCkptMagic[] = "CELCKPT1";

nlohmann::json read_ckpt_header(std::ifstream& f, const std::string& path) {
  std::string magic, header;
  check(static_cast<bool>(std::getline(f, magic)) && magic == kCkptMagic,
        cat("not a checkpoint file: ", path));
  check(static_cast<bool>(std::getline(f, header)), cat("truncated checkpoint header: ", path));
  nlohmann::json j = nlohmann::json::parse(header, nullptr, false);
  check(!j.is_discarded(), cat("bad checkpoint header: ", path));
  return j;
}

}  // namespace

void save_checkpoint(const std::string& path, const NetConfig& cfg,
                     const std::vector<std::pair<std::string, const ParamStore*>>& stores) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [prefix, ps] : stores)
    for (const auto& name : ps->names)
      params.push_back({cat(prefix, ".", name), ps->at(name).shape()});
  nlohmann::json header = {{"config", config_to_json(cfg)}, {"params", params}};

  std::ofstream f(path, std::ios::binary);
  check(f.good(), cat("cannot open for write: ", path));
  f << kCkptMagic << '\n' << header.dump() << '\n';
  for (const auto& [prefix, ps] : stores) {
    (void)prefix;
    for (const auto& name : ps->names) {
      const Tensor& t = ps->at(name).val();
      f.write(reinterpret_cast<const char*>(t.v.data()),
              static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    }
  }
  check(f.good(), cat("write failed: ", path));
}

NetConfig read_checkpoint_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), cat("cannot open checkpoint: ", path));
  return config_from_json(read_ckpt_header(f, path).at("config"));
}

void load_checkpoint_params(const std::string& path,
                            const std::vector<std::pair<std::string, ParamStore*>>& stores) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), cat("cannot open checkpoint: ", path));
  const nlohmann::json header = read_ckpt_header(f, path);

  std::vector<std::pair<std::string, Shape>> expect;
  for (const auto& [prefix, ps] : stores)
    for (const auto& name : ps->names) expect.push_back({cat(prefix, ".", name), ps->at(name).shape()});

  const auto& params = header.at("params");
  check(params.size() == expect.size(),
        cat("checkpoint lists ", params.size(), " params, expected ", expect.size(), ": ", path));
  for (size_t i = 0; i < expect.size(); ++i) {
    const std::string name = params[i][0].get<std::string>();
    const Shape shape = params[i][1].get<Shape>();
    check(name == expect[i].first,
          cat("checkpoint param ", i, " is ", name, ", expected ", expect[i].first, ": ", path));
    check(shape == expect[i].second, cat("checkpoint shape mismatch for ", name, ": ", path));
  }

  for (const auto& [prefix, ps] : stores) {
    (void)prefix;
    for (const auto& name : ps->names) {
      Tensor& t = ps->at(name).val();
      f.read(reinterpret_cast<char*>(t.v.data()),
             static_cast<std::streamsize>(t.v.size() * sizeof(float)));
      check(f.gcount() == static_cast<std::streamsize>(t.v.size() * sizeof(float)),
            cat("truncated checkpoint payload at ", name, ": ", path));
    }
  }
}

}  // namespace cel
