#include "cel/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cel {
namespace {

[[noreturn]] void cfg_fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    cfg_fail("config key '" + key + "': expected integer, got '" + v + "'");
  return out;
}

double parse_f64(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    cfg_fail("config key '" + key + "': expected number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  cfg_fail("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> parts;
  if (trim(v).empty()) return parts;
  size_t pos = 0;
  while (true) {
    size_t c = v.find(',', pos);
    if (c == std::string::npos) {
      parts.push_back(trim(v.substr(pos)));
      break;
    }
    parts.push_back(trim(v.substr(pos, c - pos)));
    pos = c + 1;
  }
  return parts;
}

std::vector<int64_t> parse_i64_list(const std::string& key, const std::string& v) {
  std::vector<int64_t> out;
  for (const auto& p : split_commas(v)) out.push_back(parse_i64(key, p));
  return out;
}

std::vector<double> parse_f64_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& p : split_commas(v)) out.push_back(parse_f64(key, p));
  return out;
}

std::string fmt_i64(int64_t v) { return std::to_string(v); }

std::string fmt_f64(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  double back = 0;
  std::from_chars(buf, buf + std::strlen(buf), back);
  if (back == v) return buf;
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F fmt) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += fmt(xs[i]);
  }
  return out;
}

struct ParseCtx {
  RunConfig& cfg;
  bool size_set = false;
};

struct KeySpec {
  const char* name;
  const char* doc;
  std::function<void(ParseCtx&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

void set_thresholds(EvalConfig& ec, int64_t n) {
  if (n < 1 || n > 100000) cfg_fail("config key 'eval.n_thresholds': need 1..100000");
  ec.thresholds.clear();
  for (int64_t i = 1; i <= n; ++i)
    ec.thresholds.push_back(static_cast<double>(i) / static_cast<double>(n + 1));
}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"seed", "rng seed for data generation and training; CEL_SEED overrides",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.seed = static_cast<uint64_t>(parse_i64("seed", v));
         c.cfg.synth.seed = c.cfg.train.seed;
       },
       [](const RunConfig& c) { return fmt_i64(static_cast<int64_t>(c.train.seed)); }},
      {"rank", "spatial rank, 2 or 3; rank 3 defaults synth.size to 32,32,32",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.net.rank = static_cast<int>(parse_i64("rank", v));
         c.cfg.synth.rank = c.cfg.net.rank;
       },
       [](const RunConfig& c) { return fmt_i64(c.net.rank); }},
      {"data.dir", "dataset directory (volume or nuclei layout); empty = synthetic under out.dir",
       [](ParseCtx& c, const std::string& v) { c.cfg.data_dir = v; },
       [](const RunConfig& c) { return c.data_dir; }},
      {"data.n_train", "synthetic training samples to generate",
       [](ParseCtx& c, const std::string& v) { c.cfg.n_train = parse_i64("data.n_train", v); },
       [](const RunConfig& c) { return fmt_i64(c.n_train); }},
      {"data.n_test", "synthetic held-out samples to generate",
       [](ParseCtx& c, const std::string& v) { c.cfg.n_test = parse_i64("data.n_test", v); },
       [](const RunConfig& c) { return fmt_i64(c.n_test); }},
      {"data.test_frac", "held-out fraction when loading data.dir",
       [](ParseCtx& c, const std::string& v) { c.cfg.test_frac = parse_f64("data.test_frac", v); },
       [](const RunConfig& c) { return fmt_f64(c.test_frac); }},
      {"data.nuclei_target_size", "square size nuclei images are resized to",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.nuclei_target_size = parse_i64("data.nuclei_target_size", v);
       },
       [](const RunConfig& c) { return fmt_i64(c.nuclei_target_size); }},
      {"synth.size", "comma list of extents, one per rank",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.synth.size = parse_i64_list("synth.size", v);
         c.size_set = true;
       },
       [](const RunConfig& c) { return join(c.synth.size, fmt_i64); }},
      {"synth.n_objects_min", "fewest objects per sample",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.synth.n_objects_min = static_cast<int>(parse_i64("synth.n_objects_min", v));
       },
       [](const RunConfig& c) { return fmt_i64(c.synth.n_objects_min); }},
      {"synth.n_objects_max", "most objects per sample",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.synth.n_objects_max = static_cast<int>(parse_i64("synth.n_objects_max", v));
       },
       [](const RunConfig& c) { return fmt_i64(c.synth.n_objects_max); }},
      {"synth.radius_min", "smallest object radius in pixels",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.synth.radius_min = parse_f64("synth.radius_min", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.synth.radius_min); }},
      {"synth.radius_max", "largest object radius in pixels",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.synth.radius_max = parse_f64("synth.radius_max", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.synth.radius_max); }},
      {"synth.overlap_allowed", "objects may overlap; later labels win",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.synth.overlap_allowed = parse_bool("synth.overlap_allowed", v);
       },
       [](const RunConfig& c) { return fmt_bool(c.synth.overlap_allowed); }},
      {"synth.noise_sigma", "gaussian image noise level",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.synth.noise_sigma = parse_f64("synth.noise_sigma", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.synth.noise_sigma); }},
      {"net.in_channels", "image channels fed to the nets",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.net.in_channels = parse_i64("net.in_channels", v);
       },
       [](const RunConfig& c) { return fmt_i64(c.net.in_channels); }},
      {"net.base_width", "channel width at full resolution",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.net.base_width = parse_i64("net.base_width", v);
       },
       [](const RunConfig& c) { return fmt_i64(c.net.base_width); }},
      {"net.gn_groups", "group-norm groups; must divide net.base_width",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.net.gn_groups = parse_i64("net.gn_groups", v);
       },
       [](const RunConfig& c) { return fmt_i64(c.net.gn_groups); }},
      {"net.side_channels", "width of the side-output projections",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.net.side_channels = parse_i64("net.side_channels", v);
       },
       [](const RunConfig& c) { return fmt_i64(c.net.side_channels); }},
      {"net.encoder_blocks", "residual blocks per object-net stage, 4 entries",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.net.encoder_blocks = parse_i64_list("net.encoder_blocks", v);
       },
       [](const RunConfig& c) { return join(c.net.encoder_blocks, fmt_i64); }},
      {"net.aspp_rates", "dilation rates of the context module",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.net.aspp_rates = parse_i64_list("net.aspp_rates", v);
       },
       [](const RunConfig& c) { return join(c.net.aspp_rates, fmt_i64); }},
      {"net.edge_stage_layers", "convs per edge-net stage, 5 entries summing to 16",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.net.edge_stage_layers = parse_i64_list("net.edge_stage_layers", v);
       },
       [](const RunConfig& c) { return join(c.net.edge_stage_layers, fmt_i64); }},
      {"net.gate_enabled", "wire the logical gates; false swaps in plain convs",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.net.gate_enabled = parse_bool("net.gate_enabled", v);
         c.cfg.train.gate_enabled = c.cfg.net.gate_enabled;
       },
       [](const RunConfig& c) { return fmt_bool(c.net.gate_enabled); }},
      {"train.epochs_phase1", "coarse-phase epochs",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.epochs_phase1 = parse_i64("train.epochs_phase1", v);
       },
       [](const RunConfig& c) { return fmt_i64(c.train.epochs_phase1); }},
      {"train.epochs_phase2", "refinement-phase epochs",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.epochs_phase2 = parse_i64("train.epochs_phase2", v);
       },
       [](const RunConfig& c) { return fmt_i64(c.train.epochs_phase2); }},
      {"train.batch_size", "samples per optimizer step",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.batch_size = parse_i64("train.batch_size", v);
       },
       [](const RunConfig& c) { return fmt_i64(c.train.batch_size); }},
      {"train.learning_rate", "optimizer step size",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.learning_rate = parse_f64("train.learning_rate", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.train.learning_rate); }},
      {"train.adam_beta1", "first-moment decay",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.adam_beta1 = parse_f64("train.adam_beta1", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.train.adam_beta1); }},
      {"train.adam_beta2", "second-moment decay",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.adam_beta2 = parse_f64("train.adam_beta2", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.train.adam_beta2); }},
      {"train.adam_eps", "denominator floor",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.adam_eps = parse_f64("train.adam_eps", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.train.adam_eps); }},
      {"train.flip_augment", "random axis flips during training",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.flip_augment = parse_bool("train.flip_augment", v);
       },
       [](const RunConfig& c) { return fmt_bool(c.train.flip_augment); }},
      {"loss1.alpha", "per-output weights for the 6 coarse maps; empty = all 1",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.loss_phase1.alpha_k = parse_f64_list("loss1.alpha", v);
       },
       [](const RunConfig& c) { return join(c.train.loss_phase1.alpha_k, fmt_f64); }},
      {"loss1.focal_gamma", "focusing exponent, coarse phase",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.loss_phase1.focal_gamma = parse_f64("loss1.focal_gamma", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.train.loss_phase1.focal_gamma); }},
      {"loss1.focal_alpha_pos", "positive-class weight, coarse phase",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.loss_phase1.focal_alpha_pos = parse_f64("loss1.focal_alpha_pos", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.train.loss_phase1.focal_alpha_pos); }},
      {"loss1.epsilon", "log clamp, coarse phase",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.loss_phase1.epsilon = parse_f64("loss1.epsilon", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.train.loss_phase1.epsilon); }},
      {"loss2.alpha", "per-output weights for the 9 refined maps; empty = all 1",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.loss_phase2.alpha_k = parse_f64_list("loss2.alpha", v);
       },
       [](const RunConfig& c) { return join(c.train.loss_phase2.alpha_k, fmt_f64); }},
      {"loss2.focal_gamma", "focusing exponent, refinement phase",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.loss_phase2.focal_gamma = parse_f64("loss2.focal_gamma", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.train.loss_phase2.focal_gamma); }},
      {"loss2.focal_alpha_pos", "positive-class weight, refinement phase",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.loss_phase2.focal_alpha_pos = parse_f64("loss2.focal_alpha_pos", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.train.loss_phase2.focal_alpha_pos); }},
      {"loss2.epsilon", "log clamp, refinement phase",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.train.loss_phase2.epsilon = parse_f64("loss2.epsilon", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.train.loss_phase2.epsilon); }},
      {"eval.d", "match radius as a fraction of the image diagonal",
       [](ParseCtx& c, const std::string& v) { c.cfg.eval.d = parse_f64("eval.d", v); },
       [](const RunConfig& c) { return fmt_f64(c.eval.d); }},
      {"eval.n_thresholds", "size of the uniform threshold grid",
       [](ParseCtx& c, const std::string& v) {
         set_thresholds(c.cfg.eval, parse_i64("eval.n_thresholds", v));
       },
       [](const RunConfig& c) { return fmt_i64(static_cast<int64_t>(c.eval.thresholds.size())); }},
      {"eval.hd_empty", "Hausdorff value when one mask is empty; negative = image diagonal",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.eval.hd_empty_value = parse_f64("eval.hd_empty", v);
       },
       [](const RunConfig& c) { return fmt_f64(c.eval.hd_empty_value); }},
      {"eval.sweep_d", "descending tolerance list for the crispness sweep",
       [](ParseCtx& c, const std::string& v) {
         c.cfg.sweep_d = parse_f64_list("eval.sweep_d", v);
       },
       [](const RunConfig& c) { return join(c.sweep_d, fmt_f64); }},
      {"out.dir", "directory all artifacts are written under",
       [](ParseCtx& c, const std::string& v) { c.cfg.out_dir = v; },
       [](const RunConfig& c) { return c.out_dir; }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  net.validate();
  train.validate();
  eval.validate();
  if (synth.rank != net.rank) cfg_fail("config: rank mismatch between synth and net");
  if (synth.size.size() != static_cast<size_t>(synth.rank))
    cfg_fail("config: synth.size needs one extent per rank");
  for (int64_t e : synth.size)
    if (e < 1) cfg_fail("config: synth.size extents must be positive");
  if (synth.n_objects_min < 0 || synth.n_objects_max < synth.n_objects_min)
    cfg_fail("config: need 0 <= synth.n_objects_min <= synth.n_objects_max");
  if (!(synth.radius_min > 0) || synth.radius_max < synth.radius_min)
    cfg_fail("config: need 0 < synth.radius_min <= synth.radius_max");
  if (synth.noise_sigma < 0) cfg_fail("config: synth.noise_sigma must be >= 0");
  if (n_train < 1) cfg_fail("config: data.n_train must be >= 1");
  if (n_test < 0) cfg_fail("config: data.n_test must be >= 0");
  if (!(test_frac >= 0 && test_frac < 1)) cfg_fail("config: data.test_frac must be in [0,1)");
  if (nuclei_target_size < 16) cfg_fail("config: data.nuclei_target_size must be >= 16");
  if (out_dir.empty()) cfg_fail("config: out.dir must not be empty");
}

RunConfig parse_run_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      cfg_fail("config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) cfg_fail("config line " + std::to_string(lineno) + ": empty key");
    bool known = false;
    for (const auto& ks : key_table()) known = known || key == ks.name;
    if (!known) cfg_fail("unknown config key '" + key + "'");
    if (kv.count(key)) cfg_fail("duplicate config key '" + key + "'");
    kv.emplace(std::move(key), std::move(value));
  }

  RunConfig cfg;
  ParseCtx ctx{cfg};
  // Table order, not file order, so interacting keys (rank before synth.size)
  // resolve the same way regardless of how the file is arranged.
  for (const auto& ks : key_table()) {
    auto it = kv.find(ks.name);
    if (it != kv.end()) ks.set(ctx, it->second);
  }
  if (!ctx.size_set && cfg.synth.rank == 3) cfg.synth.size = {32, 32, 32};
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) cfg_fail("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  RunConfig cfg = parse_run_config(text);
  apply_env_overrides(cfg);
  return cfg;
}

void apply_env_overrides(RunConfig& cfg) {
  const char* s = std::getenv("CEL_SEED");
  if (!s) return;
  std::string v(s);
  cfg.train.seed = static_cast<uint64_t>(parse_i64("CEL_SEED", v));
  cfg.synth.seed = cfg.train.seed;
}

std::string default_run_config() {
  const RunConfig cfg;
  std::string out;
  for (const auto& ks : key_table()) {
    out += "# ";
    out += ks.doc;
    out += "\n";
    out += ks.name;
    out += " = ";
    out += ks.get(cfg);
    out += "\n\n";
  }
  out.pop_back();
  return out;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& ks : key_table()) keys.push_back(ks.name);
  return keys;
}

}  // namespace cel
