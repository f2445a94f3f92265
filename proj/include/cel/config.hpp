#pragma once

#include <string>
#include <vector>

#include "cel/data.hpp"
#include "cel/metrics.hpp"
#include "cel/net.hpp"
#include "cel/train.hpp"

namespace cel {

// One run, one file. Keys are full paths ("train.learning_rate = 0.001"),
// unknown or duplicate keys are errors. The `seed` key feeds both data
// generation and training; `rank` keeps the data and the nets in agreement.
struct RunConfig {
  SynthConfig synth;
  NetConfig net;
  TrainConfig train;
  EvalConfig eval;
  std::vector<double> sweep_d = kDefaultSweepD;

  std::string data_dir;  // empty: use the synthetic set under out.dir
  int64_t n_train = 200;
  int64_t n_test = 50;
  double test_frac = 0.2;  // split used for datasets loaded from data.dir
  int64_t nuclei_target_size = 256;
  std::string out_dir = "out";

  void validate() const;
};

RunConfig parse_run_config(const std::string& text);

// parse_run_config on the file contents, then CEL_SEED from the environment.
RunConfig load_run_config(const std::string& path);

void apply_env_overrides(RunConfig& cfg);

// Every key with its documentation and default value; parses back to RunConfig{}.
std::string default_run_config();

std::vector<std::string> run_config_keys();

}  // namespace cel
