#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cel/tensor.hpp"

namespace cel {

// One training example. Masks live at label resolution; image carries a
// leading channel dim for the networks.
struct Sample {
  Tensor image;                      // [1, *spatial], values in [0,1]
  TensorT<int32_t> instance_labels;  // [*spatial], 0 = background
  ByteTensor object_mask;            // [*spatial], {0,1}
  ByteTensor edge_mask;              // [*spatial], {0,1}
  std::string id;
};

struct SynthConfig {
  int rank = 2;
  Shape size{64, 64};  // {32,32,32} is the 3d default used by the cli
  int n_objects_min = 3;
  int n_objects_max = 12;
  double radius_min = 4.0;
  double radius_max = 12.0;
  bool overlap_allowed = true;
  double noise_sigma = 0.05;
  uint64_t seed = 1;
};

// A voxel is edge iff its label is positive and some face-connected neighbor
// (out-of-bounds reads as background) carries a different label.
ByteTensor extract_edges(const TensorT<int32_t>& labels);

// Enforces the Sample contract: object mask == labels>0, edges inside the
// object mask, nonempty edges whenever objects exist, image in [0,1].
void validate_sample(const Sample& s);

std::vector<Sample> generate_synthetic(const SynthConfig& cfg, int count);

std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(
    const std::vector<Sample>& samples, double test_frac, uint64_t seed);

// Kaggle 2018 Data Science Bowl layout: root/<id>/images/*.png plus
// root/<id>/masks/*.png (one binary mask per instance).
std::vector<Sample> load_nuclei_dataset(const std::string& root_dir, int64_t target_size = 256);

// Volume-file dataset: dir/<id>/image.vol (f32) + dir/<id>/labels.vol (u16).
void save_dataset(const std::string& dir, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& dir);

// True when the directory looks like the nuclei layout rather than volumes.
bool detect_nuclei_layout(const std::string& dir);

// Dispatches on detect_nuclei_layout.
std::vector<Sample> load_any_dataset(const std::string& dir, int64_t nuclei_target_size = 256);

}  // namespace cel
