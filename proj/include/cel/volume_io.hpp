#pragma once

#include <string>

#include "cel/tensor.hpp"

// Volume interchange: one JSON header line {"shape":[...],"dtype":"u8|u16|f32"}
// followed by packed little-endian data, row-major, W fastest.

namespace cel {

enum class VolDType { u8, u16, f32 };

struct VolumeInfo {
  Shape shape;
  VolDType dtype;
};

VolumeInfo read_volume_info(const std::string& path);

void write_volume(const std::string& path, const ByteTensor& t);
void write_volume(const std::string& path, const TensorT<uint16_t>& t);
void write_volume(const std::string& path, const Tensor& t);

ByteTensor read_volume_u8(const std::string& path);
TensorT<uint16_t> read_volume_u16(const std::string& path);
Tensor read_volume_f32(const std::string& path);

}  // namespace cel
