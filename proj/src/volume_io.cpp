#include "cel/volume_io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

namespace cel {

namespace {

const char* dtype_name(VolDType d) {
  switch (d) {
    case VolDType::u8: return "u8";
    case VolDType::u16: return "u16";
    default: return "f32";
  }
}

size_t dtype_size(VolDType d) { return d == VolDType::u8 ? 1 : d == VolDType::u16 ? 2 : 4; }

void write_raw(const std::string& path, const Shape& shape, VolDType dtype, const void* data,
               size_t bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(cat("cannot write ", path));
  std::string hdr = "{\"shape\":[";
  for (size_t i = 0; i < shape.size(); ++i) hdr += cat(i ? "," : "", shape[i]);
  hdr += cat("],\"dtype\":\"", dtype_name(dtype), "\"}\n");
  f.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) fail(cat("short write to ", path));
}

struct Opened {
  std::ifstream f;
  VolumeInfo info;
};

Opened open_volume(const std::string& path) {
  Opened o;
  o.f.open(path, std::ios::binary);
  if (!o.f) fail(cat("cannot read ", path));
  std::string line;
  if (!std::getline(o.f, line)) fail(cat("missing header in ", path));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    fail(cat("bad volume header in ", path, ": ", e.what()));
  }
  if (!j.contains("shape") || !j.contains("dtype")) fail(cat("bad volume header in ", path));
  for (const auto& d : j["shape"]) {
    int64_t e = d.get<int64_t>();
    if (e <= 0) fail(cat("non-positive extent in ", path));
    o.info.shape.push_back(e);
  }
  const std::string dt = j["dtype"].get<std::string>();
  if (dt == "u8")
    o.info.dtype = VolDType::u8;
  else if (dt == "u16")
    o.info.dtype = VolDType::u16;
  else if (dt == "f32")
    o.info.dtype = VolDType::f32;
  else
    fail(cat("unsupported dtype '", dt, "' in ", path));
  return o;
}

void read_payload(Opened& o, const std::string& path, void* dst, size_t bytes) {
  o.f.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
  if (static_cast<size_t>(o.f.gcount()) != bytes) fail(cat("truncated volume ", path));
}

}  // namespace

VolumeInfo read_volume_info(const std::string& path) { return open_volume(path).info; }

void write_volume(const std::string& path, const ByteTensor& t) {
  write_raw(path, t.shape, VolDType::u8, t.data(), static_cast<size_t>(t.numel()));
}

void write_volume(const std::string& path, const TensorT<uint16_t>& t) {
  write_raw(path, t.shape, VolDType::u16, t.data(), static_cast<size_t>(t.numel()) * 2);
}

void write_volume(const std::string& path, const Tensor& t) {
  write_raw(path, t.shape, VolDType::f32, t.data(), static_cast<size_t>(t.numel()) * 4);
}

namespace {

template <class T>
TensorT<T> read_typed(const std::string& path, VolDType want) {
  Opened o = open_volume(path);
  if (o.info.dtype != want)
    fail(cat(path, " holds dtype ", dtype_name(o.info.dtype), ", expected ", dtype_name(want)));
  TensorT<T> t(o.info.shape);
  read_payload(o, path, t.data(), static_cast<size_t>(t.numel()) * dtype_size(want));
  return t;
}

}  // namespace

ByteTensor read_volume_u8(const std::string& path) {
  return read_typed<uint8_t>(path, VolDType::u8);
}

TensorT<uint16_t> read_volume_u16(const std::string& path) {
  return read_typed<uint16_t>(path, VolDType::u16);
}

Tensor read_volume_f32(const std::string& path) { return read_typed<float>(path, VolDType::f32); }

}  // namespace cel
