#include "cel/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cel/gate.hpp"
#include "cel/ops.hpp"
#include "cel/png_io.hpp"
#include "cel/rng.hpp"
#include "cel/volume_io.hpp"

namespace fs = std::filesystem;

namespace cel {

ByteTensor extract_edges(const TensorT<int32_t>& labels) {
  const Shape& sp = labels.shape;
  const int r = static_cast<int>(sp.size());
  check(r == 2 || r == 3, cat("extract_edges: want 2d or 3d labels, got ", shape_str(sp)));
  for (int64_t i = 0; i < labels.numel(); ++i)
    check(labels[i] >= 0, "extract_edges: negative label");
  ByteTensor out(sp);
  if (r == 2) {
    const int64_t H = sp[0], W = sp[1];
    auto nb = [&](int64_t y, int64_t x) -> int32_t {
      return (y < 0 || y >= H || x < 0 || x >= W) ? 0 : labels[y * W + x];
    };
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const int32_t L = labels[y * W + x];
        if (L == 0) continue;
        if (nb(y - 1, x) != L || nb(y + 1, x) != L || nb(y, x - 1) != L || nb(y, x + 1) != L)
          out[y * W + x] = 1;
      }
  } else {
    const int64_t D = sp[0], H = sp[1], W = sp[2];
    auto nb = [&](int64_t z, int64_t y, int64_t x) -> int32_t {
      return (z < 0 || z >= D || y < 0 || y >= H || x < 0 || x >= W) ? 0
                                                                     : labels[(z * H + y) * W + x];
    };
    for (int64_t z = 0; z < D; ++z)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const int32_t L = labels[(z * H + y) * W + x];
          if (L == 0) continue;
          if (nb(z - 1, y, x) != L || nb(z + 1, y, x) != L || nb(z, y - 1, x) != L ||
              nb(z, y + 1, x) != L || nb(z, y, x - 1) != L || nb(z, y, x + 1) != L)
            out[(z * H + y) * W + x] = 1;
        }
  }
  return out;
}

void validate_sample(const Sample& s) {
  const Shape& sp = s.instance_labels.shape;
  Shape want{1};
  want.insert(want.end(), sp.begin(), sp.end());
  check(s.image.shape == want, cat("sample ", s.id, ": image shape ", shape_str(s.image.shape),
                                   " vs labels ", shape_str(sp)));
  check(s.object_mask.shape == sp && s.edge_mask.shape == sp,
        cat("sample ", s.id, ": mask shape mismatch"));
  bool any_obj = false, any_edge = false;
  for (int64_t i = 0; i < s.instance_labels.numel(); ++i) {
    const bool obj = s.instance_labels[i] > 0;
    check((s.object_mask[i] != 0) == obj, cat("sample ", s.id, ": object_mask != labels>0"));
    any_obj = any_obj || obj;
    any_edge = any_edge || s.edge_mask[i] != 0;
  }
  check(check_subset(s.edge_mask, s.object_mask),
        cat("sample ", s.id, ": edge mask leaves the object mask"));
  check(!any_obj || any_edge, cat("sample ", s.id, ": objects without edges"));
  for (int64_t i = 0; i < s.image.numel(); ++i)
    check(s.image[i] >= 0.0f && s.image[i] <= 1.0f, cat("sample ", s.id, ": image outside [0,1]"));
}

namespace {

Sample finish_sample(Tensor image, TensorT<int32_t> labels, std::string id) {
  Sample s;
  s.instance_labels = std::move(labels);
  const Shape& sp = s.instance_labels.shape;
  Shape ishape{1};
  ishape.insert(ishape.end(), sp.begin(), sp.end());
  s.image = Tensor(ishape, std::move(image.v));
  s.object_mask = ByteTensor(sp);
  for (int64_t i = 0; i < s.instance_labels.numel(); ++i)
    s.object_mask[i] = s.instance_labels[i] > 0 ? 1 : 0;
  s.edge_mask = extract_edges(s.instance_labels);
  s.id = std::move(id);
  validate_sample(s);
  return s;
}

}  // namespace

std::vector<Sample> generate_synthetic(const SynthConfig& cfg, int count) {
  check(cfg.rank == 2 || cfg.rank == 3, "generate_synthetic: rank must be 2 or 3");
  check(static_cast<int>(cfg.size.size()) == cfg.rank, "generate_synthetic: size/rank mismatch");
  for (int64_t e : cfg.size)
    check(e > 0 && e % 16 == 0, cat("generate_synthetic: extent ", e, " not divisible by 16"));
  check(cfg.n_objects_min >= 0 && cfg.n_objects_max >= cfg.n_objects_min,
        "generate_synthetic: bad object count range");
  check(cfg.radius_min > 0 && cfg.radius_max >= cfg.radius_min,
        "generate_synthetic: degenerate radius range");
  check(cfg.noise_sigma >= 0, "generate_synthetic: negative noise");
  check(count >= 0, "generate_synthetic: negative count");

  const int r = cfg.rank;
  const int64_t P = numel(cfg.size);
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(Rng::mix(cfg.seed, static_cast<uint64_t>(i)));
    TensorT<int32_t> labels(cfg.size);
    Tensor image(cfg.size, 0.15f);  // flat background below the object range

    const int n_obj = static_cast<int>(rng.uniform_int(cfg.n_objects_min, cfg.n_objects_max));
    int32_t next_label = 1;
    for (int oi = 0; oi < n_obj; ++oi) {
      double c[3], rad[3];
      bool placed = false;
      for (int attempt = 0; attempt < 30 && !placed; ++attempt) {
        for (int d = 0; d < r; ++d) c[d] = rng.uniform(0.0, static_cast<double>(cfg.size[d]));
        for (int d = 0; d < r; ++d) rad[d] = rng.uniform(cfg.radius_min, cfg.radius_max);
        int64_t lo[3], hi[3];
        for (int d = 0; d < r; ++d) {
          lo[d] = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(c[d] - rad[d])));
          hi[d] = std::min<int64_t>(cfg.size[d] - 1, static_cast<int64_t>(std::floor(c[d] + rad[d])));
        }
        auto inside = [&](const int64_t* v) {
          double s = 0;
          for (int d = 0; d < r; ++d) {
            const double t = (static_cast<double>(v[d]) - c[d]) / rad[d];
            s += t * t;
          }
          return s <= 1.0;
        };
        auto flat = [&](const int64_t* v) {
          int64_t idx = v[0];
          for (int d = 1; d < r; ++d) idx = idx * cfg.size[d] + v[d];
          return idx;
        };
        auto each_voxel = [&](auto&& fn) {
          int64_t v[3] = {lo[0], r > 1 ? lo[1] : 0, r > 2 ? lo[2] : 0};
          if (r == 2) {
            for (v[0] = lo[0]; v[0] <= hi[0]; ++v[0])
              for (v[1] = lo[1]; v[1] <= hi[1]; ++v[1])
                if (inside(v) && !fn(flat(v))) return false;
          } else {
            for (v[0] = lo[0]; v[0] <= hi[0]; ++v[0])
              for (v[1] = lo[1]; v[1] <= hi[1]; ++v[1])
                for (v[2] = lo[2]; v[2] <= hi[2]; ++v[2])
                  if (inside(v) && !fn(flat(v))) return false;
          }
          return true;
        };
        bool empty_box = false;
        for (int d = 0; d < r; ++d) empty_box = empty_box || lo[d] > hi[d];
        if (empty_box) continue;
        if (!cfg.overlap_allowed) {
          const bool clash = !each_voxel([&](int64_t idx) { return labels[idx] == 0; });
          if (clash) continue;
        }
        const float intensity = static_cast<float>(rng.uniform(0.45, 0.95));
        each_voxel([&](int64_t idx) {
          labels[idx] = next_label;
          image[idx] = intensity;
          return true;
        });
        ++next_label;
        placed = true;
      }
    }
    if (cfg.noise_sigma > 0)
      for (int64_t p = 0; p < P; ++p) {
        const double v = static_cast<double>(image[p]) + rng.normal() * cfg.noise_sigma;
        image[p] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
      }
    char id[32];
    std::snprintf(id, sizeof id, "synth%04d", i);
    out.push_back(finish_sample(std::move(image), std::move(labels), id));
  }
  return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(
    const std::vector<Sample>& samples, double test_frac, uint64_t seed) {
  check(samples.size() >= 2, "split_dataset: need at least 2 samples");
  check(test_frac > 0.0 && test_frac < 1.0, "split_dataset: test_frac must be in (0,1)");
  const int64_t n = static_cast<int64_t>(samples.size());
  std::vector<int64_t> idx(samples.size());
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  int64_t n_test = std::llround(test_frac * static_cast<double>(n));
  n_test = std::min(n, std::max<int64_t>(0, n_test));
  std::vector<int64_t> test_idx(idx.begin(), idx.begin() + n_test);
  std::vector<int64_t> train_idx(idx.begin() + n_test, idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (int64_t i : train_idx) out.first.push_back(samples[static_cast<size_t>(i)]);
  for (int64_t i : test_idx) out.second.push_back(samples[static_cast<size_t>(i)]);
  return out;
}

namespace {

std::vector<std::string> sorted_entries(const fs::path& dir, bool dirs) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (dirs ? e.is_directory() : e.is_regular_file()) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

std::vector<Sample> load_nuclei_dataset(const std::string& root_dir, int64_t target_size) {
  check(fs::is_directory(root_dir), cat("load_nuclei_dataset: no such directory ", root_dir));
  check(target_size > 0 && target_size % 16 == 0,
        cat("load_nuclei_dataset: target size ", target_size, " not divisible by 16"));
  std::vector<Sample> out;
  for (const std::string& id : sorted_entries(root_dir, true)) {
    const fs::path sdir = fs::path(root_dir) / id;
    const fs::path imgdir = sdir / "images";
    const fs::path maskdir = sdir / "masks";
    if (!fs::is_directory(maskdir)) {
      std::fprintf(stderr, "warning: %s: no masks directory, skipping\n", id.c_str());
      continue;
    }
    if (!fs::is_directory(imgdir)) {
      std::fprintf(stderr, "warning: %s: no images directory, skipping\n", id.c_str());
      continue;
    }
    auto imgs = sorted_entries(imgdir, false);
    if (imgs.empty()) {
      std::fprintf(stderr, "warning: %s: empty images directory, skipping\n", id.c_str());
      continue;
    }
    try {
      PngImage pi = read_png((imgdir / imgs.front()).string());
      Tensor gray({pi.h, pi.w});
      for (int64_t p = 0; p < pi.h * pi.w; ++p) {
        int acc = 0;
        for (int ch = 0; ch < pi.channels; ++ch) acc += pi.pix[p * pi.channels + ch];
        gray[p] = static_cast<float>(acc) / (255.0f * static_cast<float>(pi.channels));
      }
      TensorT<int32_t> labels({pi.h, pi.w});
      int32_t next = 1;
      for (const std::string& mname : sorted_entries(maskdir, false)) {
        PngImage mi = read_png((maskdir / mname).string());
        if (mi.h != pi.h || mi.w != pi.w)
          fail(cat("mask ", mname, " is ", mi.h, "x", mi.w, ", image is ", pi.h, "x", pi.w));
        bool used = false;
        for (int64_t p = 0; p < mi.h * mi.w; ++p) {
          int acc = 0;
          for (int ch = 0; ch < mi.channels; ++ch) acc += mi.pix[p * mi.channels + ch];
          if (acc / mi.channels > 127) {
            labels[p] = next;  // later file wins
            used = true;
          }
        }
        if (used) ++next;
      }
      if (next == 1) {
        std::fprintf(stderr, "warning: %s: all background, skipping\n", id.c_str());
        continue;
      }
      Tensor rimg = ops::resize_linear_plain(gray, {target_size, target_size});
      for (int64_t p = 0; p < rimg.numel(); ++p)
        rimg[p] = std::min(1.0f, std::max(0.0f, rimg[p]));
      TensorT<int32_t> rlab = ops::resize_nearest_plain(labels, {target_size, target_size});
      out.push_back(finish_sample(std::move(rimg), std::move(rlab), id));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "warning: %s: %s, skipping\n", id.c_str(), e.what());
    }
  }
  check(!out.empty(), cat("load_nuclei_dataset: no usable samples under ", root_dir));
  return out;
}

void save_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  fs::create_directories(dir);
  for (const Sample& s : samples) {
    const fs::path sdir = fs::path(dir) / s.id;
    fs::create_directories(sdir);
    Tensor img(s.instance_labels.shape, s.image.v);  // drop the channel dim on disk
    write_volume((sdir / "image.vol").string(), img);
    TensorT<uint16_t> lab(s.instance_labels.shape);
    for (int64_t i = 0; i < lab.numel(); ++i) {
      check(s.instance_labels[i] <= 65535, cat("sample ", s.id, ": label exceeds u16"));
      lab[i] = static_cast<uint16_t>(s.instance_labels[i]);
    }
    write_volume((sdir / "labels.vol").string(), lab);
  }
}

std::vector<Sample> load_dataset(const std::string& dir) {
  check(fs::is_directory(dir), cat("load_dataset: no such directory ", dir));
  std::vector<Sample> out;
  for (const std::string& id : sorted_entries(dir, true)) {
    const fs::path sdir = fs::path(dir) / id;
    if (!fs::is_regular_file(sdir / "image.vol") || !fs::is_regular_file(sdir / "labels.vol"))
      fail(cat("load_dataset: ", id, " lacks image.vol/labels.vol"));
    Tensor img = read_volume_f32((sdir / "image.vol").string());
    TensorT<uint16_t> lab16 = read_volume_u16((sdir / "labels.vol").string());
    check(img.shape == lab16.shape, cat("load_dataset: ", id, ": image/label shape mismatch"));
    TensorT<int32_t> labels(lab16.shape);
    for (int64_t i = 0; i < labels.numel(); ++i) labels[i] = lab16[i];
    out.push_back(finish_sample(std::move(img), std::move(labels), id));
  }
  check(!out.empty(), cat("load_dataset: no samples under ", dir));
  return out;
}

bool detect_nuclei_layout(const std::string& dir) {
  if (!fs::is_directory(dir)) return false;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_directory()) continue;
    if (fs::is_directory(e.path() / "images") || fs::is_directory(e.path() / "masks")) return true;
    if (fs::is_regular_file(e.path() / "image.vol")) return false;
  }
  return false;
}

std::vector<Sample> load_any_dataset(const std::string& dir, int64_t nuclei_target_size) {
  return detect_nuclei_layout(dir) ? load_nuclei_dataset(dir, nuclei_target_size)
                                   : load_dataset(dir);
}

}  // namespace cel
