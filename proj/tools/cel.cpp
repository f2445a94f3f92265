// Batch front end: generate | train | eval | predict. Every artifact lands
// under out.dir (or the explicit --out), and re-running a command with the
// same inputs rewrites identical bytes.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "cel/config.hpp"
#include "cel/png_io.hpp"
#include "cel/volume_io.hpp"

namespace fs = std::filesystem;
using namespace cel;

namespace {

RunConfig cli_config(const std::string& path) {
  if (!path.empty()) return load_run_config(path);
  RunConfig cfg;
  apply_env_overrides(cfg);
  return cfg;
}

std::string dataset_root(const RunConfig& cfg) {
  return (fs::path(cfg.out_dir) / "dataset").string();
}

// train/test pair, either split off data.dir or read from the generated set.
std::pair<std::vector<Sample>, std::vector<Sample>> load_split(const RunConfig& cfg) {
  if (!cfg.data_dir.empty()) {
    auto all = load_any_dataset(cfg.data_dir, cfg.nuclei_target_size);
    return split_dataset(all, cfg.test_frac, cfg.train.seed);
  }
  const fs::path root = dataset_root(cfg);
  if (!fs::exists(root / "train"))
    throw std::runtime_error("missing dataset: " + (root / "train").string() +
                             " (run `cel generate` first)");
  std::vector<Sample> test;
  if (fs::exists(root / "test")) test = load_dataset((root / "test").string());
  return {load_dataset((root / "train").string()), std::move(test)};
}

void cmd_generate(const std::string& config_path, std::string out_dir) {
  RunConfig cfg = cli_config(config_path);
  if (out_dir.empty()) out_dir = dataset_root(cfg);

  auto all = generate_synthetic(cfg.synth, static_cast<int>(cfg.n_train + cfg.n_test));
  std::vector<Sample> train(all.begin(), all.begin() + cfg.n_train);
  std::vector<Sample> test(all.begin() + cfg.n_train, all.end());
  save_dataset((fs::path(out_dir) / "train").string(), train);
  if (!test.empty()) save_dataset((fs::path(out_dir) / "test").string(), test);

  nlohmann::json manifest;
  manifest["seed"] = cfg.synth.seed;
  manifest["rank"] = cfg.synth.rank;
  manifest["size"] = cfg.synth.size;
  auto ids = [](const std::vector<Sample>& ss) {
    std::vector<std::string> out;
    for (const auto& s : ss) out.push_back(s.id);
    return out;
  };
  manifest["train_ids"] = ids(train);
  manifest["test_ids"] = ids(test);
  std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot write manifest under " + out_dir);
  mf << manifest.dump(2) << "\n";

  std::printf("wrote %zu train + %zu test samples under %s\n", train.size(), test.size(),
              out_dir.c_str());
}

void cmd_train(const std::string& config_path, const std::string& phase, bool no_gate) {
  RunConfig cfg = cli_config(config_path);
  if (no_gate) {
    cfg.net.gate_enabled = false;
    cfg.train.gate_enabled = false;
  }
  auto [train, test] = load_split(cfg);
  fs::create_directories(cfg.out_dir);

  std::optional<Phase1Artifacts> p1;
  if (phase == "1" || phase == "both") {
    std::vector<TrainLogRow> log;
    p1 = train_phase1(train, test, cfg.train, cfg.net, &log);
    save_phase1(cfg.out_dir, *p1);
    write_train_log((fs::path(cfg.out_dir) / "train_log_phase1.csv").string(), log);
    std::printf("phase 1 done: %zu steps, checkpoint %s/phase1.ckpt\n", log.size(),
                cfg.out_dir.c_str());
  }
  if (phase == "2" || phase == "both") {
    if (!p1) p1 = load_phase1(cfg.out_dir);
    std::vector<TrainLogRow> log;
    Phase2Artifacts p2 = train_phase2(train, *p1, cfg.train, &log);
    save_phase2(cfg.out_dir, p2);
    write_train_log((fs::path(cfg.out_dir) / "train_log_phase2.csv").string(), log);
    std::printf("phase 2 done: %zu steps, checkpoint %s/phase2.ckpt\n", log.size(),
                cfg.out_dir.c_str());
  }
}

// Minimal raster plotting: white canvas, 3x5 glyphs, Bresenham lines.
struct Canvas {
  int64_t w, h;
  std::vector<uint8_t> pix;
  Canvas(int64_t w_, int64_t h_) : w(w_), h(h_), pix(static_cast<size_t>(w * h * 3), 255) {}

  void set(int64_t x, int64_t y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    size_t p = static_cast<size_t>((y * w + x) * 3);
    pix[p] = r;
    pix[p + 1] = g;
    pix[p + 2] = b;
  }

  void line(int64_t x0, int64_t y0, int64_t x1, int64_t y1, uint8_t r, uint8_t g, uint8_t b) {
    int64_t dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    int64_t dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int64_t err = dx + dy;
    while (true) {
      set(x0, y0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      int64_t e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void dot(int64_t x, int64_t y, uint8_t r, uint8_t g, uint8_t b) {
    for (int64_t dy = -1; dy <= 1; ++dy)
      for (int64_t dx = -1; dx <= 1; ++dx) set(x + dx, y + dy, r, g, b);
  }

  // 3x5 glyphs, rows msb-first in 3-bit strips.
  static const uint8_t* glyph(char c) {
    static const uint8_t font[][5] = {
        {0b111, 0b101, 0b101, 0b101, 0b111},  // 0
        {0b010, 0b110, 0b010, 0b010, 0b111},  // 1
        {0b111, 0b001, 0b111, 0b100, 0b111},  // 2
        {0b111, 0b001, 0b111, 0b001, 0b111},  // 3
        {0b101, 0b101, 0b111, 0b001, 0b001},  // 4
        {0b111, 0b100, 0b111, 0b001, 0b111},  // 5
        {0b111, 0b100, 0b111, 0b101, 0b111},  // 6
        {0b111, 0b001, 0b001, 0b010, 0b010},  // 7
        {0b111, 0b101, 0b111, 0b101, 0b111},  // 8
        {0b111, 0b101, 0b111, 0b001, 0b111},  // 9
        {0b000, 0b000, 0b000, 0b000, 0b010},  // .
        {0b110, 0b101, 0b101, 0b101, 0b110},  // D
        {0b111, 0b010, 0b010, 0b010, 0b111},  // I
    };
    if (c >= '0' && c <= '9') return font[c - '0'];
    if (c == '.') return font[10];
    if (c == 'O') return font[0];
    if (c == 'D') return font[11];
    if (c == 'I') return font[12];
    if (c == 'S') return font[5];
    return nullptr;
  }

  void text(const std::string& s, int64_t x, int64_t y, int64_t scale, uint8_t r, uint8_t g,
            uint8_t b) {
    for (char c : s) {
      const uint8_t* gl = glyph(c);
      if (gl) {
        for (int row = 0; row < 5; ++row)
          for (int col = 0; col < 3; ++col)
            if (gl[row] & (0b100 >> col))
              for (int64_t sy = 0; sy < scale; ++sy)
                for (int64_t sx = 0; sx < scale; ++sx)
                  set(x + col * scale + sx, y + row * scale + sy, r, g, b);
      }
      x += 4 * scale;
    }
  }
};

std::string fmt_d(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void render_sweep_plot(const std::string& path, const std::vector<SweepRow>& rows) {
  const int64_t W = 640, H = 440, L = 70, R = 600, T = 30, B = 380;
  Canvas cv(W, H);
  // frame and horizontal grid at 0.2 steps of F
  for (int i = 0; i <= 5; ++i) {
    int64_t y = B - (B - T) * i / 5;
    cv.line(L, y, R, y, 225, 225, 225);
    char lab[8];
    std::snprintf(lab, sizeof lab, "%.1f", 0.2 * i);
    cv.text(lab, L - 30, y - 5, 2, 60, 60, 60);
  }
  cv.line(L, T, L, B, 0, 0, 0);
  cv.line(L, B, R, B, 0, 0, 0);

  const int64_t n = static_cast<int64_t>(rows.size());
  auto px = [&](int64_t i) { return n == 1 ? (L + R) / 2 : L + (R - L) * i / (n - 1); };
  auto py = [&](double f) { return B - static_cast<int64_t>((B - T) * f + 0.5); };
  for (int64_t i = 0; i < n; ++i) {
    cv.line(px(i), B, px(i), B + 5, 0, 0, 0);
    const std::string lab = fmt_d(rows[static_cast<size_t>(i)].d);
    cv.text(lab, px(i) - 4 * static_cast<int64_t>(lab.size()), B + 12, 2, 60, 60, 60);
  }
  cv.text("D", (L + R) / 2, B + 35, 2, 0, 0, 0);

  for (int64_t i = 0; i + 1 < n; ++i) {
    cv.line(px(i), py(rows[static_cast<size_t>(i)].ods_f), px(i + 1),
            py(rows[static_cast<size_t>(i + 1)].ods_f), 220, 50, 47);
    cv.line(px(i), py(rows[static_cast<size_t>(i)].ois_f), px(i + 1),
            py(rows[static_cast<size_t>(i + 1)].ois_f), 38, 139, 210);
  }
  for (int64_t i = 0; i < n; ++i) {
    cv.dot(px(i), py(rows[static_cast<size_t>(i)].ods_f), 220, 50, 47);
    cv.dot(px(i), py(rows[static_cast<size_t>(i)].ois_f), 38, 139, 210);
  }
  cv.line(R - 90, T + 10, R - 60, T + 10, 220, 50, 47);
  cv.text("ODS", R - 50, T + 5, 2, 0, 0, 0);
  cv.line(R - 90, T + 30, R - 60, T + 30, 38, 139, 210);
  cv.text("OIS", R - 50, T + 25, 2, 0, 0, 0);

  write_png_rgb(path, H, W, cv.pix);
}

void cmd_eval(const std::string& config_path, const std::string& ckpt_dir, bool sweep) {
  RunConfig cfg = cli_config(config_path);
  const std::string dir = ckpt_dir.empty() ? cfg.out_dir : ckpt_dir;
  Phase1Artifacts p1 = load_phase1(dir);
  Phase2Artifacts p2 = load_phase2(dir);
  auto [train, test] = load_split(cfg);
  (void)train;

  auto rows = evaluate_run(p1, p2, test, cfg.eval, sweep ? cfg.sweep_d : std::vector<double>{});
  fs::create_directories(cfg.out_dir);
  const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  write_report_csv(metrics_path, rows);
  std::printf("wrote %s (%zu rows)\n", metrics_path.c_str(), rows.size());

  if (sweep) {
    // The sweep rows sit at the tail: one ods + one ois row per d.
    std::vector<SweepRow> curve;
    const size_t tail = rows.size() - 2 * cfg.sweep_d.size();
    for (size_t i = 0; i < cfg.sweep_d.size(); ++i) {
      const ReportRow& o = rows[tail + 2 * i];
      const ReportRow& s = rows[tail + 2 * i + 1];
      curve.push_back({o.d, o.prf.f, s.prf.f});
    }
    const std::string curve_path = (fs::path(cfg.out_dir) / "sweep.csv").string();
    std::ofstream f(curve_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + curve_path);
    f << "d,ods_f,ois_f\n";
    for (const auto& r : curve) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n", r.d, r.ods_f, r.ois_f);
      f << buf;
    }
    const std::string plot_path = (fs::path(cfg.out_dir) / "sweep.png").string();
    render_sweep_plot(plot_path, curve);
    std::printf("wrote %s and %s\n", curve_path.c_str(), plot_path.c_str());
  }
}

Tensor read_input_image(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".png") {
    PngImage pi = read_png(path);
    Tensor img({1, pi.h, pi.w});
    for (int64_t p = 0; p < pi.h * pi.w; ++p) {
      int acc = 0;
      for (int ch = 0; ch < pi.channels; ++ch) acc += pi.pix[p * pi.channels + ch];
      img[p] = static_cast<float>(acc) / (255.0f * static_cast<float>(pi.channels));
    }
    return img;
  }
  VolumeInfo vi = read_volume_info(path);
  Tensor vol;
  switch (vi.dtype) {
    case VolDType::f32:
      vol = read_volume_f32(path);
      break;
    case VolDType::u8: {
      ByteTensor b = read_volume_u8(path);
      vol = Tensor(b.shape);
      for (int64_t i = 0; i < b.numel(); ++i) vol[i] = static_cast<float>(b[i]) / 255.0f;
      break;
    }
    case VolDType::u16: {
      TensorT<uint16_t> u = read_volume_u16(path);
      vol = Tensor(u.shape);
      for (int64_t i = 0; i < u.numel(); ++i) vol[i] = static_cast<float>(u[i]) / 65535.0f;
      break;
    }
  }
  Shape with_c{1};
  with_c.insert(with_c.end(), vol.shape.begin(), vol.shape.end());
  Tensor img(with_c);
  img.v = vol.v;
  return img;
}

std::string overlay_path_for(const std::string& out) {
  fs::path p(out);
  fs::path dir = p.parent_path();
  std::string stem = p.stem().string();
  std::string ext = p.extension().string();
  if (ext.empty()) ext = ".png";
  return (dir / (stem + "_overlay" + ext)).string();
}

void cmd_predict(const std::string& config_path, const std::string& ckpt_dir,
                 const std::string& input, const std::string& out) {
  RunConfig cfg = cli_config(config_path);
  const std::string dir = ckpt_dir.empty() ? cfg.out_dir : ckpt_dir;
  Phase1Artifacts p1 = load_phase1(dir);
  Phase2Artifacts p2 = load_phase2(dir);

  Tensor image = read_input_image(input);
  ByteTensor mask = predict(p1, p2, image);
  if (!out.empty() && fs::path(out).has_parent_path())
    fs::create_directories(fs::path(out).parent_path());

  if (mask.shape.size() == 2) {
    ByteTensor vis(mask.shape);
    for (int64_t i = 0; i < mask.numel(); ++i) vis[i] = mask[i] ? 255 : 0;
    write_png_gray(out, vis);

    const int64_t hw = mask.numel();
    std::vector<uint8_t> rgb(static_cast<size_t>(hw * 3));
    for (int64_t i = 0; i < hw; ++i) {
      uint8_t g = static_cast<uint8_t>(std::min(255.0f, std::max(0.0f, image[i] * 255.0f)));
      if (mask[i]) {
        rgb[static_cast<size_t>(3 * i)] = 255;
        rgb[static_cast<size_t>(3 * i + 1)] = 0;
        rgb[static_cast<size_t>(3 * i + 2)] = 0;
      } else {
        rgb[static_cast<size_t>(3 * i)] = g;
        rgb[static_cast<size_t>(3 * i + 1)] = g;
        rgb[static_cast<size_t>(3 * i + 2)] = g;
      }
    }
    const std::string ov = overlay_path_for(out);
    write_png_rgb(ov, mask.shape[0], mask.shape[1], rgb);
    std::printf("wrote %s and %s\n", out.c_str(), ov.c_str());
  } else {
    write_volume(out, mask);
    std::printf("wrote %s\n", out.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crisp edge detection pipeline"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "write the synthetic dataset and its manifest");
  std::string gen_config, gen_out;
  gen->add_option("--config", gen_config, "run config file (defaults apply when absent)");
  gen->add_option("--out", gen_out, "dataset directory, default <out.dir>/dataset");

  auto* train = app.add_subcommand("train", "train phase 1 and/or phase 2");
  std::string train_config, phase = "both";
  bool no_gate = false;
  train->add_option("--config", train_config, "run config file");
  train->add_option("--phase", phase, "1, 2, or both")
      ->check(CLI::IsMember({"1", "2", "both"}));
  train->add_flag("--no-gate", no_gate, "replace the logical gates with plain convolutions");

  auto* ev = app.add_subcommand("eval", "write the metrics report for trained checkpoints");
  std::string eval_config, eval_ckpt;
  bool sweep = false;
  ev->add_option("--config", eval_config, "run config file");
  ev->add_option("--checkpoints", eval_ckpt, "artifact directory, default out.dir");
  ev->add_flag("--sweep", sweep, "also write the crispness sweep csv and plot");

  auto* pred = app.add_subcommand("predict", "run the full pipeline on one image or volume");
  std::string pred_config, pred_ckpt, pred_in, pred_out;
  pred->add_option("--config", pred_config, "run config file");
  pred->add_option("--checkpoints", pred_ckpt, "artifact directory, default out.dir");
  pred->add_option("--input", pred_in, "png image or volume file")->required();
  pred->add_option("--out", pred_out, "output path (png for 2d, volume for 3d)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) cmd_generate(gen_config, gen_out);
    if (train->parsed()) cmd_train(train_config, phase, no_gate);
    if (ev->parsed()) cmd_eval(eval_config, eval_ckpt, sweep);
    if (pred->parsed()) cmd_predict(pred_config, pred_ckpt, pred_in, pred_out);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
