#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "cmdf/checkpoint.hpp"
#include "cmdf/cli.hpp"
#include "cmdf/data.hpp"
#include "cmdf/geometry.hpp"
#include "cmdf/log.hpp"
#include "cmdf/metrics.hpp"
#include "cmdf/trainer.hpp"
#include "grad_cases.hpp"
#include "test_util.hpp"

namespace cmdf {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- AC1

Outcome ac1_projection_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng = make_rng(101, 0);
  std::uniform_real_distribution<double> focal(5.0, 400.0), centre(0.0, 64.0);
  std::uniform_int_distribution<int> dim(1, 96);
  std::size_t mismatches = 0, points = 0;
  double worst_uv = 0.0;
  for (int pair = 0; pair < 1000; ++pair) {
    const PointCloud cloud = testing::random_cloud(64, rng, 20.0);
    CameraModel cam;
    cam.width = dim(rng);
    cam.height = dim(rng);
    cam.K << focal(rng), 0, centre(rng), 0, 0, focal(rng), centre(rng), 0, 0, 0, 1, 0;
    cam.T = RigidTransform::from_matrix(testing::random_rigid(rng));
    const auto proj = project_points(cloud, cam);
    const auto table = build_correspondence(cloud, cam);
    const Eigen::Matrix4d T = cam.T.matrix();
    std::size_t k = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i, ++points) {
      const double x[4] = {cloud.xyz[i].x(), cloud.xyz[i].y(), cloud.xyz[i].z(), 1.0};
      double cam_pt[4] = {0, 0, 0, 0};
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) cam_pt[r] += T(r, c) * x[c];
      }
      double h[3] = {0, 0, 0};
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) h[r] += cam.K(r, c) * cam_pt[c];
      }
      bool in = false;
      int row = 0, col = 0;
      if (h[2] > 0) {
        const double u = h[0] / h[2], v = h[1] / h[2];
        worst_uv = std::max({worst_uv, std::abs(proj[i].u - u) / std::max(1.0, std::abs(u)),
                             std::abs(proj[i].v - v) / std::max(1.0, std::abs(v))});
        col = static_cast<int>(std::floor(u));
        row = static_cast<int>(std::floor(v));
        in = col >= 0 && col < cam.width && row >= 0 && row < cam.height;
      }
      if ((table.in_fov[i] != 0) != in) {
        ++mismatches;
        continue;
      }
      if (in) {
        if (k >= table.n_overlap() || table.indices[k] != i || !(table.pixels[k] == Pixel{row, col})) ++mismatches;
        ++k;
      }
    }
    if (k != table.n_overlap()) ++mismatches;
  }
  const double secs = seconds_since(t0);
  o.check(mismatches == 0, std::to_string(mismatches) + " pixel mismatches");
  o.check(worst_uv <= 1e-12, "u,v error " + fmt("%.3g", worst_uv));
  o.check(secs < 5.0, "runtime " + fmt("%.2f", secs) + " s");
  o.detail = "1000 pairs, " + std::to_string(points) + " points, max rel u,v error " + fmt("%.2g", worst_uv) +
             " (tol 1e-12), " + fmt("%.2f", secs) + " s" + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------- AC2

Outcome ac2_gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t cases = 0;
  auto run = [&](const testing::GradCase& c, std::uint64_t seed) {
    const double e = testing::run_case(c).max_rel_error;
    ++cases;
    if (!(e < 1e-4)) o.check(false, c.name + " seed " + std::to_string(seed) + " error " + fmt("%.3g", e));
    if (!(e <= worst)) {
      worst = e;
      worst_name = c.name;
    }
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (ad::OpKind op : ad::all_op_kinds()) {
      Rng rng = make_rng(seed, 200 + static_cast<std::uint64_t>(op));
      run(testing::op_case(op, rng), seed);
    }
    Rng r1 = make_rng(seed, 301), r2 = make_rng(seed, 302), r3 = make_rng(seed, 303), r4 = make_rng(seed, 304);
    run(testing::single_fusion_case(r1), seed);
    run(testing::cmd_loss_case(r2), seed);
    run(testing::branch_loss_case(r3), seed);
    run(testing::total_loss_case(r4), seed);
  }
  const double secs = seconds_since(t0);
  o.check(secs < 60.0, "runtime " + fmt("%.2f", secs) + " s");
  o.detail = std::to_string(cases) + " cases, max rel error " + fmt("%.2g", worst) + " (" + worst_name +
             ", tol 1e-4), " + fmt("%.2f", secs) + " s" + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------- AC3

Outcome ac3_zero_identities() {
  Outcome o;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SceneGenConfig g;
    g.seed = 300 + seed;
    const Scene s = generate_dataset(g, 1)[0];
    TrainConfig c;
    c.seed = seed;
    ModelState st = ModelState::init(c);
    const PointFeaturePyramid z2d = point_branch_forward(s.cloud, st.knowledge);
    const PointFeaturePyramid z3d = point_branch_forward(s.cloud, st.lidar);
    BfbParams zero = BfbParams::zeros(c.width, c.classes);
    const FusedFeatures f = bfb_forward(z2d, z3d, zero, {});
    o.check(f.z2d.data() == concat_scales(z2d).data(), "z2d differs from raw concatenation");
    o.check(f.z3d.data() == concat_scales(z3d).data(), "z3d differs from raw concatenation");
    zero.g2d = st.bfb.g2d;
    zero.g3d = st.bfb.g3d;
    st.bfb = zero;
    const auto fused = predict(s.cloud, st);
    const auto baseline = argmax_rows(classify(concat_scales(z3d), st.bfb.g3d).data());
    st.use_2to3 = false;
    o.check(fused == baseline, "predict differs from 3D-only argmax");
    o.check(fused == predict(s.cloud, st), "predict differs from predict without fusion");
    checked += s.cloud.size();
  }
  o.detail = "5 scenes, " + std::to_string(checked) + " points, bit-exact" + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------- AC4

Outcome ac4_cmd_generalization() {
  Outcome o;
  const auto t0 = Clock::now();
  SceneGenConfig g;
  g.seed = 1;
  g.fov_fraction = 0.5;
  const DatasetSplit split = split_dataset(generate_dataset(g, 16));
  std::vector<Scene> oracles;
  for (std::size_t i = 0; i < split.val.size(); ++i) oracles.push_back(oracle_view(split.val[i], g.classes, 0.0, 900 + i));
  std::vector<double> drops;
  std::string table = "\n  seed | init | trained | drop";
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig c;
    c.seed = seed;
    const ModelState init = ModelState::init(c);
    const ModelState trained = train(split.train, c).state;
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < split.val.size(); ++i) {
      before += out_of_view_distance(split.val[i], oracles[i], init);
      after += out_of_view_distance(split.val[i], oracles[i], trained);
    }
    drops.push_back(1.0 - after / before);
    table += "\n  " + std::to_string(seed) + " | " + fmt("%.4f", before / split.val.size()) + " | " +
             fmt("%.4f", after / split.val.size()) + " | " + fmt("%.3f", drops.back());
  }
  const double med = median(drops);
  const double secs = seconds_since(t0);
  o.check(med >= 0.30, "median drop below 0.30");
  o.check(secs < 600.0, "runtime " + fmt("%.1f", secs) + " s");
  o.detail = "median out-of-view distance drop " + fmt("%.3f", med) + " (need >= 0.30) on held-out scenes, " +
             fmt("%.1f", secs) + " s" + (o.detail.empty() ? "" : "; " + o.detail) + table;
  return o;
}

// ---------------------------------------------------------------- AC5

Outcome ac5_ablation_trend() {
  Outcome o;
  const auto t0 = Clock::now();
  const DatasetSplit split = split_dataset(generate_dataset(SceneGenConfig{}, 16));
  const auto rows = run_ablation(split, AblationConfig{});
  const double secs = seconds_since(t0);
  for (std::size_t r = 1; r < 4; ++r) {
    const double step = rows[r].median - rows[r - 1].median;
    o.check(step >= 0.005, rows[r].name + " step " + fmt("%+.4f", step) + " < 0.005");
  }
  o.check(rows[4].median >= rows[3].median, "+TTA below +CMD");
  o.check(secs < 1800.0, "runtime " + fmt("%.1f", secs) + " s");
  std::string table;
  for (const auto& row : rows) table += "\n  " + row.name + " " + fmt("%.4f", row.median);
  o.detail = "5 seeds, " + fmt("%.1f", secs) + " s" + (o.detail.empty() ? "" : "; " + o.detail) + "\n" +
             format_ablation_markdown(rows);
  while (!o.detail.empty() && o.detail.back() == '\n') o.detail.pop_back();
  return o;
}

// ---------------------------------------------------------------- AC6

Outcome ac6_tta(const fs::path& dir) {
  Outcome o;
  std::ostringstream sink;
  const std::string data = (dir / "tta_data").string(), ckpt = (dir / "tta.bin").string();
  o.check(cli::run({"gen", "--out", data, "--scenes", "2", "--seed", "6"}, sink, sink) == 0, "gen failed");
  o.check(cli::run({"train", "--data", data, "--out", ckpt, "--epochs", "2"}, sink, sink) == 0, "train failed");
  std::ostringstream plain, once, err;
  cli::run({"eval", "--data", data, "--ckpt", ckpt}, plain, err);
  cli::run({"eval", "--data", data, "--ckpt", ckpt, "--tta", "1"}, once, err);
  o.check(!plain.str().empty() && plain.str() == once.str(), "--tta 1 output differs from plain eval");

  const ModelState st = load_model(ckpt);
  const auto scenes = load_dataset(data);
  double worst = 0.0;
  for (const auto& s : scenes) {
    for (std::size_t k : {2u, 5u, 12u}) {
      Tensor want(s.cloud.size(), st.classes);
      for (std::size_t j = 0; j < k; ++j) {
        const PointCloud r = rotate_cloud_z(s.cloud, 2 * std::numbers::pi * static_cast<double>(j) / k);
        const Tensor sc = inference_scores(r, st);
        for (std::size_t i = 0; i < want.size(); ++i) want[i] += sc[i];
      }
      const Tensor got = tta_scores(s.cloud, st, k);
      for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i] / k));
    }
  }
  o.check(worst <= 1e-12, "oracle error " + fmt("%.3g", worst));
  o.detail = "--tta 1 byte-identical; mean-of-scores oracle max error " + fmt("%.2g", worst) + " (tol 1e-12)" +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------- AC7

Outcome ac7_metrics() {
  Outcome o;
  const std::uint64_t worked[] = {1, 1, 0, 2};
  const auto cm = ConfusionMatrix::from_counts(2, worked);
  o.check(std::abs(*cm.iou(0) - 0.5) <= 1e-12, "IoU0");
  o.check(std::abs(*cm.iou(1) - 2.0 / 3.0) <= 1e-12, "IoU1");
  o.check(std::abs(miou(cm) - 7.0 / 12.0) <= 1e-12, "mIoU");
  o.check(std::abs(fwiou(cm) - 7.0 / 12.0) <= 1e-12, "fwIoU");
  ConfusionMatrix constant(2);
  const std::vector<std::uint32_t> zeros(10, 0), balanced{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  constant.accumulate(zeros, balanced);
  o.check(std::abs(miou(constant) - 0.25) <= 1e-12, "constant predictor mIoU");
  const std::uint64_t single[] = {3, 1, 0, 0};
  const auto one = ConfusionMatrix::from_counts(2, single);
  o.check(std::abs(fwiou(one) - *one.iou(0)) <= 1e-12, "single-class fwIoU");
  ConfusionMatrix perfect(4);
  const std::vector<std::uint32_t> y{0, 1, 2, 3, 3, 2, 1};
  perfect.accumulate(y, y);
  o.check(miou(perfect) == 1.0 && fwiou(perfect) == 1.0, "perfect predictions not exactly 1.0");
  o.detail = "worked matrices to 1e-12, perfect = 1.0 exactly" + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------- AC8

Outcome ac8_determinism(const fs::path& dir) {
  Outcome o;
  std::ostringstream sink;
  const std::string data = (dir / "det_data").string();
  o.check(cli::run({"gen", "--out", data, "--scenes", "3", "--seed", "8"}, sink, sink) == 0, "gen failed");
  for (const char* run : {"a", "b"}) {
    const std::string out = (dir / (std::string(run) + ".bin")).string();
    o.check(cli::run({"train", "--data", data, "--out", out, "--epochs", "3", "--seed", "5"}, sink, sink) == 0,
            "train failed");
  }
  o.check(slurp(dir / "a.bin.csv") == slurp(dir / "b.bin.csv"), "training logs differ");
  o.check(slurp(dir / "a.bin") == slurp(dir / "b.bin"), "checkpoints differ");

  const ModelState a = load_model(dir / "a.bin");
  save_model(a, dir / "a2.bin");
  o.check(slurp(dir / "a.bin") == slurp(dir / "a2.bin"), "checkpoint re-save not byte-exact");
  const ModelState back = load_model(dir / "a2.bin");
  const auto scenes = load_dataset(data);
  for (const auto& s : scenes) {
    o.check(inference_logits(s.cloud, a) == inference_logits(s.cloud, back), "logits differ after round trip");
    o.check(tta_predict(s.cloud, a, 12) == tta_predict(s.cloud, back, 12), "TTA predictions differ after round trip");
  }

  save_dataset(scenes, dir / "det_copy");
  for (const auto& s : scenes) {
    for (const char* f : {"points.bin", "labels.bin", "image.ppm", "calib.txt"}) {
      o.check(slurp(fs::path(data) / s.id / f) == slurp(dir / "det_copy" / s.id / f),
              s.id + "/" + f + " not byte-exact");
    }
  }
  o.check(slurp(fs::path(data) / "manifest.txt") == slurp(dir / "det_copy" / "manifest.txt"), "manifest differs");
  o.detail = "logs, checkpoints, predictions and scene files byte-exact" + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------- AC9

Outcome ac9_overfit() {
  Outcome o;
  const auto t0 = Clock::now();
  SceneGenConfig g;
  g.seed = 9;
  const std::vector<Scene> one = generate_dataset(g, 1);
  // fitting means training on the very scene that is scored, so no augmentation
  TrainConfig c;
  c.epochs = 500;
  c.augment.rotate = false;
  c.augment.scale_min = c.augment.scale_max = 1.0;
  c.augment.flip_prob = 0.0;
  const TrainResult r = train(one, c);
  const double score = miou(evaluate(one, r.state));
  const double secs = seconds_since(t0);
  TrainConfig augmented;
  augmented.epochs = 500;
  const double with_aug = miou(evaluate(one, train(one, augmented).state));
  o.check(r.log.size() == 500, "expected 500 steps");
  o.check(score > 0.9, "training mIoU not above 0.9");
  o.check(secs < 120.0, "runtime " + fmt("%.1f", secs) + " s");
  o.detail = "1 scene, " + std::to_string(r.log.size()) + " steps, training mIoU " + fmt("%.4f", score) +
             " (need > 0.9), " + fmt("%.1f", secs) + " s; with default augmentation " + fmt("%.4f", with_aug) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

}  // namespace
}  // namespace cmdf

int main() {
  using namespace cmdf;
  set_warning_sink([](const std::string&) {});
  const fs::path dir = testing::temp_dir("acceptance");
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, ac1_projection_oracle},
      {2, ac2_gradients},
      {3, ac3_zero_identities},
      {4, ac4_cmd_generalization},
      {5, ac5_ablation_trend},
      {6, [&] { return ac6_tta(dir); }},
      {7, ac7_metrics},
      {8, [&] { return ac8_determinism(dir); }},
      {9, ac9_overfit},
  };
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("AC%d %s %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
