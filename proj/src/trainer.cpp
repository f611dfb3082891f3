#include "cmdf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <set>

#include "cmdf/distillation.hpp"
#include "cmdf/errors.hpp"

namespace cmdf {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("TrainConfig: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("TrainConfig: momentum must be in [0, 1)");
  if (tta_angles < 1) throw ValidationError("TrainConfig: tta_angles must be >= 1");
  if (width < 1 || hidden < 1) throw ValidationError("TrainConfig: feature widths must be >= 1");
  if (!(coord_scale > 0.0) || !std::isfinite(coord_scale)) throw ValidationError("TrainConfig: coord_scale must be > 0");
  if (classes < 1) throw ValidationError("TrainConfig: need at least one class");
  if (fusion_depth < 1) throw ValidationError("TrainConfig: fusion MLP depth must be >= 1");
  if (!(augment.scale_min > 0.0 && augment.scale_min <= augment.scale_max)) {
    throw ValidationError("TrainConfig: augmentation scale range must satisfy 0 < min <= max");
  }
  if (!(augment.flip_prob >= 0.0 && augment.flip_prob <= 1.0)) {
    throw ValidationError("TrainConfig: flip probability must be in [0, 1]");
  }
}

// ------------------------------------------------------------ model state

namespace {

PointEncoderConfig encoder_config(const TrainConfig& cfg) {
  PointEncoderConfig e;
  e.width = cfg.width;
  e.hidden = cfg.hidden;
  e.activation = cfg.activation;
  e.coord_scale = cfg.coord_scale;
  return e;
}

}  // namespace

ModelState ModelState::init(const TrainConfig& cfg) {
  cfg.validate();
  ModelState s;
  Rng knowledge_rng = make_rng(cfg.seed, stream::kKnowledgeBranch);
  Rng lidar_rng = make_rng(cfg.seed, stream::kLidarBranch);
  Rng fusion_rng = make_rng(cfg.seed, stream::kFusion);
  s.knowledge = PointEncoderParams::init(encoder_config(cfg), knowledge_rng);
  s.lidar = PointEncoderParams::init(encoder_config(cfg), lidar_rng);
  s.bfb = BfbParams::init(cfg.width, cfg.classes, cfg.fusion_depth, cfg.gate, cfg.activation, fusion_rng);
  s.teacher_seed = cfg.seed;
  s.width = cfg.width;
  s.hidden = cfg.hidden;
  s.coord_scale = cfg.coord_scale;
  s.classes = cfg.classes;
  s.fusion_depth = cfg.fusion_depth;
  s.gate = cfg.gate;
  s.activation = cfg.activation;
  s.use_2to3 = cfg.use_2to3;
  return s;
}

ParamList ModelState::params() const {
  ParamList out;
  knowledge.collect("knowledge", out);
  lidar.collect("lidar", out);
  bfb.collect("bfb", out);
  return out;
}

namespace {

Tensor scalar_tensor(double v) { return Tensor(1, 1, v); }

Tensor u64_tensor(std::uint64_t v) {
  return Tensor(1, 2, std::vector<double>{static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffu)});
}

std::uint64_t tensor_u64(const Tensor& t, const std::string& name) {
  if (t.rows() != 1 || t.cols() != 2) throw FormatError("checkpoint: " + name + " must be 1x2");
  const double hi = t[0];
  const double lo = t[1];
  if (hi < 0 || lo < 0 || hi > 4294967295.0 || lo > 4294967295.0 || hi != std::floor(hi) || lo != std::floor(lo)) {
    throw FormatError("checkpoint: " + name + " is not a 64-bit integer");
  }
  return (static_cast<std::uint64_t>(hi) << 32) | static_cast<std::uint64_t>(lo);
}

}  // namespace

NamedTensors to_checkpoint(const ModelState& state) {
  NamedTensors out;
  out.emplace_back("meta/width", scalar_tensor(static_cast<double>(state.width)));
  out.emplace_back("meta/hidden", scalar_tensor(static_cast<double>(state.hidden)));
  out.emplace_back("meta/coord_scale", scalar_tensor(state.coord_scale));
  out.emplace_back("meta/classes", scalar_tensor(static_cast<double>(state.classes)));
  out.emplace_back("meta/fusion_depth", scalar_tensor(static_cast<double>(state.fusion_depth)));
  out.emplace_back("meta/gate", scalar_tensor(state.gate == GateMode::channel ? 0.0 : 1.0));
  out.emplace_back("meta/activation", scalar_tensor(state.activation == Activation::relu ? 0.0 : 1.0));
  out.emplace_back("meta/use_2to3", scalar_tensor(state.use_2to3 ? 1.0 : 0.0));
  out.emplace_back("meta/teacher_seed", u64_tensor(state.teacher_seed));
  out.emplace_back("meta/step", u64_tensor(state.step));
  for (const auto& p : state.params()) out.emplace_back("param/" + p.name, p.value.data());
  for (const auto& [name, buf] : state.momentum) out.emplace_back("momentum/" + name, buf);
  return out;
}

ModelState from_checkpoint(const NamedTensors& entries) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : entries) {
    if (!by_name.emplace(name, &t).second) throw FormatError("checkpoint: duplicate entry '" + name + "'");
  }
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing entry '" + name + "'");
    return *it->second;
  };
  auto count = [&](const std::string& name) -> std::size_t {
    const Tensor& t = get(name);
    if (t.size() != 1 || !(t[0] >= 0.0) || t[0] != std::floor(t[0]) || t[0] > 1e9) {
      throw FormatError("checkpoint: '" + name + "' is not a count");
    }
    return static_cast<std::size_t>(t[0]);
  };
  auto flag = [&](const std::string& name) {
    const std::size_t v = count(name);
    if (v > 1) throw FormatError("checkpoint: '" + name + "' must be 0 or 1");
    return v == 1;
  };

  TrainConfig cfg;
  cfg.width = count("meta/width");
  cfg.hidden = count("meta/hidden");
  cfg.classes = count("meta/classes");
  cfg.coord_scale = get("meta/coord_scale").size() == 1 ? get("meta/coord_scale")[0] : 0.0;
  cfg.fusion_depth = count("meta/fusion_depth");
  cfg.gate = flag("meta/gate") ? GateMode::scalar : GateMode::channel;
  cfg.activation = flag("meta/activation") ? Activation::leaky_relu : Activation::relu;
  cfg.use_2to3 = flag("meta/use_2to3");
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint: bad architecture: ") + e.what());
  }
  ModelState s = ModelState::init(cfg);
  s.teacher_seed = tensor_u64(get("meta/teacher_seed"), "meta/teacher_seed");
  s.step = tensor_u64(get("meta/step"), "meta/step");

  std::set<std::string> expected;
  for (const auto& p : s.params()) {
    const std::string key = "param/" + p.name;
    expected.insert(key);
    const Tensor& t = get(key);
    ad::Value leaf = p.value;
    if (!t.same_shape(leaf.data())) {
      throw FormatError("checkpoint: '" + key + "' has shape " + t.shape_string() + ", expected " +
                        leaf.data().shape_string());
    }
    leaf.mutable_data() = t;
  }
  for (const auto& [name, t] : entries) {
    if (name.rfind("meta/", 0) == 0 || expected.count(name)) continue;
    if (name.rfind("momentum/", 0) == 0) {
      const std::string pname = name.substr(9);
      if (!expected.count("param/" + pname)) throw FormatError("checkpoint: momentum for unknown '" + pname + "'");
      if (!t.same_shape(get("param/" + pname))) throw FormatError("checkpoint: '" + name + "' mis-shaped");
      s.momentum[pname] = t;
      continue;
    }
    throw FormatError("checkpoint: unexpected entry '" + name + "'");
  }
  return s;
}

ModelState clone_state(const ModelState& state) { return from_checkpoint(to_checkpoint(state)); }

void save_model(const ModelState& state, const std::filesystem::path& path) {
  save_checkpoint(path, to_checkpoint(state));
}

ModelState load_model(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

// ----------------------------------------------------------- augmentation

Sample make_sample(const Scene& scene) { return {scene, build_correspondence(scene.cloud, scene.cam)}; }

PointCloud rotate_cloud_z(const PointCloud& cloud, double angle) {
  PointCloud out = cloud;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (auto& p : out.xyz) p = Eigen::Vector3d(c * p.x() - s * p.y(), s * p.x() + c * p.y(), p.z());
  return out;
}

AugmentParams sample_augment(const AugmentRanges& ranges, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentParams a;
  a.scale = ranges.scale_min + (ranges.scale_max - ranges.scale_min) * unit(rng);
  a.angle = ranges.rotate ? 2 * std::numbers::pi * unit(rng) : 0.0;
  a.flip = unit(rng) < ranges.flip_prob;
  return a;
}

Sample apply_augment(const Sample& sample, const AugmentParams& params) {
  Sample out = sample;
  if (params.angle != 0.0) out.scene.cloud = rotate_cloud_z(out.scene.cloud, params.angle);
  if (params.scale != 1.0) {
    for (auto& p : out.scene.cloud.xyz) p *= params.scale;
  }
  if (params.flip) {
    Image& img = out.scene.image;
    for (int r = 0; r < img.height; ++r) {
      for (int c = 0; c < img.width / 2; ++c) {
        for (int ch = 0; ch < 3; ++ch) std::swap(img.at(r, c, ch), img.at(r, img.width - 1 - c, ch));
      }
    }
    for (auto& px : out.corr.pixels) px.col = out.corr.width - 1 - px.col;
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentRanges& ranges, Rng& rng) {
  return apply_augment(sample, sample_augment(ranges, rng));
}

// ----------------------------------------------------------------- losses

LossTerms compute_losses(const Sample& sample, const ModelState& state, const TrainConfig& cfg,
                         const CameraBranch& teacher) {
  const Scene& scene = sample.scene;
  scene.validate(state.classes);
  const ad::Value zero = ad::constant(Tensor(1, 1, 0.0));
  LossTerms t{zero, zero, zero, zero};

  const PointFeaturePyramid z3d = point_branch_forward(scene.cloud, state.lidar);
  const bool need_2d = cfg.use_cmd || cfg.use_2to3 || cfg.use_3to2;
  if (!need_2d) {
    t.l3d = branch_loss(classify(concat_scales(z3d), state.bfb.g3d), scene.labels);
    t.total = t.l3d;
    return t;
  }
  const PointFeaturePyramid z2d = point_branch_forward(scene.cloud, state.knowledge);
  const FusedFeatures fused = bfb_forward(z2d, z3d, state.bfb, {cfg.use_2to3, cfg.use_3to2});
  t.l3d = branch_loss(classify(fused.z3d, state.bfb.g3d), scene.labels);
  t.total = t.l3d;
  if (cfg.use_3to2) {
    t.l2d = branch_loss(classify(fused.z2d, state.bfb.g2d), scene.labels);
    t.total = ad::add(t.total, t.l2d);
  }
  if (cfg.use_cmd) {
    const TeacherFeatures tf = gather_camera_features(camera_forward(scene.image, teacher), sample.corr);
    t.cmd = cmd_loss(make_cmd_batch(z2d, sample.corr, tf), cfg.cmd_squared);
    t.total = ad::add(t.cmd, t.total);
  }
  return t;
}

ad::Value total_loss(const Scene& scene, const ModelState& state, const TrainConfig& cfg) {
  return compute_losses(make_sample(scene), state, cfg, state.teacher()).total;
}

// -------------------------------------------------------------- inference

Tensor inference_logits(const PointCloud& cloud, const ModelState& state) {
  const PointFeaturePyramid z3d = point_branch_forward(cloud, state.lidar);
  std::optional<PointFeaturePyramid> z2d;
  if (state.use_2to3) z2d = point_branch_forward(cloud, state.knowledge);
  return classify(fuse_lidar_only(z2d, z3d, state.bfb, state.use_2to3), state.bfb.g3d).data();
}

namespace {

Tensor softmax_rows(const Tensor& logits) {
  Tensor out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) sum += (out(r, c) = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < in.size(); ++c) out(r, c) /= sum;
  }
  return out;
}

}  // namespace

Tensor inference_scores(const PointCloud& cloud, const ModelState& state) {
  return softmax_rows(inference_logits(cloud, state));
}

std::vector<std::uint32_t> argmax_rows(const Tensor& table) {
  std::vector<std::uint32_t> out(table.rows(), 0);
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const auto row = table.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = static_cast<std::uint32_t>(best);
  }
  return out;
}

std::vector<std::uint32_t> predict(const PointCloud& cloud, const ModelState& state) {
  return argmax_rows(inference_logits(cloud, state));
}

Tensor tta_scores(const PointCloud& cloud, const ModelState& state, std::size_t k) {
  if (k < 1) throw ValidationError("tta: need at least one rotation");
  Tensor sum;
  for (std::size_t j = 0; j < k; ++j) {
    const double angle = 2 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(k);
    const Tensor s = inference_scores(j == 0 ? cloud : rotate_cloud_z(cloud, angle), state);
    if (j == 0) {
      sum = s;
    } else {
      for (std::size_t i = 0; i < s.size(); ++i) sum[i] += s[i];
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= static_cast<double>(k);
  return sum;
}

std::vector<std::uint32_t> tta_predict(const PointCloud& cloud, const ModelState& state, std::size_t k) {
  if (k == 1) return predict(cloud, state);
  return argmax_rows(tta_scores(cloud, state, k));
}

// --------------------------------------------------------------- training

double scheduled_lr(const TrainConfig& cfg, std::uint64_t step, std::uint64_t total_steps) {
  if (cfg.schedule == LrSchedule::constant || total_steps == 0) return cfg.lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::string format_train_log_csv(const std::vector<LogRow>& rows) {
  std::string out = "epoch,step,loss_cmd,loss_2d,loss_3d,loss_total\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%zu,%llu,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                  static_cast<unsigned long long>(r.step), r.loss_cmd, r.loss_2d, r.loss_3d, r.loss_total);
    out += line;
  }
  return out;
}

TrainResult train(const std::vector<Scene>& dataset, const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  if (dataset.empty()) throw ValidationError("train: empty dataset");
  TrainResult result{ModelState::init(cfg), {}};
  ModelState& state = result.state;
  if (cfg.epochs == 0) return result;

  std::vector<Sample> samples;
  samples.reserve(dataset.size());
  for (const auto& s : dataset) {
    s.validate(cfg.classes);
    samples.push_back(make_sample(s));
  }
  const CameraBranch teacher = state.teacher();
  const ParamList params = state.params();
  SgdOptions opt{cfg.lr, cfg.momentum};
  const std::uint64_t total_steps = cfg.epochs * samples.size();
  Rng shuffle_rng = make_rng(cfg.seed, stream::kShuffle);
  Rng augment_rng = make_rng(cfg.seed, stream::kAugment);
  std::vector<std::size_t> order(samples.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t idx : order) {
      const Sample sample = augment(samples[idx], cfg.augment, augment_rng);
      const LossTerms t = compute_losses(sample, state, cfg, teacher);
      LogRow row{epoch, state.step, t.cmd.item(), t.l2d.item(), t.l3d.item(), t.total.item()};
      if (!std::isfinite(row.loss_total)) {
        throw NumericError("train: non-finite loss at step " + std::to_string(state.step), state.step);
      }
      ad::backward(t.total);
      opt.lr = scheduled_lr(cfg, state.step, total_steps);
      try {
        sgd_step(params, state.momentum, opt);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(state.step), state.step);
      }
      ++state.step;
      if (on_step) on_step(row);
      result.log.push_back(row);
    }
  }
  return result;
}

ConfusionMatrix evaluate(const std::vector<Scene>& scenes, const ModelState& state, std::size_t tta) {
  ConfusionMatrix cm(state.classes);
  for (const auto& s : scenes) {
    s.validate(state.classes);
    const auto pred = tta <= 1 ? predict(s.cloud, state) : tta_predict(s.cloud, state, tta);
    cm.accumulate(pred, s.labels);
  }
  return cm;
}

DatasetSplit split_dataset(const std::vector<Scene>& scenes) {
  DatasetSplit split;
  if (scenes.size() <= 1) {
    split.train = scenes;
    split.val = scenes;
    return split;
  }
  const std::size_t n_train = (3 * scenes.size() + 3) / 4;
  const std::size_t cut = std::min(n_train, scenes.size() - 1);
  split.train.assign(scenes.begin(), scenes.begin() + static_cast<std::ptrdiff_t>(cut));
  split.val.assign(scenes.begin() + static_cast<std::ptrdiff_t>(cut), scenes.end());
  return split;
}

// ------------------------------------------------------------- CMD probe

Scene oracle_view(const Scene& scene, std::size_t classes, double color_noise, std::uint64_t seed) {
  Rng rng = make_rng(seed, stream::kScene);
  Scene out = scene;
  out.cam = fit_camera(scene.cloud, 1.0, scene.cam.width, scene.cam.height, rng);
  out.image = render_image(scene.cloud, scene.labels, out.cam, classes, color_noise, rng);
  return out;
}

double out_of_view_distance(const Scene& scene, const Scene& oracle, const ModelState& state, std::size_t* points) {
  const CorrespondenceTable own = build_correspondence(scene.cloud, scene.cam);
  const CorrespondenceTable wide = build_correspondence(oracle.cloud, oracle.cam);
  if (wide.n_overlap() != wide.n_points()) throw ValidationError("out_of_view_distance: oracle must see every point");
  const TeacherFeatures teacher = gather_camera_features(camera_forward(oracle.image, state.teacher()), wide);
  const PointFeaturePyramid student = point_branch_forward(scene.cloud, state.knowledge);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < own.n_points(); ++i) {
    if (own.in_fov[i]) continue;
    ++used;
    for (std::size_t s = 0; s < kNumScales; ++s) {
      const auto a = student[s].data().row(i);
      const auto b = teacher[s].row(i);
      double sq = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
      total += std::sqrt(sq);
    }
  }
  if (points) *points = used;
  return used == 0 ? 0.0 : total / static_cast<double>(used);
}

// --------------------------------------------------------------- ablation

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<AblationRow> run_ablation(const DatasetSplit& split, const AblationConfig& cfg) {
  if (cfg.seeds < 1) throw ValidationError("ablation: need at least one seed");
  struct Toggle {
    const char* name;
    bool cmd, d2to3, d3to2;
  };
  const Toggle toggles[] = {{"baseline", false, false, false},
                            {"+3D-to-2D", false, false, true},
                            {"+bidirectional", false, true, true},
                            {"+CMD", true, true, true}};
  std::vector<AblationRow> rows;
  for (const auto& t : toggles) rows.push_back({t.name, {}, 0.0});
  rows.push_back({"+TTA", {}, 0.0});
  for (std::size_t j = 0; j < cfg.seeds; ++j) {
    for (std::size_t r = 0; r < 4; ++r) {
      TrainConfig c = cfg.base;
      c.seed = cfg.base.seed + j;
      c.use_cmd = toggles[r].cmd;
      c.use_2to3 = toggles[r].d2to3;
      c.use_3to2 = toggles[r].d3to2;
      const ModelState state = train(split.train, c).state;
      rows[r].per_seed.push_back(miou(evaluate(split.val, state)));
      if (r == 3) rows[4].per_seed.push_back(miou(evaluate(split.val, state, cfg.base.tta_angles)));
    }
  }
  for (auto& row : rows) row.median = median(row.per_seed);
  return rows;
}

std::string format_ablation_markdown(const std::vector<AblationRow>& rows) {
  std::string out = "| config | median mIoU |";
  const std::size_t seeds = rows.empty() ? 0 : rows.front().per_seed.size();
  for (std::size_t j = 0; j < seeds; ++j) out += " seed " + std::to_string(j) + " |";
  out += "\n|---|---|";
  for (std::size_t j = 0; j < seeds; ++j) out += "---|";
  out += "\n";
  char buf[32];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%.4f", row.median);
    out += "| " + row.name + " | " + buf + " |";
    for (double v : row.per_seed) {
      std::snprintf(buf, sizeof(buf), " %.4f |", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace cmdf
