#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cmdf/backbones.hpp"
#include "cmdf/checkpoint.hpp"
#include "cmdf/data.hpp"
#include "cmdf/fusion.hpp"
#include "cmdf/metrics.hpp"
#include "cmdf/optim.hpp"

namespace cmdf {

struct AugmentRanges {
  double scale_min = 0.95;
  double scale_max = 1.05;
  bool rotate = true;       // uniform Z rotation in [0, 2pi)
  double flip_prob = 0.5;   // joint image / correspondence flip
};

enum class LrSchedule {
  constant,
  cosine,  // lr * (1 + cos(pi * step / total_steps)) / 2
};

struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 0.02;
  double momentum = 0.9;
  LrSchedule schedule = LrSchedule::cosine;
  std::uint64_t seed = 0;
  std::size_t width = 16;  // feature width d
  std::size_t hidden = 32;
  double coord_scale = 0.1;
  std::size_t classes = 4;
  std::size_t fusion_depth = 1;
  GateMode gate = GateMode::channel;
  Activation activation = Activation::leaky_relu;
  AugmentRanges augment;
  bool use_cmd = true;
  bool use_2to3 = true;
  bool use_3to2 = true;
  bool cmd_squared = false;
  std::size_t tta_angles = 12;

  void validate() const;
};

/// Everything a checkpoint carries.
struct ModelState {
  PointEncoderParams knowledge;  // 2D knowledge branch (CMD student)
  PointEncoderParams lidar;      // 3D LIDAR branch
  BfbParams bfb;
  std::uint64_t teacher_seed = 0;
  std::size_t width = 0;
  std::size_t hidden = 0;
  double coord_scale = 0.1;
  std::size_t classes = 0;
  std::size_t fusion_depth = 1;
  GateMode gate = GateMode::channel;
  Activation activation = Activation::relu;
  bool use_2to3 = true;  // inference applies 2D-to-3D fusion only when set
  MomentumBuffers momentum;
  std::uint64_t step = 0;

  static ModelState init(const TrainConfig& cfg);
  ParamList params() const;
  CameraBranch teacher() const { return CameraBranch(teacher_seed, width); }
};

/// Deep copy: parameters of the copy are new leaves.
ModelState clone_state(const ModelState& state);

NamedTensors to_checkpoint(const ModelState& state);
/// Throws FormatError when entries are missing, unexpected or mis-shaped.
ModelState from_checkpoint(const NamedTensors& entries);
void save_model(const ModelState& state, const std::filesystem::path& path);
ModelState load_model(const std::filesystem::path& path);

/// A scene plus the correspondence computed before augmentation. After a
/// rotation or scaling the calibration no longer describes the cloud, so
/// the table travels with it.
struct Sample {
  Scene scene;
  CorrespondenceTable corr;
};

Sample make_sample(const Scene& scene);

struct AugmentParams {
  double scale = 1.0;
  double angle = 0.0;
  bool flip = false;
};

AugmentParams sample_augment(const AugmentRanges& ranges, Rng& rng);
/// Scales and rotates the cloud about Z; a flip mirrors the image
/// horizontally and remaps every correspondence column to W - 1 - col.
Sample apply_augment(const Sample& sample, const AugmentParams& params);
Sample augment(const Sample& sample, const AugmentRanges& ranges, Rng& rng);

PointCloud rotate_cloud_z(const PointCloud& cloud, double angle);

/// The loss terms of one scene. Disabled terms are constant zero.
struct LossTerms {
  ad::Value cmd;
  ad::Value l2d;
  ad::Value l3d;
  ad::Value total;
};

LossTerms compute_losses(const Sample& sample, const ModelState& state, const TrainConfig& cfg,
                         const CameraBranch& teacher);
ad::Value total_loss(const Scene& scene, const ModelState& state, const TrainConfig& cfg);

/// g_3D logits of the inference path (2D-to-3D fusion only), N x C.
Tensor inference_logits(const PointCloud& cloud, const ModelState& state);
/// Row-wise softmax of inference_logits.
Tensor inference_scores(const PointCloud& cloud, const ModelState& state);
/// Per-row argmax; ties go to the lowest class id.
std::vector<std::uint32_t> argmax_rows(const Tensor& table);
std::vector<std::uint32_t> predict(const PointCloud& cloud, const ModelState& state);
/// Mean of the softmax tables over k rotations by 2*pi*j/k.
Tensor tta_scores(const PointCloud& cloud, const ModelState& state, std::size_t k);
/// k = 1 is predict itself.
std::vector<std::uint32_t> tta_predict(const PointCloud& cloud, const ModelState& state, std::size_t k);

struct LogRow {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double loss_cmd = 0.0;
  double loss_2d = 0.0;
  double loss_3d = 0.0;
  double loss_total = 0.0;
};

double scheduled_lr(const TrainConfig& cfg, std::uint64_t step, std::uint64_t total_steps);

std::string format_train_log_csv(const std::vector<LogRow>& rows);

struct TrainResult {
  ModelState state;
  std::vector<LogRow> log;
};

using StepCallback = std::function<void(const LogRow&)>;

/// One scene per step, scene order reshuffled every epoch. Throws
/// NumericError carrying the step index on a non-finite loss or gradient.
TrainResult train(const std::vector<Scene>& dataset, const TrainConfig& cfg, const StepCallback& on_step = {});

/// tta <= 1 evaluates plain predictions.
ConfusionMatrix evaluate(const std::vector<Scene>& scenes, const ModelState& state, std::size_t tta = 1);

/// First ceil(3/4 n) scenes train, the rest validate. A single scene is used
/// for both.
struct DatasetSplit {
  std::vector<Scene> train;
  std::vector<Scene> val;
};
DatasetSplit split_dataset(const std::vector<Scene>& scenes);

/// Mean over points of the summed per-scale student-teacher distance on the
/// points outside the scene's own camera view. The teacher reads those points
/// from `oracle`, the same scene seen through a camera covering every point.
/// Returns the mean and sets `points` to the number of rows used.
double out_of_view_distance(const Scene& scene, const Scene& oracle, const ModelState& state,
                            std::size_t* points = nullptr);
/// Copy of the scene re-shot with a full-coverage camera and re-rendered.
Scene oracle_view(const Scene& scene, std::size_t classes, double color_noise, std::uint64_t seed);

struct AblationRow {
  std::string name;
  std::vector<double> per_seed;
  double median = 0.0;
};

struct AblationConfig {
  TrainConfig base;
  std::size_t seeds = 5;
};

/// Trains baseline, +3D-to-2D, +bidirectional and +CMD for every seed
/// (seed = base.seed + j) and scores validation mIoU; the +TTA row evaluates
/// the +CMD models with base.tta_angles rotations.
std::vector<AblationRow> run_ablation(const DatasetSplit& split, const AblationConfig& cfg);
std::string format_ablation_markdown(const std::vector<AblationRow>& rows);
double median(std::vector<double> values);

}  // namespace cmdf
