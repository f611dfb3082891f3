#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cmdf/autodiff.hpp"
#include "cmdf/geometry.hpp"
#include "cmdf/image.hpp"
#include "cmdf/mlp.hpp"

namespace cmdf {

inline constexpr std::size_t kNumScales = 4;

/// Scale s (0-based here) has size floor(H / 2^s) x floor(W / 2^s) x d.
using ImageFeaturePyramid = std::array<FeatureGrid, kNumScales>;
/// Per-scale N x d point features.
using PointFeaturePyramid = std::array<ad::Value, kNumScales>;
/// Per-scale teacher rows for the in-view points (N_O x d, no gradient).
using TeacherFeatures = std::array<Tensor, kNumScales>;

/// Frozen camera branch: a seeded random-projection pyramid. Scale 1 maps
/// each pixel's centred colour 2 * rgb - 1 through a fixed 3 x d matrix; every further scale
/// average-pools 2x2 and applies a fixed d x d matrix.
class CameraBranch {
 public:
  CameraBranch(std::uint64_t seed, std::size_t width);

  std::size_t feature_width() const noexcept { return color_map_.cols(); }
  std::uint64_t seed() const noexcept { return seed_; }
  const Tensor& color_map() const noexcept { return color_map_; }
  const Tensor& scale_map(std::size_t i) const { return scale_maps_.at(i); }

 private:
  std::uint64_t seed_;
  Tensor color_map_;
  std::array<Tensor, kNumScales - 1> scale_maps_;
};

/// Throws ValidationError for images smaller than 8x8 or with a wrong
/// buffer size.
ImageFeaturePyramid camera_forward(const Image& image, const CameraBranch& frozen);

/// Upsamples every scale to the full image size and reads the feature under
/// each in-view point. Throws ValidationError when the correspondence was
/// built for a different image size.
TeacherFeatures gather_camera_features(const ImageFeaturePyramid& pyramid, const CorrespondenceTable& corr);

struct PointEncoderConfig {
  std::size_t width = 16;
  std::size_t hidden = 32;
  double base_voxel = 0.1;
  double coord_scale = 0.1;  // xyz are multiplied by this before the first layer
  Activation activation = Activation::relu;
};

/// Stand-in for a sparse-voxel point network: a shared per-point MLP
/// embedding, then per scale a voxel mean pool of the embedding added back
/// onto it and a scale-specific MLP head.
struct PointEncoderParams {
  Mlp embed;
  std::array<Mlp, kNumScales> heads;
  double base_voxel = 0.1;
  double coord_scale = 0.1;

  static PointEncoderParams init(const PointEncoderConfig& cfg, Rng& rng);
  std::size_t width() const { return heads.front().out(); }
  double voxel_size(std::size_t scale) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Dense voxel ids for cells of side `voxel`: equal integer triples
/// (floor(x/v), floor(y/v), floor(z/v)) get equal ids, distinct triples
/// distinct ids. Ids are numbered by first occurrence.
std::vector<std::size_t> voxel_assign(std::span<const Eigen::Vector3d> xyz, double voxel);

/// Voxel grouping for scatter_mean. Members of a voxel are summed in
/// coordinate order, so pooled values do not depend on input point order.
std::shared_ptr<const ad::Segments> voxel_segments(const PointCloud& cloud, double voxel);

/// Encoder input width: (x, y, z) * coord_scale, intensity, then for every
/// scale the offset to the voxel centroid in voxel units and log(count) / 4.
inline constexpr std::size_t kPointInputFeatures = 4 + 4 * kNumScales;

Tensor point_input_features(const PointCloud& cloud, double coord_scale, double base_voxel);

PointFeaturePyramid point_branch_forward(const PointCloud& cloud, const PointEncoderParams& params);

}  // namespace cmdf
