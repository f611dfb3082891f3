#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace cmdf {

/// LIDAR sweep: coordinates in meters, optional intensity in [0, 1].
struct PointCloud {
  std::vector<Eigen::Vector3d> xyz;
  std::vector<double> intensity;  // empty or one per point

  std::size_t size() const noexcept { return xyz.size(); }
  double intensity_at(std::size_t i) const { return intensity.empty() ? 0.0 : intensity[i]; }

  /// Throws ValidationError unless N >= 1, coordinates are finite and the
  /// intensity vector is empty or N long.
  void validate() const;
};

/// 4x4 homogeneous rigid transform (orthonormal rotation block, last row 0 0 0 1).
class RigidTransform {
 public:
  RigidTransform() : m_(Eigen::Matrix4d::Identity()) {}

  /// Throws ValidationError when the matrix is not rigid to 1e-6.
  static RigidTransform from_matrix(const Eigen::Matrix4d& m);
  static bool is_rigid(const Eigen::Matrix4d& m, double tol = 1e-6);

  static RigidTransform translation(double x, double y, double z);
  static RigidTransform rotation_z(double radians);

  const Eigen::Matrix4d& matrix() const noexcept { return m_; }
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const;

  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);

 private:
  explicit RigidTransform(const Eigen::Matrix4d& m) : m_(m) {}
  Eigen::Matrix4d m_;
};

using Intrinsics = Eigen::Matrix<double, 3, 4>;

/// Pinhole camera: K (3x4 intrinsics), T (LIDAR -> camera) and image size.
struct CameraModel {
  Intrinsics K = Intrinsics::Zero();
  RigidTransform T;
  int width = 0;
  int height = 0;

  void validate() const;
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool valid = false;  // false when depth == 0
};

struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Which points land inside the image and where.
struct CorrespondenceTable {
  std::vector<std::uint8_t> in_fov;  // one flag per point
  std::vector<std::size_t> indices;  // in-FOV point indices, ascending
  std::vector<Pixel> pixels;         // parallel to indices
  int width = 0;
  int height = 0;

  std::size_t n_overlap() const noexcept { return indices.size(); }
  std::size_t n_points() const noexcept { return in_fov.size(); }
};

/// Product of the chain in the given order; the leftmost factor is applied
/// last. Throws ValidationError naming the index of a non-rigid factor.
RigidTransform compose_extrinsic(std::span<const Eigen::Matrix4d> chain);

/// h = K * T * [x y z 1]^T, depth = h[2], (u, v) = (h[0], h[1]) / depth.
std::vector<Projection> project_points(const PointCloud& cloud, const CameraModel& cam);

/// A point is in view iff depth > 0, 0 <= floor(u) < W and 0 <= floor(v) < H.
/// Its pixel is (floor(v), floor(u)).
CorrespondenceTable build_correspondence(const PointCloud& cloud, const CameraModel& cam);

/// h x w x d grid of image features, row-major with channels innermost.
struct FeatureGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  FeatureGrid() = default;
  FeatureGrid(std::size_t h, std::size_t w, std::size_t d, double fill = 0.0)
      : height(h), width(w), channels(d), values(h * w * d, fill) {}

  double& at(std::size_t r, std::size_t c, std::size_t k) { return values[(r * width + c) * channels + k]; }
  double at(std::size_t r, std::size_t c, std::size_t k) const {
    return values[(r * width + c) * channels + k];
  }
  std::span<const double> pixel(std::size_t r, std::size_t c) const {
    return {values.data() + (r * width + c) * channels, channels};
  }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;
};

/// Bilinear, corner-aligned upsampling to (out_h, out_w). Throws
/// ValidationError when the target is smaller than the source.
FeatureGrid upsample_feature_map(const FeatureGrid& grid, std::size_t out_h, std::size_t out_w);

/// One output pixel of upsample_feature_map without materializing the grid.
void sample_upsampled(const FeatureGrid& grid, std::size_t out_h, std::size_t out_w, std::size_t row,
                      std::size_t col, std::span<double> out);

}  // namespace cmdf
