#include "cmdf/geometry.hpp"

#include <cmath>
#include <string>

#include "cmdf/errors.hpp"

namespace cmdf {

void PointCloud::validate() const {
  if (xyz.empty()) throw ValidationError("PointCloud: no points");
  if (!intensity.empty() && intensity.size() != xyz.size()) {
    throw ValidationError("PointCloud: " + std::to_string(intensity.size()) + " intensities for " +
                          std::to_string(xyz.size()) + " points");
  }
  for (std::size_t i = 0; i < xyz.size(); ++i) {
    if (!xyz[i].allFinite()) throw ValidationError("PointCloud: non-finite point " + std::to_string(i));
  }
}

bool RigidTransform::is_rigid(const Eigen::Matrix4d& m, double tol) {
  if (!m.allFinite()) return false;
  if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0) return false;
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol;
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
  if (!is_rigid(m)) throw ValidationError("RigidTransform: matrix is not a rigid transform");
  return RigidTransform(m);
}

RigidTransform RigidTransform::translation(double x, double y, double z) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 3) = x;
  m(1, 3) = y;
  m(2, 3) = z;
  return RigidTransform(m);
}

RigidTransform RigidTransform::rotation_z(double radians) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  m(0, 0) = c;
  m(0, 1) = -s;
  m(1, 0) = s;
  m(1, 1) = c;
  return RigidTransform(m);
}

Eigen::Vector3d RigidTransform::apply(const Eigen::Vector3d& p) const {
  return m_.topLeftCorner<3, 3>() * p + m_.topRightCorner<3, 1>();
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return RigidTransform(Eigen::Matrix4d(a.m_ * b.m_));
}

void CameraModel::validate() const {
  if (K(2, 2) != 1.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
    throw ValidationError("CameraModel: K must have K[2][2] = 1 and K[2][0] = K[2][1] = 0");
  }
  if (!K.allFinite()) throw ValidationError("CameraModel: non-finite K");
  if (width < 1 || height < 1) throw ValidationError("CameraModel: image size must be positive");
  if (!RigidTransform::is_rigid(T.matrix())) throw ValidationError("CameraModel: T is not rigid");
}

RigidTransform compose_extrinsic(std::span<const Eigen::Matrix4d> chain) {
  if (chain.empty()) throw ValidationError("compose_extrinsic: empty chain");
  RigidTransform out;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    if (!RigidTransform::is_rigid(chain[i])) {
      throw ValidationError("compose_extrinsic: element " + std::to_string(i) + " is not rigid");
    }
    out = out * RigidTransform::from_matrix(chain[i]);
  }
  return out;
}

std::vector<Projection> project_points(const PointCloud& cloud, const CameraModel& cam) {
  cloud.validate();
  cam.validate();
  const Eigen::Matrix4d T = cam.T.matrix();
  std::vector<Projection> out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    // camera frame first, then intrinsics, summed left to right
    const double x[4] = {cloud.xyz[i].x(), cloud.xyz[i].y(), cloud.xyz[i].z(), 1.0};
    double c[4] = {0.0, 0.0, 0.0, 0.0};
    for (int r = 0; r < 4; ++r) {
      for (int j = 0; j < 4; ++j) c[r] += T(r, j) * x[j];
    }
    double h[3] = {0.0, 0.0, 0.0};
    for (int r = 0; r < 3; ++r) {
      for (int j = 0; j < 4; ++j) h[r] += cam.K(r, j) * c[j];
    }
    Projection& p = out[i];
    p.depth = h[2];
    if (h[2] != 0.0) {
      p.u = h[0] / h[2];
      p.v = h[1] / h[2];
      p.valid = true;
    }
  }
  return out;
}

CorrespondenceTable build_correspondence(const PointCloud& cloud, const CameraModel& cam) {
  const auto proj = project_points(cloud, cam);
  CorrespondenceTable table;
  table.width = cam.width;
  table.height = cam.height;
  table.in_fov.assign(proj.size(), 0);
  for (std::size_t i = 0; i < proj.size(); ++i) {
    const Projection& p = proj[i];
    if (!p.valid || !(p.depth > 0.0)) continue;
    const double col = std::floor(p.u);
    const double row = std::floor(p.v);
    if (col < 0.0 || row < 0.0 || col >= cam.width || row >= cam.height) continue;
    table.in_fov[i] = 1;
    table.indices.push_back(i);
    table.pixels.push_back({static_cast<int>(row), static_cast<int>(col)});
  }
  return table;
}

namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

Tap corner_aligned(std::size_t out_index, std::size_t out_size, std::size_t in_size) {
  if (out_size <= 1 || in_size <= 1) return {0, 0, 0.0};
  const double s = static_cast<double>(out_index) * static_cast<double>(in_size - 1) /
                   static_cast<double>(out_size - 1);
  auto lo = static_cast<std::size_t>(std::floor(s));
  if (lo > in_size - 1) lo = in_size - 1;
  const std::size_t hi = lo + 1 < in_size ? lo + 1 : lo;
  return {lo, hi, s - static_cast<double>(lo)};
}

void validate_upsample(const FeatureGrid& grid, std::size_t out_h, std::size_t out_w) {
  if (grid.channels < 1 || grid.height < 1 || grid.width < 1) {
    throw ValidationError("upsample_feature_map: empty source grid");
  }
  if (out_h < grid.height || out_w < grid.width) {
    throw ValidationError("upsample_feature_map: target " + std::to_string(out_h) + "x" +
                          std::to_string(out_w) + " smaller than source " +
                          std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
}

}  // namespace

void sample_upsampled(const FeatureGrid& grid, std::size_t out_h, std::size_t out_w, std::size_t row,
                      std::size_t col, std::span<double> out) {
  const Tap ty = corner_aligned(row, out_h, grid.height);
  const Tap tx = corner_aligned(col, out_w, grid.width);
  const auto a = grid.pixel(ty.lo, tx.lo);
  const auto b = grid.pixel(ty.lo, tx.hi);
  const auto c = grid.pixel(ty.hi, tx.lo);
  const auto d = grid.pixel(ty.hi, tx.hi);
  for (std::size_t k = 0; k < grid.channels; ++k) {
    const double top = (1.0 - tx.frac) * a[k] + tx.frac * b[k];
    const double bottom = (1.0 - tx.frac) * c[k] + tx.frac * d[k];
    out[k] = (1.0 - ty.frac) * top + ty.frac * bottom;
  }
}

FeatureGrid upsample_feature_map(const FeatureGrid& grid, std::size_t out_h, std::size_t out_w) {
  validate_upsample(grid, out_h, out_w);
  if (out_h == grid.height && out_w == grid.width) return grid;
  FeatureGrid out(out_h, out_w, grid.channels);
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t c = 0; c < out_w; ++c) {
      sample_upsampled(grid, out_h, out_w, r, c,
                       std::span<double>(out.values.data() + (r * out_w + c) * grid.channels, grid.channels));
    }
  }
  return out;
}

}  // namespace cmdf
