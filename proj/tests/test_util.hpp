#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Geometry>

#include "cmdf/geometry.hpp"
#include "cmdf/rng.hpp"
#include "cmdf/tensor.hpp"

namespace cmdf::testing {

inline Eigen::Matrix4d random_rigid(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = q.toRotationMatrix();
  m.topRightCorner<3, 1>() = Eigen::Vector3d(n(rng), n(rng), n(rng));
  return m;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = n(rng);
  return t;
}

inline PointCloud random_cloud(std::size_t n, Rng& rng, double extent = 10.0) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    c.xyz.emplace_back(u(rng), u(rng), u(rng));
    c.intensity.push_back(unit(rng));
  }
  return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cmdf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cmdf::testing
