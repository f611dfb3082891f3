#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cmdf/geometry.hpp"
#include "cmdf/image.hpp"
#include "cmdf/rng.hpp"

namespace cmdf {

/// One paired sample: LIDAR sweep, per-point labels, camera frame and calibration.
struct Scene {
  std::string id;
  PointCloud cloud;
  std::vector<std::uint32_t> labels;
  Image image;
  CameraModel cam;

  /// Label count, label range and image size against the camera.
  void validate(std::size_t classes) const;
};

bool scenes_equal(const Scene& a, const Scene& b);

struct SceneGenConfig {
  std::size_t classes = 4;
  std::size_t points_per_class = 96;
  std::size_t objects_per_class = 2;
  double min_range = 4.0;     // meters
  double world_extent = 14.0; // maximum object range, meters
  double fov_fraction = 0.5;  // share of points inside the camera's azimuth window
  double noise_sigma = 0.02;  // meters
  double color_noise = 0.04;
  int image_width = 128;
  int image_height = 48;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Ground-truth object placement, kept for oracle checks.
struct SceneLayout {
  std::vector<Eigen::Vector3d> centroids;
  std::vector<std::uint32_t> classes;
  std::vector<std::uint32_t> object_of_point;
};

/// Colour used for class k among C classes.
Eigen::Vector3d class_color(std::size_t k, std::size_t classes);

/// Pinhole camera at the sensor origin that sees a contiguous azimuth window
/// holding `fraction` of the points by azimuth; the vertical field of
/// view is fitted to the points inside the window. With fraction 1 every
/// point is in view.
CameraModel fit_camera(const PointCloud& cloud, double fraction, int width, int height, Rng& rng);

/// Splats points far-to-near as class-coloured discs on a grey background,
/// adds colour noise and quantizes to 8-bit levels.
Image render_image(const PointCloud& cloud, const std::vector<std::uint32_t>& labels, const CameraModel& cam,
                   std::size_t classes, double color_noise, Rng& rng);

Scene generate_scene(const SceneGenConfig& cfg, Rng& rng, SceneLayout* layout = nullptr);

/// Scene i is drawn from its own stream of cfg.seed and named scene_%04d.
std::vector<Scene> generate_dataset(const SceneGenConfig& cfg, std::size_t scenes);

// On-disk layout per scene: <dir>/points.bin (float32 x,y,z,intensity),
// <dir>/labels.bin (uint32), <dir>/image.ppm (P6), <dir>/calib.txt.
void save_scene(const Scene& scene, const std::filesystem::path& dir);
Scene load_scene(const std::filesystem::path& dir);

/// Writes every scene under root/<id>/ plus root/manifest.txt.
void save_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& root);
std::vector<std::string> read_manifest(const std::filesystem::path& root);
std::vector<Scene> load_dataset(const std::filesystem::path& root);

/// `K:` 12 floats (3x4 row-major), `T:` 16 floats (4x4 row-major),
/// `size: W H`; `#` starts a comment.
CameraModel parse_calibration(const std::filesystem::path& path);
CameraModel parse_calibration_text(const std::string& text, const std::string& source = "<text>");
std::string format_calibration(const CameraModel& cam);
void write_calibration(const CameraModel& cam, const std::filesystem::path& path);

void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

}  // namespace cmdf
