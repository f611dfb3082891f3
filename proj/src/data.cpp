#include "cmdf/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "cmdf/errors.hpp"

namespace cmdf {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "scene I/O assumes a little-endian host");

// ------------------------------------------------------------------ Scene

void Scene::validate(std::size_t classes) const {
  cloud.validate();
  cam.validate();
  if (labels.size() != cloud.size()) {
    throw ValidationError("Scene " + id + ": " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(cloud.size()) + " points");
  }
  for (std::uint32_t y : labels) {
    if (y >= classes) {
      throw ValidationError("Scene " + id + ": label " + std::to_string(y) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
  }
  if (image.width != cam.width || image.height != cam.height) {
    throw ValidationError("Scene " + id + ": image size does not match the camera");
  }
}

bool scenes_equal(const Scene& a, const Scene& b) {
  return a.id == b.id && a.cloud.xyz == b.cloud.xyz && a.cloud.intensity == b.cloud.intensity &&
         a.labels == b.labels && a.image == b.image && a.cam.K == b.cam.K &&
         a.cam.T.matrix() == b.cam.T.matrix() && a.cam.width == b.cam.width && a.cam.height == b.cam.height;
}

void SceneGenConfig::validate() const {
  if (classes < 2) throw ValidationError("SceneGenConfig: need at least 2 classes");
  if (!(fov_fraction > 0.0 && fov_fraction <= 1.0)) {
    throw ValidationError("SceneGenConfig: fov fraction must be in (0, 1]");
  }
  if (points_per_class < objects_per_class || objects_per_class == 0) {
    throw ValidationError("SceneGenConfig: every object needs at least one point");
  }
  if (!(min_range > 0.0 && world_extent > min_range)) {
    throw ValidationError("SceneGenConfig: need 0 < min_range < world_extent");
  }
  if (image_width < 8 || image_height < 8) throw ValidationError("SceneGenConfig: image must be at least 8x8");
  if (noise_sigma < 0.0 || color_noise < 0.0) throw ValidationError("SceneGenConfig: negative noise");
}

// ------------------------------------------------------------- generation

Eigen::Vector3d class_color(std::size_t k, std::size_t classes) {
  // HSV with evenly spaced hues, s = 0.85, v = 0.9.
  const double h = 6.0 * static_cast<double>(k) / static_cast<double>(classes);
  const double s = 0.85;
  const double v = 0.9;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

namespace {

constexpr double kSensorHeight = 1.7;
constexpr double kMaxAzimuth = 55.0 * std::numbers::pi / 180.0;
constexpr double kMinSeparation = 3.2;

double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

struct Placement {
  double x;
  double y;
  double yaw;
  std::uint32_t cls;
};

// Point on or in a class-specific primitive, centred on the object's ground
// footprint. Shape families cycle every four classes; later cycles grow.
Eigen::Vector3d sample_shape(std::uint32_t cls, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double grow = 1.0 + 0.35 * static_cast<double>(cls / 4);
  const double ground = -kSensorHeight;
  switch (cls % 4) {
    case 0: {  // flat patch
      const double r = 1.4 * grow * std::sqrt(unit(rng));
      const double a = 2 * std::numbers::pi * unit(rng);
      return {r * std::cos(a), r * std::sin(a), ground};
    }
    case 1: {  // pole
      const double a = 2 * std::numbers::pi * unit(rng);
      const double r = 0.12 * grow;
      return {r * std::cos(a), r * std::sin(a), ground + 2.4 * grow * unit(rng)};
    }
    case 2: {  // box, five faces sampled by area
      const double hx = 1.0 * grow, hy = 0.5 * grow, hz = 0.45 * grow;
      const double a_top = 4 * hx * hy, a_x = 4 * hy * hz, a_y = 4 * hx * hz;
      const double pick = unit(rng) * (a_top + 2 * a_x + 2 * a_y);
      const double u = 2 * unit(rng) - 1, w = 2 * unit(rng) - 1;
      const double zc = ground + hz;
      if (pick < a_top) return {u * hx, w * hy, zc + hz};
      if (pick < a_top + a_x) return {hx, u * hy, zc + w * hz};
      if (pick < a_top + 2 * a_x) return {-hx, u * hy, zc + w * hz};
      if (pick < a_top + 2 * a_x + a_y) return {u * hx, hy, zc + w * hz};
      return {u * hx, -hy, zc + w * hz};
    }
    default: {  // canopy
      const double r = 0.75 * grow * std::cbrt(unit(rng));
      const double cz = 2 * unit(rng) - 1;
      const double a = 2 * std::numbers::pi * unit(rng);
      const double sxy = std::sqrt(1 - cz * cz);
      return {r * sxy * std::cos(a), r * sxy * std::sin(a), ground + 2.6 + r * cz};
    }
  }
}

Eigen::Matrix4d camera_extrinsic(double yaw) {
  Eigen::Matrix3d axes;
  axes << 0, -1, 0,  //
      0, 0, -1,      //
      1, 0, 0;
  const Eigen::Matrix3d rz = Eigen::AngleAxisd(-yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = axes * rz;
  m.topRightCorner<3, 1>() = Eigen::Vector3d(0.0, -0.08, -0.27);
  return m;
}

}  // namespace

CameraModel fit_camera(const PointCloud& cloud, double fraction, int width, int height, Rng& rng) {
  cloud.validate();
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("fit_camera: fraction must be in (0, 1]");
  std::vector<double> az;
  az.reserve(cloud.size());
  for (const auto& p : cloud.xyz) az.push_back(std::atan2(p.y(), p.x()));
  std::sort(az.begin(), az.end());
  // The window spans the azimuths of fraction * N consecutive points.
  const std::size_t n = az.size();
  const std::size_t take = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * n)), 1, n);
  std::uniform_int_distribution<std::size_t> start_dist(0, n - take);
  const std::size_t first = fraction >= 1.0 ? 0 : start_dist(rng);
  const double lo = az[first], hi = az[first + take - 1];
  const double window = hi - lo;
  const double yaw = 0.5 * (lo + hi);
  const double half = std::min(0.5 * window + 0.01, 80.0 * std::numbers::pi / 180.0);

  CameraModel cam;
  cam.width = width;
  cam.height = height;
  cam.T = RigidTransform::from_matrix(camera_extrinsic(yaw));
  const double tan_half = std::tan(half);
  double max_elev = 0.0;
  for (const auto& p : cloud.xyz) {
    const Eigen::Vector3d c = cam.T.apply(p);
    if (c.z() <= 0.0 || std::abs(c.x() / c.z()) > tan_half) continue;
    max_elev = std::max(max_elev, std::abs(c.y() / c.z()));
  }
  if (max_elev == 0.0) max_elev = tan_half;
  double fx = 0.5 * width / tan_half;
  double fy = 0.5 * height / (1.05 * max_elev);
  auto set_k = [&] {
    cam.K = Intrinsics::Zero();
    cam.K(0, 0) = fx;
    cam.K(0, 2) = 0.5 * width;
    cam.K(1, 1) = fy;
    cam.K(1, 2) = 0.5 * height;
    cam.K(2, 2) = 1.0;
  };
  set_k();
  if (fraction >= 1.0) {
    // Full coverage is a contract: zoom out until every point lands inside.
    for (int i = 0; i < 200 && build_correspondence(cloud, cam).n_overlap() < cloud.size(); ++i) {
      fx /= 1.05;
      fy /= 1.05;
      set_k();
    }
  }
  return cam;
}

Image render_image(const PointCloud& cloud, const std::vector<std::uint32_t>& labels, const CameraModel& cam,
                   std::size_t classes, double color_noise, Rng& rng) {
  constexpr double kSplatRadius = 2.0;
  Image img(cam.width, cam.height, 0.5);
  const auto proj = project_points(cloud, cam);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < proj.size(); ++i) {
    if (proj[i].valid && proj[i].depth > 0.0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return proj[a].depth > proj[b].depth; });
  for (std::size_t i : order) {
    const Eigen::Vector3d color = class_color(labels[i], classes);
    const int r0 = static_cast<int>(std::floor(proj[i].v - kSplatRadius));
    const int r1 = static_cast<int>(std::ceil(proj[i].v + kSplatRadius));
    const int c0 = static_cast<int>(std::floor(proj[i].u - kSplatRadius));
    const int c1 = static_cast<int>(std::ceil(proj[i].u + kSplatRadius));
    for (int r = std::max(r0, 0); r <= std::min(r1, cam.height - 1); ++r) {
      for (int c = std::max(c0, 0); c <= std::min(c1, cam.width - 1); ++c) {
        const double du = c + 0.5 - proj[i].u;
        const double dv = r + 0.5 - proj[i].v;
        if (du * du + dv * dv > kSplatRadius * kSplatRadius) continue;
        for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[ch];
      }
    }
  }
  std::normal_distribution<double> noise(0.0, color_noise > 0.0 ? color_noise : 1.0);
  for (double& v : img.rgb) {
    const double n = color_noise > 0.0 ? noise(rng) : 0.0;
    v = std::round(std::clamp(v + n, 0.0, 1.0) * 255.0) / 255.0;
  }
  return img;
}

Scene generate_scene(const SceneGenConfig& cfg, Rng& rng, SceneLayout* layout) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Placement> objects;
  for (std::uint32_t k = 0; k < cfg.classes; ++k) {
    for (std::size_t j = 0; j < cfg.objects_per_class; ++j) {
      Placement best{};
      double best_gap = -HUGE_VAL;
      for (int attempt = 0; attempt < 200; ++attempt) {
        const double az = (2 * unit(rng) - 1) * kMaxAzimuth;
        const double range = cfg.min_range + (cfg.world_extent - cfg.min_range) * unit(rng);
        Placement cand{range * std::cos(az), range * std::sin(az), 2 * std::numbers::pi * unit(rng), k};
        double gap = HUGE_VAL;
        for (const auto& o : objects) gap = std::min(gap, std::hypot(o.x - cand.x, o.y - cand.y));
        if (gap > best_gap) {
          best = cand;
          best_gap = gap;
        }
        if (gap >= kMinSeparation) break;
      }
      objects.push_back(best);
    }
  }

  Scene scene;
  SceneLayout lay;
  std::normal_distribution<double> jitter(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const Placement& obj = objects[o];
    const std::size_t j = o % cfg.objects_per_class;
    const std::size_t count =
        cfg.points_per_class / cfg.objects_per_class + (j < cfg.points_per_class % cfg.objects_per_class ? 1 : 0);
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(obj.yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < count; ++i) {
      Eigen::Vector3d p = rot * sample_shape(obj.cls, rng) + Eigen::Vector3d(obj.x, obj.y, 0.0);
      if (cfg.noise_sigma > 0.0) p += Eigen::Vector3d(jitter(rng), jitter(rng), jitter(rng));
      p = p.unaryExpr([](double v) { return to_float(v); });
      scene.cloud.xyz.push_back(p);
      scene.cloud.intensity.push_back(to_float(unit(rng)));
      scene.labels.push_back(obj.cls);
      lay.object_of_point.push_back(static_cast<std::uint32_t>(o));
      sum += p;
    }
    lay.centroids.push_back(sum / static_cast<double>(count));
    lay.classes.push_back(obj.cls);
  }

  scene.cam = fit_camera(scene.cloud, cfg.fov_fraction, cfg.image_width, cfg.image_height, rng);
  scene.image = render_image(scene.cloud, scene.labels, scene.cam, cfg.classes, cfg.color_noise, rng);
  if (layout) *layout = std::move(lay);
  return scene;
}

std::vector<Scene> generate_dataset(const SceneGenConfig& cfg, std::size_t scenes) {
  std::vector<Scene> out;
  out.reserve(scenes);
  for (std::size_t i = 0; i < scenes; ++i) {
    Rng rng = make_rng(cfg.seed, stream::kScene + 1000 * (i + 1));
    Scene s = generate_scene(cfg, rng);
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%04zu", i);
    s.id = id;
    out.push_back(std::move(s));
  }
  return out;
}

// -------------------------------------------------------------------- I/O

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(path.string() + ": cannot open for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError(path.string() + ": write failed");
}

template <typename T>
void append(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <typename T>
T read_at(const std::string& buf, std::size_t offset) {
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return v;
}

}  // namespace

void write_ppm(const Image& image, const fs::path& path) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.rgb.size());
  for (double v : image.rgb) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  write_file(path, out);
}

Image read_ppm(const fs::path& path) {
  const std::string buf = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    return buf.substr(start, pos - start);
  };
  if (token() != "P6") throw FormatError(path.string() + ": not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw FormatError(path.string() + ": unsupported PPM header");
  ++pos;  // single whitespace after maxval
  const std::size_t expected = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (buf.size() < pos || buf.size() - pos != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " pixel bytes, found " +
                      std::to_string(buf.size() > pos ? buf.size() - pos : 0));
  }
  Image img(w, h);
  for (std::size_t i = 0; i < expected; ++i) {
    img.rgb[i] = static_cast<double>(static_cast<unsigned char>(buf[pos + i])) / 255.0;
  }
  return img;
}

std::string format_calibration(const CameraModel& cam) {
  std::string out = "# cmdf camera calibration\nK:";
  char b[40];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      std::snprintf(b, sizeof(b), " %.17g", cam.K(r, c));
      out += b;
    }
  }
  out += "\nT:";
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      std::snprintf(b, sizeof(b), " %.17g", cam.T.matrix()(r, c));
      out += b;
    }
  }
  out += "\nsize: " + std::to_string(cam.width) + " " + std::to_string(cam.height) + "\n";
  return out;
}

void write_calibration(const CameraModel& cam, const fs::path& path) { write_file(path, format_calibration(cam)); }

CameraModel parse_calibration_text(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool have_k = false, have_t = false, have_size = false;
  CameraModel cam;
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  auto fail = [&](const std::string& msg) {
    throw FormatError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto colon = line.find(':');
    std::istringstream probe(line);
    std::string first;
    if (!(probe >> first)) continue;
    if (colon == std::string::npos) fail("expected 'key: values'");
    std::string key = line.substr(0, colon);
    key.erase(std::remove_if(key.begin(), key.end(), [](unsigned char c) { return std::isspace(c); }), key.end());
    std::istringstream values(line.substr(colon + 1));
    std::vector<std::string> tokens{std::istream_iterator<std::string>(values), std::istream_iterator<std::string>()};
    std::vector<double> nums;
    for (const auto& tok : tokens) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        fail("'" + tok + "' is not a number");
      }
      if (used != tok.size()) fail("'" + tok + "' is not a number");
      nums.push_back(v);
    }
    if (key == "K") {
      if (nums.size() != 12) fail("K expects 12 values, got " + std::to_string(nums.size()));
      for (int i = 0; i < 12; ++i) cam.K(i / 4, i % 4) = nums[static_cast<std::size_t>(i)];
      have_k = true;
    } else if (key == "T") {
      if (nums.size() != 16) fail("T expects 16 values, got " + std::to_string(nums.size()));
      for (int i = 0; i < 16; ++i) t(i / 4, i % 4) = nums[static_cast<std::size_t>(i)];
      have_t = true;
    } else if (key == "size") {
      if (nums.size() != 2) fail("size expects 2 values, got " + std::to_string(nums.size()));
      if (nums[0] != std::floor(nums[0]) || nums[1] != std::floor(nums[1])) fail("size must be integers");
      cam.width = static_cast<int>(nums[0]);
      cam.height = static_cast<int>(nums[1]);
      have_size = true;
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (!have_k || !have_t || !have_size) {
    throw FormatError(source + ": missing " + std::string(!have_k ? "K" : !have_t ? "T" : "size") + " line");
  }
  if (!RigidTransform::is_rigid(t)) throw ValidationError(source + ": T is not a rigid transform");
  cam.T = RigidTransform::from_matrix(t);
  cam.validate();
  return cam;
}

CameraModel parse_calibration(const fs::path& path) { return parse_calibration_text(read_file(path), path.string()); }

void save_scene(const Scene& scene, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError(dir.string() + ": cannot create directory: " + ec.message());
  std::string points;
  points.reserve(scene.cloud.size() * 16);
  for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
    const auto& p = scene.cloud.xyz[i];
    append<float>(points, static_cast<float>(p.x()));
    append<float>(points, static_cast<float>(p.y()));
    append<float>(points, static_cast<float>(p.z()));
    append<float>(points, static_cast<float>(scene.cloud.intensity_at(i)));
  }
  write_file(dir / "points.bin", points);
  std::string labels;
  for (std::uint32_t y : scene.labels) append<std::uint32_t>(labels, y);
  write_file(dir / "labels.bin", labels);
  write_ppm(scene.image, dir / "image.ppm");
  write_calibration(scene.cam, dir / "calib.txt");
}

Scene load_scene(const fs::path& dir) {
  Scene scene;
  scene.id = dir.filename().string();
  if (scene.id.empty()) scene.id = dir.parent_path().filename().string();
  const fs::path points_path = dir / "points.bin";
  const std::string points = read_file(points_path);
  if (points.empty() || points.size() % 16 != 0) {
    throw FormatError(points_path.string() + ": size " + std::to_string(points.size()) +
                      " bytes is not a positive multiple of 16 (N * 16 expected)");
  }
  const std::size_t n = points.size() / 16;
  scene.cloud.xyz.reserve(n);
  scene.cloud.intensity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = i * 16;
    scene.cloud.xyz.emplace_back(read_at<float>(points, o), read_at<float>(points, o + 4),
                                 read_at<float>(points, o + 8));
    scene.cloud.intensity.push_back(read_at<float>(points, o + 12));
  }
  const fs::path labels_path = dir / "labels.bin";
  const std::string labels = read_file(labels_path);
  if (labels.size() != n * 4) {
    throw FormatError(labels_path.string() + ": expected " + std::to_string(n * 4) + " bytes, found " +
                      std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < n; ++i) scene.labels.push_back(read_at<std::uint32_t>(labels, i * 4));
  scene.image = read_ppm(dir / "image.ppm");
  scene.cam = parse_calibration(dir / "calib.txt");
  if (scene.image.width != scene.cam.width || scene.image.height != scene.cam.height) {
    throw FormatError((dir / "image.ppm").string() + ": image size does not match calib.txt");
  }
  return scene;
}

void save_dataset(const std::vector<Scene>& scenes, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw FormatError(root.string() + ": cannot create directory: " + ec.message());
  std::string manifest;
  for (const auto& s : scenes) {
    save_scene(s, root / s.id);
    manifest += s.id + "\n";
  }
  write_file(root / "manifest.txt", manifest);
}

std::vector<std::string> read_manifest(const fs::path& root) {
  std::istringstream in(read_file(root / "manifest.txt"));
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

std::vector<Scene> load_dataset(const fs::path& root) {
  std::vector<Scene> scenes;
  for (const auto& id : read_manifest(root)) scenes.push_back(load_scene(root / id));
  return scenes;
}

}  // namespace cmdf
