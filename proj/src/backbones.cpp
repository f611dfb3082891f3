#include "cmdf/backbones.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>
#include <unordered_map>

#include "cmdf/errors.hpp"

namespace cmdf {

CameraBranch::CameraBranch(std::uint64_t seed, std::size_t width) : seed_(seed) {
  if (width == 0) throw ValidationError("CameraBranch: feature width must be positive");
  Rng rng = make_rng(seed, stream::kTeacher);
  std::normal_distribution<double> color(0.0, 1.0 / std::sqrt(3.0));
  color_map_ = Tensor(3, width);
  for (double& v : color_map_.values()) v = color(rng);
  std::normal_distribution<double> mix(0.0, 1.0 / std::sqrt(static_cast<double>(width)));
  for (auto& m : scale_maps_) {
    m = Tensor(width, width);
    for (double& v : m.values()) v = mix(rng);
  }
}

namespace {

FeatureGrid pool_and_map(const FeatureGrid& in, const Tensor& map) {
  const std::size_t h = in.height / 2;
  const std::size_t w = in.width / 2;
  const std::size_t d = in.channels;
  FeatureGrid out(h, w, map.cols());
  std::vector<double> pooled(d);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t k = 0; k < d; ++k) {
        pooled[k] = 0.25 * (in.at(2 * r, 2 * c, k) + in.at(2 * r, 2 * c + 1, k) +
                            in.at(2 * r + 1, 2 * c, k) + in.at(2 * r + 1, 2 * c + 1, k));
      }
      for (std::size_t j = 0; j < map.cols(); ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += pooled[k] * map(k, j);
        out.at(r, c, j) = s;
      }
    }
  }
  return out;
}

}  // namespace

ImageFeaturePyramid camera_forward(const Image& image, const CameraBranch& frozen) {
  constexpr int kMinSide = 1 << (kNumScales - 1);
  if (image.width < kMinSide || image.height < kMinSide) {
    throw ValidationError("camera_forward: image " + std::to_string(image.width) + "x" +
                          std::to_string(image.height) + " is smaller than " + std::to_string(kMinSide) +
                          "x" + std::to_string(kMinSide));
  }
  if (image.rgb.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height) * 3) {
    throw ValidationError("camera_forward: pixel buffer does not match image dimensions");
  }
  const Tensor& cmap = frozen.color_map();
  const std::size_t d = cmap.cols();
  ImageFeaturePyramid pyr;
  pyr[0] = FeatureGrid(static_cast<std::size_t>(image.height), static_cast<std::size_t>(image.width), d);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (int ch = 0; ch < 3; ++ch) s += (2.0 * image.at(r, c, ch) - 1.0) * cmap(static_cast<std::size_t>(ch), j);
        pyr[0].at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), j) = s;
      }
    }
  }
  for (std::size_t s = 1; s < kNumScales; ++s) pyr[s] = pool_and_map(pyr[s - 1], frozen.scale_map(s - 1));
  return pyr;
}

TeacherFeatures gather_camera_features(const ImageFeaturePyramid& pyramid, const CorrespondenceTable& corr) {
  const std::size_t H = pyramid[0].height;
  const std::size_t W = pyramid[0].width;
  if (corr.height < 0 || corr.width < 0 || static_cast<std::size_t>(corr.height) != H ||
      static_cast<std::size_t>(corr.width) != W) {
    throw ValidationError("gather_camera_features: correspondence built for " + std::to_string(corr.width) +
                          "x" + std::to_string(corr.height) + " but features are " + std::to_string(W) +
                          "x" + std::to_string(H));
  }
  TeacherFeatures out;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const FeatureGrid& grid = pyramid[s];
    Tensor t(corr.n_overlap(), grid.channels);
    for (std::size_t i = 0; i < corr.n_overlap(); ++i) {
      const Pixel px = corr.pixels[i];
      sample_upsampled(grid, H, W, static_cast<std::size_t>(px.row), static_cast<std::size_t>(px.col), t.row(i));
    }
    out[s] = std::move(t);
  }
  return out;
}

PointEncoderParams PointEncoderParams::init(const PointEncoderConfig& cfg, Rng& rng) {
  if (!(cfg.base_voxel > 0.0)) throw ValidationError("PointEncoderParams: base voxel size must be > 0");
  if (cfg.width == 0 || cfg.hidden == 0) throw ValidationError("PointEncoderParams: zero width");
  PointEncoderParams p;
  p.base_voxel = cfg.base_voxel;
  p.coord_scale = cfg.coord_scale;
  p.embed = Mlp::init({kPointInputFeatures, cfg.hidden, cfg.width}, cfg.activation, rng);
  for (auto& head : p.heads) head = Mlp::init({cfg.width, cfg.hidden, cfg.width}, cfg.activation, rng);
  return p;
}

double PointEncoderParams::voxel_size(std::size_t scale) const {
  return base_voxel * std::ldexp(1.0, static_cast<int>(scale));
}

void PointEncoderParams::collect(const std::string& prefix, ParamList& out) const {
  embed.collect(prefix + ".embed", out);
  for (std::size_t s = 0; s < kNumScales; ++s) heads[s].collect(prefix + ".head" + std::to_string(s + 1), out);
}

namespace {

using Cell = std::tuple<std::int64_t, std::int64_t, std::int64_t>;

struct CellHash {
  std::size_t operator()(const Cell& c) const noexcept {
    std::uint64_t h = 0x9E3779B97F4A7C15ULL;
    for (std::int64_t v : {std::get<0>(c), std::get<1>(c), std::get<2>(c)}) {
      h ^= static_cast<std::uint64_t>(v) + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

Cell cell_of(const Eigen::Vector3d& p, double voxel) {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel)), static_cast<std::int64_t>(std::floor(p.y() / voxel)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel))};
}

}  // namespace

std::vector<std::size_t> voxel_assign(std::span<const Eigen::Vector3d> xyz, double voxel) {
  if (!(voxel > 0.0)) throw ValidationError("voxel_assign: voxel size must be > 0");
  std::unordered_map<Cell, std::size_t, CellHash> ids;
  std::vector<std::size_t> out(xyz.size());
  for (std::size_t i = 0; i < xyz.size(); ++i) {
    auto [it, inserted] = ids.try_emplace(cell_of(xyz[i], voxel), ids.size());
    out[i] = it->second;
  }
  return out;
}

std::shared_ptr<const ad::Segments> voxel_segments(const PointCloud& cloud, double voxel) {
  auto seg = std::make_shared<ad::Segments>();
  seg->segment_of = voxel_assign(cloud.xyz, voxel);
  const std::size_t k =
      seg->segment_of.empty() ? 0 : *std::max_element(seg->segment_of.begin(), seg->segment_of.end()) + 1;
  seg->members.resize(k);
  for (std::size_t i = 0; i < seg->segment_of.size(); ++i) seg->members[seg->segment_of[i]].push_back(i);
  auto key = [&cloud](std::size_t i) {
    const auto& p = cloud.xyz[i];
    return std::make_tuple(p.x(), p.y(), p.z(), cloud.intensity_at(i));
  };
  for (auto& m : seg->members) {
    std::sort(m.begin(), m.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  }
  return seg;
}

namespace {

Tensor input_features(const PointCloud& cloud, double coord_scale, double base_voxel,
                      const std::array<std::shared_ptr<const ad::Segments>, kNumScales>& segs) {
  Tensor t(cloud.size(), kPointInputFeatures);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    t(i, 0) = cloud.xyz[i].x() * coord_scale;
    t(i, 1) = cloud.xyz[i].y() * coord_scale;
    t(i, 2) = cloud.xyz[i].z() * coord_scale;
    t(i, 3) = cloud.intensity_at(i);
  }
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const double voxel = base_voxel * std::ldexp(1.0, static_cast<int>(s));
    const std::size_t col = 4 + 4 * s;
    for (const auto& members : segs[s]->members) {
      Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
      for (std::size_t i : members) centroid += cloud.xyz[i];
      centroid /= static_cast<double>(members.size());
      const double occupancy = std::log(static_cast<double>(members.size())) / 4.0;
      for (std::size_t i : members) {
        const Eigen::Vector3d offset = (cloud.xyz[i] - centroid) / voxel;
        t(i, col) = offset.x();
        t(i, col + 1) = offset.y();
        t(i, col + 2) = offset.z();
        t(i, col + 3) = occupancy;
      }
    }
  }
  return t;
}

std::array<std::shared_ptr<const ad::Segments>, kNumScales> scale_segments(const PointCloud& cloud,
                                                                            const PointEncoderParams& params) {
  std::array<std::shared_ptr<const ad::Segments>, kNumScales> segs;
  for (std::size_t s = 0; s < kNumScales; ++s) segs[s] = voxel_segments(cloud, params.voxel_size(s));
  return segs;
}

}  // namespace

Tensor point_input_features(const PointCloud& cloud, double coord_scale, double base_voxel) {
  cloud.validate();
  PointEncoderParams geometry;
  geometry.base_voxel = base_voxel;
  return input_features(cloud, coord_scale, base_voxel, scale_segments(cloud, geometry));
}

PointFeaturePyramid point_branch_forward(const PointCloud& cloud, const PointEncoderParams& params) {
  cloud.validate();
  const auto segs = scale_segments(cloud, params);
  const ad::Value input = ad::constant(input_features(cloud, params.coord_scale, params.base_voxel, segs));
  const ad::Value embedding = params.embed(input);
  PointFeaturePyramid out;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    std::vector<std::size_t> back(segs[s]->segment_of);
    const ad::Value pooled = ad::gather_rows(ad::scatter_mean(embedding, segs[s]), std::move(back));
    out[s] = params.heads[s](ad::add(embedding, pooled));
  }
  return out;
}

}  // namespace cmdf
