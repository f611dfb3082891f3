#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cmdf/autodiff.hpp"
#include "cmdf/backbones.hpp"
#include "cmdf/mlp.hpp"

namespace cmdf {

/// Channel-wise gate (one attention value per feature) or one scalar per point.
enum class GateMode { channel, scalar };

/// One single-direction fusion block. Every (direction, scale) pair owns
/// its own instance.
struct SingleFusionParams {
  Mlp mlp1;  // d -> d, maps the source branch into the destination space
  Mlp mlp2;  // 2d -> d, residual for the destination
  Mlp mlp3;  // 2d -> d (channel gate) or 2d -> 1 (scalar gate)
  GateMode gate = GateMode::channel;

  static SingleFusionParams init(std::size_t width, std::size_t depth, GateMode gate, Activation act, Rng& rng);
  static SingleFusionParams zeros(std::size_t width, GateMode gate = GateMode::channel);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BfbParams {
  std::array<SingleFusionParams, kNumScales> d2to3;  // enhances the LIDAR branch
  std::array<SingleFusionParams, kNumScales> d3to2;  // enhances the 2D knowledge branch
  Linear g2d;                                        // 4d -> C
  Linear g3d;                                        // 4d -> C

  static BfbParams init(std::size_t width, std::size_t classes, std::size_t depth, GateMode gate, Activation act,
                        Rng& rng);
  static BfbParams zeros(std::size_t width, std::size_t classes);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct FusionToggles {
  bool use_2to3 = true;
  bool use_3to2 = true;
};

struct FusedFeatures {
  ad::Value z2d;  // N x 4d
  ad::Value z3d;  // N x 4d
};

/// m = MLP2(Cat(MLP1(src), dst));
/// out = dst + sigmoid(MLP3(Cat(broadcast(GAP(m)), m))) * m.
ad::Value single_fusion(const ad::Value& src, const ad::Value& dst, const SingleFusionParams& p);

/// The gate sigmoid(MLP3(...)) of single_fusion, exposed for inspection.
ad::Value fusion_gate(const ad::Value& src, const ad::Value& dst, const SingleFusionParams& p);

/// Enhances both pyramids scale by scale and concatenates the four enhanced
/// scales in order. A disabled direction passes its destination through.
FusedFeatures bfb_forward(const PointFeaturePyramid& z2d, const PointFeaturePyramid& z3d, const BfbParams& p,
                          FusionToggles toggles = {});

/// LIDAR-branch features used at inference: only 2D-to-3D fusion. The 2D
/// pyramid may be absent when use_2to3 is false.
ad::Value fuse_lidar_only(const std::optional<PointFeaturePyramid>& z2d, const PointFeaturePyramid& z3d,
                          const BfbParams& p, bool use_2to3);

ad::Value concat_scales(const PointFeaturePyramid& pyr);

ad::Value classify(const ad::Value& fused, const Linear& classifier);

/// Mean softmax cross-entropy over points.
ad::Value branch_loss(const ad::Value& logits, const std::vector<std::uint32_t>& labels);

}  // namespace cmdf
