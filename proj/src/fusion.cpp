#include "cmdf/fusion.hpp"

#include "cmdf/errors.hpp"

namespace cmdf {

namespace {

std::vector<std::size_t> mlp_dims(std::size_t in, std::size_t out, std::size_t hidden, std::size_t depth) {
  std::vector<std::size_t> dims{in};
  for (std::size_t i = 1; i < depth; ++i) dims.push_back(hidden);
  dims.push_back(out);
  return dims;
}

Mlp zero_mlp(std::size_t in, std::size_t out) {
  Mlp m;
  m.layers.push_back(Linear::zeros(in, out));
  return m;
}

void require_same_shape(const ad::Value& a, const ad::Value& b, const char* what) {
  if (!a.data().same_shape(b.data())) {
    throw ShapeError(std::string(what) + ": " + a.data().shape_string() + " vs " + b.data().shape_string());
  }
}

ad::Value fusion_residual(const ad::Value& src, const ad::Value& dst, const SingleFusionParams& p) {
  require_same_shape(src, dst, "single_fusion");
  const std::array<ad::Value, 2> first{p.mlp1(src), dst};
  return p.mlp2(ad::concat_cols(first));
}

ad::Value gate_from_residual(const ad::Value& m, const SingleFusionParams& p) {
  const std::array<ad::Value, 2> ctx{ad::broadcast_row(ad::row_mean(m), m.rows()), m};
  ad::Value gate = ad::sigmoid(p.mlp3(ad::concat_cols(ctx)));
  if (p.gate == GateMode::scalar) {
    // N x 1 -> N x d by multiplying with a constant ones row.
    gate = ad::matmul(gate, ad::constant(Tensor(1, m.cols(), 1.0)));
  }
  return gate;
}

}  // namespace

SingleFusionParams SingleFusionParams::init(std::size_t width, std::size_t depth, GateMode gate, Activation act,
                                            Rng& rng) {
  if (depth == 0) throw ValidationError("SingleFusionParams: MLP depth must be >= 1");
  SingleFusionParams p;
  p.gate = gate;
  p.mlp1 = Mlp::init(mlp_dims(width, width, width, depth), act, rng);
  p.mlp2 = Mlp::init(mlp_dims(2 * width, width, width, depth), act, rng);
  p.mlp3 = Mlp::init(mlp_dims(2 * width, gate == GateMode::channel ? width : 1, width, depth), act, rng);
  return p;
}

SingleFusionParams SingleFusionParams::zeros(std::size_t width, GateMode gate) {
  SingleFusionParams p;
  p.gate = gate;
  p.mlp1 = zero_mlp(width, width);
  p.mlp2 = zero_mlp(2 * width, width);
  p.mlp3 = zero_mlp(2 * width, gate == GateMode::channel ? width : 1);
  return p;
}

void SingleFusionParams::collect(const std::string& prefix, ParamList& out) const {
  mlp1.collect(prefix + ".mlp1", out);
  mlp2.collect(prefix + ".mlp2", out);
  mlp3.collect(prefix + ".mlp3", out);
}

BfbParams BfbParams::init(std::size_t width, std::size_t classes, std::size_t depth, GateMode gate, Activation act,
                          Rng& rng) {
  BfbParams p;
  for (auto& f : p.d2to3) f = SingleFusionParams::init(width, depth, gate, act, rng);
  for (auto& f : p.d3to2) f = SingleFusionParams::init(width, depth, gate, act, rng);
  p.g2d = Linear::init(kNumScales * width, classes, rng);
  p.g3d = Linear::init(kNumScales * width, classes, rng);
  return p;
}

BfbParams BfbParams::zeros(std::size_t width, std::size_t classes) {
  BfbParams p;
  for (auto& f : p.d2to3) f = SingleFusionParams::zeros(width);
  for (auto& f : p.d3to2) f = SingleFusionParams::zeros(width);
  p.g2d = Linear::zeros(kNumScales * width, classes);
  p.g3d = Linear::zeros(kNumScales * width, classes);
  return p;
}

void BfbParams::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t s = 0; s < kNumScales; ++s) {
    d2to3[s].collect(prefix + ".d2to3.s" + std::to_string(s + 1), out);
  }
  for (std::size_t s = 0; s < kNumScales; ++s) {
    d3to2[s].collect(prefix + ".d3to2.s" + std::to_string(s + 1), out);
  }
  out.push_back({prefix + ".g2d.w", g2d.weight});
  out.push_back({prefix + ".g2d.b", g2d.bias});
  out.push_back({prefix + ".g3d.w", g3d.weight});
  out.push_back({prefix + ".g3d.b", g3d.bias});
}

ad::Value single_fusion(const ad::Value& src, const ad::Value& dst, const SingleFusionParams& p) {
  const ad::Value m = fusion_residual(src, dst, p);
  return ad::add(dst, ad::mul(gate_from_residual(m, p), m));
}

ad::Value fusion_gate(const ad::Value& src, const ad::Value& dst, const SingleFusionParams& p) {
  return gate_from_residual(fusion_residual(src, dst, p), p);
}

ad::Value concat_scales(const PointFeaturePyramid& pyr) { return ad::concat_cols(pyr); }

namespace {

void require_aligned(const PointFeaturePyramid& z2d, const PointFeaturePyramid& z3d) {
  for (std::size_t s = 0; s < kNumScales; ++s) {
    if (!z2d[s].data().same_shape(z3d[s].data()) || !z3d[s].data().same_shape(z3d[0].data())) {
      throw ShapeError("bfb_forward: pyramids misaligned at scale " + std::to_string(s + 1) + ": " +
                       z2d[s].data().shape_string() + " vs " + z3d[s].data().shape_string());
    }
  }
}

}  // namespace

FusedFeatures bfb_forward(const PointFeaturePyramid& z2d, const PointFeaturePyramid& z3d, const BfbParams& p,
                          FusionToggles toggles) {
  require_aligned(z2d, z3d);
  PointFeaturePyramid enhanced2d;
  PointFeaturePyramid enhanced3d;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    enhanced2d[s] = toggles.use_3to2 ? single_fusion(z3d[s], z2d[s], p.d3to2[s]) : z2d[s];
    enhanced3d[s] = toggles.use_2to3 ? single_fusion(z2d[s], z3d[s], p.d2to3[s]) : z3d[s];
  }
  return {concat_scales(enhanced2d), concat_scales(enhanced3d)};
}

ad::Value fuse_lidar_only(const std::optional<PointFeaturePyramid>& z2d, const PointFeaturePyramid& z3d,
                          const BfbParams& p, bool use_2to3) {
  if (!use_2to3) return concat_scales(z3d);
  if (!z2d) throw ValidationError("fuse_lidar_only: 2D-to-3D fusion needs the 2D knowledge pyramid");
  require_aligned(*z2d, z3d);
  PointFeaturePyramid enhanced;
  for (std::size_t s = 0; s < kNumScales; ++s) enhanced[s] = single_fusion((*z2d)[s], z3d[s], p.d2to3[s]);
  return concat_scales(enhanced);
}

ad::Value classify(const ad::Value& fused, const Linear& classifier) {
  if (fused.cols() != classifier.in()) {
    throw ShapeError("classify: features " + fused.data().shape_string() + " vs classifier input " +
                     std::to_string(classifier.in()));
  }
  return classifier(fused);
}

ad::Value branch_loss(const ad::Value& logits, const std::vector<std::uint32_t>& labels) {
  return ad::softmax_cross_entropy(logits, std::vector<std::size_t>(labels.begin(), labels.end()));
}

}  // namespace cmdf
