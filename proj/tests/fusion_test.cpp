#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "cmdf/errors.hpp"
#include "cmdf/fusion.hpp"
#include "grad_cases.hpp"
#include "test_util.hpp"

namespace cmdf {
namespace {

using testing::random_tensor;

PointFeaturePyramid random_pyramid(std::size_t n, std::size_t d, Rng& rng) {
  PointFeaturePyramid p;
  for (auto& v : p) v = ad::constant(random_tensor(n, d, rng));
  return p;
}

/// Scalar-loop evaluation of one fusion block with single-layer MLPs.
Tensor fusion_oracle(const Tensor& src, const Tensor& dst, const SingleFusionParams& p) {
  const std::size_t n = src.rows(), d = src.cols();
  const Tensor& w1 = p.mlp1.layers[0].weight.data();
  const Tensor& b1 = p.mlp1.layers[0].bias.data();
  const Tensor& w2 = p.mlp2.layers[0].weight.data();
  const Tensor& b2 = p.mlp2.layers[0].bias.data();
  const Tensor& w3 = p.mlp3.layers[0].weight.data();
  const Tensor& b3 = p.mlp3.layers[0].bias.data();
  Tensor m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> cat(2 * d);
    for (std::size_t j = 0; j < d; ++j) {
      double s = b1(0, j);
      for (std::size_t k = 0; k < d; ++k) s += src(i, k) * w1(k, j);
      cat[j] = s;
      cat[d + j] = dst(i, j);
    }
    for (std::size_t j = 0; j < d; ++j) {
      double s = b2(0, j);
      for (std::size_t k = 0; k < 2 * d; ++k) s += cat[k] * w2(k, j);
      m(i, j) = s;
    }
  }
  std::vector<double> gap(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) gap[j] += m(i, j) / static_cast<double>(n);
  }
  Tensor out(n, d);
  const std::size_t gates = w3.cols();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> g(gates);
    for (std::size_t j = 0; j < gates; ++j) {
      double s = b3(0, j);
      for (std::size_t k = 0; k < d; ++k) s += gap[k] * w3(k, j) + m(i, k) * w3(d + k, j);
      g[j] = 1.0 / (1.0 + std::exp(-s));
    }
    for (std::size_t j = 0; j < d; ++j) out(i, j) = dst(i, j) + g[gates == 1 ? 0 : j] * m(i, j);
  }
  return out;
}

TEST(SingleFusion, ZeroParamsIsIdentity) {
  Rng rng = make_rng(1, 0);
  const ad::Value src = ad::constant(random_tensor(5, 3, rng));
  const ad::Value dst = ad::constant(random_tensor(5, 3, rng));
  EXPECT_EQ(single_fusion(src, dst, SingleFusionParams::zeros(3)).data(), dst.data());
  EXPECT_EQ(single_fusion(src, dst, SingleFusionParams::zeros(3, GateMode::scalar)).data(), dst.data());
}

TEST(SingleFusion, ZeroResidualWithArbitraryGate) {
  Rng rng = make_rng(2, 0);
  SingleFusionParams p = SingleFusionParams::init(3, 1, GateMode::channel, Activation::relu, rng);
  p.mlp2.layers[0] = Linear::zeros(6, 3);
  const ad::Value src = ad::constant(random_tensor(4, 3, rng));
  const ad::Value dst = ad::constant(random_tensor(4, 3, rng));
  EXPECT_EQ(single_fusion(src, dst, p).data(), dst.data());
}

TEST(SingleFusion, MatchesScalarOracle) {
  for (GateMode gate : {GateMode::channel, GateMode::scalar}) {
    Rng rng = make_rng(3, static_cast<std::uint64_t>(gate));
    const SingleFusionParams p = SingleFusionParams::init(2, 1, gate, Activation::relu, rng);
    for (auto& mlp : {p.mlp1, p.mlp2, p.mlp3}) {
      Tensor& b = ad::Value(mlp.layers[0].bias).mutable_data();
      for (double& v : b.values()) v = 0.3;
    }
    const Tensor src = random_tensor(3, 2, rng), dst = random_tensor(3, 2, rng);
    const Tensor got = single_fusion(ad::constant(src), ad::constant(dst), p).data();
    const Tensor want = fusion_oracle(src, dst, p);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-13);
  }
}

TEST(SingleFusion, ShapeMismatchRejected) {
  EXPECT_THROW(single_fusion(ad::constant(Tensor(2, 3)), ad::constant(Tensor(3, 3)), SingleFusionParams::zeros(3)),
               ShapeError);
}

TEST(SingleFusion, GateInUnitInterval) {
  Rng rng = make_rng(4, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const SingleFusionParams p = SingleFusionParams::init(4, 2, GateMode::channel, Activation::relu, rng);
    const auto g = fusion_gate(ad::constant(random_tensor(6, 4, rng, 3.0)), ad::constant(random_tensor(6, 4, rng, 3.0)), p);
    for (double v : g.data().values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(SingleFusion, FiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = make_rng(seed, 5);
    EXPECT_LT(testing::run_case(testing::single_fusion_case(rng)).max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(BfbForward, ZeroParamsGiveRawConcatenation) {
  Rng rng = make_rng(6, 0);
  const auto z2 = random_pyramid(7, 3, rng), z3 = random_pyramid(7, 3, rng);
  const auto f = bfb_forward(z2, z3, BfbParams::zeros(3, 4));
  EXPECT_EQ(f.z3d.data(), concat_scales(z3).data());
  EXPECT_EQ(f.z2d.data(), concat_scales(z2).data());
  EXPECT_EQ(f.z3d.cols(), 12u);
}

TEST(BfbForward, BlocksEqualIndependentFusions) {
  Rng rng = make_rng(7, 0);
  const BfbParams p = BfbParams::init(2, 3, 1, GateMode::channel, Activation::relu, rng);
  const auto z2 = random_pyramid(2, 2, rng), z3 = random_pyramid(2, 2, rng);
  const auto f = bfb_forward(z2, z3, p);
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const Tensor a = single_fusion(z2[s], z3[s], p.d2to3[s]).data();
    const Tensor b = single_fusion(z3[s], z2[s], p.d3to2[s]).data();
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_EQ(f.z3d.data()(i, 2 * s + k), a(i, k));
        EXPECT_EQ(f.z2d.data()(i, 2 * s + k), b(i, k));
      }
    }
  }
}

TEST(BfbForward, SwapSymmetry) {
  Rng rng = make_rng(8, 0);
  const BfbParams p = BfbParams::init(3, 2, 1, GateMode::channel, Activation::relu, rng);
  BfbParams q = p;
  std::swap(q.d2to3, q.d3to2);
  const auto z2 = random_pyramid(4, 3, rng), z3 = random_pyramid(4, 3, rng);
  const auto a = bfb_forward(z2, z3, p);
  const auto b = bfb_forward(z3, z2, q);
  EXPECT_EQ(a.z2d.data(), b.z3d.data());
  EXPECT_EQ(a.z3d.data(), b.z2d.data());
}

TEST(BfbForward, DisabledDirectionPassesThrough) {
  Rng rng = make_rng(9, 0);
  const BfbParams p = BfbParams::init(3, 2, 1, GateMode::channel, Activation::relu, rng);
  const auto z2 = random_pyramid(4, 3, rng), z3 = random_pyramid(4, 3, rng);
  const auto f = bfb_forward(z2, z3, p, {false, true});
  EXPECT_EQ(f.z3d.data(), concat_scales(z3).data());
  EXPECT_NE(f.z2d.data(), concat_scales(z2).data());
  const auto g = bfb_forward(z2, z3, p, {true, false});
  EXPECT_EQ(g.z2d.data(), concat_scales(z2).data());
}

TEST(BfbForward, PerScaleIndependence) {
  Rng rng = make_rng(10, 0);
  const BfbParams p = BfbParams::init(3, 2, 1, GateMode::channel, Activation::relu, rng);
  const auto z2 = random_pyramid(5, 3, rng), z3 = random_pyramid(5, 3, rng);
  const Tensor base = bfb_forward(z2, z3, p).z3d.data();
  for (std::size_t s = 0; s < kNumScales; ++s) {
    BfbParams q = p;
    q.d2to3[s] = SingleFusionParams::zeros(3);
    const Tensor changed = bfb_forward(z2, z3, q).z3d.data();
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t c = 0; c < 12; ++c) {
        if (c / 3 == s) {
          EXPECT_EQ(changed(i, c), z3[s].data()(i, c % 3));
        } else {
          EXPECT_EQ(changed(i, c), base(i, c));
        }
      }
    }
  }
}

TEST(BfbForward, MisalignedRejected) {
  Rng rng = make_rng(11, 0);
  auto z2 = random_pyramid(4, 3, rng);
  const auto z3 = random_pyramid(4, 3, rng);
  z2[2] = ad::constant(Tensor(5, 3));
  EXPECT_THROW(bfb_forward(z2, z3, BfbParams::zeros(3, 2)), ShapeError);
}

TEST(BfbParams, EightIndependentBlocksAndTwoClassifiers) {
  Rng rng = make_rng(12, 0);
  const BfbParams p = BfbParams::init(2, 3, 1, GateMode::channel, Activation::relu, rng);
  ParamList params;
  p.collect("bfb", params);
  EXPECT_EQ(params.size(), 8u * 6 + 4);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = i + 1; j < params.size(); ++j) EXPECT_FALSE(params[i].value.same_node(params[j].value));
  }
}

TEST(FuseLidarOnly, MatchesBfbLidarOutput) {
  Rng rng = make_rng(13, 0);
  const BfbParams p = BfbParams::init(3, 2, 1, GateMode::channel, Activation::relu, rng);
  const auto z2 = random_pyramid(4, 3, rng), z3 = random_pyramid(4, 3, rng);
  EXPECT_EQ(fuse_lidar_only(z2, z3, p, true).data(), bfb_forward(z2, z3, p).z3d.data());
  EXPECT_EQ(fuse_lidar_only(std::nullopt, z3, p, false).data(), concat_scales(z3).data());
}

TEST(Classify, ZeroWeightsGiveZeroLogits) {
  const ad::Value logits = classify(ad::constant(Tensor(3, 8, 1.5)), Linear::zeros(8, 4));
  for (double v : logits.data().values()) EXPECT_EQ(v, 0.0);
}

TEST(Classify, SelectionWeights) {
  Linear g = Linear::zeros(4, 2);
  g.weight.mutable_data()(1, 0) = 1.0;
  g.weight.mutable_data()(3, 1) = 1.0;
  const ad::Value logits = classify(ad::constant(Tensor::from_rows({{0.1, 0.2, 0.3, 0.4}})), g);
  EXPECT_EQ(logits.data(), Tensor::from_rows({{0.2, 0.4}}));
}

TEST(Classify, MatchesMatmulOracle) {
  Rng rng = make_rng(14, 0);
  const Linear g = Linear::init(8, 3, rng);
  ad::Value(g.bias).mutable_data() = random_tensor(1, 3, rng);
  const Tensor x = random_tensor(5, 8, rng);
  const Tensor got = classify(ad::constant(x), g).data();
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      double s = g.bias.data()(0, c);
      for (std::size_t k = 0; k < 8; ++k) s += x(i, k) * g.weight.data()(k, c);
      EXPECT_NEAR(got(i, c), s, 1e-13);
    }
  }
}

TEST(Classify, WidthMismatchRejected) {
  EXPECT_THROW(classify(ad::constant(Tensor(2, 5)), Linear::zeros(4, 2)), ShapeError);
}

TEST(BranchLoss, UniformLogits) {
  EXPECT_NEAR(branch_loss(ad::constant(Tensor(3, 2, 0.0)), {0, 1, 1}).item(), std::log(2.0), 1e-15);
}

TEST(BranchLoss, DecreasesWithMargin) {
  double prev = HUGE_VAL;
  for (double margin : {0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0}) {
    const double l = branch_loss(ad::constant(Tensor::from_rows({{margin, 0.0}})), {0}).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-15);
}

TEST(BranchLoss, MatchesLogSumExpOracle) {
  Rng rng = make_rng(15, 0);
  const Tensor z = random_tensor(4, 3, rng, 2.0);
  const std::vector<std::uint32_t> y{2, 0, 1, 2};
  double want = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += std::exp(z(i, c));
    want += std::log(s) - z(i, y[i]);
  }
  EXPECT_NEAR(branch_loss(ad::constant(z), y).item(), want / 4, 1e-14);
}

TEST(BranchLoss, OutOfRangeLabelRejected) {
  EXPECT_THROW(branch_loss(ad::constant(Tensor(1, 2)), {2}), ValidationError);
}

TEST(BranchLoss, FiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = make_rng(seed, 6);
    EXPECT_LT(testing::run_case(testing::branch_loss_case(rng)).max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Pipeline, FiniteDifferencesThroughEveryFusionParam) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, 7);
    const std::size_t d = 2, n = 3;
    auto p = std::make_shared<BfbParams>(BfbParams::init(d, 2, 1, GateMode::channel, Activation::leaky_relu, rng));
    const auto z2 = random_pyramid(n, d, rng), z3 = random_pyramid(n, d, rng);
    ParamList params;
    p->collect("bfb", params);
    std::vector<ad::Value> leaves;
    for (const auto& np : params) leaves.push_back(np.value);
    const std::vector<std::uint32_t> y{0, 1, 1};
    const auto report = ad::finite_difference_check(
        [&](std::span<const ad::Value>) {
          const auto f = bfb_forward(z2, z3, *p);
          return ad::add(branch_loss(classify(f.z3d, p->g3d), y), branch_loss(classify(f.z2d, p->g2d), y));
        },
        leaves);
    EXPECT_LT(report.max_rel_error, 1e-4) << "seed " << seed;
  }
}

}  // namespace
}  // namespace cmdf
