#include <cmath>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "oracles.hpp"
#include "scod/errors.hpp"
#include "scod/objectives.hpp"

namespace scod {
namespace {

using scod::testing::numeric_gradient;
using scod::testing::relative_error;
using scod::testing::uniform;
using torch::indexing::Slice;

constexpr double kLn2 = 0.69314718055994530942;

torch::Tensor labels_with(std::int64_t h, std::int64_t w, std::vector<std::tuple<int, int, int>> points) {
  auto s = torch::zeros({h, w}, torch::kUInt8);
  for (auto [r, c, v] : points) s[r][c] = v;
  return s;
}

torch::Tensor autograd(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x) {
  auto p = x.detach().clone().requires_grad_();
  f(p).backward();
  return p.grad();
}

void expect_gradient_matches(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x) {
  const auto analytic = autograd(f, x);
  const auto numeric = numeric_gradient(f, x);
  ASSERT_GT(numeric.abs().max().item<double>(), 0.0);
  EXPECT_LE(relative_error(analytic, numeric), 1e-4);
}

// --- pce ---------------------------------------------------------------------

TEST(Pce, PerfectPredictionIsZero) {
  const auto s = labels_with(4, 4, {{1, 2, 1}});
  auto p = torch::full({4, 4}, 0.3, torch::kFloat64);
  p[1][2] = 1.0;
  EXPECT_NEAR(pce_loss(p, s).item<double>(), 0.0, 1e-5);
}

TEST(Pce, HalfProbabilityGivesLn2) {
  const auto s = labels_with(4, 4, {{0, 0, 1}});
  EXPECT_NEAR(pce_loss(torch::full({4, 4}, 0.5, torch::kFloat64), s).item<double>(), kLn2, 1e-12);
}

TEST(Pce, IgnoresUnlabeledPixels) {
  const auto s = scod::testing::random_scribble(8, 8, 0.3, 1);
  auto p = uniform({8, 8}, 0.05, 0.95, 2);
  const double before = pce_loss(p, s).item<double>();
  auto q = torch::where(s.eq(0), uniform({8, 8}, 0, 1, 3), p);
  EXPECT_EQ(pce_loss(q, s).item<double>(), before);
}

TEST(Pce, EmptySupervisionIsAnError) {
  try {
    pce_loss(torch::full({4, 4}, 0.5), torch::zeros({4, 4}, torch::kUInt8));
    FAIL() << "expected a ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "empty supervision");
  }
}

TEST(Pce, SaturatedPredictionsStayFinite) {
  const auto s = labels_with(4, 4, {{0, 0, 1}, {1, 1, 2}});
  auto p = torch::zeros({4, 4}, torch::kFloat64);
  p[1][1] = 1.0;
  const double loss = pce_loss(p, s).item<double>();
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, -std::log(kProbEpsilon), 1e-9);
}

// --- ssim / cv / rcv -----------------------------------------------------------

TEST(Ssim, SelfSimilarityIsOne) {
  const auto a = uniform({8, 8}, 0, 1, 4);
  EXPECT_TRUE(torch::allclose(ssim_map(a, a), torch::ones({1, 8, 8}, torch::kFloat64), 0, 1e-12));
}

TEST(Ssim, ConstantOneVersusZero) {
  const auto v = ssim_map(torch::ones({6, 6}, torch::kFloat64), torch::zeros({6, 6}, torch::kFloat64));
  const double expected = kSsimC1 * kSsimC2 / ((1 + kSsimC1) * kSsimC2);
  EXPECT_NEAR(v.max().item<double>(), expected, 1e-15);
  EXPECT_NEAR(v.min().item<double>(), expected, 1e-15);
  EXPECT_NEAR(expected, 1.0e-4, 1e-8);
}

TEST(Ssim, IsSymmetricAndBounded) {
  const auto a = uniform({10, 9}, 0, 1, 5);
  const auto b = uniform({10, 9}, 0, 1, 6);
  const auto ab = ssim_map(a, b);
  EXPECT_TRUE(torch::allclose(ab, ssim_map(b, a), 0, 1e-15));
  EXPECT_LE(ab.max().item<double>(), 1.0);
  EXPECT_GE(ab.min().item<double>(), -1.0);
  EXPECT_THROW(ssim_map(a, b.index({Slice(0, 5)})), ValidationError);
}

TEST(CrossView, IdenticalMapsCostNothing) {
  const auto a = uniform({8, 8}, 0, 1, 7);
  EXPECT_NEAR(cv_loss(a, a, torch::ones({8, 8}, torch::kBool), 0.85).item<double>(), 0.0, 1e-12);
}

TEST(CrossView, ConstantOneVersusZero) {
  const auto v = cv_loss(torch::ones({6, 6}, torch::kFloat64), torch::zeros({6, 6}, torch::kFloat64),
                         torch::ones({6, 6}, torch::kBool), 0.85)
                     .item<double>();
  const double ssim = kSsimC1 / (1 + kSsimC1);
  EXPECT_NEAR(v, 0.15 * (1 - ssim) / 2 + 0.85, 1e-12);
  EXPECT_NEAR(v, 0.925, 1e-4);
}

TEST(CrossView, SymmetricInValue) {
  const auto a = uniform({8, 8}, 0, 1, 8);
  const auto b = uniform({8, 8}, 0, 1, 9);
  const auto m = uniform({8, 8}, 0, 1, 10) > 0.3;
  EXPECT_NEAR(cv_loss(a, b, m, 0.85).item<double>(), cv_loss(b, a, m, 0.85).item<double>(), 1e-15);
}

TEST(CrossView, OnlyValidPixelsCount) {
  const auto a = uniform({8, 8}, 0, 1, 11);
  const auto b = uniform({8, 8}, 0, 1, 12);
  auto m = torch::ones({8, 8}, torch::kBool);
  m.index_put_({Slice(), Slice(0, 3)}, false);
  auto b2 = b.clone();
  b2.index_put_({Slice(), Slice(0, 3)}, 0.123);
  EXPECT_EQ(cv_loss(a, b, m, 0.85).item<double>(), cv_loss(a, b2, m, 0.85).item<double>());
  EXPECT_THROW(cv_loss(a, b, torch::zeros({8, 8}, torch::kBool), 0.85), ValidationError);
}

TEST(ReliableCrossView, ValueIsIndependentOfGamma) {
  const auto a = uniform({2, 8, 8}, 0, 1, 13);
  const auto b = uniform({2, 8, 8}, 0, 1, 14);
  const auto m = uniform({2, 8, 8}, 0, 1, 15) > 0.2;
  const double v0 = rcv_loss(a, b, m, 0.85, 0.0).item<double>();
  EXPECT_EQ(rcv_loss(a, b, m, 0.85, 0.3).item<double>(), v0);
  EXPECT_EQ(rcv_loss(a, b, m, 0.85, 0.9).item<double>(), v0);
  EXPECT_NEAR(v0, 2 * cv_loss(a, b, m, 0.85).item<double>(), 1e-15);
}

TEST(ReliableCrossView, GradientSplitFollowsGamma) {
  const auto a = uniform({8, 8}, 0.05, 0.95, 16);
  const auto b = a.flip({1});
  const auto m = torch::ones({8, 8}, torch::kBool);
  for (double gamma : {0.0, 0.3, 0.9}) {
    auto pa = a.clone().requires_grad_();
    auto pb = b.clone().requires_grad_();
    rcv_loss(pa, pb, m, 0.85, gamma).backward();
    const double ratio = pb.grad().norm().item<double>() / pa.grad().norm().item<double>();
    EXPECT_NEAR(ratio, (1 + gamma) / (1 - gamma), 1e-3) << "gamma " << gamma;
  }
}

TEST(ReliableCrossView, EachSideScalesTheSymmetricGradient) {
  const auto a = uniform({8, 8}, 0.05, 0.95, 17);
  const auto b = uniform({8, 8}, 0.05, 0.95, 18);
  const auto m = uniform({8, 8}, 0, 1, 19) > 0.2;
  const double gamma = 0.3;
  const auto ga = autograd([&](const torch::Tensor& x) { return rcv_loss(x, b, m, 0.85, gamma); }, a);
  const auto gb = autograd([&](const torch::Tensor& x) { return rcv_loss(a, x, m, 0.85, gamma); }, b);
  const auto fa = numeric_gradient([&](const torch::Tensor& x) { return cv_loss(x, b, m, 0.85); }, a);
  const auto fb = numeric_gradient([&](const torch::Tensor& x) { return cv_loss(a, x, m, 0.85); }, b);
  EXPECT_LE(relative_error(ga, (1 - gamma) * fa), 1e-4);
  EXPECT_LE(relative_error(gb, (1 + gamma) * fb), 1e-4);
}

// --- entropy / iv ---------------------------------------------------------------

TEST(Entropy, KnownValues) {
  auto p = torch::tensor({0.0, 1.0, 0.5, 0.9}, torch::kFloat64).view({2, 2});
  const auto e = binary_entropy_map(p)[0];
  EXPECT_NEAR(e[0][0].item<double>(), 0.0, 2e-5);
  EXPECT_NEAR(e[0][1].item<double>(), 0.0, 2e-5);
  EXPECT_NEAR(e[1][0].item<double>(), kLn2, 1e-12);
  EXPECT_NEAR(e[1][1].item<double>(), 0.3250829733914482, 1e-12);
}

TEST(InsideView, SkipsNearBoundaryPixels) {
  LossConfig cfg;
  EXPECT_EQ(iv_loss(torch::full({8, 8}, 0.5, torch::kFloat64), cfg, 120).item<double>(), 0.0);
}

TEST(InsideView, ConfidentMapAfterStart) {
  LossConfig cfg;
  EXPECT_NEAR(iv_loss(torch::full({8, 8}, 0.9, torch::kFloat64), cfg, 100).item<double>(),
              0.05 * 0.3250829733914482, 1e-12);
  EXPECT_NEAR(0.05 * 0.3250829733914482, 0.01626, 1e-5);
}

TEST(InsideView, ZeroBeforeStart) {
  LossConfig cfg;
  EXPECT_EQ(iv_loss(uniform({8, 8}, 0, 1, 20), cfg, 99).item<double>(), 0.0);
  EXPECT_EQ(iv_loss(uniform({8, 8}, 0, 1, 20), cfg, 0).item<double>(), 0.0);
}

TEST(InsideView, InvariantToExcludedPixels) {
  LossConfig cfg;
  auto p = uniform({8, 8}, 0, 1, 21);
  const auto excluded = binary_entropy_map(p)[0] > cfg.entropy_threshold;
  ASSERT_TRUE(excluded.any().item<bool>());
  auto q = torch::where(excluded, 0.5 + 0.05 * uniform({8, 8}, -1, 1, 22), p);
  EXPECT_EQ(iv_loss(p, cfg, 150).item<double>(), iv_loss(q, cfg, 150).item<double>());
}

// --- kernels / affinity -----------------------------------------------------------

TEST(VisualKernel, KnownValuesAndSymmetry) {
  LossConfig cfg;
  const auto image = uniform({3, 10, 10}, 0, 1, 23);
  EXPECT_EQ(visual_kernel(image, {4, 4}, {4, 4}, cfg), 1.0);
  const auto flat = torch::full({3, 10, 10}, 0.4, torch::kFloat64);
  EXPECT_NEAR(visual_kernel(flat, {2, 2}, {2, 4}, cfg), std::exp(-4.0 / 72.0), 1e-15);
  EXPECT_NEAR(std::exp(-4.0 / 72.0), 0.9460, 1e-4);
  for (int k = 0; k < 20; ++k) {
    const Pixel i{k % 10, (3 * k) % 10};
    const Pixel j{(k + 1) % 10, (7 * k) % 10};
    const double kij = visual_kernel(image, i, j, cfg);
    EXPECT_EQ(kij, visual_kernel(image, j, i, cfg));
    EXPECT_GT(kij, 0.0);
    EXPECT_LE(kij, 1.0);
  }
}

TEST(Disagreement, RangeAndExtremes) {
  const auto p = torch::linspace(0, 1, 21, torch::kFloat64);
  const auto d = pair_disagreement(p.unsqueeze(1), p.unsqueeze(0));
  EXPECT_GE(d.min().item<double>(), 0.0);
  EXPECT_LE(d.max().item<double>(), 1.0);
  EXPECT_EQ(d[0][0].item<double>(), 0.0);
  EXPECT_EQ(d[20][20].item<double>(), 0.0);
  EXPECT_EQ(d[0][20].item<double>(), 1.0);
  const auto diag = d.diagonal();
  EXPECT_EQ(diag.argmax().item<int64_t>(), 10);
  EXPECT_NEAR(diag[10].item<double>(), 0.5, 1e-15);
  EXPECT_EQ((diag == 0).sum().item<int64_t>(), 2);
}

TEST(ContextAffinity, ConfidentConstantMapsCostNothing) {
  LossConfig cfg;
  const auto image = uniform({3, 12, 12}, 0, 1, 24);
  EXPECT_NEAR(context_affinity_loss(torch::zeros({12, 12}, torch::kFloat64), image, cfg).item<double>(), 0.0, 1e-12);
  EXPECT_NEAR(context_affinity_loss(torch::ones({12, 12}, torch::kFloat64), image, cfg).item<double>(), 0.0, 1e-12);
}

TEST(ContextAffinity, HalfMapOnFlatImageMatchesOracle) {
  LossConfig cfg;
  const auto pred = torch::full({16, 16}, 0.5, torch::kFloat64);
  const auto image = torch::full({3, 16, 16}, 0.3, torch::kFloat64);
  const double got = context_affinity_loss(pred, image, cfg).item<double>();
  const double expected = oracle::context_affinity(oracle::to_grid(pred), oracle::to_grids(image), cfg);
  EXPECT_NEAR(got, expected, 1e-12);
  EXPECT_GT(got, 0.0);
  EXPECT_LT(got, 0.5);
}

TEST(ContextAffinity, RandomInputsMatchOracle) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    LossConfig cfg;
    cfg.kernel_window = seed % 2 == 0 ? 5 : 3;
    cfg.sigma_c = 0.1 + 0.2 * static_cast<double>(seed);
    const auto h = 11 + static_cast<std::int64_t>(seed) * 3;
    const auto pred = uniform({h, 20}, 0, 1, 30 + seed);
    const auto image = uniform({3, h, 20}, 0, 1, 40 + seed);
    EXPECT_NEAR(context_affinity_loss(pred, image, cfg).item<double>(),
                oracle::context_affinity(oracle::to_grid(pred), oracle::to_grids(image), cfg), 1e-6);
  }
}

TEST(ContextAffinity, BatchIsMeanOfImages) {
  LossConfig cfg;
  const auto pred = uniform({2, 1, 9, 9}, 0, 1, 50);
  const auto image = uniform({2, 3, 9, 9}, 0, 1, 51);
  const double batched = context_affinity_loss(pred, image, cfg).item<double>();
  const double a = context_affinity_loss(pred[0], image[0], cfg).item<double>();
  const double b = context_affinity_loss(pred[1], image[1], cfg).item<double>();
  EXPECT_NEAR(batched, (a + b) / 2, 1e-15);
}

// --- significance -------------------------------------------------------------------

TEST(ChannelSignificance, CovarianceIdentities) {
  const auto pred = uniform({6, 7}, 0, 1, 52);
  const auto feature = torch::stack({torch::full({6, 7}, 2.0, torch::kFloat64), pred, -pred});
  const auto sig = channel_significance(feature, pred);
  const double var = pred.var().item<double>();
  EXPECT_NEAR(sig[0].item<double>(), 0.0, 1e-15);
  EXPECT_NEAR(sig[1].item<double>(), var, 1e-15);
  EXPECT_NEAR(sig[2].item<double>(), -var, 1e-15);
  EXPECT_THROW(channel_significance(torch::zeros({2, 1, 1}), torch::zeros({1, 1})), ValidationError);
}

TEST(ChannelSignificance, MatchesOracle) {
  const auto pred = uniform({13, 11}, 0, 1, 53);
  const auto feature = uniform({9, 13, 11}, -2, 2, 54);
  const auto sig = channel_significance(feature, pred);
  const auto expected = oracle::channel_significance(oracle::to_grids(feature), oracle::to_grid(pred));
  for (std::size_t c = 0; c < expected.size(); ++c) EXPECT_NEAR(sig[c].item<double>(), expected[c], 1e-12);
}

TEST(ChannelSelection, OrdersByMagnitudeWithIndexTies) {
  EXPECT_EQ(select_significant_channels(torch::tensor({0.5, -0.9, 0.1}), 2), (std::vector<std::int64_t>{1, 0}));
  EXPECT_EQ(select_significant_channels(torch::tensor({0.5, -0.9, 0.1}), 3), (std::vector<std::int64_t>{1, 0, 2}));
  EXPECT_EQ(select_significant_channels(torch::zeros({5}), 3), (std::vector<std::int64_t>{0, 1, 2}));
  EXPECT_EQ(select_significant_channels(torch::tensor({0.2, -0.2, 0.2}), 2), (std::vector<std::int64_t>{0, 1}));
  EXPECT_THROW(select_significant_channels(torch::zeros({3}), 4), ValidationError);
}

// --- boundary regions ---------------------------------------------------------------

class BoundaryRegions : public ::testing::Test {
 protected:
  torch::Tensor pred = torch::full({40, 40}, 0.5, torch::kFloat64);
  torch::Tensor scribble = torch::zeros({40, 40}, torch::kUInt8);
  LossConfig cfg;

  std::vector<BlockIndex> run() { return boundary_regions(pred, scribble, cfg); }
};

TEST_F(BoundaryRegions, HalfConfidentForegroundHalfBackgroundIsSelected) {
  pred.index_put_({Slice(0, 20), Slice(0, 10)}, 0.95);
  pred.index_put_({Slice(0, 20), Slice(10, 20)}, 0.05);
  EXPECT_EQ(run(), (std::vector<BlockIndex>{{0, 0}}));
}

TEST_F(BoundaryRegions, AllForegroundIsNotSelected) {
  pred.index_put_({Slice(0, 20), Slice(20, 40)}, 0.95);
  EXPECT_TRUE(run().empty());
}

TEST_F(BoundaryRegions, NoClassifiedPixelsSelectsNothing) {
  EXPECT_TRUE(run().empty());
  LossConfig c;
  EXPECT_EQ(semantic_significance_loss(pred, uniform({8, 40, 40}, 0, 1, 1), scribble, c, 60).item<double>(), 0.0);
}

TEST_F(BoundaryRegions, ThirtyPercentIsInclusive) {
  // 120 of 400 pixels is exactly 30%.
  pred.index_put_({Slice(20, 26), Slice(20, 40)}, 0.95);
  pred.index_put_({Slice(34, 40), Slice(20, 40)}, 0.05);
  EXPECT_EQ(run(), (std::vector<BlockIndex>{{1, 1}}));
  pred[34][20] = 0.5;
  EXPECT_TRUE(run().empty());
}

TEST_F(BoundaryRegions, ConfidenceThresholdsAreStrict) {
  pred.index_put_({Slice(0, 20), Slice(0, 10)}, 0.8);
  pred.index_put_({Slice(0, 20), Slice(10, 20)}, 0.05);
  EXPECT_TRUE(run().empty());
  pred.index_put_({Slice(0, 20), Slice(0, 10)}, std::nextafter(0.8, 1.0));
  EXPECT_EQ(run().size(), 1u);
  pred.index_put_({Slice(0, 20), Slice(10, 20)}, 0.2);
  EXPECT_TRUE(run().empty());
  pred.index_put_({Slice(0, 20), Slice(10, 20)}, std::nextafter(0.2, 0.0));
  EXPECT_EQ(run().size(), 1u);
}

TEST_F(BoundaryRegions, ScribblesOverridePredictions) {
  pred.index_put_({Slice(20, 40), Slice(0, 20)}, 0.95);
  scribble.index_put_({Slice(20, 28), Slice(0, 20)}, 2);
  EXPECT_EQ(run(), (std::vector<BlockIndex>{{1, 0}}));
  scribble.index_put_({Slice(20, 28), Slice(0, 20)}, 1);
  EXPECT_TRUE(run().empty());
}

TEST_F(BoundaryRegions, PartialEdgeBlocksAreTiled) {
  pred = torch::full({45, 30}, 0.5, torch::kFloat64);
  scribble = torch::zeros({45, 30}, torch::kUInt8);
  pred.index_put_({Slice(40, 45), Slice(20, 25)}, 0.95);
  pred.index_put_({Slice(40, 45), Slice(25, 30)}, 0.05);
  EXPECT_EQ(run(), (std::vector<BlockIndex>{{2, 1}}));
  const auto e = block_extent({2, 1}, 45, 30, 20);
  EXPECT_EQ(e.top, 40);
  EXPECT_EQ(e.left, 20);
  EXPECT_EQ(e.height, 5);
  EXPECT_EQ(e.width, 10);
}

// --- semantic significance ---------------------------------------------------------

TEST(SemanticSignificance, WeightRamp) {
  LossConfig cfg;
  EXPECT_EQ(ss_weight(cfg, 0), 0.0);
  EXPECT_EQ(ss_weight(cfg, 25), 0.3 * (25.0 / 50.0));
  EXPECT_EQ(ss_weight(cfg, 50), 0.3);
  EXPECT_EQ(ss_weight(cfg, 140), 0.3);
  cfg.w_ss_ramp_epochs = 0;
  EXPECT_EQ(ss_weight(cfg, 0), 0.3);
}

TEST(SemanticSignificance, ConfidentBlockContributesNothing) {
  LossConfig cfg;
  auto pred = torch::ones({20, 20}, torch::kFloat64);
  auto scribble = torch::zeros({20, 20}, torch::kUInt8);
  scribble.index_put_({Slice(0, 8), Slice()}, 2);
  ASSERT_EQ(boundary_regions(pred, scribble, cfg).size(), 1u);
  EXPECT_EQ(semantic_significance_loss(pred, uniform({16, 20, 20}, 0, 1, 2), scribble, cfg, 60).item<double>(), 0.0);
}

TEST(SemanticSignificance, SingleBlockMatchesOracle) {
  LossConfig cfg;
  auto pred = uniform({20, 20}, 0, 1, 60);
  pred.index_put_({Slice(0, 7), Slice()}, 0.9);
  pred.index_put_({Slice(13, 20), Slice()}, 0.1);
  const auto feature = uniform({24, 20, 20}, -1, 1, 61);
  const auto scribble = torch::zeros({20, 20}, torch::kUInt8);
  ASSERT_EQ(boundary_regions(pred, scribble, cfg).size(), 1u);
  for (std::int64_t epoch : {10, 60}) {
    const double got = semantic_significance_loss(pred, feature, scribble, cfg, epoch).item<double>();
    const double expected = oracle::semantic_significance(oracle::to_grid(pred), oracle::to_grids(feature),
                                                          oracle::to_grid(scribble), cfg, epoch);
    EXPECT_GT(got, 0.0);
    EXPECT_NEAR(got, expected, 1e-6);
  }
}

TEST(SemanticSignificance, FeatureIsTreatedAsConstant) {
  LossConfig cfg;
  cfg.block_size = 8;
  auto pred = uniform({8, 8}, 0.3, 0.7, 62);
  auto scribble = torch::zeros({8, 8}, torch::kUInt8);
  scribble.index_put_({Slice(0, 3), Slice()}, 1);
  scribble.index_put_({Slice(5, 8), Slice()}, 2);
  auto feature = uniform({4, 8, 8}, 0, 1, 63).requires_grad_();
  auto p = pred.clone().requires_grad_();
  semantic_significance_loss(p, feature, scribble, cfg, 60).backward();
  EXPECT_FALSE(feature.grad().defined());
  EXPECT_GT(p.grad().abs().sum().item<double>(), 0.0);
}

// --- aux / total ------------------------------------------------------------------

TEST(Aux, ConfidentAgreementOnFlatImageIsZero) {
  LossConfig cfg;
  auto scribble = torch::zeros({10, 10}, torch::kUInt8);
  scribble.index_put_({Slice(2, 5), Slice(2, 5)}, 1);
  const auto image = torch::full({3, 10, 10}, 0.5, torch::kFloat64);
  EXPECT_NEAR(aux_loss(torch::ones({10, 10}, torch::kFloat64), scribble, image, cfg, 120).item<double>(), 0.0, 1e-5);
}

TEST(Aux, IsSumOfParts) {
  LossConfig cfg;
  const auto pred = uniform({12, 12}, 0, 1, 64);
  const auto scribble = scod::testing::random_scribble(12, 12, 0.2, 65);
  const auto image = uniform({3, 12, 12}, 0, 1, 66);
  const double parts = pce_loss(pred, scribble).item<double>() +
                       context_affinity_loss(pred, image, cfg).item<double>() + iv_loss(pred, cfg, 110).item<double>();
  EXPECT_NEAR(aux_loss(pred, scribble, image, cfg, 110).item<double>(), parts, 1e-14);
}

struct TotalFixture {
  std::vector<torch::Tensor> outputs;
  torch::Tensor feature, scribble, image;
  ViewPair view;

  explicit TotalFixture(std::uint64_t seed, std::int64_t size = 8) {
    for (int i = 0; i < 5; ++i) outputs.push_back(uniform({1, 1, size, size}, 0.05, 0.95, seed + i));
    feature = uniform({1, 6, size, size}, -1, 1, seed + 10);
    scribble = scod::testing::random_scribble(size, size, 0.3, seed + 11).unsqueeze(0);
    image = uniform({1, 3, size, size}, 0, 1, seed + 12);
    view.aligned = uniform({1, 1, size, size}, 0.05, 0.95, seed + 13);
    view.transformed = uniform({1, 1, size, size}, 0.05, 0.95, seed + 14);
    view.valid = uniform({1, size, size}, 0, 1, seed + 15) > 0.1;
  }
};

TEST(Total, PceOnlyConfigEqualsPce) {
  TotalFixture f(70);
  LossConfig cfg;
  cfg.toggles = LossToggles{true, false, false, false, false, false};
  const auto terms = total_loss(f.outputs, f.feature, f.scribble, f.image, f.view, cfg, 120);
  EXPECT_EQ(terms.breakdown.total, pce_loss(f.outputs[0], f.scribble).item<double>());
  EXPECT_EQ(terms.breakdown.rcv, 0.0);
  EXPECT_EQ(terms.breakdown.ca, 0.0);
  EXPECT_EQ(terms.breakdown.aux[2], 0.0);
}

TEST(Total, RecomposesFromComponents) {
  TotalFixture f(80, 20);
  LossConfig cfg;
  cfg.top_channels = 4;
  cfg.beta = {0.1, 0.2, 0.3, 0.4};
  const std::int64_t epoch = 120;
  const auto terms = total_loss(f.outputs, f.feature, f.scribble, f.image, f.view, cfg, epoch);
  const auto& b = terms.breakdown;
  double expected = pce_loss(f.outputs[0], f.scribble).item<double>() +
                    rcv_loss(f.view.aligned, f.view.transformed, f.view.valid, cfg.alpha, cfg.gamma).item<double>() +
                    iv_loss(f.outputs[0], cfg, epoch).item<double>() +
                    context_affinity_loss(f.outputs[0], f.image, cfg).item<double>() +
                    semantic_significance_loss(f.outputs[0], f.feature, f.scribble, cfg, epoch).item<double>();
  for (int i = 0; i < 4; ++i) {
    expected += cfg.beta[i] * aux_loss(f.outputs[i + 1], f.scribble, f.image, cfg, epoch).item<double>();
  }
  EXPECT_NEAR(b.total, expected, 1e-12);
  EXPECT_NEAR(b.total, b.pce + b.rcv + b.iv + b.ca + b.ss + 0.1 * b.aux[0] + 0.2 * b.aux[1] + 0.3 * b.aux[2] + 0.4 * b.aux[3],
              1e-12);
  EXPECT_EQ(b.cv * 2, b.rcv);
  EXPECT_TRUE(b.iv_active);
  EXPECT_EQ(b.w_ss, 0.3);
  for (double v : {b.pce, b.rcv, b.iv, b.ca, b.ss, b.aux[0], b.aux[1], b.aux[2], b.aux[3]}) EXPECT_GE(v, 0.0);
}

TEST(Total, SymmetricGammaGivesEqualGradients) {
  TotalFixture f(90);
  LossConfig cfg;
  cfg.gamma = 0.0;
  auto a = f.view.aligned.clone().requires_grad_();
  auto b = a.detach().flip({3}).requires_grad_();
  ViewPair view{a, b, torch::ones({1, 8, 8}, torch::kBool)};
  total_loss(f.outputs, f.feature, f.scribble, f.image, view, cfg, 0).total.backward();
  EXPECT_NEAR(a.grad().norm().item<double>(), b.grad().norm().item<double>(), 1e-12);
}

TEST(Total, RequiresAllOutputsWithAux) {
  TotalFixture f(95);
  LossConfig cfg;
  std::vector<torch::Tensor> only_main{f.outputs[0]};
  EXPECT_THROW(total_loss(only_main, f.feature, f.scribble, f.image, f.view, cfg, 0), ValidationError);
  cfg.toggles.aux = false;
  EXPECT_NO_THROW(total_loss(only_main, f.feature, f.scribble, f.image, f.view, cfg, 0));
}

// --- gradient checks -------------------------------------------------------------

class Gradients : public ::testing::Test {
 protected:
  torch::Tensor pred = uniform({8, 8}, 0.05, 0.95, 100);
  torch::Tensor scribble = scod::testing::random_scribble(8, 8, 0.4, 101);
  torch::Tensor image = uniform({3, 8, 8}, 0, 1, 102);
  LossConfig cfg;
};

TEST_F(Gradients, Pce) {
  expect_gradient_matches([&](const torch::Tensor& p) { return pce_loss(p, scribble); }, pred);
}

TEST_F(Gradients, CrossView) {
  const auto other = uniform({8, 8}, 0.05, 0.95, 103);
  const auto valid = uniform({8, 8}, 0, 1, 104) > 0.2;
  expect_gradient_matches([&](const torch::Tensor& p) { return cv_loss(p, other, valid, cfg.alpha); }, pred);
  expect_gradient_matches([&](const torch::Tensor& p) { return cv_loss(other, p, valid, cfg.alpha); }, pred);
}

TEST_F(Gradients, InsideView) {
  // Keep every entropy clear of the threshold so the selected set is stable.
  auto p = torch::where(pred > 0.5, 0.85 + 0.1 * pred, 0.3 + 0.3 * pred);
  expect_gradient_matches([&](const torch::Tensor& x) { return iv_loss(x, cfg, 150); }, p);
}

TEST_F(Gradients, ContextAffinity) {
  expect_gradient_matches([&](const torch::Tensor& p) { return context_affinity_loss(p, image, cfg); }, pred);
}

TEST_F(Gradients, SemanticSignificance) {
  cfg.block_size = 4;
  cfg.top_channels = 3;
  cfg.sigma_c = 1.0;
  auto s = torch::zeros({8, 8}, torch::kUInt8);
  s.index_put_({Slice(), Slice(0, 2)}, 1);
  s.index_put_({Slice(), Slice(6, 8)}, 2);
  s.index_put_({Slice(0, 2), Slice(2, 4)}, 2);
  s.index_put_({Slice(6, 8), Slice(4, 6)}, 1);
  const auto feature = uniform({5, 8, 8}, -1, 1, 105);
  ASSERT_FALSE(boundary_regions(pred, s, cfg).empty());
  expect_gradient_matches([&](const torch::Tensor& p) { return semantic_significance_loss(p, feature, s, cfg, 30); },
                          pred);
}

TEST_F(Gradients, Aux) {
  expect_gradient_matches([&](const torch::Tensor& p) { return aux_loss(p, scribble, image, cfg, 0); }, pred);
}

TEST_F(Gradients, TotalThroughMainOutput) {
  TotalFixture f(106);
  cfg.block_size = 4;
  cfg.top_channels = 3;
  auto fn = [&](const torch::Tensor& p) {
    auto outputs = f.outputs;
    outputs[0] = p;
    return total_loss(outputs, f.feature, f.scribble, f.image, f.view, cfg, 20).total;
  };
  expect_gradient_matches(fn, f.outputs[0]);
}

TEST(LossConfig, RejectsOutOfRangeValues) {
  LossConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.kernel_window = 4;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = LossConfig{};
  cfg.gamma = 1.5;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = LossConfig{};
  cfg.fg_conf = 0.1;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

}  // namespace
}  // namespace scod
