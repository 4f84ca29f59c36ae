#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "frnet/model.hpp"
#include "frnet/nn/gradcheck.hpp"
#include "frnet/nn/kernels.hpp"
#include "frnet/rng.hpp"
#include "frnet/supervision.hpp"
#include "frnet/train.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace frnet;
using nn::NamedVar;
using nn::Tensor;

namespace {

constexpr Label kIgnore = 255;

Var random_var(Rng& rng, nn::Shape shape, bool grad = true, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return Var(std::move(t), grad);
}

Var one_hot(const std::vector<Label>& labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) t[r * classes + labels[r]] = 1.0;
  return Var(std::move(t), true);
}

}  // namespace

TEST(PseudoLabels, MajorityTieAndEmpty) {
  FrustumIndex idx(1, 3, {0, 0, 0, 1, 1}, {0, 0, 0, 0, 0});
  auto out = frustum_pseudo_labels(std::vector<Label>{2, 2, 7, 2, 7}, idx, kIgnore, 8);
  EXPECT_EQ(out, (std::vector<Label>{2, 2, kIgnore}));
  auto rev = frustum_pseudo_labels(std::vector<Label>{7, 2, 2, 7, 2}, idx, kIgnore, 8);
  EXPECT_EQ(rev, (std::vector<Label>{2, 2, kIgnore}));
}

TEST(PseudoLabels, IgnoreVotesDoNotCount) {
  FrustumIndex idx(1, 2, {0, 0, 0, 1}, {0, 0, 0, 0});
  auto out = frustum_pseudo_labels(std::vector<Label>{kIgnore, kIgnore, 1, kIgnore}, idx, kIgnore, 3);
  EXPECT_EQ(out, (std::vector<Label>{1, kIgnore}));
  EXPECT_THROW(frustum_pseudo_labels(std::vector<Label>{5, 0, 0, 0}, idx, kIgnore, 3), DataError);
}

TEST(PseudoLabels, StageRebinningByIntegerDivision) {
  FrustumIndex full(4, 4, {0, 1, 1, 3}, {0, 0, 1, 3});
  auto out = frustum_pseudo_labels(std::vector<Label>{0, 1, 1, 2}, full.downsample(2, 2, 2), kIgnore, 3);
  EXPECT_EQ(out, (std::vector<Label>{1, kIgnore, kIgnore, 2}));
}

// ---------------------------------------------------------------------------

TEST(CrossEntropy, UniformTwoClassIsLnTwo) {
  Var logits(Tensor({1, 2}), true);
  EXPECT_NEAR(cross_entropy(logits, std::vector<Label>{0}, kIgnore).item(), std::numbers::ln2, 1e-15);
}

TEST(CrossEntropy, AllIgnoredIsZeroWithZeroGrad) {
  Rng rng(1);
  Var logits = random_var(rng, {4, 3});
  Var loss = cross_entropy(logits, std::vector<Label>(4, kIgnore), kIgnore);
  EXPECT_EQ(loss.item(), 0.0);
  logits.value().ensure_grad();
  nn::backward(loss);
  for (double g : logits.grad()) EXPECT_EQ(g, 0.0);
}

TEST(CrossEntropy, IgnoredRowsContributeNothing) {
  Rng rng(2);
  Var logits = random_var(rng, {3, 3});
  const double with = cross_entropy(logits, std::vector<Label>{0, kIgnore, 2}, kIgnore).item();
  Tensor two({2, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    two[c] = logits.value()[c];
    two[3 + c] = logits.value()[6 + c];
  }
  EXPECT_NEAR(with, cross_entropy(Var(two), std::vector<Label>{0, 2}, kIgnore).item(), 1e-15);
  logits.value().ensure_grad();
  nn::backward(cross_entropy(logits, std::vector<Label>{0, kIgnore, 2}, kIgnore));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(logits.grad()[3 + c], 0.0);
}

TEST(CrossEntropy, GradCheckFiveByThree) {
  Rng rng(3);
  Var logits = random_var(rng, {5, 3});
  std::vector<Label> t{0, 2, 1, kIgnore, 2};
  auto r = nn::grad_check([&] { return cross_entropy(logits, t, kIgnore); }, {{"logits", logits}}, 1e-5, 1e-6);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(CrossEntropy, RejectsBadTargets) {
  Rng rng(4);
  Var logits = random_var(rng, {2, 3});
  EXPECT_THROW(cross_entropy(logits, std::vector<Label>{0}, kIgnore), ShapeError);
  EXPECT_THROW(cross_entropy(logits, std::vector<Label>{0, 3}, kIgnore), DataError);
}

// ---------------------------------------------------------------------------

TEST(Lovasz, PerfectOneHotIsZero) {
  std::vector<Label> t{0, 1, 2, 1, 0};
  EXPECT_EQ(lovasz_softmax(one_hot(t, 3), t, kIgnore).item(), 0.0);
}

TEST(Lovasz, HardHalfJaccard) {
  std::vector<Label> t{0, 0, 1, 1};
  std::vector<Label> p{0, 1, 1, 1};
  // Class 0 IoU 1/2, class 1 IoU 2/3.
  const double got = lovasz_softmax(one_hot(p, 2), t, kIgnore).item();
  EXPECT_NEAR(got, (0.5 + 1.0 / 3.0) / 2, 1e-15);
  std::vector<Label> only{0, 0, kIgnore, kIgnore};
  std::vector<Label> pred_only{0, 1, 0, 0};
  EXPECT_NEAR(lovasz_softmax(one_hot(pred_only, 2), only, kIgnore).item(), 0.5, 1e-15);
}

TEST(Lovasz, MatchesOneMinusIoUOnEveryHardAssignment) {
  Rng rng(5);
  for (std::size_t m = 1; m <= 10; ++m) {
    std::vector<Label> t(m);
    for (auto& l : t) l = static_cast<Label>(rng.uniform_int(2));
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      std::vector<Label> p(m);
      for (std::size_t k = 0; k < m; ++k) p[k] = (mask >> k) & 1u;
      double want = 0.0;
      int present = 0;
      for (Label c = 0; c < 2; ++c) {
        std::size_t inter = 0, uni = 0, gt = 0;
        for (std::size_t k = 0; k < m; ++k) {
          inter += (t[k] == c && p[k] == c);
          uni += (t[k] == c || p[k] == c);
          gt += t[k] == c;
        }
        if (gt == 0) continue;
        ++present;
        want += 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
      }
      want /= present;
      ASSERT_NEAR(lovasz_softmax(one_hot(p, 2), t, kIgnore).item(), want, 1e-12) << "m=" << m << " mask=" << mask;
    }
  }
}

TEST(Lovasz, MatchesChoquetOracleOnSoftProbabilities) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.uniform_int(10), c = 2 + rng.uniform_int(3);
    Var logits = random_var(rng, {m, c}, false, -3, 3);
    Var probs = nn::softmax_rows(logits);
    std::vector<Label> t(m);
    for (auto& l : t) l = rng.uniform() < 0.15 ? kIgnore : static_cast<Label>(rng.uniform_int(c));
    const double got = lovasz_softmax(probs, t, kIgnore).item();
    const double want = frnet::testing::lovasz_oracle(probs.data(), t, kIgnore, static_cast<int>(c));
    ASSERT_NEAR(got, want, 1e-10);
    ASSERT_GE(got, 0.0);
    ASSERT_LE(got, 1.0);
  }
}

TEST(Lovasz, GradCheckThroughSoftmax) {
  Rng rng(7);
  Var logits = random_var(rng, {6, 3});
  std::vector<Label> t{0, 2, 1, 1, kIgnore, 2};
  auto r = nn::grad_check([&] { return lovasz_softmax(nn::softmax_rows(logits), t, kIgnore); },
                          {{"logits", logits}});
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(Lovasz, RejectsNonSimplexRows) {
  Var bad(Tensor({1, 2}, std::vector<double>{0.7, 0.7}));
  EXPECT_THROW(lovasz_softmax(bad, std::vector<Label>{0}, kIgnore), DataError);
}

// ---------------------------------------------------------------------------

namespace {

struct DeskCase {
  RunConfig run = parse_config(kDeskConfig);
  FrnetModel model;
  PointCloud scan;
  FrustumIndex index;
  DeskCase(std::uint64_t seed)
      : model(FrnetConfig::from_run_config(run), run.sensor, seed),
        scan(synth_scene(seed, 32, run.sensor)),
        index(project(scan, run.sensor)) {}
  LossBreakdown loss(const LossWeights& w) const {
    return total_loss(model.forward_indexed(scan, index), *scan.labels, w, run.sensor.ignore_label,
                      run.sensor.num_classes);
  }
};

}  // namespace

TEST(TotalLoss, LambdaZeroIsPointLoss) {
  DeskCase d(1);
  LossWeights w;
  w.lambda_frustum = 0.0;
  LossBreakdown b = d.loss(w);
  EXPECT_EQ(b.total.item(), b.point_ce);
  EXPECT_TRUE(b.frustum_ce.empty());
}

TEST(TotalLoss, ComposesStageTerms) {
  DeskCase d(2);
  LossWeights w;
  w.lambda_frustum = 0.7;
  LossBreakdown b = d.loss(w);
  ASSERT_EQ(b.frustum_ce.size(), 2u);
  double want = b.point_ce;
  for (std::size_t k = 0; k < 2; ++k) want += 0.7 * (1.0 * b.frustum_ce[k] + 1.5 * b.frustum_lovasz[k]);
  EXPECT_NEAR(b.total.item(), want, 1e-12);
  EXPECT_GE(b.total.item(), 0.0);
  w.frustum_ce = -1.0;
  EXPECT_THROW(d.loss(w), ConfigError);
}

TEST(TotalLoss, SaturatedCorrectLogitsGiveNearZero) {
  const std::vector<Label> t{0, 2, 1, 1};
  Tensor logits({4, 3}, -20.0);
  for (std::size_t r = 0; r < 4; ++r) logits[r * 3 + t[r]] = 20.0;
  EXPECT_LE(cross_entropy(Var(logits), t, kIgnore).item(), 1e-6);
  EXPECT_LE(lovasz_softmax(nn::softmax_rows(Var(logits)), t, kIgnore).item(), 1e-6);
}

// ---------------------------------------------------------------------------

TEST(Sgd, ZeroLearningRateLeavesParameters) {
  DeskCase d(3);
  auto params = d.model.parameters();
  std::vector<std::vector<double>> before;
  for (auto& p : params) before.emplace_back(p.var.data().begin(), p.var.data().end());
  SgdOptimizer opt(params, 0.0, 0.9);
  nn::backward(d.loss(LossWeights{}).total);
  opt.step();
  for (std::size_t k = 0; k < params.size(); ++k) {
    EXPECT_EQ(std::vector<double>(params[k].var.data().begin(), params[k].var.data().end()), before[k]);
  }
}

TEST(Sgd, NoMomentumIsPlainDescent) {
  Var x(Tensor({2}, std::vector<double>{1.0, -3.0}), true);
  SgdOptimizer opt({{"x", x}}, 0.25, 0.0);
  for (int step = 0; step < 3; ++step) {
    const std::vector<double> before(x.data().begin(), x.data().end());
    nn::backward(nn::sum(nn::mul(x, x)));
    opt.step();
    for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(x.value()[i], before[i] - 0.25 * 2.0 * before[i]);
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
  }
}

TEST(Sgd, ClippingBoundsStepAndRejectsNan) {
  Var x(Tensor({2}, std::vector<double>{30.0, 40.0}), true);
  SgdOptimizer opt({{"x", x}}, 1.0, 0.0, 1.0);
  nn::backward(nn::sum(nn::mul(x, x)));
  opt.step();
  EXPECT_NEAR(opt.last_grad_norm(), 100.0, 1e-12);
  EXPECT_NEAR(x.value()[0], 30.0 - 0.6, 1e-12);
  EXPECT_NEAR(x.value()[1], 40.0 - 0.8, 1e-12);
  x.grad()[0] = std::nan("");
  EXPECT_THROW(opt.step(), NumericError);
}
