#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "slomo/error.hpp"
#include "slomo/losses.hpp"
#include "slomo/network.hpp"
#include "slomo/reliability.hpp"
#include "support.hpp"

namespace slomo {
namespace {

using testing::random_matrix;
using testing::random_probs;

TEST(PseudoLabels, ArgmaxAndTies) {
  const PseudoLabels a = pseudo_labels(Matrix{{0.1, 0.7, 0.2}});
  EXPECT_EQ(a.labels[0], 1u);
  EXPECT_EQ(a.confidence[0], 0.7);
  EXPECT_EQ(pseudo_labels(Matrix{{0.5, 0.5}}).labels[0], 0u);
  EXPECT_EQ(pseudo_labels(Matrix{{0.2, 0.4, 0.4}}).labels[0], 1u);
}

TEST(PseudoLabels, MatchesNaiveScan) {
  const Matrix p = random_probs(30, 6, 1);
  const PseudoLabels pl = pseudo_labels(p);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.cols(); ++c) {
      if (p(r, c) > p(r, best)) best = c;
    }
    EXPECT_EQ(pl.labels[r], best);
    EXPECT_EQ(pl.confidence[r], p(r, best));
  }
}

ProbabilityFn as_model(const NetworkSpec& spec, const NetworkParams& params) {
  return [spec, params](const Matrix& x) {
    return softmax(evaluate(spec, params, x, StatsMode::BatchStats).logits);
  };
}

TEST(Plpd, IdentityAugmentationIsExactlyZero) {
  const NetworkSpec spec = make_mlp(8, {6}, 3, 0);
  const std::vector<Augmentation> augs{Augmentation::identity(), Augmentation::identity()};
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto model = as_model(spec, testing::scrambled_params(spec, s));
    const Matrix x = random_matrix(5, 8, s);
    const auto labels = pseudo_labels(model(x)).labels;
    Rng rng(s);
    for (double v : plpd(model, x, labels, augs, rng)) EXPECT_EQ(v, 0.0);
  }
}

TEST(Plpd, ConstantModelGivesZero) {
  const NetworkSpec spec = make_mlp(8, {}, 3, 0, false);
  NetworkParams p = init_params(spec, 0);
  for (double& w : p.layers[0].weight.data()) w = 0.0;
  p.layers[0].bias = {0.3, -1.0, 2.0};
  const auto model = as_model(spec, p);
  const Matrix x = random_matrix(4, 8, 3);
  Rng rng(1);
  const auto augs = default_plpd_augmentations();
  for (double v : plpd(model, x, std::vector<std::size_t>{0, 1, 2, 2}, augs, rng)) {
    EXPECT_NEAR(v, 0.0, 1e-15);
  }
}

TEST(Plpd, FullOcclusionOnLinearModel) {
  // One linear layer without bias: an all-zero input gives logits (0, 0).
  const NetworkSpec spec = make_mlp(4, {}, 2, 0, false);
  NetworkParams p = init_params(spec, 0);
  p.layers[0].weight = Matrix{{1, 0.5, -1, 2}, {-1, 0, 1, 0}};
  const auto model = as_model(spec, p);
  const Matrix x{{1, 1, 0, 1}, {0, 0, 2, 0}};
  const Matrix probs = model(x);
  const auto labels = pseudo_labels(probs).labels;
  Rng rng(0);
  const std::vector<Augmentation> augs{Augmentation::center_occlusion(1.0)};
  const Vector dp = plpd(model, x, labels, augs, rng);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(dp[r], probs(r, labels[r]) - 0.5, 1e-15);
}

TEST(Plpd, DoesNotTouchRunningStatistics) {
  const NetworkSpec spec = make_mlp(8, {6}, 3, 0);
  NetworkParams p = testing::scrambled_params(spec, 2);
  const NetworkParams before = p;
  const ProbabilityFn model = [&](const Matrix& x) {
    return softmax(evaluate(spec, p, x, StatsMode::BatchStats).logits);
  };
  const Matrix x = random_matrix(6, 8, 2);
  Rng rng(5);
  plpd(model, x, pseudo_labels(model(x)).labels, default_plpd_augmentations(), rng);
  EXPECT_EQ(p, before);
}

TEST(Plpd, Errors) {
  const ProbabilityFn model = [](const Matrix& x) { return softmax(x); };
  Rng rng(0);
  const Matrix x = random_matrix(3, 4, 0);
  EXPECT_THROW(plpd(model, x, std::vector<std::size_t>{0, 0, 0}, {}, rng), ConfigError);
  const std::vector<Augmentation> augs{Augmentation::identity()};
  EXPECT_THROW(plpd(model, x, std::vector<std::size_t>{0}, augs, rng), ShapeError);
}

TEST(DualCriterion, Examples) {
  EXPECT_TRUE(dual_criterion(0.4, 0.3, 0.5, 0.2));
  EXPECT_TRUE(dual_criterion(0.5, 0.2, 0.5, 0.2));
  EXPECT_FALSE(dual_criterion(0.6, 0.3, 0.5, 0.2));
  EXPECT_FALSE(dual_criterion(0.4, 0.19, 0.5, 0.2));
}

TEST(DualCriterion, Monotone) {
  Rng rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const double h = u(rng);
    const double dp = u(rng) - 0.5;
    if (!dual_criterion(h, dp, 0.5, 0.2)) continue;
    EXPECT_TRUE(dual_criterion(h * u(rng), dp, 0.5, 0.2));
    EXPECT_TRUE(dual_criterion(h, dp + u(rng), 0.5, 0.2));
  }
}

TEST(Disagreement, Examples) {
  const Matrix one_hot{{1, 0, 0, 0}};
  const Matrix uniform(1, 4, 0.25);
  EXPECT_TRUE(select_disagreement(one_hot, uniform, 0.5)[0]);
  EXPECT_FALSE(select_disagreement(uniform, one_hot, 0.5)[0]);
  const Matrix p = random_probs(40, 4, 3);
  for (double sigma : {0.0, 0.1, 0.5, 1.0, 1.4, 5.0}) {
    for (bool b : select_disagreement(p, p, sigma)) EXPECT_FALSE(b);
  }
}

TEST(Disagreement, MatchesIndependentThresholdTests) {
  const Matrix p1 = random_probs(200, 5, 8, 4.0);
  const Matrix p2 = random_probs(200, 5, 9, 1.0);
  const auto n = select_disagreement(p1, p2, 0.5);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < 200; ++r) {
    double h1 = 0.0;
    double h2 = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      if (p1(r, c) > 0) h1 -= p1(r, c) * std::log(p1(r, c));
      if (p2(r, c) > 0) h2 -= p2(r, c) * std::log(p2(r, c));
    }
    EXPECT_EQ(n[r], h1 <= 0.5 && h2 > 0.5);
    hits += n[r];
  }
  EXPECT_GT(hits, 0u);
  EXPECT_THROW(select_disagreement(p1, random_probs(3, 5, 1), 0.5), ShapeError);
}

TEST(Augmentation, ShapeAndDeterminism) {
  const Matrix x = random_matrix(7, 10, 4);
  for (const Augmentation& aug :
       {Augmentation::identity(), Augmentation::segment_shuffle(4),
        Augmentation::center_occlusion(0.25), Augmentation::additive_jitter(0.05)}) {
    Rng a(11);
    Rng b(11);
    const Matrix xa = aug.apply(x, a);
    EXPECT_TRUE(xa.same_shape(x));
    EXPECT_EQ(xa, aug.apply(x, b));
  }
}

TEST(Augmentation, SegmentShufflePermutesBlocks) {
  Matrix x(50, 8);
  for (std::size_t r = 0; r < 50; ++r) {
    for (std::size_t c = 0; c < 8; ++c) x(r, c) = static_cast<double>(c);
  }
  Rng rng(2);
  const Matrix y = Augmentation::segment_shuffle(4).apply(x, rng);
  bool moved = false;
  for (std::size_t r = 0; r < 50; ++r) {
    std::vector<double> row(y.row(r).begin(), y.row(r).end());
    for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(row[2 * b] + 1.0, row[2 * b + 1]);
    moved |= row[0] != 0.0;
    std::sort(row.begin(), row.end());
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(row[c], static_cast<double>(c));
  }
  EXPECT_TRUE(moved);
}

TEST(Augmentation, CenterOcclusionZeroesMiddle) {
  Rng rng(0);
  const Matrix y = Augmentation::center_occlusion(0.25).apply(Matrix(2, 8, 1.0), rng);
  EXPECT_EQ(y, (Matrix{{1, 1, 1, 0, 0, 1, 1, 1}, {1, 1, 1, 0, 0, 1, 1, 1}}));
}

}  // namespace
}  // namespace slomo
