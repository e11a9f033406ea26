#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "slomo/error.hpp"
#include "slomo/gradcheck.hpp"
#include "slomo/losses.hpp"
#include "slomo/network.hpp"
#include "support.hpp"

namespace slomo {
namespace {

using testing::random_matrix;
using testing::random_probs;

double clamp_log(double v) { return std::log(std::max(v, 1e-12)); }

double naive_sce(const Matrix& p, const Matrix& logits) {
  const Matrix q = softmax(logits);
  double total = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    for (std::size_t c = 0; c < p.cols(); ++c) {
      total -= p(r, c) * clamp_log(q(r, c));
      total -= q(r, c) * clamp_log(p(r, c));
    }
  }
  return total / static_cast<double>(p.rows());
}

double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / (norm(a) * norm(b));
}

double naive_contrastive(const Matrix& e, double tau) {
  const std::size_t m = e.rows();
  const std::size_t n = m / 3;
  double value = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double denom = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      if (a != i) denom += std::exp(cosine(e.row(i), e.row(a)) / tau);
    }
    for (std::size_t v = 0; v < m; ++v) {
      if (v == i || v % n != i % n) continue;
      value -= std::log(std::exp(cosine(e.row(i), e.row(v)) / tau) / denom);
    }
  }
  return value;
}

TEST(Sce, EqualHalvesIsTwoLn2) {
  const Matrix p{{0.5, 0.5}};
  EXPECT_NEAR(sce(p, Matrix{{0.0, 0.0}}).value, 2.0 * std::numbers::ln2, 1e-15);
}

TEST(Sce, SymmetricInItsDistributions) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix p = random_probs(5, 4, s);
    const Matrix q = random_probs(5, 4, s + 1000);
    Matrix log_p = p;
    Matrix log_q = q;
    for (double& v : log_p.data()) v = std::log(v);
    for (double& v : log_q.data()) v = std::log(v);
    EXPECT_NEAR(sce(p, log_q).value, sce(q, log_p).value, 1e-12);
  }
}

TEST(Sce, MatchesNaiveSumAndFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix p = random_probs(6, 4, s);
    const Matrix z = random_matrix(6, 4, s + 50, 2.0);
    const LossResult r = sce(p, z);
    EXPECT_NEAR(r.value, naive_sce(p, z), 1e-12);
    const auto check =
        finite_diff_check(z, [&](const Matrix& x) { return sce(p, x).value; }, r.grad, 1e-5);
    EXPECT_LT(check.max_rel_error, 1e-4);
  }
}

TEST(Sce, OneHotTargetStaysFinite) {
  const Matrix p{{1.0, 0.0, 0.0}};
  const LossResult r = sce(p, Matrix{{0.0, 1.0, 2.0}});
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_TRUE(r.grad.all_finite());
  EXPECT_NEAR(r.value, naive_sce(p, Matrix{{0.0, 1.0, 2.0}}), 1e-12);
  EXPECT_THROW(sce(p, Matrix{{0.0, 1.0}}), ShapeError);
}

TEST(Entropy, Examples) {
  EXPECT_NEAR(entropy(std::vector<double>(10, 0.1)), std::log(10.0), 1e-15);
  EXPECT_EQ(entropy(std::vector<double>{0, 1, 0}), 0.0);
  EXPECT_NEAR(entropy(std::vector<double>{0.8, 0.2}), 0.5004, 5e-5);
}

TEST(Entropy, BoundedByLogC) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Matrix p = random_probs(1, 7, s, 0.5 + s);
    const double h = entropy(p.row(0));
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(7.0) + 1e-15);
  }
}

TEST(Contrastive, IdenticalTripleIsSixLn2) {
  const Matrix e{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  EXPECT_NEAR(contrastive({e, 0.1}).value, 6.0 * std::numbers::ln2, 1e-12);
}

TEST(Contrastive, MatchesNaiveOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix e = random_matrix(3 * (1 + s % 4), 5, s);
    for (double tau : {0.1, 0.5, 1.0}) {
      EXPECT_NEAR(contrastive({e, tau}).value, naive_contrastive(e, tau),
                  1e-9 * std::abs(naive_contrastive(e, tau)));
    }
  }
}

TEST(Contrastive, InvariantToScalingAndRotation) {
  const Matrix e = random_matrix(9, 6, 3);
  const double base = contrastive({e, 0.1}).value;
  Matrix scaled = e;
  for (std::size_t r = 0; r < scaled.rows(); ++r) {
    for (double& v : scaled.row(r)) v *= 0.01 + 3.0 * static_cast<double>(r);
  }
  EXPECT_NEAR(contrastive({scaled, 0.1}).value, base, 1e-10);
  // Householder reflection I - 2 u u^T / |u|^2 is orthogonal.
  const Matrix u = random_matrix(1, 6, 4);
  const double uu = dot(u.row(0), u.row(0));
  Matrix rotated = e;
  for (std::size_t r = 0; r < e.rows(); ++r) {
    const double proj = dot(e.row(r), u.row(0));
    for (std::size_t c = 0; c < 6; ++c) rotated(r, c) = e(r, c) - 2.0 * proj * u(0, c) / uu;
  }
  EXPECT_NEAR(contrastive({rotated, 0.1}).value, base, 1e-10);
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix e = random_matrix(9, 8, s + 7);
    const auto check = finite_diff_check(
        e, [](const Matrix& x) { return contrastive({x, 0.1}).value; }, contrastive({e, 0.1}).grad,
        1e-5);
    EXPECT_LT(check.max_rel_error, 1e-4);
  }
}

TEST(Contrastive, Errors) {
  EXPECT_THROW(contrastive({Matrix(0, 3), 0.1}), ShapeError);
  EXPECT_THROW(contrastive({Matrix(4, 3, 1.0), 0.1}), ShapeError);
  EXPECT_THROW(contrastive({Matrix{{1, 0}, {0, 0}, {1, 1}}, 0.1}), NumericError);
}

TEST(Mse, Examples) {
  EXPECT_EQ(mse_proto(Matrix{{1, 2}}, Matrix{{1, 2}}).value, 0.0);
  const LossResult r = mse_proto(Matrix{{1, 0}}, Matrix{{0, 0}});
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.grad, (Matrix{{2, 0}}));
  EXPECT_THROW(mse_proto(Matrix(0, 2), Matrix(0, 2)), ShapeError);
}

TEST(Mse, MatchesNaiveLoop) {
  const Matrix z = random_matrix(5, 6, 1);
  const Matrix p = random_matrix(5, 6, 2);
  double ref = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 6; ++c) ref += (z(i, c) - p(i, c)) * (z(i, c) - p(i, c));
  }
  const LossResult r = mse_proto(z, p);
  EXPECT_NEAR(r.value, ref / 5.0, 1e-12);
  for (std::size_t i = 0; i < z.size(); ++i) {
    EXPECT_NEAR(r.grad.data()[i], 0.4 * (z.data()[i] - p.data()[i]), 1e-15);
  }
}

TEST(Im, UniformAndIdenticalRowsGiveZero) {
  EXPECT_NEAR(im_loss(Matrix(4, 5, 0.3)).value, 0.0, 1e-15);
  const Matrix soft_one_hot{{10, 0}, {10, 0}, {10, 0}};
  EXPECT_NEAR(im_loss(soft_one_hot).value, 0.0, 1e-15);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix row = random_matrix(1, 6, s, 3.0);
    const Matrix batch = vstack({&row, &row, &row, &row});
    EXPECT_NEAR(im_loss(batch).value, 0.0, 1e-12);
  }
}

TEST(Im, GradientPushesTowardDiversity) {
  const Matrix z{{2, 0}, {1.5, 0.5}, {2.5, -0.2}};
  const LossResult r = im_loss(z);
  Matrix stepped = z;
  for (std::size_t i = 0; i < z.size(); ++i) stepped.data()[i] -= 0.01 * r.grad.data()[i];
  EXPECT_LT(im_loss(stepped).value, r.value);
  EXPECT_THROW(im_loss(Matrix(1, 3)), ShapeError);
}

TEST(Im, MatchesDefinitionAndFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix z = random_matrix(8, 4, s, 2.0);
    const Matrix q = softmax(z);
    std::vector<double> mean(4, 0.0);
    double cond = 0.0;
    for (std::size_t r = 0; r < 8; ++r) {
      cond += entropy(q.row(r)) / 8.0;
      for (std::size_t c = 0; c < 4; ++c) mean[c] += q(r, c) / 8.0;
    }
    const LossResult r = im_loss(z);
    EXPECT_NEAR(r.value, cond - entropy(mean), 1e-12);
    const auto check =
        finite_diff_check(z, [](const Matrix& x) { return im_loss(x).value; }, r.grad, 1e-5);
    EXPECT_LT(check.max_rel_error, 1e-4);
  }
}

TEST(T2Objective, WeightsAndRouting) {
  const LossResult cl{0.7, Matrix{{1.0}}};
  const LossResult mse{1.5, Matrix{{2.0}}};
  const LossResult im{-0.2, Matrix{{3.0}}};
  const T2Objective plain = t2_objective(cl, mse, im, {1, 1, 1});
  EXPECT_DOUBLE_EQ(plain.value, 0.7 + 1.5 - 0.2);
  EXPECT_EQ(plain.grad_embeddings, cl.grad);
  EXPECT_EQ(plain.grad_features, mse.grad);
  EXPECT_EQ(plain.grad_logits, im.grad);
  const T2Objective zero = t2_objective(cl, mse, im, {0, 0, 0});
  EXPECT_EQ(zero.value, 0.0);
  for (const Matrix* g : {&zero.grad_embeddings, &zero.grad_features, &zero.grad_logits}) {
    for (double v : g->data()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_DOUBLE_EQ(t2_objective(cl, mse, im, {0, 2, 0}).value, 3.0);
  EXPECT_EQ(t2_objective(cl, mse, im, {0, 2, 0}).grad_features, (Matrix{{4.0}}));
}

TEST(CrossEntropy, HardLabels) {
  const LossResult r = cross_entropy(Matrix{{0, 0}, {0, std::log(3.0)}}, std::vector<std::size_t>{0, 1});
  EXPECT_NEAR(r.value, 0.5 * (std::log(2.0) - std::log(0.75)), 1e-15);
  EXPECT_THROW(cross_entropy(Matrix{{0, 0}}, std::vector<std::size_t>{2}), ShapeError);
}

}  // namespace
}  // namespace slomo
