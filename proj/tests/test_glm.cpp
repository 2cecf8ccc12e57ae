#include <gtest/gtest.h>

#include <random>

#include "sdld/glm.hpp"
#include "support.hpp"

using namespace sdld;
using sdld::testing::expit_ref;

namespace {

struct Problem {
  Eigen::MatrixXd X;
  Eigen::VectorXd y, w, offset;
};

Problem logistic_problem(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  Problem p;
  p.X.resize(n, 4);
  p.y.resize(n);
  p.w.resize(n);
  p.offset.resize(n);
  for (int i = 0; i < n; ++i) {
    p.X(i, 0) = 1.0;
    p.X(i, 1) = z(rng);
    p.X(i, 2) = 10.0 + 5.0 * z(rng);
    p.X(i, 3) = u(rng) < 0.3;
    const double eta = -0.4 + 0.8 * p.X(i, 1) - 0.05 * (p.X(i, 2) - 10.0) + 0.6 * p.X(i, 3);
    p.y[i] = u(rng) < expit_ref(eta);
    p.w[i] = 0.5 + u(rng);
    p.offset[i] = 0.1 * z(rng);
  }
  return p;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(FitGlm, GaussianInterceptIsMean) {
  const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
  const auto fit = fit_glm(X, vec({1, 2, 3}), Eigen::VectorXd::Ones(3), Eigen::VectorXd(), Family::gaussian);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.coefficients[0], 2.0, 1e-12);
  const auto pred = predict_glm(fit, X, Eigen::VectorXd());
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(pred[i], 2.0, 1e-12);
}

TEST(FitGlm, BinomialSymmetricInterceptIsZero) {
  const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(2, 1);
  const auto fit = fit_glm(X, vec({0, 1}), Eigen::VectorXd::Ones(2), Eigen::VectorXd(), Family::binomial);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.coefficients[0], 0.0, 1e-12);
  EXPECT_NEAR(predict_glm(fit, X, Eigen::VectorXd())[0], 0.5, 1e-12);
}

TEST(FitGlm, GaussianOffsetInterceptIsWeightedMeanOfResidual) {
  const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, 1);
  const auto y = vec({1.0, 4.0, -2.0, 7.5});
  const auto w = vec({1.0, 0.5, 2.0, 3.0});
  const auto o = vec({0.3, -1.0, 0.0, 2.0});
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 4; ++i) {
    num += w[i] * (y[i] - o[i]);
    den += w[i];
  }
  const auto fit = fit_glm(X, y, w, o, Family::gaussian);
  EXPECT_NEAR(fit.coefficients[0], num / den, 1e-12);
}

TEST(PredictGlm, ZeroCoefficientsBinomialIsHalf) {
  GlmFit fit;
  fit.family = Family::binomial;
  fit.coefficients = Eigen::VectorXd::Zero(3);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Random(5, 3);
  const auto p = predict_glm(fit, X, Eigen::VectorXd());
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(p[i], 0.5);
}

TEST(PredictGlm, ExpitOfLinearPredictor) {
  GlmFit fit;
  fit.family = Family::binomial;
  fit.coefficients = vec({0.5, -2.0});
  Eigen::MatrixXd X(1, 2);
  X << 1.0, 0.5;  // x'b = -0.5
  EXPECT_NEAR(predict_glm(fit, X, Eigen::VectorXd())[0], 0.3775406687981454, 1e-15);
  EXPECT_NEAR(predict_glm(fit, X, vec({0.5}))[0], 0.5, 1e-15);
}

TEST(PredictGlm, WidthMismatchThrows) {
  GlmFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(predict_glm(fit, Eigen::MatrixXd::Ones(3, 3), Eigen::VectorXd()), std::invalid_argument);
}

TEST(FitGlm, DimensionMismatchAndBadInputsThrow) {
  const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
  EXPECT_THROW(fit_glm(X, vec({1, 2}), Eigen::VectorXd::Ones(3), Eigen::VectorXd(), Family::gaussian),
               std::invalid_argument);
  EXPECT_THROW(fit_glm(X, vec({1, 2, 3}), Eigen::VectorXd::Zero(3), Eigen::VectorXd(), Family::gaussian),
               std::invalid_argument);
  EXPECT_THROW(fit_glm(X, vec({0, 2, 1}), Eigen::VectorXd::Ones(3), Eigen::VectorXd(), Family::binomial),
               std::invalid_argument);
  EXPECT_THROW(fit_glm(X, vec({0, 1, 1}), vec({1, -1, 1}), Eigen::VectorXd(), Family::binomial),
               std::invalid_argument);
}

TEST(FitGlm, WeightedScoreVanishesAtConvergence) {
  const auto p = logistic_problem(3000, 5);
  const auto fit = fit_glm(p.X, p.y, p.w, p.offset, Family::binomial);
  ASSERT_TRUE(fit.converged);
  EXPECT_LE(fit.iterations, 100);
  const auto score = glm_score(p.X, p.y, p.w, p.offset, Family::binomial, fit.coefficients);
  EXPECT_LE(score.cwiseAbs().maxCoeff(), 1e-8 * 3000);
  EXPECT_TRUE(fit.coefficients.allFinite());
  EXPECT_NEAR(fit.deviance, glm_deviance(p.X, p.y, p.w, p.offset, Family::binomial, fit.coefficients), 1e-6);
}

TEST(FitGlm, DevianceGradientMatchesFiniteDifferences) {
  const auto p = logistic_problem(800, 9);
  const auto fit = fit_glm(p.X, p.y, p.w, p.offset, Family::binomial);
  auto dev = [&](const Eigen::VectorXd& b) { return glm_deviance(p.X, p.y, p.w, p.offset, Family::binomial, b); };
  // Away from the optimum the analytic gradient -2 X'W(y - mu) is checked relatively.
  Eigen::VectorXd b = fit.coefficients + vec({0.2, -0.1, 0.02, 0.3});
  const Eigen::VectorXd grad = -2.0 * glm_score(p.X, p.y, p.w, p.offset, Family::binomial, b);
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(b[j]));
    Eigen::VectorXd up = b, dn = b;
    up[j] += h;
    dn[j] -= h;
    const double fd = (dev(up) - dev(dn)) / (2.0 * h);
    EXPECT_NEAR(fd, grad[j], 1e-5 * std::max(1.0, std::abs(grad[j])));
  }
  // At the solution the finite-difference gradient is numerically zero.
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    const double h = 1e-4;
    Eigen::VectorXd up = fit.coefficients, dn = fit.coefficients;
    up[j] += h;
    dn[j] -= h;
    EXPECT_NEAR((dev(up) - dev(dn)) / (2.0 * h), 0.0, 1e-5 * dev(fit.coefficients));
  }
}

TEST(FitGlm, InvariantToRowPermutation) {
  const auto p = logistic_problem(500, 2);
  const auto a = fit_glm(p.X, p.y, p.w, p.offset, Family::binomial);
  std::vector<int> perm(500);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
  Problem q = p;
  for (int i = 0; i < 500; ++i) {
    q.X.row(i) = p.X.row(perm[i]);
    q.y[i] = p.y[perm[i]];
    q.w[i] = p.w[perm[i]];
    q.offset[i] = p.offset[perm[i]];
  }
  const auto b = fit_glm(q.X, q.y, q.w, q.offset, Family::binomial);
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(a.coefficients[j], b.coefficients[j], 1e-8);
}

TEST(FitGlm, BinomialPredictionsStrictlyInsideUnitInterval) {
  auto p = logistic_problem(200, 3);
  // Perfect separation on column 1.
  for (Eigen::Index i = 0; i < 200; ++i) p.y[i] = p.X(i, 1) > 0.0;
  const auto fit = fit_glm(p.X, p.y, p.w, Eigen::VectorXd(), Family::binomial);
  EXPECT_TRUE(fit.coefficients.allFinite());
  const auto pred = predict_glm(fit, p.X, Eigen::VectorXd());
  EXPECT_GT(pred.minCoeff(), 0.0);
  EXPECT_LT(pred.maxCoeff(), 1.0);
}

TEST(FitGlm, CollinearDesignHandledWithoutError) {
  auto p = logistic_problem(300, 8);
  Eigen::MatrixXd X(300, 5);
  X << p.X, p.X.col(1) * 2.0;
  const auto fit = fit_glm(X, p.y, p.w, Eigen::VectorXd(), Family::binomial);
  EXPECT_TRUE(fit.coefficients.allFinite());
  EXPECT_GT(fit.ridge, 0.0);
  // The linear predictor is still the maximum-likelihood one.
  const auto ref = fit_glm(p.X, p.y, p.w, Eigen::VectorXd(), Family::binomial);
  EXPECT_NEAR(fit.deviance, ref.deviance, 1e-4);
}

TEST(FitGlm, ConstantColumnIsAliased) {
  auto p = logistic_problem(300, 8);
  p.X.col(3).setConstant(2.0);
  const auto fit = fit_glm(p.X, p.y, p.w, Eigen::VectorXd(), Family::binomial);
  EXPECT_EQ(fit.coefficients[3], 0.0);
  EXPECT_TRUE(fit.converged);
}

TEST(FitGlm, IterationCapReportsNonConvergence) {
  const auto p = logistic_problem(500, 1);
  GlmOptions opts;
  opts.max_iter = 1;
  const auto fit = fit_glm(p.X, p.y, p.w, p.offset, Family::binomial, opts);
  EXPECT_FALSE(fit.converged);
  EXPECT_EQ(fit.iterations, 1);
  EXPECT_TRUE(fit.coefficients.allFinite());
}

TEST(FitGlm, Deterministic) {
  const auto p = logistic_problem(400, 6);
  const auto a = fit_glm(p.X, p.y, p.w, p.offset, Family::binomial);
  const auto b = fit_glm(p.X, p.y, p.w, p.offset, Family::binomial);
  EXPECT_EQ(a.coefficients, b.coefficients);
}
