#pragma once

// Weighted GLM fitting by iteratively reweighted least squares, for the
// Gaussian-identity and binomial-logit families, with per-row offsets.

#include <Eigen/Dense>

namespace sdld {

enum class Family { gaussian, binomial };

struct GlmOptions {
  int max_iter = 100;
  double tolerance = 1e-10;  // relative deviance change
  bool standardize = true;   // centre/scale non-intercept columns internally
};

struct GlmFit {
  Family family = Family::gaussian;
  Eigen::VectorXd coefficients;  // intercept first, original column scale
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
  double ridge = 0.0;  // ridge added to the normal equations, 0 if none was needed
};

double expit(double x) noexcept;
double logit(double p) noexcept;

/// Fits E[y] = h(X b + offset). `design` must carry the intercept as column 0.
/// An empty `offset` means zero. Columns that are constant on the rows with
/// positive weight are aliased with the intercept and get coefficient 0.
/// Throws std::invalid_argument on dimension mismatch, negative or all-zero
/// weights, or binomial responses outside [0, 1]. Non-convergence is reported
/// through `converged`, not thrown.
GlmFit fit_glm(const Eigen::Ref<const Eigen::MatrixXd>& design, const Eigen::Ref<const Eigen::VectorXd>& response,
               const Eigen::Ref<const Eigen::VectorXd>& weights, const Eigen::Ref<const Eigen::VectorXd>& offset,
               Family family, const GlmOptions& options = {});

/// Mean-scale predictions. Throws std::invalid_argument on width mismatch.
Eigen::VectorXd predict_glm(const GlmFit& fit, const Eigen::Ref<const Eigen::MatrixXd>& design,
                            const Eigen::Ref<const Eigen::VectorXd>& offset);

/// Weighted deviance at coefficients `beta`.
double glm_deviance(const Eigen::Ref<const Eigen::MatrixXd>& design, const Eigen::Ref<const Eigen::VectorXd>& response,
                    const Eigen::Ref<const Eigen::VectorXd>& weights, const Eigen::Ref<const Eigen::VectorXd>& offset,
                    Family family, const Eigen::Ref<const Eigen::VectorXd>& beta);

/// Weighted score X' W (y - mu) at `beta`; the deviance gradient is -2 times this.
Eigen::VectorXd glm_score(const Eigen::Ref<const Eigen::MatrixXd>& design, const Eigen::Ref<const Eigen::VectorXd>& response,
                          const Eigen::Ref<const Eigen::VectorXd>& weights, const Eigen::Ref<const Eigen::VectorXd>& offset,
                          Family family, const Eigen::Ref<const Eigen::VectorXd>& beta);

}  // namespace sdld
