#include "sdld/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace sdld {

namespace {

constexpr double kEtaClamp = 30.0;

double clamp_eta(double eta) { return std::clamp(eta, -kEtaClamp, kEtaClamp); }

double mean_of(Family family, double eta) { return family == Family::gaussian ? eta : expit(eta); }

double xlogx_ratio(double y, double mu) { return y > 0.0 ? y * std::log(y / mu) : 0.0; }

double unit_deviance(Family family, double y, double mu) {
  if (family == Family::gaussian) return (y - mu) * (y - mu);
  mu = std::clamp(mu, 1e-300, 1.0 - 1e-16);
  return 2.0 * (xlogx_ratio(y, mu) + xlogx_ratio(1.0 - y, 1.0 - mu));
}

void check_inputs(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                  const Eigen::Ref<const Eigen::VectorXd>& w, const Eigen::Ref<const Eigen::VectorXd>& offset,
                  Family family) {
  const auto n = X.rows();
  if (X.cols() < 1) throw std::invalid_argument("glm: design has no columns");
  if (y.size() != n || w.size() != n || (offset.size() != 0 && offset.size() != n)) {
    throw std::invalid_argument("glm: dimension mismatch");
  }
  if ((w.array() < 0.0).any() || !w.allFinite()) throw std::invalid_argument("glm: weights must be finite and >= 0");
  if (!(w.sum() > 0.0)) throw std::invalid_argument("glm: weights are all zero");
  if (!y.allFinite() || !X.allFinite()) throw std::invalid_argument("glm: non-finite input");
  if (family == Family::binomial && ((y.array() < 0.0).any() || (y.array() > 1.0).any())) {
    throw std::invalid_argument("glm: binomial response outside [0, 1]");
  }
}

// Solves (A + ridge I) x = b, escalating the ridge when A is (near) singular.
Eigen::VectorXd solve_normal(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double& ridge_used) {
  const auto p = A.rows();
  const double scale = std::max(A.diagonal().mean(), std::numeric_limits<double>::min());
  double ridge = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd M = A;
    if (ridge > 0.0) M.diagonal().array() += ridge * scale;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-13) {
      Eigen::VectorXd x = ldlt.solve(b);
      if (x.allFinite()) {
        ridge_used = ridge;
        return x;
      }
    }
    ridge = ridge == 0.0 ? 1e-8 : ridge * 10.0;
    if (ridge > 1e-2) break;
  }
  // Last resort at the largest ridge.
  Eigen::MatrixXd M = A;
  M.diagonal().array() += 1e-2 * scale;
  ridge_used = 1e-2;
  Eigen::VectorXd x = M.ldlt().solve(b);
  if (!x.allFinite()) x = Eigen::VectorXd::Zero(p);
  return x;
}

}  // namespace

double expit(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

GlmFit fit_glm(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
               const Eigen::Ref<const Eigen::VectorXd>& w, const Eigen::Ref<const Eigen::VectorXd>& offset_in,
               Family family, const GlmOptions& options) {
  check_inputs(X, y, w, offset_in, family);
  const auto n = X.rows();
  const auto p = X.cols();
  const Eigen::VectorXd offset = offset_in.size() == 0 ? Eigen::VectorXd::Zero(n) : Eigen::VectorXd(offset_in);

  // Internal standardisation over rows with positive weight; constant columns are aliased.
  const bool has_intercept = (X.col(0).array() == 1.0).all();
  const bool standardize = options.standardize && has_intercept;
  std::vector<Eigen::Index> active{0};
  Eigen::VectorXd centre = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(p);
  {
    Eigen::Index used = 0;
    for (Eigen::Index i = 0; i < n; ++i) used += w[i] > 0.0;
    for (Eigen::Index j = 1; j < p; ++j) {
      double mean = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (w[i] <= 0.0) continue;
        mean += X(i, j);
        lo = std::min(lo, X(i, j));
        hi = std::max(hi, X(i, j));
      }
      mean /= static_cast<double>(used);
      if (has_intercept && !(hi > lo)) continue;  // aliased with the intercept
      active.push_back(j);
      if (standardize) {
        double ss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (w[i] > 0.0) ss += (X(i, j) - mean) * (X(i, j) - mean);
        }
        const double sd = std::sqrt(ss / static_cast<double>(std::max<Eigen::Index>(used - 1, 1)));
        centre[j] = mean;
        scale[j] = sd > 0.0 ? sd : 1.0;
      }
    }
    if (!has_intercept) {
      active.clear();
      for (Eigen::Index j = 0; j < p; ++j) active.push_back(j);
    }
  }
  const auto q = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd Z(n, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    const auto j = active[a];
    if (standardize && j > 0) {
      Z.col(a) = (X.col(j).array() - centre[j]) / scale[j];
    } else {
      Z.col(a) = X.col(j);
    }
  }

  GlmFit fit;
  fit.family = family;
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd eta(n), mu(n);
  auto evaluate = [&](const Eigen::VectorXd& g) {
    eta = Z * g + offset;
    double dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = mean_of(family, family == Family::binomial ? clamp_eta(eta[i]) : eta[i]);
      if (w[i] > 0.0) dev += w[i] * unit_deviance(family, y[i], mu[i]);
    }
    return dev;
  };

  if (family == Family::binomial && has_intercept && offset_in.size() == 0) {
    // Start from the intercept-only fit; standardized columns are centred.
    const double ybar = std::clamp((w.array() * y.array()).sum() / w.sum(), 1e-6, 1.0 - 1e-6);
    gamma[0] = logit(ybar);
  }
  double dev = evaluate(gamma);
  Eigen::VectorXd working_w(n), z(n);
  Eigen::MatrixXd Zw(n, q);
  for (int iter = 1; iter <= options.max_iter; ++iter) {
    fit.iterations = iter;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (family == Family::gaussian) {
        working_w[i] = w[i];
        z[i] = y[i] - offset[i];
      } else {
        const double var = std::max(mu[i] * (1.0 - mu[i]), 1e-12);
        working_w[i] = w[i] * var;
        z[i] = eta[i] - offset[i] + (y[i] - mu[i]) / var;
      }
    }
    const Eigen::VectorXd root_w = working_w.cwiseSqrt();
    Zw = Z.array().colwise() * root_w.array();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(q, q);
    A.selfadjointView<Eigen::Lower>().rankUpdate(Zw.transpose());
    A.triangularView<Eigen::Upper>() = A.transpose();
    const Eigen::VectorXd b = Z.transpose() * (working_w.array() * z.array()).matrix();
    double ridge = 0.0;
    Eigen::VectorXd candidate = solve_normal(A, b, ridge);
    fit.ridge = std::max(fit.ridge, ridge);

    double new_dev = evaluate(candidate);
    for (int halving = 0; halving < 30 && (!std::isfinite(new_dev) || new_dev > dev * (1.0 + 1e-12) + 1e-300);
         ++halving) {
      candidate = 0.5 * (candidate + gamma);
      new_dev = evaluate(candidate);
    }
    const double change = std::abs(new_dev - dev) / (std::abs(new_dev) + 0.1);
    gamma = candidate;
    dev = new_dev;
    if (family == Family::gaussian || change < options.tolerance) {
      fit.converged = true;
      break;
    }
  }
  evaluate(gamma);
  fit.deviance = dev;

  fit.coefficients = Eigen::VectorXd::Zero(p);
  for (Eigen::Index a = 0; a < q; ++a) {
    const auto j = active[a];
    fit.coefficients[j] = (standardize && j > 0) ? gamma[a] / scale[j] : gamma[a];
  }
  if (standardize) {
    for (Eigen::Index a = 1; a < q; ++a) {
      const auto j = active[a];
      fit.coefficients[0] -= gamma[a] * centre[j] / scale[j];
    }
  }
  return fit;
}

Eigen::VectorXd predict_glm(const GlmFit& fit, const Eigen::Ref<const Eigen::MatrixXd>& X,
                            const Eigen::Ref<const Eigen::VectorXd>& offset) {
  if (X.cols() != fit.coefficients.size()) throw std::invalid_argument("glm: design width mismatch");
  if (offset.size() != 0 && offset.size() != X.rows()) throw std::invalid_argument("glm: offset length mismatch");
  Eigen::VectorXd eta = X * fit.coefficients;
  if (offset.size() != 0) eta += offset;
  if (fit.family == Family::binomial) {
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = expit(clamp_eta(eta[i]));
  }
  return eta;
}

double glm_deviance(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                    const Eigen::Ref<const Eigen::VectorXd>& w, const Eigen::Ref<const Eigen::VectorXd>& offset,
                    Family family, const Eigen::Ref<const Eigen::VectorXd>& beta) {
  check_inputs(X, y, w, offset, family);
  Eigen::VectorXd eta = X * beta;
  if (offset.size() != 0) eta += offset;
  double dev = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (w[i] > 0.0) dev += w[i] * unit_deviance(family, y[i], mean_of(family, eta[i]));
  }
  return dev;
}

Eigen::VectorXd glm_score(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                          const Eigen::Ref<const Eigen::VectorXd>& w, const Eigen::Ref<const Eigen::VectorXd>& offset,
                          Family family, const Eigen::Ref<const Eigen::VectorXd>& beta) {
  check_inputs(X, y, w, offset, family);
  Eigen::VectorXd eta = X * beta;
  if (offset.size() != 0) eta += offset;
  Eigen::VectorXd r(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) r[i] = w[i] * (y[i] - mean_of(family, eta[i]));
  return X.transpose() * r;
}

}  // namespace sdld
