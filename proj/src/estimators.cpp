#include "sdld/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sdld {

namespace {

// Initial outcome regressions are kept this far inside (0, 1) on the rescaled
// outcome so the logistic fluctuation offset stays finite.
constexpr double kQBound = 1e-5;
constexpr double kSeparatedEta = 30.0;

std::vector<int> observed_treatments(const SubjectRecord& s, int count) {
  std::vector<int> a(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) a[t] = s.periods[t].treatment;
  return a;
}

Eigen::MatrixXd build_design(const PanelDataset& d, std::span<const std::size_t> members,
                             std::span<const std::size_t> positions, const ModelSpec& spec, int k,
                             const TreatmentRegime* regime, bool include_current) {
  const int count = include_current ? k + 1 : k;
  std::vector<double> row;
  std::vector<int> a(static_cast<std::size_t>(count));
  Eigen::MatrixXd X;
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const auto& s = d.subjects[members[positions[r]]];
    for (int t = 0; t < count; ++t) a[t] = regime ? regime->values[t] : s.periods[t].treatment;
    design_row(spec, HistoryView{s, k, a}, row);
    if (r == 0) X.resize(static_cast<Eigen::Index>(positions.size()), static_cast<Eigen::Index>(row.size()));
    for (std::size_t c = 0; c < row.size(); ++c) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  return X;
}

// Binary-response fit; a constant response is treated as perfectly separated.
GlmFit fit_binary(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GlmOptions& options) {
  const bool all_zero = (y.array() == 0.0).all();
  const bool all_one = (y.array() == 1.0).all();
  if (all_zero || all_one) {
    GlmFit fit;
    fit.family = Family::binomial;
    fit.coefficients = Eigen::VectorXd::Zero(X.cols());
    fit.coefficients[0] = all_one ? kSeparatedEta : -kSeparatedEta;
    fit.converged = true;
    fit.iterations = 0;
    return fit;
  }
  return fit_glm(X, y, Eigen::VectorXd::Ones(X.rows()), Eigen::VectorXd(), Family::binomial, options);
}

double linear_predict(const GlmFit& fit, const std::vector<double>& row) {
  double eta = 0.0;
  for (std::size_t c = 0; c < row.size(); ++c) eta += fit.coefficients[static_cast<Eigen::Index>(c)] * row[c];
  return expit(std::clamp(eta, -kSeparatedEta, kSeparatedEta));
}

struct Positions {
  std::vector<std::size_t> at_risk;  // C̄_{k-1} = 0
  std::vector<std::size_t> uncensored;  // C̄_k = 0
};

Positions positions_at(const PanelDataset& d, std::span<const std::size_t> members, int k) {
  Positions p;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& s = d.subjects[members[i]];
    if (s.at_risk(k)) p.at_risk.push_back(i);
    if (s.uncensored_through(k)) p.uncensored.push_back(i);
  }
  return p;
}

void check_members(const PanelDataset& d, std::span<const std::size_t> members) {
  if (members.empty()) throw EstimationError(EstimationErrorKind::empty_risk_set, "subgroup is empty", 0);
  for (auto m : members) {
    if (m >= d.subjects.size()) throw std::out_of_range("member index out of range");
  }
}

// Shared engine for g-computation (targeted = false) and TMLE (targeted = true).
EstimateWithIC iterated_regression(const PanelDataset& d, std::span<const std::size_t> members,
                                   const TreatmentRegime& regime, const NuisanceModels& models,
                                   const EstimatorOptions& options, bool targeted) {
  check_members(d, members);
  const int K = d.horizon();
  regime.check(K);
  const std::size_t n = members.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto m : members) {
    const auto& s = d.subjects[m];
    if (s.uncensored_through(K) && s.outcome) {
      lo = std::min(lo, *s.outcome);
      hi = std::max(hi, *s.outcome);
    }
  }
  if (!(hi >= lo)) throw EstimationError(EstimationErrorKind::empty_risk_set, "no uncensored outcomes", K);

  EstimateWithIC est;
  est.n = n;
  if (hi == lo) {
    est.mean = lo;
    est.influence_values.assign(n, 0.0);
    est.variance = 0.0;
    if (targeted && options.audit) options.audit->record(est.mean, lo, hi);
    return est;
  }
  const double span = targeted ? hi - lo : 1.0;
  const double shift = targeted ? lo : 0.0;

  const auto weights = cumulative_weights(d, members, regime, models);

  std::vector<double> target(n, nan);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = d.subjects[members[i]];
    if (s.uncensored_through(K)) target[i] = (*s.outcome - shift) / span;
  }
  std::vector<double> ic(n, 0.0);
  std::vector<double> q(n, nan);

  for (int k = K; k >= 0; --k) {
    const auto pos = positions_at(d, members, k);
    if (pos.uncensored.empty()) {
      throw EstimationError(EstimationErrorKind::empty_risk_set, "no uncensored subjects at period " + std::to_string(k), k);
    }
    const Eigen::MatrixXd X = build_design(d, members, pos.uncensored, options.models.outcome, k, nullptr, true);
    Eigen::VectorXd y(static_cast<Eigen::Index>(pos.uncensored.size()));
    for (std::size_t r = 0; r < pos.uncensored.size(); ++r) y[static_cast<Eigen::Index>(r)] = target[pos.uncensored[r]];
    const GlmFit fit =
        fit_glm(X, y, Eigen::VectorXd::Ones(y.size()), Eigen::VectorXd(), Family::gaussian, options.glm);

    const Eigen::MatrixXd Xa = build_design(d, members, pos.at_risk, options.models.outcome, k, &regime, true);
    const Eigen::VectorXd qa = predict_glm(fit, Xa, Eigen::VectorXd());
    std::fill(q.begin(), q.end(), nan);
    for (std::size_t r = 0; r < pos.at_risk.size(); ++r) {
      double v = qa[static_cast<Eigen::Index>(r)];
      if (!std::isfinite(v)) throw EstimationError(EstimationErrorKind::numerical, "non-finite outcome prediction", k);
      if (targeted) v = std::clamp(v, kQBound, 1.0 - kQBound);
      q[pos.at_risk[r]] = v;
    }

    std::vector<std::size_t> followers;
    for (auto i : pos.uncensored) {
      if (weights.follows[i][k]) followers.push_back(i);
    }

    if (targeted) {
      if (followers.empty()) {
        throw EstimationError(EstimationErrorKind::no_followers, "no regime followers at period " + std::to_string(k), k);
      }
      const auto m = static_cast<Eigen::Index>(followers.size());
      Eigen::VectorXd h(m), yt(m), off(m);
      for (Eigen::Index r = 0; r < m; ++r) {
        const auto i = followers[static_cast<std::size_t>(r)];
        h[r] = 1.0 / weights.g[i][k];
        yt[r] = target[i];
        off[r] = options.fluctuation == Fluctuation::logistic ? logit(q[i]) : q[i];
      }
      const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(m, 1);
      const Family fam = options.fluctuation == Fluctuation::logistic ? Family::binomial : Family::gaussian;
      const GlmFit fl = fit_glm(ones, yt, h, off, fam, options.glm);
      const double eps = fl.coefficients[0];
      for (auto i : pos.at_risk) {
        q[i] = options.fluctuation == Fluctuation::logistic ? expit(logit(q[i]) + eps) : q[i] + eps;
      }
      double num = 0.0, den = 0.0;
      for (Eigen::Index r = 0; r < m; ++r) {
        const auto i = followers[static_cast<std::size_t>(r)];
        num += h[r] * (yt[r] - q[i]);
        den += h[r];
      }
      est.fluctuation_epsilons.push_back(eps);
      est.fluctuation_scores.push_back(num / den);
    }

    for (auto i : followers) ic[i] += (target[i] - q[i]) / weights.g[i][k];
    target = q;
  }

  double mean = 0.0;
  for (double v : target) mean += v;
  mean /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) ic[i] += target[i] - mean;
  if (!targeted) {
    // The untargeted fit does not solve the efficient score; centre so the
    // influence values still sum to zero.
    const double centre = std::accumulate(ic.begin(), ic.end(), 0.0) / static_cast<double>(n);
    for (auto& v : ic) v -= centre;
  }
  for (auto& v : ic) v *= span;

  est.mean = shift + span * mean;
  est.influence_values = std::move(ic);
  est.variance = influence_variance(est.influence_values);
  if (!std::isfinite(est.mean) || !std::isfinite(est.variance)) {
    throw EstimationError(EstimationErrorKind::numerical, "non-finite estimate");
  }
  if (targeted && options.audit) options.audit->record(est.mean, lo, hi);
  return est;
}

}  // namespace

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::ipw: return "ipw";
    case Method::gcomp: return "gcomp";
    case Method::tmle: return "tmle";
  }
  return "tmle";
}

Method parse_method(std::string_view s) {
  if (s == "ipw") return Method::ipw;
  if (s == "gcomp") return Method::gcomp;
  if (s == "tmle") return Method::tmle;
  throw std::invalid_argument("unknown estimator '" + std::string(s) + "'");
}

void BoundsAudit::record(double estimate, double lo, double hi) noexcept {
  checks.fetch_add(1, std::memory_order_relaxed);
  if (!(estimate >= lo && estimate <= hi)) violations.fetch_add(1, std::memory_order_relaxed);
}

void design_row(const ModelSpec& spec, const HistoryView& h, std::vector<double>& row) {
  row.clear();
  row.push_back(1.0);
  if (spec.terms == TermSet::main_effects) {
    const auto& s = h.subject;
    row.insert(row.end(), s.baseline.begin(), s.baseline.end());
    for (int t = 0; t <= h.period; ++t) {
      if (t > 0) {
        const auto& cov = s.periods[t].covariates;
        row.insert(row.end(), cov.begin(), cov.end());
      }
      if (static_cast<std::size_t>(t) < h.treatments.size()) row.push_back(h.treatments[t]);
    }
  }
  if (spec.extra) spec.extra(h, row);
  for (double v : row) {
    if (is_missing(v)) {
      throw EstimationError(EstimationErrorKind::missing_values,
                            "missing covariate for subject " + h.subject.id + "; impute before estimation");
    }
  }
}

NuisanceModels fit_propensity_models(const PanelDataset& d, std::span<const std::size_t> members,
                                     const EstimatorOptions& options) {
  check_members(d, members);
  if (!(options.truncation_bound > 0.0 && options.truncation_bound <= 0.5)) {
    throw std::invalid_argument("truncation bound must lie in (0, 0.5]");
  }
  const int K = d.horizon();
  NuisanceModels m;
  m.treatment_spec = options.models.treatment;
  m.censoring_spec = options.models.censoring;
  m.truncation_bound = options.truncation_bound;
  for (int k = 0; k <= K; ++k) {
    const auto pos = positions_at(d, members, k);
    if (pos.at_risk.empty()) {
      throw EstimationError(EstimationErrorKind::empty_risk_set, "no subjects at risk at period " + std::to_string(k), k);
    }
    const auto rows = static_cast<Eigen::Index>(pos.at_risk.size());
    Eigen::VectorXd a(rows), c(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& p = d.subjects[members[pos.at_risk[static_cast<std::size_t>(r)]]].periods[k];
      a[r] = p.treatment;
      c[r] = p.censored;
    }
    m.treatment_models.push_back(
        fit_binary(build_design(d, members, pos.at_risk, m.treatment_spec, k, nullptr, false), a, options.glm));
    m.censoring_models.push_back(
        fit_binary(build_design(d, members, pos.at_risk, m.censoring_spec, k, nullptr, true), c, options.glm));
  }
  return m;
}

NuisanceModels fit_propensity_models(const PanelDataset& d, const Subgroup& w, const EstimatorOptions& options) {
  const auto members = subgroup_members(d, w);
  return fit_propensity_models(d, members, options);
}

double treatment_probability(const NuisanceModels& m, const SubjectRecord& s, int k, int regime_value) {
  std::vector<double> row;
  const auto a = observed_treatments(s, k);
  design_row(m.treatment_spec, HistoryView{s, k, a}, row);
  const double p1 = linear_predict(m.treatment_models.at(static_cast<std::size_t>(k)), row);
  return std::max(regime_value == 1 ? p1 : 1.0 - p1, m.truncation_bound);
}

double uncensored_probability(const NuisanceModels& m, const SubjectRecord& s, int k) {
  std::vector<double> row;
  const auto a = observed_treatments(s, k + 1);
  design_row(m.censoring_spec, HistoryView{s, k, a}, row);
  const double c1 = linear_predict(m.censoring_models.at(static_cast<std::size_t>(k)), row);
  return std::max(1.0 - c1, m.truncation_bound);
}

CumulativeWeights cumulative_weights(const PanelDataset& d, std::span<const std::size_t> members,
                                     const TreatmentRegime& regime, const NuisanceModels& models) {
  const int K = d.horizon();
  regime.check(K);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CumulativeWeights w;
  w.g.assign(members.size(), std::vector<double>(static_cast<std::size_t>(K + 1), nan));
  w.follows.assign(members.size(), std::vector<unsigned char>(static_cast<std::size_t>(K + 1), 0));
  std::vector<double> running(members.size(), 1.0);
  std::vector<std::size_t> active(members.size());
  std::iota(active.begin(), active.end(), std::size_t{0});
  for (int k = 0; k <= K && !active.empty(); ++k) {
    // Members still following the regime and at risk at k.
    std::vector<std::size_t> here;
    for (auto i : active) {
      const auto& s = d.subjects[members[i]];
      if (s.at_risk(k) && s.periods[k].treatment == regime.values[k]) here.push_back(i);
    }
    if (here.empty()) break;
    const auto& ak = models.treatment_models.at(static_cast<std::size_t>(k));
    const auto& ck = models.censoring_models.at(static_cast<std::size_t>(k));
    const Eigen::VectorXd p1 = predict_glm(ak, build_design(d, members, here, models.treatment_spec, k, nullptr, false),
                                           Eigen::VectorXd());
    const Eigen::VectorXd c1 = predict_glm(ck, build_design(d, members, here, models.censoring_spec, k, nullptr, true),
                                           Eigen::VectorXd());
    std::vector<std::size_t> next;
    for (std::size_t r = 0; r < here.size(); ++r) {
      const auto i = here[r];
      const auto ri = static_cast<Eigen::Index>(r);
      const double pa = std::max(regime.values[k] == 1 ? p1[ri] : 1.0 - p1[ri], models.truncation_bound);
      running[i] *= pa;
      if (d.subjects[members[i]].periods[k].censored != 0) continue;
      running[i] *= std::max(1.0 - c1[ri], models.truncation_bound);
      w.g[i][k] = running[i];
      w.follows[i][k] = 1;
      next.push_back(i);
    }
    active = std::move(next);
  }
  return w;
}

double influence_variance(std::span<const double> values) {
  const auto n = values.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(n - 1) / static_cast<double>(n);
}

EstimateWithIC hajek_ipw(std::span<const double> ghat, std::span<const unsigned char> follows,
                         std::span<const double> outcomes) {
  const auto n = ghat.size();
  if (follows.size() != n || outcomes.size() != n) throw std::invalid_argument("hajek_ipw: length mismatch");
  double sw = 0.0, swy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!follows[i]) continue;
    sw += 1.0 / ghat[i];
    swy += outcomes[i] / ghat[i];
  }
  if (!(sw > 0.0)) throw EstimationError(EstimationErrorKind::no_followers, "no followers of the regime");
  EstimateWithIC est;
  est.n = n;
  est.mean = swy / sw;
  est.influence_values.assign(n, 0.0);
  const double mean_w = sw / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (follows[i]) est.influence_values[i] = (outcomes[i] - est.mean) / ghat[i] / mean_w;
  }
  est.variance = influence_variance(est.influence_values);
  return est;
}

EstimateWithIC estimate_ipw(const PanelDataset& d, std::span<const std::size_t> members, const TreatmentRegime& regime,
                            const NuisanceModels& models) {
  check_members(d, members);
  const int K = d.horizon();
  const auto w = cumulative_weights(d, members, regime, models);
  std::vector<double> g(members.size(), 1.0), y(members.size(), 0.0);
  std::vector<unsigned char> f(members.size(), 0);
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (!w.follows[i][K]) continue;
    f[i] = 1;
    g[i] = w.g[i][K];
    y[i] = *d.subjects[members[i]].outcome;
  }
  return hajek_ipw(g, f, y);
}

EstimateWithIC estimate_gcomp(const PanelDataset& d, std::span<const std::size_t> members,
                              const TreatmentRegime& regime, const NuisanceModels& models,
                              const EstimatorOptions& options) {
  return iterated_regression(d, members, regime, models, options, false);
}

EstimateWithIC estimate_tmle(const PanelDataset& d, std::span<const std::size_t> members,
                             const TreatmentRegime& regime, const NuisanceModels& models,
                             const EstimatorOptions& options) {
  return iterated_regression(d, members, regime, models, options, true);
}

EstimateWithIC estimate_mean(const PanelDataset& d, std::span<const std::size_t> members,
                             const TreatmentRegime& regime, const NuisanceModels& models, Method method,
                             const EstimatorOptions& options) {
  switch (method) {
    case Method::ipw: return estimate_ipw(d, members, regime, models);
    case Method::gcomp: return estimate_gcomp(d, members, regime, models, options);
    case Method::tmle: return estimate_tmle(d, members, regime, models, options);
  }
  return estimate_tmle(d, members, regime, models, options);
}

SubgroupEffect estimate_effect(const PanelDataset& d, std::span<const std::size_t> members,
                               const TreatmentRegime& regime1, const TreatmentRegime& regime0, Method method,
                               const EstimatorOptions& options) {
  const auto models = fit_propensity_models(d, members, options);
  const auto e1 = estimate_mean(d, members, regime1, models, method, options);
  const auto e0 = regime1 == regime0 ? e1 : estimate_mean(d, members, regime0, models, method, options);
  SubgroupEffect eff;
  eff.regime1 = regime1;
  eff.regime0 = regime0;
  eff.n = members.size();
  eff.mean1 = e1.mean;
  eff.mean0 = e0.mean;
  eff.delta = e1.mean - e0.mean;
  std::vector<double> diff(members.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = e1.influence_values[i] - e0.influence_values[i];
  eff.variance = influence_variance(diff);
  return eff;
}

SubgroupEffect estimate_effect(const PanelDataset& d, const TreatmentRegime& regime1, const TreatmentRegime& regime0,
                               const Subgroup& w, Method method, const EstimatorOptions& options) {
  const auto members = subgroup_members(d, w);
  return estimate_effect(d, members, regime1, regime0, method, options);
}

}  // namespace sdld
