#pragma once

// Subgroup-specific potential-outcome means E[Y^{ā, c̄=0} | L0 ∈ w] and effects
// δ(w) under static regimes: Hajek IPW, iterated-conditional-expectation
// g-computation, and longitudinal TMLE.
//
// Identification requires consistency, sequential exchangeability and
// positivity; the latter is enforced numerically by flooring every per-period
// probability of following the regime (and of staying uncensored) at
// `truncation_bound`.

#include <atomic>
#include <functional>
#include <span>
#include <vector>

#include "sdld/glm.hpp"
#include "sdld/panel_data.hpp"

namespace sdld {

enum class Method { ipw, gcomp, tmle };

std::string_view to_string(Method m) noexcept;
Method parse_method(std::string_view s);

/// A subject's history up to `period`: L0, (A0), L1, A1, ..., Lk and, when
/// `treatments.size() == period + 1`, the current treatment A_k. The
/// treatment values may differ from the observed ones (regime-set predictions).
struct HistoryView {
  const SubjectRecord& subject;
  int period;
  std::span<const int> treatments;
};

/// Appends extra design columns (interactions, indicators) for one history.
using ExtraTerms = std::function<void(const HistoryView&, std::vector<double>&)>;

enum class TermSet { intercept_only, main_effects };

/// Right-hand side of a nuisance regression: an intercept, optionally the main
/// effects of every past covariate and treatment, plus any extra terms.
struct ModelSpec {
  TermSet terms = TermSet::main_effects;
  ExtraTerms extra;
};

struct NuisanceSpec {
  ModelSpec treatment;
  ModelSpec censoring;
  ModelSpec outcome;
};

enum class Fluctuation { logistic, gaussian };

/// Thread-safe tally of TMLE estimates against the observed outcome range.
struct BoundsAudit {
  std::atomic<long> checks{0};
  std::atomic<long> violations{0};
  void record(double estimate, double lo, double hi) noexcept;
};

struct EstimatorOptions {
  double truncation_bound = 0.01;
  NuisanceSpec models;
  Fluctuation fluctuation = Fluctuation::logistic;
  GlmOptions glm;
  BoundsAudit* audit = nullptr;
};

/// Fitted treatment (g_{A,k}) and censoring (g_{C,k}) models, one per period.
/// Treatment models give P(A_k = 1 | past); regime-specific probabilities are
/// formed on evaluation.
struct NuisanceModels {
  std::vector<GlmFit> treatment_models;
  std::vector<GlmFit> censoring_models;  // P(C_k = 1 | past, A_k)
  ModelSpec treatment_spec;
  ModelSpec censoring_spec;
  double truncation_bound = 0.01;
};

/// Per-member cumulative probabilities ĝ_{0:k} of following the regime and
/// staying uncensored through period k. Entries are NaN once a member has
/// stopped following (those weights are never used).
struct CumulativeWeights {
  std::vector<std::vector<double>> g;              // [member][k]
  std::vector<std::vector<unsigned char>> follows;  // I(Ā_k = ā_k, C̄_k = 0)
};

struct EstimateWithIC {
  double mean = 0.0;
  double variance = 0.0;  // sample variance of influence_values / n
  std::size_t n = 0;
  std::vector<double> influence_values;  // one per member, in member order
  std::vector<double> fluctuation_epsilons;  // TMLE only, one per step (k = K .. 0)
  std::vector<double> fluctuation_scores;    // weighted mean residual after each step
};

struct SubgroupEffect {
  double delta = 0.0;
  double variance = 0.0;
  std::size_t n = 0;
  TreatmentRegime regime1;
  TreatmentRegime regime0;
  double mean1 = 0.0;
  double mean0 = 0.0;
};

/// Builds one design row for a nuisance regression (intercept first).
void design_row(const ModelSpec& spec, const HistoryView& h, std::vector<double>& row);

/// Fits per-period treatment and censoring models among `members`: at period
/// k the treatment model uses members at risk at k (C̄_{k-1} = 0), the
/// censoring model additionally conditions on A_k. Throws
/// EstimationError(empty_risk_set) when a period has no one at risk.
NuisanceModels fit_propensity_models(const PanelDataset& d, std::span<const std::size_t> members,
                                     const EstimatorOptions& options = {});
NuisanceModels fit_propensity_models(const PanelDataset& d, const Subgroup& w, const EstimatorOptions& options = {});

/// Truncated per-period probability of following regime value a_k.
double treatment_probability(const NuisanceModels& m, const SubjectRecord& s, int k, int regime_value);
/// Truncated per-period probability of remaining uncensored at period k.
double uncensored_probability(const NuisanceModels& m, const SubjectRecord& s, int k);

CumulativeWeights cumulative_weights(const PanelDataset& d, std::span<const std::size_t> members,
                                     const TreatmentRegime& regime, const NuisanceModels& models);

/// Hajek ratio Σ I·Y/ĝ / Σ I/ĝ from precomputed cumulative probabilities;
/// `outcomes` is ignored where `follows` is 0.
EstimateWithIC hajek_ipw(std::span<const double> ghat, std::span<const unsigned char> follows,
                         std::span<const double> outcomes);

EstimateWithIC estimate_ipw(const PanelDataset& d, std::span<const std::size_t> members, const TreatmentRegime& regime,
                            const NuisanceModels& models);
EstimateWithIC estimate_gcomp(const PanelDataset& d, std::span<const std::size_t> members,
                              const TreatmentRegime& regime, const NuisanceModels& models,
                              const EstimatorOptions& options = {});
EstimateWithIC estimate_tmle(const PanelDataset& d, std::span<const std::size_t> members,
                             const TreatmentRegime& regime, const NuisanceModels& models,
                             const EstimatorOptions& options = {});

EstimateWithIC estimate_mean(const PanelDataset& d, std::span<const std::size_t> members,
                             const TreatmentRegime& regime, const NuisanceModels& models, Method method,
                             const EstimatorOptions& options = {});

/// δ̂(w) = μ̂(ā₁) − μ̂(ā₀) with variance var(IC₁ − IC₀)/n. Members may repeat
/// (bootstrap resamples).
SubgroupEffect estimate_effect(const PanelDataset& d, std::span<const std::size_t> members,
                               const TreatmentRegime& regime1, const TreatmentRegime& regime0, Method method,
                               const EstimatorOptions& options = {});
SubgroupEffect estimate_effect(const PanelDataset& d, const TreatmentRegime& regime1, const TreatmentRegime& regime0,
                               const Subgroup& w, Method method, const EstimatorOptions& options = {});

/// Sample variance (n - 1 denominator) of `values` divided by n.
double influence_variance(std::span<const double> values);

}  // namespace sdld
