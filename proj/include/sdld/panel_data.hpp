#pragma once

// Longitudinal panel data: subjects observed as (L0, A0, C0, L1, A1, C1, ...,
// LK, AK, CK, Y) with monotone dropout. Period 0 carries no time-varying
// covariate vector of its own; L0 lives in SubjectRecord::baseline.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdld/errors.hpp"

namespace sdld {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) noexcept { return std::isnan(v); }

struct PeriodRecord {
  std::vector<double> covariates;  // L_k, empty for k = 0
  int treatment = 0;               // A_k
  int censored = 0;                // C_k
};

struct SubjectRecord {
  std::string id;
  std::vector<double> baseline;       // L_0
  std::vector<PeriodRecord> periods;  // k = 0 .. (dropout period or K)
  std::optional<double> outcome;      // Y_{K+1}

  /// C̄_{k-1} = 0, i.e. the subject's period-k record exists.
  bool at_risk(int k) const noexcept {
    return k >= 0 && static_cast<std::size_t>(k) < periods.size();
  }
  /// C̄_k = 0.
  bool uncensored_through(int k) const noexcept {
    return at_risk(k) && periods[static_cast<std::size_t>(k)].censored == 0;
  }
};

struct PanelSchema {
  std::vector<std::string> baseline;
  std::vector<std::string> time_varying;  // same names at every period 1..K
  std::vector<std::string> binary;        // covariates imputed with 0 rather than the mean
  int horizon = 0;                        // K

  std::optional<std::size_t> baseline_index(const std::string& name) const;
  std::optional<std::size_t> time_varying_index(const std::string& name) const;
  bool is_binary(const std::string& name) const;

  bool operator==(const PanelSchema&) const = default;
};

struct PanelDataset {
  PanelSchema schema;
  std::vector<SubjectRecord> subjects;

  int horizon() const noexcept { return schema.horizon; }
  std::size_t size() const noexcept { return subjects.size(); }
};

/// Static regime ā = (a_0, ..., a_K); censoring is always abolished.
struct TreatmentRegime {
  std::vector<int> values;

  static TreatmentRegime always(int horizon) { return {std::vector<int>(horizon + 1, 1)}; }
  static TreatmentRegime never(int horizon) { return {std::vector<int>(horizon + 1, 0)}; }
  /// Throws DataError(schema_mismatch) unless the length is horizon + 1 and values are binary.
  void check(int horizon) const;
  bool operator==(const TreatmentRegime&) const = default;
};

enum class Relation { less, greater_equal };

struct Condition {
  std::size_t covariate = 0;
  Relation relation = Relation::less;
  double cutpoint = 0.0;

  bool holds(std::span<const double> baseline) const noexcept {
    const double v = baseline[covariate];
    return relation == Relation::less ? v < cutpoint : v >= cutpoint;
  }
  bool operator==(const Condition&) const = default;
};

/// Conjunction of axis-aligned baseline conditions; empty means everyone.
struct Subgroup {
  std::vector<Condition> constraints;

  bool contains(std::span<const double> baseline) const noexcept;
  Subgroup with(Condition c) const;
  std::string describe(const std::vector<std::string>& baseline_names) const;
  bool operator==(const Subgroup&) const = default;
};

/// Indices of subjects whose baseline lies in `w`.
std::vector<std::size_t> subgroup_members(const PanelDataset& d, const Subgroup& w);
std::vector<std::size_t> all_members(const PanelDataset& d);

struct Violation {
  std::string subject_id;
  int period = -1;
  std::string message;
};

/// Diagnostic: empty iff every subject respects the time ordering and
/// monotone dropout, and at least one subject is uncensored through K.
std::vector<Violation> validate_monotone_censoring(const PanelDataset& d);

/// True if any covariate value of an at-risk period (or the baseline) is missing.
bool has_missing_covariates(const PanelDataset& d);

// --- wide CSV -------------------------------------------------------------

/// Column names of the wide layout, in canonical order.
std::vector<std::string> wide_header(const PanelSchema& schema);

/// Reads a schema from the header of a wide CSV (lines starting with '#' are skipped).
PanelSchema infer_schema(const std::filesystem::path& path);

PanelDataset load_panel_csv(const std::filesystem::path& path, const PanelSchema& schema);
PanelDataset load_panel_csv(const std::filesystem::path& path);

/// Writes the wide layout; each `comments` entry becomes a leading "# ..." line.
void write_panel_csv(const PanelDataset& d, const std::filesystem::path& path,
                     const std::vector<std::string>& comments = {});
std::string panel_csv_string(const PanelDataset& d, const std::vector<std::string>& comments = {});

PanelSchema load_schema_json(const std::filesystem::path& path);
void save_schema_json(const PanelSchema& schema, const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

// --- preprocessing --------------------------------------------------------

/// Last-observation-carried-forward imputation of the named time-varying
/// covariates. A covariate's period-0 value is the baseline column of the same
/// name when one exists. Where nothing can be carried forward, continuous
/// values take the mean of the observed values in that period (0 if none are
/// observed) and binary values take 0.
PanelDataset locf_impute(const PanelDataset& d, const std::vector<std::string>& covariates);

/// Subject-level random partition into (build, select, estimate) parts.
/// Part sizes use largest-remainder rounding; parts keep input order.
std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n, std::array<double, 3> fractions,
                                                      std::uint64_t seed);
std::array<PanelDataset, 3> split_dataset(const PanelDataset& d, std::array<double, 3> fractions,
                                          std::uint64_t seed);

PanelDataset subset(const PanelDataset& d, std::span<const std::size_t> indices);

/// Restricts the panel to periods 0..k. The new outcome is the time-varying
/// covariate `interim_outcome` measured at period k+1 (for k < K); subjects
/// censored at k or earlier keep no outcome. With k == K the panel is unchanged.
PanelDataset truncate_horizon(const PanelDataset& d, int k, const std::string& interim_outcome);

/// Portable Fisher-Yates permutation of 0..n-1 driven by a 64-bit Mersenne twister.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace sdld
