#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sdld {

enum class DataErrorKind {
  io,
  missing_column,
  non_monotone_censoring,
  malformed_value,
  unknown_covariate,
  invalid_fractions,
  schema_mismatch,
  empty_validation_set,
};

std::string_view to_string(DataErrorKind kind) noexcept;

/// Problems with the input data or its schema.
class DataError : public std::runtime_error {
 public:
  DataError(DataErrorKind kind, const std::string& message);
  DataErrorKind kind() const noexcept { return kind_; }

 private:
  DataErrorKind kind_;
};

enum class EstimationErrorKind {
  empty_risk_set,
  no_followers,
  zero_variance,
  root_not_estimable,
  missing_values,
  numerical,
};

std::string_view to_string(EstimationErrorKind kind) noexcept;

/// A quantity could not be estimated on the supplied subjects. `period()` is
/// the offending period for risk-set failures and -1 otherwise.
class EstimationError : public std::runtime_error {
 public:
  EstimationError(EstimationErrorKind kind, const std::string& message, int period = -1);
  EstimationErrorKind kind() const noexcept { return kind_; }
  int period() const noexcept { return period_; }

 private:
  EstimationErrorKind kind_;
  int period_;
};

}  // namespace sdld
