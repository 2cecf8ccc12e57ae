#include "sdld/errors.hpp"

namespace sdld {

std::string_view to_string(DataErrorKind kind) noexcept {
  switch (kind) {
    case DataErrorKind::io: return "Io";
    case DataErrorKind::missing_column: return "MissingColumn";
    case DataErrorKind::non_monotone_censoring: return "NonMonotoneCensoring";
    case DataErrorKind::malformed_value: return "MalformedValue";
    case DataErrorKind::unknown_covariate: return "UnknownCovariate";
    case DataErrorKind::invalid_fractions: return "InvalidFractions";
    case DataErrorKind::schema_mismatch: return "SchemaMismatch";
    case DataErrorKind::empty_validation_set: return "EmptyValidationSet";
  }
  return "DataError";
}

std::string_view to_string(EstimationErrorKind kind) noexcept {
  switch (kind) {
    case EstimationErrorKind::empty_risk_set: return "EmptyRiskSet";
    case EstimationErrorKind::no_followers: return "NoFollowers";
    case EstimationErrorKind::zero_variance: return "ZeroVariance";
    case EstimationErrorKind::root_not_estimable: return "RootNotEstimable";
    case EstimationErrorKind::missing_values: return "MissingValues";
    case EstimationErrorKind::numerical: return "Numerical";
  }
  return "EstimationError";
}

DataError::DataError(DataErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

EstimationError::EstimationError(EstimationErrorKind kind, const std::string& message, int period)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), period_(period) {}

}  // namespace sdld
