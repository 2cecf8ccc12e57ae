#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "sdld/estimators.hpp"
#include "sdld/tree.hpp"

namespace sdld {

/// Resolved settings for one pipeline run. Thread counts are deliberately
/// absent: they never change results.
struct RunConfig {
  Method estimator = Method::tmle;
  double lambda = kChiSquare1Q95;
  std::array<double, 3> fractions{0.48, 0.12, 0.40};  // build, validate, estimate
  std::size_t min_node_size = 200;
  std::size_t min_regime_followers = 25;
  int max_depth = 5;
  int cutpoint_grid = 15;
  double truncation_bound = 0.01;
  Fluctuation fluctuation = Fluctuation::logistic;
  int bootstrap = 1000;
  double level = 0.95;
  std::uint64_t seed = 1;
  std::vector<int> regime1;  // empty: all ones
  std::vector<int> regime0;  // empty: all zeros

  /// Throws std::invalid_argument on out-of-range values.
  void check() const;
  TreeConfig tree_config(unsigned threads = 1) const;
  EstimatorOptions estimator_options() const;

  bool operator==(const RunConfig&) const = default;
};

nlohmann::ordered_json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

}  // namespace sdld
