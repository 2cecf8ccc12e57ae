#pragma once

// Honest pipeline: the tree is grown and selected on one part of the subjects
// and leaf effects (with bootstrap intervals) are estimated on a disjoint part.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdld/panel_data.hpp"
#include "sdld/run_config.hpp"
#include "sdld/tree.hpp"

namespace sdld {

struct BootstrapInterval {
  double lower = kMissing;
  double upper = kMissing;
  double level = 0.95;
  int effective_b = 0;       // resamples in which the leaf was estimable
  std::vector<double> draws;  // successful resample estimates, in replicate order
};

/// Percentile interval from bootstrap draws: endpoints are the order
/// statistics at ceil(p * B) for p = (1 - level) / 2 and (1 + level) / 2.
BootstrapInterval percentile_interval(std::vector<double> draws, double level);

/// Per-leaf percentile intervals over `B` subject-level resamples of
/// `estimate`; the tree is held fixed and effects are refit in every leaf.
/// Resample b draws from a generator seeded by (seed, b).
std::vector<BootstrapInterval> bootstrap_ci(const PanelDataset& estimate, const Tree& tree, int B, double level,
                                            std::uint64_t seed, const TreeConfig& config);

struct LeafReport {
  int node = 0;
  std::string subgroup;
  std::size_t n = 0;
  double share = 0.0;
  std::optional<SubgroupEffect> effect;  // empty: leaf not estimable on the estimation part
  std::string error;
  BootstrapInterval interval;
};

struct SubgroupReport {
  std::vector<LeafReport> leaves;
  Tree tree;
  RunConfig config;
  std::size_t n_build = 0;
  std::size_t n_validate = 0;
  std::size_t n_estimate = 0;
};

enum class Part { build, validate, estimate };
std::string_view to_string(Part p) noexcept;

struct SdldResult {
  SubgroupReport report;
  Tree initial_tree;
  PrunedSequence sequence;
  std::vector<Part> partition;  // per subject of the input dataset
};

/// Splits subjects into build / validate / estimate parts, grows and prunes on
/// build, selects on validate, and reports leaf effects estimated on the
/// estimate part only.
SdldResult run_sdld(const PanelDataset& d, const RunConfig& config, unsigned threads = 1);

nlohmann::ordered_json report_to_json(const SubgroupReport& r);
/// One row per leaf: node,subgroup,n,share,effect,variance,mean1,mean0,lower,upper,level,effective_b,error.
std::string report_csv(const SubgroupReport& r, const std::vector<std::string>& comments = {});
/// subject_id,part,node (node only for estimation subjects).
std::string partition_csv(const PanelDataset& d, const SdldResult& result,
                          const std::vector<std::string>& comments = {});
/// node,draw_index,effect.
std::string bootstrap_draws_csv(const SubgroupReport& r, const std::vector<std::string>& comments = {});

}  // namespace sdld
