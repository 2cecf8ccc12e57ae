#pragma once

// Two-period simulation design with a baseline effect modifier, factual
// dropout, and the metrics used to score fitted trees against the true
// single-split partition.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdld/panel_data.hpp"
#include "sdld/tree.hpp"

namespace sdld {

/// Index of the effect-modifying baseline covariate (second of five).
inline constexpr std::size_t kModifierCovariate = 1;
inline constexpr double kModifierCutpoint = 0.5;

struct AppendixCConfig {
  std::size_t n = 12000;
  std::size_t n_build = 10000;
  std::size_t n_validate = 2000;
  std::uint64_t seed = 1;
  int replicates = 100;
  bool heterogeneous = true;  // false: interaction terms removed
  std::size_t eval_size = 1000;

  void check() const;
};

/// K = 1 panel with baseline x1..x5 and time-varying (y, z1, z2) at period 1.
/// Every subject consumes the same number of draws, so subject i depends only
/// on the seed and i.
PanelDataset simulate_appendix_c(std::size_t n, std::uint64_t seed, bool heterogeneous = true);

/// Draws `m` baseline vectors from the design's L0 law.
std::vector<std::vector<double>> simulate_baseline(std::size_t m, std::uint64_t seed);

/// δ(l0) for always vs never treated: 1.0 if l0[1] <= 0.5, else -3.0.
double true_effect_appendix_c(std::span<const double> l0);

struct TreeEvaluation {
  bool correct = false;
  std::size_t terminal_nodes = 1;
  std::size_t noise_splits = 0;
  bool first_split_correct = false;
  double similarity = 0.0;
};

/// 1 - Σ_{i<j} |I_T(i,j) - I_M(i,j)| / C(m,2), with I_T from the true stump and
/// I_M from `tree`.
double pairwise_similarity(const Tree& tree, const std::vector<std::vector<double>>& sample);

/// Scores `tree`; `first_split_correct` refers to this tree's root split.
TreeEvaluation evaluate_tree(const Tree& tree, const std::vector<std::vector<double>>& sample);

struct SimMetrics {
  double correct_tree_proportion = 0.0;
  double mean_terminal_nodes = 0.0;
  double mean_noise_splits = 0.0;
  double first_split_correct_proportion = 0.0;
  double pairwise_prediction_similarity = 0.0;
  int replicates_ok = 0;
  int replicates_failed = 0;
};

struct ReplicateRecord {
  int replicate = 0;
  std::uint64_t seed = 0;
  std::optional<TreeEvaluation> evaluation;  // empty when the replicate failed
  std::string error;
  double runtime_ms = 0.0;
  std::optional<Tree> initial_tree;
  std::optional<Tree> final_tree;
};

struct SimulationOptions {
  unsigned threads = 1;       // replicates run concurrently
  bool keep_trees = false;
  bool record_runtime = false;
};

struct SimulationResult {
  SimMetrics metrics;
  std::vector<ReplicateRecord> replicates;
};

/// Seed of replicate r derived from (seed, r).
std::uint64_t replicate_seed(std::uint64_t seed, int replicate);

/// Build, prune and select per replicate; averages over successful replicates.
SimulationResult run_simulation_study(const AppendixCConfig& cfg, const TreeConfig& tree_config, double lambda,
                                      const SimulationOptions& options = {});

SimMetrics aggregate(std::span<const ReplicateRecord> records);

/// CSV: replicate,seed,correct,size,noise,first_split,similarity,runtime_ms,error.
/// runtime_ms is left empty unless `with_runtime`.
std::string replicate_log_csv(std::span<const ReplicateRecord> records, bool with_runtime,
                              const std::vector<std::string>& comments = {});

}  // namespace sdld
