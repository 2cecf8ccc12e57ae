#pragma once

// Interaction-tree growth, weakest-link pruning on split complexity, and
// validation-based selection of the final tree.

#include <array>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdld/estimators.hpp"
#include "sdld/panel_data.hpp"

namespace sdld {

/// 95th percentile of the chi-square distribution with one degree of freedom.
inline constexpr double kChiSquare1Q95 = 3.841459;

struct TreeConfig {
  Method method = Method::tmle;
  TreatmentRegime regime1;  // empty: always treated
  TreatmentRegime regime0;  // empty: never treated
  std::size_t min_node_size = 200;
  std::size_t min_regime_followers = 25;
  int max_depth = 5;
  int cutpoint_grid = 15;
  EstimatorOptions estimator;
  unsigned threads = 1;
};

/// Fills empty regimes with always/never for `horizon` and checks lengths.
TreeConfig resolve_regimes(TreeConfig config, int horizon);

struct Split {
  std::size_t covariate = 0;
  double cutpoint = 0.0;
  double statistic = 0.0;
  SubgroupEffect left;   // {L0_j < c}
  SubgroupEffect right;  // {L0_j >= c}
};

struct Node {
  int id = 0;
  int parent = -1;
  int depth = 0;
  Subgroup subgroup;
  std::optional<Split> split;
  std::optional<std::array<int, 2>> children;
  std::optional<SubgroupEffect> effect;
  std::size_t n = 0;

  bool is_leaf() const noexcept { return !children.has_value(); }
};

/// Binary tree over baseline covariates. Nodes live in an arena indexed by a
/// stable id; pruning detaches branches without renumbering, so ids of a
/// pruned tree refer to the same nodes as in the tree it came from.
class Tree {
 public:
  Tree() = default;
  Tree(std::vector<std::string> covariate_names, Node root);

  const Node& root() const { return nodes_.front(); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& covariate_names() const noexcept { return names_; }

  /// Splits leaf `parent`; returns the ids of the new (left, right) children.
  std::array<int, 2> grow(int parent, const Split& split, std::size_t n_left, std::size_t n_right);
  void set_effect(int id, std::optional<SubgroupEffect> effect);

  /// Reachable node ids in breadth-first order (left before right).
  std::vector<int> reachable() const;
  std::vector<int> internal_nodes() const;
  std::vector<int> terminal_nodes() const;
  /// Internal nodes of the branch rooted at `id`, breadth-first.
  std::vector<int> branch_internal_nodes(int id) const;

  /// Copy with every descendant of `id` removed.
  Tree pruned_at(int id) const;

  /// Terminal node reached by `l0`. Throws DataError(schema_mismatch) on width mismatch.
  int assign(std::span<const double> l0) const;

 private:
  std::vector<std::string> names_;
  std::vector<Node> nodes_;
};

/// (δ̂(l) − δ̂(r))² / (Var̂[δ̂(l)] + Var̂[δ̂(r)]). Throws EstimationError(zero_variance).
double splitting_statistic(const SubgroupEffect& left, const SubgroupEffect& right);

/// Midpoints between adjacent distinct values at the interior quantiles
/// i/(grid+1), i = 1..grid, of `values`; sorted and deduplicated.
std::vector<double> quantile_cutpoints(std::vector<double> values, int grid);

struct CandidateSplit {
  std::size_t covariate = 0;
  double cutpoint = 0.0;
  bool operator==(const CandidateSplit&) const = default;
};

/// Permissible (covariate, cutpoint) pairs for the node made of `members`,
/// ordered by covariate then cutpoint.
std::vector<CandidateSplit> enumerate_candidate_splits(const PanelDataset& d, std::span<const std::size_t> members,
                                                       const TreeConfig& config);

struct CandidateEvaluation {
  CandidateSplit candidate;
  std::optional<Split> split;  // empty when estimation failed in a child
};

std::vector<CandidateEvaluation> evaluate_candidates(const PanelDataset& d, std::span<const std::size_t> members,
                                                     std::span<const CandidateSplit> candidates,
                                                     const TreeConfig& config);

/// Maximiser of the splitting statistic; ties go to the lowest covariate index
/// and then the lowest cutpoint.
std::optional<Split> best_split(const PanelDataset& d, std::span<const std::size_t> members, const TreeConfig& config);

/// Recursive partitioning until max depth, node size below 2 * min_node_size,
/// or no evaluable split. Throws EstimationError(root_not_estimable).
Tree build_initial_tree(const PanelDataset& build, const TreeConfig& config);

using NodeStatistics = std::map<int, double>;

/// Split statistics stored on the tree's internal nodes.
NodeStatistics tree_statistics(const Tree& tree);

/// Σ_{w internal} G_w − λ |W|; a root-only tree scores 0 for every λ.
double split_complexity(const Tree& tree, double lambda, const NodeStatistics& stats);
double split_complexity(const Tree& tree, double lambda);

struct PrunedSequence {
  std::vector<Tree> trees;               // full tree first, root-only last
  std::vector<double> critical_lambdas;  // one per pruning step
};

PrunedSequence prune_sequence(const Tree& tree);

/// Splitting statistic of every internal node of `tree`, re-estimated on
/// `validate`; nodes whose children cannot be estimated score 0.
NodeStatistics validation_statistics(const Tree& tree, const PanelDataset& validate, const TreeConfig& config);

/// Index into `seq.trees` maximising validation split complexity; ties go to the smaller tree.
std::size_t select_index(const PrunedSequence& seq, const NodeStatistics& stats, double lambda);

/// Throws DataError(empty_validation_set).
Tree select_final_tree(const PrunedSequence& seq, const PanelDataset& validate, double lambda,
                       const TreeConfig& config);

nlohmann::ordered_json tree_to_json(const Tree& tree);
Tree tree_from_json(const nlohmann::json& j);
void save_tree(const Tree& tree, const std::filesystem::path& path);
Tree load_tree(const std::filesystem::path& path);

}  // namespace sdld
