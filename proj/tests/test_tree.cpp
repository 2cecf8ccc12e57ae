#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "sdld/simulation.hpp"
#include "sdld/tree.hpp"
#include "support.hpp"

using namespace sdld;

namespace {

SubgroupEffect effect(double delta, double variance) {
  SubgroupEffect e;
  e.delta = delta;
  e.variance = variance;
  return e;
}

Split split_on(std::size_t j, double c, double g) {
  Split s;
  s.covariate = j;
  s.cutpoint = c;
  s.statistic = g;
  s.left = effect(1.0, 0.1);
  s.right = effect(-1.0, 0.1);
  return s;
}

Tree root_only(std::size_t n = 100) {
  Node root;
  root.n = n;
  root.effect = effect(0.5, 0.01);
  return Tree({"x1", "x2", "x3"}, root);
}

Tree stump(double g) {
  auto t = root_only();
  t.grow(0, split_on(1, 0.5, g), 50, 50);
  return t;
}

// Root split with G = g_root, left child split with G = g_child.
Tree chain(double g_root, double g_child) {
  auto t = root_only();
  const auto kids = t.grow(0, split_on(0, 0.0, g_root), 60, 40);
  t.grow(kids[0], split_on(2, -0.5, g_child), 30, 30);
  return t;
}

std::set<int> node_set(const Tree& t) {
  const auto r = t.reachable();
  return {r.begin(), r.end()};
}

TreeConfig fast_config() {
  TreeConfig c;
  c.method = Method::gcomp;
  c.cutpoint_grid = 5;
  c.max_depth = 2;
  return resolve_regimes(c, 1);
}

}  // namespace

TEST(SplittingStatistic, Formula) {
  EXPECT_DOUBLE_EQ(splitting_statistic(effect(2.0, 0.5), effect(0.0, 0.5)), 4.0);
  EXPECT_DOUBLE_EQ(splitting_statistic(effect(1.3, 0.2), effect(1.3, 0.7)), 0.0);
  EXPECT_DOUBLE_EQ(splitting_statistic(effect(0.3, 0.2), effect(-1.1, 0.05)),
                   splitting_statistic(effect(-1.1, 0.05), effect(0.3, 0.2)));
}

TEST(SplittingStatistic, ZeroVarianceThrows) {
  try {
    splitting_statistic(effect(1.0, 0.0), effect(0.0, 0.0));
    FAIL();
  } catch (const EstimationError& e) {
    EXPECT_EQ(e.kind(), EstimationErrorKind::zero_variance);
  }
}

TEST(QuantileCutpoints, BinaryCovariateHasOneCut) {
  std::vector<double> v;
  for (int i = 0; i < 100; ++i) v.push_back(i % 3 == 0 ? 1.0 : 0.0);
  EXPECT_EQ(quantile_cutpoints(v, 15), std::vector<double>{0.5});
}

TEST(QuantileCutpoints, ConstantCovariateHasNone) {
  EXPECT_TRUE(quantile_cutpoints(std::vector<double>(50, 2.0), 15).empty());
}

TEST(QuantileCutpoints, NormalSampleGivesFullGridNearHalf) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  std::vector<double> v(10000);
  for (double& x : v) x = z(rng);
  const auto cuts = quantile_cutpoints(v, 15);
  ASSERT_EQ(cuts.size(), 15u);
  EXPECT_TRUE(std::is_sorted(cuts.begin(), cuts.end()));
  double closest = 1e9;
  for (double c : cuts) closest = std::min(closest, std::abs(c - 0.5));
  EXPECT_LT(closest, 0.05);
}

TEST(EnumerateCandidateSplits, SimulatedRootNode) {
  auto d = simulate_appendix_c(10000, 3);
  for (auto& s : d.subjects) s.baseline[4] = 1.0;  // constant column
  auto config = resolve_regimes(TreeConfig{}, 1);
  const auto members = all_members(d);
  const auto cands = enumerate_candidate_splits(d, members, config);
  std::vector<double> x2;
  for (const auto& s : d.subjects) x2.push_back(s.baseline[1]);
  const auto grid = quantile_cutpoints(x2, 15);
  EXPECT_EQ(grid.size(), 15u);
  std::size_t on_x2 = 0;
  bool near_half = false;
  for (const auto& c : cands) {
    EXPECT_NE(c.covariate, 4u);
    if (c.covariate == 1) {
      ++on_x2;
      EXPECT_TRUE(std::find(grid.begin(), grid.end(), c.cutpoint) != grid.end());
      near_half = near_half || std::abs(c.cutpoint - 0.5) < 0.1;
    }
  }
  // Tail cuts may fail the follower requirement.
  EXPECT_GE(on_x2, 13u);
  EXPECT_TRUE(near_half);
  EXPECT_TRUE(std::is_sorted(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
    return std::tie(a.covariate, a.cutpoint) < std::tie(b.covariate, b.cutpoint);
  }));
}

TEST(EnumerateCandidateSplits, SmallNodeHasNoCandidates) {
  const auto d = simulate_appendix_c(300, 3);
  auto config = resolve_regimes(TreeConfig{}, 1);
  EXPECT_TRUE(enumerate_candidate_splits(d, all_members(d), config).empty());
}

TEST(BestSplit, SimulatedRootSplitsOnModifierNearHalf) {
  const auto d = simulate_appendix_c(10000, 11);
  auto config = resolve_regimes(TreeConfig{}, 1);
  const auto s = best_split(d, all_members(d), config);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->covariate, kModifierCovariate);
  EXPECT_NEAR(s->cutpoint, kModifierCutpoint, 0.2);
}

TEST(BestSplit, MatchesMaximumOfEvaluations) {
  const auto d = simulate_appendix_c(3000, 12);
  const auto config = fast_config();
  const auto members = all_members(d);
  const auto cands = enumerate_candidate_splits(d, members, config);
  const auto evals = evaluate_candidates(d, members, cands, config);
  double best = -1.0;
  for (const auto& e : evals) {
    if (e.split) best = std::max(best, e.split->statistic);
  }
  const auto s = best_split(d, members, config);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->statistic, best);
}

TEST(BestSplit, TiesGoToLowestCovariate) {
  auto d = simulate_appendix_c(3000, 13);
  for (auto& s : d.subjects) s.baseline[3] = s.baseline[1];
  const auto config = fast_config();
  const auto members = all_members(d);
  const auto s = best_split(d, members, config);
  ASSERT_TRUE(s.has_value());
  const auto evals = evaluate_candidates(d, members, enumerate_candidate_splits(d, members, config), config);
  bool twin = false;
  for (const auto& e : evals) {
    if (e.split && e.candidate.covariate == 3 && e.split->statistic == s->statistic) twin = true;
  }
  if (s->covariate == 1) {
    EXPECT_TRUE(twin);
  }
  EXPECT_NE(s->covariate, 3u);
}

TEST(BuildInitialTree, MinNodeSizeAboveHalfGivesRootOnly) {
  const auto d = simulate_appendix_c(1000, 14);
  auto config = fast_config();
  config.min_node_size = 501;
  const auto t = build_initial_tree(d, config);
  EXPECT_EQ(t.reachable().size(), 1u);
  ASSERT_TRUE(t.root().effect.has_value());
  EXPECT_EQ(t.root().n, 1000u);
}

TEST(BuildInitialTree, RootNotEstimable) {
  auto d = simulate_appendix_c(500, 15);
  for (auto& s : d.subjects)
    for (auto& p : s.periods) p.treatment = 0;
  auto config = fast_config();
  config.method = Method::tmle;
  try {
    build_initial_tree(d, config);
    FAIL();
  } catch (const EstimationError& e) {
    EXPECT_EQ(e.kind(), EstimationErrorKind::root_not_estimable);
  }
}

TEST(BuildInitialTree, StructuralInvariants) {
  const auto d = simulate_appendix_c(4000, 16);
  auto config = fast_config();
  config.max_depth = 3;
  const auto t = build_initial_tree(d, config);
  ASSERT_GT(t.internal_nodes().size(), 0u);
  for (int id : t.reachable()) {
    const auto& n = t.node(id);
    EXPECT_EQ(n.split.has_value(), n.children.has_value());
    EXPECT_LE(n.depth, config.max_depth);
    if (n.children) {
      const auto& l = t.node((*n.children)[0]);
      const auto& r = t.node((*n.children)[1]);
      EXPECT_EQ(l.n + r.n, n.n);
      EXPECT_GE(l.n, config.min_node_size);
      EXPECT_GE(r.n, config.min_node_size);
      EXPECT_GE(n.split->statistic, 0.0);
    }
  }
  // Terminal subgroups partition the covariate space.
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 2.0);
  const auto leaves = t.terminal_nodes();
  std::size_t routed = 0;
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> l0(5);
    for (double& v : l0) v = z(rng);
    int hits = 0;
    for (int leaf : leaves) hits += t.node(leaf).subgroup.contains(l0);
    EXPECT_EQ(hits, 1);
    EXPECT_TRUE(t.node(t.assign(l0)).subgroup.contains(l0));
    ++routed;
  }
  std::size_t total = 0;
  for (int leaf : leaves) total += subgroup_members(d, t.node(leaf).subgroup).size();
  EXPECT_EQ(total, d.size());
  EXPECT_EQ(routed, 2000u);
}

TEST(SplitComplexity, Formula) {
  const auto t = chain(10.0, 5.0);
  const NodeStatistics stats{{0, 10.0}, {1, 5.0}};
  EXPECT_NEAR(split_complexity(t, 3.84, stats), 7.32, 1e-12);
  EXPECT_DOUBLE_EQ(split_complexity(t, 0.0), 15.0);
  EXPECT_EQ(split_complexity(root_only(), 3.84), 0.0);
  EXPECT_EQ(split_complexity(root_only(), 0.0), 0.0);
}

TEST(PruneSequence, Stump) {
  const auto seq = prune_sequence(stump(7.0));
  ASSERT_EQ(seq.trees.size(), 2u);
  ASSERT_EQ(seq.critical_lambdas.size(), 1u);
  EXPECT_DOUBLE_EQ(seq.critical_lambdas[0], 7.0);
  EXPECT_EQ(seq.trees[1].reachable().size(), 1u);
}

TEST(PruneSequence, ChainCollapsesToRootAtSix) {
  const auto seq = prune_sequence(chain(2.0, 10.0));
  ASSERT_EQ(seq.trees.size(), 2u);
  EXPECT_DOUBLE_EQ(seq.critical_lambdas[0], 6.0);
  EXPECT_EQ(seq.trees[1].reachable().size(), 1u);
}

TEST(PruneSequence, ChainPrunesWeakChildFirst) {
  const auto seq = prune_sequence(chain(10.0, 2.0));
  ASSERT_EQ(seq.trees.size(), 3u);
  EXPECT_DOUBLE_EQ(seq.critical_lambdas[0], 2.0);
  EXPECT_DOUBLE_EQ(seq.critical_lambdas[1], 10.0);
  EXPECT_EQ(seq.trees[1].internal_nodes(), std::vector<int>{0});
}

TEST(PruneSequence, RootOnlyIsSingleton) {
  const auto seq = prune_sequence(root_only());
  EXPECT_EQ(seq.trees.size(), 1u);
  EXPECT_TRUE(seq.critical_lambdas.empty());
}

TEST(PruneSequence, TieGoesToFirstBreadthFirstNode) {
  auto t = root_only();
  const auto kids = t.grow(0, split_on(0, 0.0, 9.0), 60, 40);
  t.grow(kids[0], split_on(1, 0.0, 3.0), 30, 30);
  t.grow(kids[1], split_on(2, 0.0, 3.0), 20, 20);
  const auto seq = prune_sequence(t);
  ASSERT_GE(seq.trees.size(), 2u);
  const auto left_kept = seq.trees[1].node(kids[0]).children.has_value();
  const auto right_kept = seq.trees[1].node(kids[1]).children.has_value();
  EXPECT_FALSE(left_kept);
  EXPECT_TRUE(right_kept);
}

TEST(PruneSequence, PropertiesOnGrownTree) {
  const auto d = simulate_appendix_c(4000, 17);
  auto config = fast_config();
  config.max_depth = 3;
  const auto full = build_initial_tree(d, config);
  const auto seq = prune_sequence(full);
  ASSERT_GE(seq.trees.size(), 2u);
  EXPECT_EQ(seq.trees.back().reachable().size(), 1u);
  EXPECT_EQ(seq.critical_lambdas.size(), seq.trees.size() - 1);
  for (std::size_t i = 1; i < seq.trees.size(); ++i) {
    const auto prev = node_set(seq.trees[i - 1]);
    const auto cur = node_set(seq.trees[i]);
    EXPECT_TRUE(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    EXPECT_LT(seq.trees[i].internal_nodes().size(), seq.trees[i - 1].internal_nodes().size());
    EXPECT_GE(seq.critical_lambdas[i - 1], i >= 2 ? seq.critical_lambdas[i - 2] : 0.0);
    EXPECT_LE(split_complexity(seq.trees[i], 0.0), split_complexity(seq.trees[i - 1], 0.0));
    const double lam = seq.critical_lambdas[i - 1];
    EXPECT_NEAR(split_complexity(seq.trees[i - 1], lam), split_complexity(seq.trees[i], lam), 1e-9);
  }
}

TEST(SelectIndex, Examples) {
  const auto seq = prune_sequence(stump(7.0));
  const NodeStatistics stats{{0, 10.0}};
  EXPECT_EQ(select_index(seq, stats, kChiSquare1Q95), 0u);
  EXPECT_EQ(select_index(seq, stats, std::numeric_limits<double>::infinity()), 1u);
  EXPECT_EQ(select_index(seq, stats, 10.0), 1u);  // tie goes to the smaller tree
  EXPECT_EQ(select_index(seq, stats, 0.0), 0u);
  const auto single = prune_sequence(root_only());
  EXPECT_EQ(select_index(single, {}, 0.0), 0u);
}

TEST(SelectIndex, ZeroLambdaPicksLargestTree) {
  const auto seq = prune_sequence(chain(10.0, 2.0));
  const NodeStatistics stats{{0, 4.0}, {1, 1.0}};
  EXPECT_EQ(select_index(seq, stats, 0.0), 0u);
}

TEST(SelectFinalTree, EmptyValidationSetThrows) {
  const auto seq = prune_sequence(stump(7.0));
  PanelDataset empty;
  empty.schema.horizon = 1;
  try {
    select_final_tree(seq, empty, kChiSquare1Q95, fast_config());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::empty_validation_set);
  }
}

TEST(SelectFinalTree, ValidationStatisticsCoverInternalNodes) {
  const auto d = simulate_appendix_c(6000, 18);
  const auto parts = split_dataset(d, {0.5, 0.5, 0.0}, 3);
  const auto config = fast_config();
  const auto full = build_initial_tree(parts[0], config);
  const auto stats = validation_statistics(full, parts[1], config);
  for (int id : full.internal_nodes()) {
    ASSERT_TRUE(stats.count(id));
    EXPECT_GE(stats.at(id), 0.0);
  }
  const auto seq = prune_sequence(full);
  const auto chosen = select_final_tree(seq, parts[1], kChiSquare1Q95, config);
  EXPECT_EQ(tree_to_json(chosen), tree_to_json(seq.trees[select_index(seq, stats, kChiSquare1Q95)]));
}

TEST(Assign, BoundaryGoesRight) {
  const auto t = stump(7.0);
  const auto kids = *t.root().children;
  EXPECT_EQ(t.assign(std::vector<double>{0.0, 0.5, 0.0}), kids[1]);
  EXPECT_EQ(t.assign(std::vector<double>{0.0, 0.4999, 0.0}), kids[0]);
  EXPECT_EQ(root_only().assign(std::vector<double>{3.0, -2.0, 1.0}), 0);
}

TEST(Assign, WidthMismatchThrows) {
  try {
    stump(7.0).assign(std::vector<double>{0.0, 0.5});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::schema_mismatch);
  }
}

TEST(TreeJson, RoundTrip) {
  const auto d = simulate_appendix_c(3000, 19);
  const auto t = build_initial_tree(d, fast_config());
  const auto j = tree_to_json(t);
  const auto back = tree_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(tree_to_json(back).dump(), j.dump());
  EXPECT_EQ(back.terminal_nodes().size(), t.terminal_nodes().size());

  sdld::testing::TempDir dir;
  save_tree(t, dir / "tree.json");
  EXPECT_EQ(tree_to_json(load_tree(dir / "tree.json")).dump(), j.dump());
  for (const auto& s : d.subjects) ASSERT_EQ(back.assign(s.baseline), t.assign(s.baseline));
}
