#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "sdld/inference.hpp"
#include "sdld/simulation.hpp"
#include "support.hpp"

using namespace sdld;

namespace {

RunConfig quick_config() {
  RunConfig c;
  c.estimator = Method::gcomp;
  c.cutpoint_grid = 5;
  c.max_depth = 2;
  c.bootstrap = 20;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(PercentileInterval, SingleDraw) {
  const auto ci = percentile_interval({1.7}, 0.95);
  EXPECT_EQ(ci.lower, 1.7);
  EXPECT_EQ(ci.upper, 1.7);
  EXPECT_EQ(ci.effective_b, 1);
}

TEST(PercentileInterval, ConstantDraws) {
  const auto ci = percentile_interval(std::vector<double>(50, -2.0), 0.9);
  EXPECT_EQ(ci.lower, -2.0);
  EXPECT_EQ(ci.upper, -2.0);
}

TEST(PercentileInterval, OrderStatistics) {
  std::vector<double> draws(100);
  std::iota(draws.begin(), draws.end(), 1.0);
  std::reverse(draws.begin(), draws.end());
  const auto ci = percentile_interval(draws, 0.9);
  EXPECT_EQ(ci.lower, 5.0);
  EXPECT_EQ(ci.upper, 95.0);
  EXPECT_EQ(ci.draws.front(), 100.0);  // replicate order kept
}

TEST(PercentileInterval, WidensWithLevel) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  std::vector<double> draws(500);
  for (double& d : draws) d = z(rng);
  const auto narrow = percentile_interval(draws, 0.5);
  const auto wide = percentile_interval(draws, 0.95);
  EXPECT_LE(wide.lower, narrow.lower);
  EXPECT_GE(wide.upper, narrow.upper);
  EXPECT_THROW(percentile_interval(draws, 1.0), std::invalid_argument);
}

TEST(PercentileInterval, EmptyDrawsGiveMissing) {
  const auto ci = percentile_interval({}, 0.95);
  EXPECT_TRUE(is_missing(ci.lower));
  EXPECT_EQ(ci.effective_b, 0);
}

TEST(BootstrapCi, DeterministicAndBounded) {
  const auto d = simulate_appendix_c(1500, 4);
  Node root;
  root.n = d.size();
  Tree t(d.schema.baseline, root);
  TreeConfig tc;
  tc.method = Method::gcomp;
  const auto a = bootstrap_ci(d, t, 15, 0.9, 8, tc);
  const auto b = bootstrap_ci(d, t, 15, 0.9, 8, tc);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].draws, b[0].draws);
  EXPECT_LE(a[0].effective_b, 15);
  EXPECT_GT(a[0].effective_b, 10);
  EXPECT_LE(a[0].lower, a[0].upper);
  EXPECT_NE(bootstrap_ci(d, t, 15, 0.9, 9, tc)[0].draws, a[0].draws);
}

TEST(RunSdld, PartitionIsDisjointAndComplete) {
  const auto d = simulate_appendix_c(3000, 5);
  const auto r = run_sdld(d, quick_config());
  ASSERT_EQ(r.partition.size(), d.size());
  std::size_t counts[3] = {0, 0, 0};
  for (auto p : r.partition) ++counts[static_cast<int>(p)];
  EXPECT_EQ(counts[0], r.report.n_build);
  EXPECT_EQ(counts[1], r.report.n_validate);
  EXPECT_EQ(counts[2], r.report.n_estimate);
  EXPECT_EQ(counts[0] + counts[1] + counts[2], d.size());
  EXPECT_NEAR(static_cast<double>(counts[0]) / 3000.0, 0.48, 0.01);

  double share = 0;
  std::size_t n = 0;
  for (const auto& leaf : r.report.leaves) {
    share += leaf.share;
    n += leaf.n;
  }
  EXPECT_NEAR(share, 1.0, 1e-12);
  EXPECT_EQ(n, r.report.n_estimate);
  EXPECT_EQ(r.report.leaves.size(), r.report.tree.terminal_nodes().size());
}

TEST(RunSdld, Deterministic) {
  const auto d = simulate_appendix_c(3000, 6);
  const auto a = run_sdld(d, quick_config());
  const auto b = run_sdld(d, quick_config(), 2);
  EXPECT_EQ(report_to_json(a.report).dump(), report_to_json(b.report).dump());
  EXPECT_EQ(partition_csv(d, a), partition_csv(d, b));
  EXPECT_EQ(bootstrap_draws_csv(a.report), bootstrap_draws_csv(b.report));
  EXPECT_EQ(report_csv(a.report), report_csv(b.report));
}

TEST(RunSdld, RootOnlyReportMatchesWholePopulationEstimate) {
  const auto d = simulate_appendix_c(3000, 7, false);
  auto config = quick_config();
  config.estimator = Method::tmle;
  config.lambda = std::numeric_limits<double>::infinity();
  config.bootstrap = 0;
  const auto r = run_sdld(d, config);
  ASSERT_EQ(r.report.leaves.size(), 1u);
  ASSERT_TRUE(r.report.leaves[0].effect.has_value());
  std::vector<std::size_t> est;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (r.partition[i] == Part::estimate) est.push_back(i);
  const auto part = subset(d, est);
  const auto e = estimate_effect(part, TreatmentRegime::always(1), TreatmentRegime::never(1), Subgroup{}, Method::tmle,
                                 config.estimator_options());
  EXPECT_EQ(r.report.leaves[0].effect->delta, e.delta);
  EXPECT_EQ(r.report.leaves[0].effect->variance, e.variance);
  EXPECT_EQ(r.report.leaves[0].share, 1.0);
}

TEST(RunSdld, RejectsBadFractions) {
  const auto d = simulate_appendix_c(200, 8);
  auto config = quick_config();
  config.fractions = {0.5, 0.5, 0.5};
  EXPECT_THROW(run_sdld(d, config), std::exception);
}

TEST(ReportWriters, EmbedConfigAndColumns) {
  const auto d = simulate_appendix_c(3000, 9);
  const auto r = run_sdld(d, quick_config());
  const auto j = report_to_json(r.report);
  EXPECT_TRUE(j.contains("config"));
  EXPECT_EQ(run_config_from_json(j["config"]), quick_config());
  const auto csv = report_csv(r.report, {"note"});
  EXPECT_EQ(csv.rfind("# note\n", 0), 0u);
  EXPECT_NE(csv.find("node,subgroup,n,share,effect,variance,mean1,mean0,lower,upper,level,effective_b,error"),
            std::string::npos);
  EXPECT_EQ(partition_csv(d, r).substr(0, 21), "subject_id,part,node\n");
}
