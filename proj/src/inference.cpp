#include "sdld/inference.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sdld/parallel.hpp"

namespace sdld {

namespace {

nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : ""; }

std::string csv_text(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

void write_comments(std::ostringstream& out, const std::vector<std::string>& comments) {
  for (const auto& c : comments) out << "# " << c << '\n';
}

std::mt19937_64 replicate_rng(std::uint64_t seed, int b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

}  // namespace

std::string_view to_string(Part p) noexcept {
  switch (p) {
    case Part::build: return "build";
    case Part::validate: return "validate";
    case Part::estimate: return "estimate";
  }
  return "?";
}

BootstrapInterval percentile_interval(std::vector<double> draws, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  BootstrapInterval ci;
  ci.level = level;
  ci.effective_b = static_cast<int>(draws.size());
  ci.draws = draws;
  if (draws.empty()) return ci;
  std::sort(draws.begin(), draws.end());
  const double B = static_cast<double>(draws.size());
  auto order_stat = [&](double p) {
    auto rank = static_cast<std::size_t>(std::ceil(p * B - 1e-12));
    rank = std::clamp<std::size_t>(rank, 1, draws.size());
    return draws[rank - 1];
  };
  ci.lower = order_stat((1.0 - level) / 2.0);
  ci.upper = order_stat((1.0 + level) / 2.0);
  return ci;
}

std::vector<BootstrapInterval> bootstrap_ci(const PanelDataset& estimate, const Tree& tree, int B, double level,
                                            std::uint64_t seed, const TreeConfig& config_in) {
  if (B < 1) throw std::invalid_argument("bootstrap: B must be >= 1");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap: level must lie in (0, 1)");
  const TreeConfig config = resolve_regimes(config_in, estimate.horizon());
  const auto leaves = tree.terminal_nodes();
  std::vector<std::size_t> slot_of_node(static_cast<std::size_t>(*std::max_element(leaves.begin(), leaves.end())) + 1);
  for (std::size_t l = 0; l < leaves.size(); ++l) slot_of_node[static_cast<std::size_t>(leaves[l])] = l;
  std::vector<std::size_t> leaf_of(estimate.size());
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    leaf_of[i] = slot_of_node[static_cast<std::size_t>(tree.assign(estimate.subjects[i].baseline))];
  }

  const std::size_t n = estimate.size();
  std::vector<std::vector<double>> draws(static_cast<std::size_t>(B), std::vector<double>(leaves.size(), kMissing));
  parallel_for(static_cast<std::size_t>(B), config.threads, [&](std::size_t b) {
    if (n == 0) return;
    auto rng = replicate_rng(seed, static_cast<int>(b));
    std::vector<std::vector<std::size_t>> members(leaves.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(rng() % n);
      members[leaf_of[idx]].push_back(idx);
    }
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      if (members[l].empty()) continue;
      std::sort(members[l].begin(), members[l].end());
      try {
        const auto e = estimate_effect(estimate, members[l], config.regime1, config.regime0, config.method,
                                       config.estimator);
        if (std::isfinite(e.delta)) draws[b][l] = e.delta;
      } catch (const EstimationError&) {
      }
    }
  });

  std::vector<BootstrapInterval> out;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    std::vector<double> ok;
    for (std::size_t b = 0; b < draws.size(); ++b) {
      if (!is_missing(draws[b][l])) ok.push_back(draws[b][l]);
    }
    out.push_back(percentile_interval(std::move(ok), level));
  }
  return out;
}

SdldResult run_sdld(const PanelDataset& d, const RunConfig& config, unsigned threads) {
  config.check();
  const double total = config.fractions[0] + config.fractions[1] + config.fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw DataError(DataErrorKind::invalid_fractions, "fractions must sum to 1");
  const TreeConfig tree_config = resolve_regimes(config.tree_config(threads), d.horizon());

  const auto idx = split_indices(d.size(), config.fractions, config.seed);
  const auto build = subset(d, idx[0]);
  const auto validate = subset(d, idx[1]);
  const auto estimate = subset(d, idx[2]);
  if (validate.size() == 0) throw DataError(DataErrorKind::empty_validation_set, "validation part is empty");

  SdldResult result;
  result.partition.assign(d.size(), Part::build);
  for (auto i : idx[1]) result.partition[i] = Part::validate;
  for (auto i : idx[2]) result.partition[i] = Part::estimate;

  result.initial_tree = build_initial_tree(build, tree_config);
  result.sequence = prune_sequence(result.initial_tree);
  const Tree selected = select_final_tree(result.sequence, validate, config.lambda, tree_config);

  auto& report = result.report;
  report.tree = selected;
  report.config = config;
  report.n_build = build.size();
  report.n_validate = validate.size();
  report.n_estimate = estimate.size();

  for (int id : selected.terminal_nodes()) {
    LeafReport leaf;
    leaf.node = id;
    leaf.subgroup = selected.node(id).subgroup.describe(d.schema.baseline);
    const auto members = subgroup_members(estimate, selected.node(id).subgroup);
    leaf.n = members.size();
    leaf.share = estimate.size() > 0 ? static_cast<double>(members.size()) / static_cast<double>(estimate.size()) : 0.0;
    leaf.interval.level = config.level;
    if (members.empty()) {
      leaf.error = "EmptyTerminalNode: no estimation subjects in this leaf";
    } else {
      try {
        leaf.effect = estimate_effect(estimate, members, tree_config.regime1, tree_config.regime0,
                                      tree_config.method, tree_config.estimator);
      } catch (const EstimationError& e) {
        leaf.error = "EmptyTerminalNode: " + std::string(to_string(e.kind())) + ": " + e.what();
      }
    }
    report.leaves.push_back(std::move(leaf));
  }

  if (config.bootstrap > 0 && estimate.size() > 0) {
    const auto intervals = bootstrap_ci(estimate, selected, config.bootstrap, config.level, config.seed, tree_config);
    for (std::size_t l = 0; l < report.leaves.size(); ++l) report.leaves[l].interval = intervals[l];
  }
  return result;
}

nlohmann::ordered_json report_to_json(const SubgroupReport& r) {
  nlohmann::ordered_json j;
  j["config"] = to_json(r.config);
  j["n_build"] = r.n_build;
  j["n_validate"] = r.n_validate;
  j["n_estimate"] = r.n_estimate;
  auto leaves = nlohmann::ordered_json::array();
  for (const auto& leaf : r.leaves) {
    nlohmann::ordered_json l;
    l["node"] = leaf.node;
    l["subgroup"] = leaf.subgroup;
    l["n"] = leaf.n;
    l["share"] = leaf.share;
    l["effect"] = number_or_null(leaf.effect ? leaf.effect->delta : kMissing);
    l["variance"] = number_or_null(leaf.effect ? leaf.effect->variance : kMissing);
    l["mean1"] = number_or_null(leaf.effect ? leaf.effect->mean1 : kMissing);
    l["mean0"] = number_or_null(leaf.effect ? leaf.effect->mean0 : kMissing);
    l["ci"] = {{"lower", number_or_null(leaf.interval.lower)},
               {"upper", number_or_null(leaf.interval.upper)},
               {"level", leaf.interval.level},
               {"effective_b", leaf.interval.effective_b}};
    l["error"] = leaf.error.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(leaf.error);
    leaves.push_back(std::move(l));
  }
  j["leaves"] = std::move(leaves);
  j["tree"] = tree_to_json(r.tree);
  return j;
}

std::string report_csv(const SubgroupReport& r, const std::vector<std::string>& comments) {
  std::ostringstream out;
  write_comments(out, comments);
  out << "node,subgroup,n,share,effect,variance,mean1,mean0,lower,upper,level,effective_b,error\n";
  for (const auto& leaf : r.leaves) {
    const auto& e = leaf.effect;
    out << leaf.node << ',' << csv_text(leaf.subgroup) << ',' << leaf.n << ',' << format_double(leaf.share) << ','
        << csv_number(e ? e->delta : kMissing) << ',' << csv_number(e ? e->variance : kMissing) << ','
        << csv_number(e ? e->mean1 : kMissing) << ',' << csv_number(e ? e->mean0 : kMissing) << ','
        << csv_number(leaf.interval.lower) << ',' << csv_number(leaf.interval.upper) << ','
        << format_double(leaf.interval.level) << ',' << leaf.interval.effective_b << ',' << csv_text(leaf.error)
        << '\n';
  }
  return out.str();
}

std::string partition_csv(const PanelDataset& d, const SdldResult& result, const std::vector<std::string>& comments) {
  std::ostringstream out;
  write_comments(out, comments);
  out << "subject_id,part,node\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << csv_text(d.subjects[i].id) << ',' << to_string(result.partition[i]) << ',';
    if (result.partition[i] == Part::estimate) out << result.report.tree.assign(d.subjects[i].baseline);
    out << '\n';
  }
  return out.str();
}

std::string bootstrap_draws_csv(const SubgroupReport& r, const std::vector<std::string>& comments) {
  std::ostringstream out;
  write_comments(out, comments);
  out << "node,draw_index,effect\n";
  for (const auto& leaf : r.leaves) {
    for (std::size_t b = 0; b < leaf.interval.draws.size(); ++b) {
      out << leaf.node << ',' << b << ',' << format_double(leaf.interval.draws[b]) << '\n';
    }
  }
  return out.str();
}

}  // namespace sdld
