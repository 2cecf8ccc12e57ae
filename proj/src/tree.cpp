#include "sdld/tree.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>

#include "sdld/parallel.hpp"

namespace sdld {

namespace {

// Number of members that follow `regime` through K and are uncensored.
bool full_follower(const SubjectRecord& s, const TreatmentRegime& regime, int K) {
  if (!s.uncensored_through(K)) return false;
  for (int k = 0; k <= K; ++k) {
    if (s.periods[k].treatment != regime.values[k]) return false;
  }
  return true;
}

std::optional<SubgroupEffect> try_effect(const PanelDataset& d, std::span<const std::size_t> members,
                                         const TreeConfig& config) {
  try {
    auto e = estimate_effect(d, members, config.regime1, config.regime0, config.method, config.estimator);
    if (!std::isfinite(e.delta) || !std::isfinite(e.variance)) return std::nullopt;
    return e;
  } catch (const EstimationError&) {
    return std::nullopt;
  }
}

std::optional<Split> evaluate_one(const PanelDataset& d, std::span<const std::size_t> members,
                                  const CandidateSplit& c, const TreeConfig& config) {
  std::vector<std::size_t> left, right;
  for (auto m : members) {
    (d.subjects[m].baseline[c.covariate] < c.cutpoint ? left : right).push_back(m);
  }
  if (left.empty() || right.empty()) return std::nullopt;
  auto l = try_effect(d, left, config);
  if (!l) return std::nullopt;
  auto r = try_effect(d, right, config);
  if (!r) return std::nullopt;
  const double var = l->variance + r->variance;
  if (!(var > 0.0)) return std::nullopt;
  Split s;
  s.covariate = c.covariate;
  s.cutpoint = c.cutpoint;
  s.statistic = splitting_statistic(*l, *r);
  if (!std::isfinite(s.statistic)) return std::nullopt;
  s.left = std::move(*l);
  s.right = std::move(*r);
  return s;
}

nlohmann::ordered_json effect_json(const std::optional<SubgroupEffect>& e) {
  nlohmann::ordered_json j;
  if (!e) {
    j["effect"] = nullptr;
    j["variance"] = nullptr;
    return j;
  }
  j["effect"] = e->delta;
  j["variance"] = e->variance;
  j["mean1"] = e->mean1;
  j["mean0"] = e->mean0;
  return j;
}

nlohmann::ordered_json node_json(const Tree& t, int id) {
  const Node& n = t.node(id);
  nlohmann::ordered_json j;
  j["n"] = n.n;
  const auto e = effect_json(n.effect);
  for (const auto& [k, v] : e.items()) j[k] = v;
  if (n.split) {
    j["covariate"] = n.split->covariate;
    j["covariate_name"] = n.split->covariate < t.covariate_names().size() ? t.covariate_names()[n.split->covariate] : "";
    j["cutpoint"] = n.split->cutpoint;
    j["statistic"] = n.split->statistic;
    j["children"] = nlohmann::ordered_json::array({node_json(t, (*n.children)[0]), node_json(t, (*n.children)[1])});
  }
  return j;
}

std::optional<SubgroupEffect> effect_from_json(const nlohmann::json& j, const TreatmentRegime& r1,
                                               const TreatmentRegime& r0) {
  if (!j.contains("effect") || j["effect"].is_null()) return std::nullopt;
  SubgroupEffect e;
  e.delta = j["effect"].get<double>();
  e.variance = j.value("variance", 0.0);
  e.mean1 = j.value("mean1", 0.0);
  e.mean0 = j.value("mean0", 0.0);
  e.n = j.at("n").get<std::size_t>();
  e.regime1 = r1;
  e.regime0 = r0;
  return e;
}

}  // namespace

TreeConfig resolve_regimes(TreeConfig config, int horizon) {
  if (config.regime1.values.empty()) config.regime1 = TreatmentRegime::always(horizon);
  if (config.regime0.values.empty()) config.regime0 = TreatmentRegime::never(horizon);
  config.regime1.check(horizon);
  config.regime0.check(horizon);
  return config;
}

Tree::Tree(std::vector<std::string> covariate_names, Node root) : names_(std::move(covariate_names)) {
  root.id = 0;
  root.parent = -1;
  root.depth = 0;
  nodes_.push_back(std::move(root));
}

std::array<int, 2> Tree::grow(int parent, const Split& split, std::size_t n_left, std::size_t n_right) {
  auto& p = nodes_.at(static_cast<std::size_t>(parent));
  if (!p.is_leaf()) throw std::logic_error("node already split");
  Node l, r;
  l.id = static_cast<int>(nodes_.size());
  r.id = l.id + 1;
  l.parent = r.parent = parent;
  l.depth = r.depth = p.depth + 1;
  l.subgroup = p.subgroup.with({split.covariate, Relation::less, split.cutpoint});
  r.subgroup = p.subgroup.with({split.covariate, Relation::greater_equal, split.cutpoint});
  l.effect = split.left;
  r.effect = split.right;
  l.n = n_left;
  r.n = n_right;
  p.split = split;
  p.children = std::array<int, 2>{l.id, r.id};
  nodes_.push_back(std::move(l));
  nodes_.push_back(std::move(r));
  return {static_cast<int>(nodes_.size()) - 2, static_cast<int>(nodes_.size()) - 1};
}

void Tree::set_effect(int id, std::optional<SubgroupEffect> effect) {
  nodes_.at(static_cast<std::size_t>(id)).effect = std::move(effect);
}

std::vector<int> Tree::reachable() const {
  std::vector<int> out;
  if (nodes_.empty()) return out;
  std::deque<int> queue{0};
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    out.push_back(id);
    if (const auto& c = node(id).children) {
      queue.push_back((*c)[0]);
      queue.push_back((*c)[1]);
    }
  }
  return out;
}

std::vector<int> Tree::internal_nodes() const {
  std::vector<int> out;
  for (int id : reachable()) {
    if (!node(id).is_leaf()) out.push_back(id);
  }
  return out;
}

std::vector<int> Tree::terminal_nodes() const {
  std::vector<int> out;
  for (int id : reachable()) {
    if (node(id).is_leaf()) out.push_back(id);
  }
  return out;
}

std::vector<int> Tree::branch_internal_nodes(int id) const {
  std::vector<int> out;
  std::deque<int> queue{id};
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    if (const auto& c = node(cur).children) {
      out.push_back(cur);
      queue.push_back((*c)[0]);
      queue.push_back((*c)[1]);
    }
  }
  return out;
}

Tree Tree::pruned_at(int id) const {
  Tree t = *this;
  auto& n = t.nodes_.at(static_cast<std::size_t>(id));
  n.split.reset();
  n.children.reset();
  return t;
}

int Tree::assign(std::span<const double> l0) const {
  if (l0.size() != names_.size()) {
    throw DataError(DataErrorKind::schema_mismatch, "baseline vector has width " + std::to_string(l0.size()) +
                                                        ", tree expects " + std::to_string(names_.size()));
  }
  int id = 0;
  while (const auto& c = node(id).children) {
    const auto& s = *node(id).split;
    id = l0[s.covariate] < s.cutpoint ? (*c)[0] : (*c)[1];
  }
  return id;
}

double splitting_statistic(const SubgroupEffect& left, const SubgroupEffect& right) {
  const double var = left.variance + right.variance;
  if (!(var > 0.0)) throw EstimationError(EstimationErrorKind::zero_variance, "combined variance is zero");
  const double diff = left.delta - right.delta;
  return diff * diff / var;
}

std::vector<double> quantile_cutpoints(std::vector<double> values, int grid) {
  std::vector<double> cuts;
  const auto n = values.size();
  if (n < 2 || grid < 1) return cuts;
  std::sort(values.begin(), values.end());
  for (int i = 1; i <= grid; ++i) {
    auto idx = static_cast<std::size_t>(std::floor(static_cast<double>(i) * static_cast<double>(n) / (grid + 1.0)));
    idx = std::clamp<std::size_t>(idx, 1, n - 1);
    const double lower = values[idx - 1];
    const auto next = std::upper_bound(values.begin(), values.end(), lower);
    if (next == values.end()) continue;
    cuts.push_back(lower + (*next - lower) / 2.0);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  return cuts;
}

std::vector<CandidateSplit> enumerate_candidate_splits(const PanelDataset& d, std::span<const std::size_t> members,
                                                       const TreeConfig& config) {
  std::vector<CandidateSplit> out;
  if (members.size() < 2 * config.min_node_size) return out;
  const int K = d.horizon();
  const auto J = d.schema.baseline.size();
  std::vector<unsigned char> f1(members.size()), f0(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& s = d.subjects[members[i]];
    f1[i] = full_follower(s, config.regime1, K);
    f0[i] = full_follower(s, config.regime0, K);
  }
  std::vector<double> values(members.size());
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t i = 0; i < members.size(); ++i) values[i] = d.subjects[members[i]].baseline[j];
    for (double c : quantile_cutpoints(values, config.cutpoint_grid)) {
      std::size_t nl = 0, l1 = 0, l0 = 0, r1 = 0, r0 = 0;
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (values[i] < c) {
          ++nl;
          l1 += f1[i];
          l0 += f0[i];
        } else {
          r1 += f1[i];
          r0 += f0[i];
        }
      }
      const std::size_t nr = members.size() - nl;
      const auto m = config.min_regime_followers;
      if (nl >= config.min_node_size && nr >= config.min_node_size && l1 >= m && l0 >= m && r1 >= m && r0 >= m) {
        out.push_back({j, c});
      }
    }
  }
  return out;
}

std::vector<CandidateEvaluation> evaluate_candidates(const PanelDataset& d, std::span<const std::size_t> members,
                                                     std::span<const CandidateSplit> candidates,
                                                     const TreeConfig& config) {
  std::vector<CandidateEvaluation> out(candidates.size());
  parallel_for(candidates.size(), config.threads, [&](std::size_t i) {
    out[i].candidate = candidates[i];
    out[i].split = evaluate_one(d, members, candidates[i], config);
  });
  return out;
}

std::optional<Split> best_split(const PanelDataset& d, std::span<const std::size_t> members, const TreeConfig& config) {
  const auto candidates = enumerate_candidate_splits(d, members, config);
  auto evaluations = evaluate_candidates(d, members, candidates, config);
  std::optional<Split> best;
  for (auto& e : evaluations) {
    if (!e.split) continue;
    if (!best || e.split->statistic > best->statistic) best = std::move(e.split);
  }
  return best;
}

Tree build_initial_tree(const PanelDataset& build, const TreeConfig& config_in) {
  const TreeConfig config = resolve_regimes(config_in, build.horizon());
  const auto everyone = all_members(build);
  Node root;
  root.n = everyone.size();
  root.effect = try_effect(build, everyone, config);
  if (!root.effect) {
    throw EstimationError(EstimationErrorKind::root_not_estimable, "effect not estimable on the whole build set");
  }
  Tree tree(build.schema.baseline, std::move(root));

  std::deque<std::pair<int, std::vector<std::size_t>>> frontier;
  frontier.emplace_back(0, everyone);
  while (!frontier.empty()) {
    auto [id, members] = std::move(frontier.front());
    frontier.pop_front();
    if (tree.node(id).depth >= config.max_depth || members.size() < 2 * config.min_node_size) continue;
    const auto split = best_split(build, members, config);
    if (!split) continue;
    std::vector<std::size_t> left, right;
    for (auto m : members) (build.subjects[m].baseline[split->covariate] < split->cutpoint ? left : right).push_back(m);
    const auto kids = tree.grow(id, *split, left.size(), right.size());
    frontier.emplace_back(kids[0], std::move(left));
    frontier.emplace_back(kids[1], std::move(right));
  }
  return tree;
}

NodeStatistics tree_statistics(const Tree& tree) {
  NodeStatistics stats;
  for (int id : tree.internal_nodes()) stats[id] = tree.node(id).split->statistic;
  return stats;
}

double split_complexity(const Tree& tree, double lambda, const NodeStatistics& stats) {
  const auto internal = tree.internal_nodes();
  if (internal.empty()) return 0.0;
  double total = 0.0;
  for (int id : internal) {
    const auto it = stats.find(id);
    total += it == stats.end() ? 0.0 : it->second;
  }
  return total - lambda * static_cast<double>(internal.size());
}

double split_complexity(const Tree& tree, double lambda) { return split_complexity(tree, lambda, tree_statistics(tree)); }

PrunedSequence prune_sequence(const Tree& tree) {
  PrunedSequence seq;
  seq.trees.push_back(tree);
  const auto stats = tree_statistics(tree);
  while (true) {
    const Tree& current = seq.trees.back();
    const auto internal = current.internal_nodes();
    if (internal.empty()) break;
    int weakest = -1;
    double weakest_g = std::numeric_limits<double>::infinity();
    for (int h : internal) {
      const auto branch = current.branch_internal_nodes(h);
      double sum = 0.0;
      for (int w : branch) sum += stats.at(w);
      const double g = sum / static_cast<double>(branch.size());
      if (weakest < 0 || g < weakest_g) {
        weakest = h;
        weakest_g = g;
      }
    }
    seq.critical_lambdas.push_back(weakest_g);
    seq.trees.push_back(current.pruned_at(weakest));
  }
  return seq;
}

NodeStatistics validation_statistics(const Tree& tree, const PanelDataset& validate, const TreeConfig& config_in) {
  if (validate.subjects.empty()) throw DataError(DataErrorKind::empty_validation_set, "validation set is empty");
  const TreeConfig config = resolve_regimes(config_in, validate.horizon());
  const auto internal = tree.internal_nodes();
  std::vector<double> values(internal.size(), 0.0);
  parallel_for(internal.size(), config.threads, [&](std::size_t i) {
    const Node& n = tree.node(internal[i]);
    const auto members = subgroup_members(validate, n.subgroup);
    const auto split = evaluate_one(validate, members, {n.split->covariate, n.split->cutpoint}, config);
    values[i] = split ? split->statistic : 0.0;
  });
  NodeStatistics stats;
  for (std::size_t i = 0; i < internal.size(); ++i) stats[internal[i]] = values[i];
  return stats;
}

std::size_t select_index(const PrunedSequence& seq, const NodeStatistics& stats, double lambda) {
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < seq.trees.size(); ++i) {
    const double v = split_complexity(seq.trees[i], lambda, stats);
    if (v >= best_value) {
      best = i;
      best_value = v;
    }
  }
  return best;
}

Tree select_final_tree(const PrunedSequence& seq, const PanelDataset& validate, double lambda,
                       const TreeConfig& config) {
  if (validate.subjects.empty()) throw DataError(DataErrorKind::empty_validation_set, "validation set is empty");
  if (seq.trees.size() == 1) return seq.trees.front();
  const auto stats = validation_statistics(seq.trees.front(), validate, config);
  return seq.trees[select_index(seq, stats, lambda)];
}

nlohmann::ordered_json tree_to_json(const Tree& tree) {
  nlohmann::ordered_json j;
  j["covariates"] = tree.covariate_names();
  const auto& e = tree.root().effect;
  if (e) {
    j["regime1"] = e->regime1.values;
    j["regime0"] = e->regime0.values;
  }
  j["root"] = node_json(tree, 0);
  return j;
}

Tree tree_from_json(const nlohmann::json& j) {
  try {
    const auto names = j.at("covariates").get<std::vector<std::string>>();
    TreatmentRegime r1{j.value("regime1", std::vector<int>{})};
    TreatmentRegime r0{j.value("regime0", std::vector<int>{})};
    const auto& rj = j.at("root");
    Node root;
    root.n = rj.at("n").get<std::size_t>();
    root.effect = effect_from_json(rj, r1, r0);
    Tree tree(names, std::move(root));
    std::deque<std::pair<int, const nlohmann::json*>> queue{{0, &rj}};
    while (!queue.empty()) {
      auto [id, nj] = queue.front();
      queue.pop_front();
      if (!nj->contains("children")) continue;
      const auto& kids = nj->at("children");
      if (!kids.is_array() || kids.size() != 2) throw DataError(DataErrorKind::malformed_value, "tree: bad children");
      Split s;
      s.covariate = nj->at("covariate").get<std::size_t>();
      if (s.covariate >= names.size()) throw DataError(DataErrorKind::schema_mismatch, "tree: covariate out of range");
      s.cutpoint = nj->at("cutpoint").get<double>();
      s.statistic = nj->at("statistic").get<double>();
      const auto le = effect_from_json(kids[0], r1, r0);
      const auto re = effect_from_json(kids[1], r1, r0);
      if (le) s.left = *le;
      if (re) s.right = *re;
      const auto ids = tree.grow(id, s, kids[0].at("n").get<std::size_t>(), kids[1].at("n").get<std::size_t>());
      tree.set_effect(ids[0], le);
      tree.set_effect(ids[1], re);
      queue.emplace_back(ids[0], &kids[0]);
      queue.emplace_back(ids[1], &kids[1]);
    }
    return tree;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataErrorKind::malformed_value, std::string("tree: ") + e.what());
  }
}

void save_tree(const Tree& tree, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorKind::io, "cannot write " + path.string());
  out << tree_to_json(tree).dump(2) << '\n';
}

Tree load_tree(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorKind::io, "cannot open " + path.string());
  try {
    return tree_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataErrorKind::malformed_value, std::string("tree: ") + e.what());
  }
}

}  // namespace sdld
