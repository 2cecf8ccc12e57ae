#include "sdld/simulation.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "sdld/glm.hpp"
#include "sdld/parallel.hpp"

namespace sdld {

namespace {

const std::vector<std::string> kBaselineNames{"x1", "x2", "x3", "x4", "x5"};
const std::vector<std::string> kTimeVaryingNames{"y", "z1", "z2"};

Eigen::Matrix<double, 5, 5> baseline_cholesky() {
  Eigen::Matrix<double, 5, 5> sigma = Eigen::Matrix<double, 5, 5>::Constant(0.2);
  sigma.diagonal().setOnes();
  return sigma.llt().matrixL();
}

std::vector<double> draw_baseline(const Eigen::Matrix<double, 5, 5>& chol, std::mt19937_64& rng,
                                  std::normal_distribution<double>& normal) {
  Eigen::Matrix<double, 5, 1> z;
  for (int i = 0; i < 5; ++i) z[i] = normal(rng);
  const Eigen::Matrix<double, 5, 1> x = chol * z;
  return {x.data(), x.data() + 5};
}

double uniform01(std::mt19937_64& rng) { return std::generate_canonical<double, 64>(rng); }

}  // namespace

void AppendixCConfig::check() const {
  if (n < 1) throw std::invalid_argument("simulation: n must be >= 1");
  if (n_build + n_validate != n) throw std::invalid_argument("simulation: n must equal n_build + n_validate");
  if (n_build < 1 || n_validate < 1) throw std::invalid_argument("simulation: build and validation sets must be non-empty");
  if (replicates < 1) throw std::invalid_argument("simulation: replicates must be >= 1");
  if (eval_size < 2) throw std::invalid_argument("simulation: eval_size must be >= 2");
}

PanelDataset simulate_appendix_c(std::size_t n, std::uint64_t seed, bool heterogeneous) {
  if (n < 1) throw std::invalid_argument("simulation: n must be >= 1");
  PanelDataset d;
  d.schema.baseline = kBaselineNames;
  d.schema.time_varying = kTimeVaryingNames;
  d.schema.horizon = 1;
  d.subjects.reserve(n);

  const auto chol = baseline_cholesky();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd_l = std::sqrt(0.4);
  const double h = heterogeneous ? 1.0 : 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const auto x = draw_baseline(chol, rng, normal);
    const double ua0 = uniform01(rng), uc0 = uniform01(rng);
    const double e_y1 = normal(rng), e_l11 = normal(rng), e_l12 = normal(rng);
    const double ua1 = uniform01(rng), uc1 = uniform01(rng);
    const double e_y2 = normal(rng);

    const double ind = x[1] > 0.5 ? 1.0 : 0.0;
    SubjectRecord s;
    s.id = std::to_string(i + 1);
    s.baseline = x;

    const int a0 = ua0 < expit(-0.5 + 0.2 * x[0] + 0.2 * x[1] + 0.4 * x[2] + 0.5 * x[3]);
    const int c0 = uc0 < expit(-4.0 + 0.8 * a0 + 0.3 * x[0] - 0.3 * x[1] - 0.3 * x[2] + 0.1 * x[3]);
    s.periods.push_back({{}, a0, c0});
    if (c0 == 0) {
      const double y1 = -3.0 + 0.1 * a0 + 0.3 * x[0] - 2.0 * h * a0 * ind + 2.0 * x[3] + 2.0 * x[4] + e_y1;
      const double l11 = 0.2 * a0 + 0.5 * x[0] - 0.4 * x[1] - 0.4 * x[2] + 0.5 * x[3] - 0.5 * x[4] + sd_l * e_l11;
      const double l12 = 0.1 * a0 + 0.1 * x[0] + 0.1 * x[1] - 0.4 * x[2] + 0.5 * l11 - 0.5 * x[4] + sd_l * e_l12;
      const int a1 = ua1 < expit(-1.0 + 0.1 * x[0] + 0.1 * x[1] + 0.2 * x[2] + 0.2 * x[3] - l11 - 0.5 * l12);
      const int c1 =
          uc1 < expit(-4.0 + 0.3 * a0 + 0.5 * a1 + 0.3 * x[0] - 0.3 * x[1] - 0.3 * x[2] + 0.1 * l11 + 0.1 * x[4]);
      s.periods.push_back({{y1, l11, l12}, a1, c1});
      if (c1 == 0) {
        s.outcome = -2.0 + 0.1 * a0 + 0.1 * a1 + 0.3 * x[0] - 2.0 * h * a0 * ind - 2.0 * h * a1 * ind - 0.3 * x[2] +
                    2.0 * l11 + 2.0 * l12 + e_y2;
      }
    }
    d.subjects.push_back(std::move(s));
  }
  return d;
}

std::vector<std::vector<double>> simulate_baseline(std::size_t m, std::uint64_t seed) {
  const auto chol = baseline_cholesky();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(draw_baseline(chol, rng, normal));
  return out;
}

double true_effect_appendix_c(std::span<const double> l0) {
  if (l0.size() != 5) throw std::invalid_argument("true effect: baseline vector must have length 5");
  return l0[kModifierCovariate] > kModifierCutpoint ? -3.0 : 1.0;
}

double pairwise_similarity(const Tree& tree, const std::vector<std::vector<double>>& sample) {
  const double m = static_cast<double>(sample.size());
  if (sample.size() < 2) throw std::invalid_argument("similarity: need at least two points");
  // Pair counts from the contingency table of (true side, fitted leaf).
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> by_true, by_fit;
  for (const auto& l0 : sample) {
    const int t = l0[kModifierCovariate] < kModifierCutpoint ? 0 : 1;
    const int f = tree.assign(l0);
    joint[{t, f}] += 1.0;
    by_true[t] += 1.0;
    by_fit[f] += 1.0;
  }
  auto pairs = [](double c) { return c * (c - 1.0) / 2.0; };
  double same_t = 0.0, same_f = 0.0, same_both = 0.0;
  for (auto& [k, c] : by_true) same_t += pairs(c);
  for (auto& [k, c] : by_fit) same_f += pairs(c);
  for (auto& [k, c] : joint) same_both += pairs(c);
  const double disagreements = same_t + same_f - 2.0 * same_both;
  return 1.0 - disagreements / pairs(m);
}

TreeEvaluation evaluate_tree(const Tree& tree, const std::vector<std::vector<double>>& sample) {
  TreeEvaluation e;
  const auto internal = tree.internal_nodes();
  e.terminal_nodes = internal.size() + 1;
  for (int id : internal) e.noise_splits += tree.node(id).split->covariate != kModifierCovariate;
  e.correct = internal.size() == 1 && tree.root().split->covariate == kModifierCovariate;
  e.first_split_correct = tree.root().split && tree.root().split->covariate == kModifierCovariate;
  e.similarity = pairwise_similarity(tree, sample);
  return e;
}

std::uint64_t replicate_seed(std::uint64_t seed, int replicate) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

SimMetrics aggregate(std::span<const ReplicateRecord> records) {
  SimMetrics m;
  for (const auto& r : records) {
    if (!r.evaluation) {
      ++m.replicates_failed;
      continue;
    }
    ++m.replicates_ok;
    m.correct_tree_proportion += r.evaluation->correct;
    m.mean_terminal_nodes += static_cast<double>(r.evaluation->terminal_nodes);
    m.mean_noise_splits += static_cast<double>(r.evaluation->noise_splits);
    m.first_split_correct_proportion += r.evaluation->first_split_correct;
    m.pairwise_prediction_similarity += r.evaluation->similarity;
  }
  if (m.replicates_ok > 0) {
    const double k = m.replicates_ok;
    m.correct_tree_proportion /= k;
    m.mean_terminal_nodes /= k;
    m.mean_noise_splits /= k;
    m.first_split_correct_proportion /= k;
    m.pairwise_prediction_similarity /= k;
  }
  return m;
}

SimulationResult run_simulation_study(const AppendixCConfig& cfg, const TreeConfig& tree_config, double lambda,
                                      const SimulationOptions& options) {
  cfg.check();
  SimulationResult result;
  result.replicates.resize(static_cast<std::size_t>(cfg.replicates));
  const std::array<double, 3> fractions{static_cast<double>(cfg.n_build) / static_cast<double>(cfg.n),
                                        static_cast<double>(cfg.n_validate) / static_cast<double>(cfg.n), 0.0};

  parallel_for(result.replicates.size(), options.threads, [&](std::size_t r) {
    auto& rec = result.replicates[r];
    rec.replicate = static_cast<int>(r) + 1;
    rec.seed = replicate_seed(cfg.seed, rec.replicate);
    const auto start = std::chrono::steady_clock::now();
    try {
      const auto data = simulate_appendix_c(cfg.n, rec.seed, cfg.heterogeneous);
      const auto parts = split_dataset(data, fractions, rec.seed);
      const Tree initial = build_initial_tree(parts[0], tree_config);
      const auto seq = prune_sequence(initial);
      const Tree selected = select_final_tree(seq, parts[1], lambda, tree_config);
      const auto sample = simulate_baseline(cfg.eval_size, rec.seed ^ 0x9e3779b97f4a7c15ULL);
      auto eval = evaluate_tree(selected, sample);
      eval.first_split_correct = initial.root().split && initial.root().split->covariate == kModifierCovariate;
      rec.evaluation = eval;
      if (options.keep_trees) {
        rec.initial_tree = initial;
        rec.final_tree = selected;
      }
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    rec.runtime_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  });
  result.metrics = aggregate(result.replicates);
  return result;
}

std::string replicate_log_csv(std::span<const ReplicateRecord> records, bool with_runtime,
                              const std::vector<std::string>& comments) {
  std::ostringstream out;
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "replicate,seed,correct,size,noise,first_split,similarity,runtime_ms,error\n";
  for (const auto& r : records) {
    out << r.replicate << ',' << r.seed << ',';
    if (r.evaluation) {
      const auto& e = *r.evaluation;
      out << int(e.correct) << ',' << e.terminal_nodes << ',' << e.noise_splits << ',' << int(e.first_split_correct)
          << ',' << format_double(e.similarity);
    } else {
      out << ",,,,";
    }
    out << ',';
    if (with_runtime) out << format_double(std::round(r.runtime_ms * 1000.0) / 1000.0);
    out << ',';
    if (!r.error.empty()) {
      std::string msg = r.error;
      for (auto& ch : msg) {
        if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
      }
      out << msg;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace sdld
