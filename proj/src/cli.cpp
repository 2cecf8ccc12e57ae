#include "sdld/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sdld/errors.hpp"
#include "sdld/inference.hpp"
#include "sdld/panel_data.hpp"
#include "sdld/parallel.hpp"
#include "sdld/run_config.hpp"
#include "sdld/simulation.hpp"
#include "sdld/tree.hpp"

namespace sdld::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<int> parse_regime(const std::string& text) {
  std::vector<int> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "0" || item == "1") {
      out.push_back(item == "1");
    } else {
      throw UsageError("regime must be a comma-separated list of 0/1, got '" + text + "'");
    }
  }
  return out;
}

struct RunOptions {
  RunConfig config;
  std::string estimator = "tmle";
  std::string fluctuation = "logistic";
  std::string regime1;
  std::string regime0;
  unsigned threads = default_thread_count();
};

enum class Scope { tree, pipeline, effects };

void add_run_options(CLI::App* sub, RunOptions& o, Scope scope) {
  auto& c = o.config;
  sub->add_option("--estimator", o.estimator, "tmle, gcomp or ipw")
      ->check(CLI::IsMember({"tmle", "gcomp", "ipw"}))
      ->capture_default_str();
  sub->add_option("--truncation-bound", c.truncation_bound, "floor on per-period probabilities")->capture_default_str();
  sub->add_option("--fluctuation", o.fluctuation, "TMLE fluctuation: logistic or gaussian")
      ->check(CLI::IsMember({"logistic", "gaussian"}))
      ->capture_default_str();
  sub->add_option("--regime1", o.regime1, "treated regime, e.g. 1,1 (default: all ones)");
  sub->add_option("--regime0", o.regime0, "control regime, e.g. 0,0 (default: all zeros)");
  sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  if (scope == Scope::effects) return;
  sub->add_option("--lambda", c.lambda, "split complexity penalty")->capture_default_str();
  sub->add_option("--min-node-size", c.min_node_size, "minimum subjects per child")->capture_default_str();
  sub->add_option("--min-regime-followers", c.min_regime_followers, "minimum followers of each regime per child")
      ->capture_default_str();
  sub->add_option("--max-depth", c.max_depth, "maximum tree depth")->capture_default_str();
  sub->add_option("--cutpoint-grid", c.cutpoint_grid, "quantile cutpoints per covariate")->capture_default_str();
  if (scope == Scope::tree) return;
  sub->add_option("--build-fraction", c.fractions[0], "share of subjects for tree building")->capture_default_str();
  sub->add_option("--validate-fraction", c.fractions[1], "share of subjects for tree selection")
      ->capture_default_str();
  sub->add_option("--estimate-fraction", c.fractions[2], "share of subjects for leaf estimation")
      ->capture_default_str();
  sub->add_option("--bootstrap", c.bootstrap, "bootstrap resamples (0 disables)")->capture_default_str();
  sub->add_option("--level", c.level, "confidence level")->capture_default_str();
}

RunConfig resolve(RunOptions& o) {
  RunConfig c = o.config;
  c.estimator = parse_method(o.estimator);
  c.fluctuation = o.fluctuation == "gaussian" ? Fluctuation::gaussian : Fluctuation::logistic;
  c.regime1 = parse_regime(o.regime1);
  c.regime0 = parse_regime(o.regime0);
  try {
    c.check();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

std::string comment(const ojson& j) { return "config: " + j.dump(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) throw DataError(DataErrorKind::io, "failed writing " + path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

PanelDataset load_data(const std::string& data, const std::string& schema, bool impute) {
  PanelDataset d = schema.empty() ? load_panel_csv(data) : load_panel_csv(data, load_schema_json(schema));
  if (impute) d = locf_impute(d, d.schema.time_varying);
  return d;
}

// --- subcommands -------------------------------------------------------------

struct SimulateArgs {
  std::size_t n = 12000;
  std::uint64_t seed = 1;
  bool null_variant = false;
  std::string out;
  std::string schema_out;
};

int do_simulate(const SimulateArgs& a, std::ostream& out) {
  ojson cfg;
  cfg["command"] = "simulate";
  cfg["n"] = a.n;
  cfg["seed"] = a.seed;
  cfg["heterogeneous"] = !a.null_variant;
  const auto d = simulate_appendix_c(a.n, a.seed, !a.null_variant);
  const auto text = panel_csv_string(d, {comment(cfg)});
  ensure_parent(a.out);
  write_text(a.out, text);
  if (!a.schema_out.empty()) {
    ensure_parent(a.schema_out);
    save_schema_json(d.schema, a.schema_out);
  }
  out << "wrote " << d.size() << " subjects to " << a.out << '\n';
  return kOk;
}

struct DiscoverArgs {
  std::string data;
  std::string schema;
  std::string out;
  bool impute = false;
  bool keep_draws = false;
};

int do_discover(const DiscoverArgs& a, RunOptions& o, std::ostream& out) {
  const RunConfig config = resolve(o);
  const auto d = load_data(a.data, a.schema, a.impute);
  const auto result = run_sdld(d, config, o.threads);

  ojson fingerprint = to_json(config);
  fingerprint["data"] = fs::path(a.data).filename().string();
  const auto tag = comment(fingerprint);
  ojson tree_doc = tree_to_json(result.report.tree);
  tree_doc["config"] = fingerprint;
  ojson report_doc = report_to_json(result.report);
  report_doc["config"] = fingerprint;

  std::vector<std::pair<std::string, std::string>> files{
      {"tree.json", tree_doc.dump(2) + "\n"},
      {"report.json", report_doc.dump(2) + "\n"},
      {"report.csv", report_csv(result.report, {tag})},
      {"partition.csv", partition_csv(d, result, {tag})},
  };
  if (a.keep_draws) files.emplace_back("bootstrap_draws.csv", bootstrap_draws_csv(result.report, {tag}));

  fs::create_directories(a.out);
  for (const auto& [name, text] : files) write_text(fs::path(a.out) / name, text);
  out << "selected tree with " << result.report.leaves.size() << " leaves; artifacts in " << a.out << '\n';
  return kOk;
}

struct EstimateArgs {
  std::string data;
  std::string schema;
  std::string tree;
  std::string out;
  std::string interim_outcome;
  bool impute = false;
};

int do_estimate(const EstimateArgs& a, RunOptions& o, std::ostream& out) {
  const RunConfig config = resolve(o);
  const auto d = load_data(a.data, a.schema, a.impute);
  const TreeConfig full = resolve_regimes(config.tree_config(o.threads), d.horizon());

  std::vector<std::pair<int, Subgroup>> groups;
  std::vector<std::string> labels;
  if (a.tree.empty()) {
    groups.emplace_back(0, Subgroup{});
    labels.emplace_back("all");
  } else {
    const Tree tree = load_tree(a.tree);
    if (tree.covariate_names() != d.schema.baseline) {
      throw DataError(DataErrorKind::schema_mismatch, "tree covariates do not match the data's baseline columns");
    }
    for (int id : tree.terminal_nodes()) {
      groups.emplace_back(id, tree.node(id).subgroup);
      labels.push_back(tree.node(id).subgroup.describe(d.schema.baseline));
    }
  }

  const int K = d.horizon();
  const int first = a.interim_outcome.empty() ? K : 0;
  std::vector<std::string> rows(groups.size() * static_cast<std::size_t>(K - first + 1));
  std::vector<PanelDataset> prefixes;
  for (int k = first; k <= K; ++k) prefixes.push_back(truncate_horizon(d, k, a.interim_outcome));

  parallel_for(rows.size(), o.threads, [&](std::size_t r) {
    const std::size_t g = r / prefixes.size();
    const std::size_t p = r % prefixes.size();
    const int k = first + static_cast<int>(p);
    const auto& dk = prefixes[p];
    const TreatmentRegime r1{std::vector<int>(full.regime1.values.begin(), full.regime1.values.begin() + k + 1)};
    const TreatmentRegime r0{std::vector<int>(full.regime0.values.begin(), full.regime0.values.begin() + k + 1)};
    const auto members = subgroup_members(dk, groups[g].second);
    std::ostringstream row;
    row << groups[g].first << ',' << '"' << labels[g] << '"' << ',' << k << ',' << members.size() << ',';
    try {
      if (members.empty()) throw EstimationError(EstimationErrorKind::empty_risk_set, "no subjects in subgroup", 0);
      const auto e = estimate_effect(dk, members, r1, r0, full.method, full.estimator);
      row << format_double(e.delta) << ',' << format_double(e.variance) << ',' << format_double(std::sqrt(e.variance))
          << ',' << format_double(e.mean1) << ',' << format_double(e.mean0) << ',';
    } catch (const EstimationError& e) {
      row << ",,,,," << to_string(e.kind());
    }
    rows[r] = row.str();
  });

  ojson fingerprint = to_json(config);
  fingerprint["data"] = fs::path(a.data).filename().string();
  fingerprint["tree"] = a.tree.empty() ? "" : fs::path(a.tree).filename().string();
  fingerprint["interim_outcome"] = a.interim_outcome;
  std::ostringstream text;
  text << "# " << comment(fingerprint) << '\n';
  text << "node,subgroup,period,n,effect,variance,se,mean1,mean0,error\n";
  for (const auto& r : rows) text << r << '\n';
  ensure_parent(a.out);
  write_text(a.out, text.str());
  out << "wrote " << rows.size() << " effect rows to " << a.out << '\n';
  return kOk;
}

struct ReplicateArgs {
  AppendixCConfig study;
  bool null_variant = false;
  bool record_runtime = false;
  std::string out = "replicates.csv";
  std::string summary;
};

int do_replicate(ReplicateArgs& a, RunOptions& o, bool n_given, bool split_given, std::ostream& out) {
  const RunConfig config = resolve(o);
  auto& s = a.study;
  s.heterogeneous = !a.null_variant;
  if (n_given && !split_given) {
    s.n_build = static_cast<std::size_t>(std::llround(static_cast<double>(s.n) * 5.0 / 6.0));
    s.n_validate = s.n - s.n_build;
  }
  try {
    s.check();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  SimulationOptions opts;
  opts.threads = o.threads;
  opts.record_runtime = a.record_runtime;
  const auto result = run_simulation_study(s, config.tree_config(1), config.lambda, opts);

  ojson fingerprint = to_json(config);
  fingerprint["command"] = "replicate";
  fingerprint["n"] = s.n;
  fingerprint["n_build"] = s.n_build;
  fingerprint["n_validate"] = s.n_validate;
  fingerprint["replicates"] = s.replicates;
  fingerprint["seed"] = s.seed;
  fingerprint["heterogeneous"] = s.heterogeneous;
  fingerprint["eval_size"] = s.eval_size;

  const auto& m = result.metrics;
  ojson summary;
  summary["config"] = fingerprint;
  summary["correct_tree_proportion"] = m.correct_tree_proportion;
  summary["mean_terminal_nodes"] = m.mean_terminal_nodes;
  summary["mean_noise_splits"] = m.mean_noise_splits;
  summary["first_split_correct_proportion"] = m.first_split_correct_proportion;
  summary["pairwise_prediction_similarity"] = m.pairwise_prediction_similarity;
  summary["replicates_ok"] = m.replicates_ok;
  summary["replicates_failed"] = m.replicates_failed;

  const auto log = replicate_log_csv(result.replicates, a.record_runtime, {comment(fingerprint)});
  ensure_parent(a.out);
  write_text(a.out, log);
  if (!a.summary.empty()) {
    ensure_parent(a.summary);
    write_text(a.summary, summary.dump(2) + "\n");
  }
  out << summary.dump() << '\n';
  return kOk;
}

// Splices `key = value` lines of the subcommand's --config file into the
// arguments just after the subcommand name, so explicit flags (parsed later,
// last one wins) override file values.
std::vector<std::string> expand_config(CLI::App& app, const std::vector<std::string>& args) {
  if (args.empty()) return args;
  CLI::App* sub = app.get_subcommand_no_throw(args[0]);
  if (sub == nullptr) return args;
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  if (!fs::is_regular_file(path)) throw DataError(DataErrorKind::io, "cannot read config file " + path);
  std::vector<std::string> injected;
  for (const auto& item : CLI::ConfigTOML().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && item.parents.front() != args[0]) continue;
    const CLI::Option* opt = sub->get_option_no_throw("--" + item.name);
    if (opt == nullptr || item.name == "config") throw UsageError("unknown config key '" + item.name + "'");
    if (opt->get_expected_max() == 0) {
      if (item.inputs.size() == 1 && CLI::detail::to_flag_value(item.inputs.front()) > 0) {
        injected.push_back("--" + item.name);
      }
      continue;
    }
    injected.push_back("--" + item.name);
    injected.insert(injected.end(), item.inputs.begin(), item.inputs.end());
  }
  std::vector<std::string> out{args[0]};
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

void print_error(std::ostream& err, const std::string& category, const std::string& kind, const std::string& message,
                 int period = -1) {
  ojson j;
  j["error"] = category;
  if (!kind.empty()) j["kind"] = kind;
  j["message"] = message;
  if (period >= 0) j["period"] = period;
  err << j.dump() << '\n';
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Subgroup discovery for longitudinal data"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_path;
  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "write a simulated two-period panel as wide CSV");
  simulate->add_option("--n", sim.n, "subjects")->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--seed", sim.seed, "random seed")->capture_default_str();
  simulate->add_flag("--null", sim.null_variant, "homogeneous-effect variant");
  simulate->add_option("--out", sim.out, "output CSV")->required();
  simulate->add_option("--schema-out", sim.schema_out, "also write the schema document");
  simulate->add_option("--config", config_path, "key = value file; flags override");

  DiscoverArgs disc;
  RunOptions disc_run;
  auto* discover = app.add_subcommand("discover", "grow, prune and select a tree; estimate leaf effects");
  discover->add_option("--data", disc.data, "wide CSV")->required();
  discover->add_option("--schema", disc.schema, "schema document (default: inferred from the header)");
  discover->add_option("--out", disc.out, "output directory")->required();
  discover->add_flag("--impute", disc.impute, "carry forward missing time-varying covariates");
  discover->add_flag("--keep-draws", disc.keep_draws, "write bootstrap draws");
  discover->add_option("--seed", disc_run.config.seed, "random seed")->capture_default_str();
  add_run_options(discover, disc_run, Scope::pipeline);
  discover->add_option("--config", config_path, "key = value file; flags override");

  EstimateArgs est;
  RunOptions est_run;
  auto* estimate = app.add_subcommand("estimate", "effects at each horizon prefix, overall or per leaf");
  estimate->add_option("--data", est.data, "wide CSV")->required();
  estimate->add_option("--schema", est.schema, "schema document");
  estimate->add_option("--tree", est.tree, "tree document; effects per leaf");
  estimate->add_option("--out", est.out, "output CSV")->required();
  estimate->add_option("--interim-outcome", est.interim_outcome,
                       "time-varying covariate used as outcome for earlier horizons");
  estimate->add_flag("--impute", est.impute, "carry forward missing time-varying covariates");
  add_run_options(estimate, est_run, Scope::effects);
  estimate->add_option("--config", config_path, "key = value file; flags override");

  ReplicateArgs rep;
  RunOptions rep_run;
  auto* replicate = app.add_subcommand("replicate", "repeat simulate-build-prune-select and score the trees");
  replicate->add_option("--reps", rep.study.replicates, "replicates")->check(CLI::PositiveNumber)->capture_default_str();
  replicate->add_option("--seed", rep.study.seed, "random seed")->capture_default_str();
  auto* n_opt = replicate->add_option("--n", rep.study.n, "subjects per replicate")->capture_default_str();
  auto* nb_opt = replicate->add_option("--n-build", rep.study.n_build, "build subjects")->capture_default_str();
  auto* nv_opt = replicate->add_option("--n-validate", rep.study.n_validate, "validation subjects")->capture_default_str();
  replicate->add_option("--eval-size", rep.study.eval_size, "points for pairwise similarity")->capture_default_str();
  replicate->add_flag("--null", rep.null_variant, "homogeneous-effect variant");
  replicate->add_flag("--record-runtime", rep.record_runtime, "fill the runtime_ms column");
  replicate->add_option("--out", rep.out, "replicate log CSV")->capture_default_str();
  replicate->add_option("--summary", rep.summary, "summary JSON");
  add_run_options(replicate, rep_run, Scope::tree);
  replicate->add_option("--config", config_path, "key = value file; flags override");

  std::vector<std::string> argv_store{"sdld"};
  try {
    const auto expanded = expand_config(app, args);
    argv_store.insert(argv_store.end(), expanded.begin(), expanded.end());
  } catch (const UsageError& e) {
    print_error(err, "Usage", "", e.what());
    return kUsage;
  } catch (const DataError& e) {
    print_error(err, "DataError", std::string(to_string(e.kind())), e.what());
    return kDataError;
  } catch (const CLI::Error& e) {
    print_error(err, "Usage", "", e.what());
    return kUsage;
  }
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    print_error(err, "Usage", "", e.what());
    return kUsage;
  }

  try {
    if (*simulate) return do_simulate(sim, out);
    if (*discover) return do_discover(disc, disc_run, out);
    if (*estimate) return do_estimate(est, est_run, out);
    if (*replicate) return do_replicate(rep, rep_run, n_opt->count() > 0, nb_opt->count() + nv_opt->count() > 0, out);
  } catch (const UsageError& e) {
    print_error(err, "Usage", "", e.what());
    return kUsage;
  } catch (const DataError& e) {
    print_error(err, "DataError", std::string(to_string(e.kind())), e.what());
    return kDataError;
  } catch (const EstimationError& e) {
    print_error(err, "EstimationError", std::string(to_string(e.kind())), e.what(), e.period());
    return kEstimationError;
  } catch (const fs::filesystem_error& e) {
    print_error(err, "DataError", std::string(to_string(DataErrorKind::io)), e.what());
    return kDataError;
  } catch (const std::invalid_argument& e) {
    print_error(err, "Usage", "", e.what());
    return kUsage;
  }
  return kUsage;
}

}  // namespace sdld::cli
