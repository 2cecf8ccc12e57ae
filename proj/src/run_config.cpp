#include "sdld/run_config.hpp"

#include <cmath>
#include <stdexcept>

namespace sdld {

void RunConfig::check() const {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || f > 1.0) throw std::invalid_argument("fractions must lie in [0, 1]");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("fractions must sum to 1");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (min_node_size < 1) throw std::invalid_argument("min_node_size must be >= 1");
  if (max_depth < 0) throw std::invalid_argument("max_depth must be >= 0");
  if (cutpoint_grid < 1) throw std::invalid_argument("cutpoint_grid must be >= 1");
  if (!(truncation_bound > 0.0 && truncation_bound < 0.5)) {
    throw std::invalid_argument("truncation_bound must lie in (0, 0.5)");
  }
  if (bootstrap < 0) throw std::invalid_argument("bootstrap must be >= 0");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  for (const auto* r : {&regime1, &regime0}) {
    for (int v : *r) {
      if (v != 0 && v != 1) throw std::invalid_argument("regime values must be 0 or 1");
    }
  }
}

EstimatorOptions RunConfig::estimator_options() const {
  EstimatorOptions o;
  o.truncation_bound = truncation_bound;
  o.fluctuation = fluctuation;
  return o;
}

TreeConfig RunConfig::tree_config(unsigned threads) const {
  TreeConfig t;
  t.method = estimator;
  t.regime1 = TreatmentRegime{regime1};
  t.regime0 = TreatmentRegime{regime0};
  t.min_node_size = min_node_size;
  t.min_regime_followers = min_regime_followers;
  t.max_depth = max_depth;
  t.cutpoint_grid = cutpoint_grid;
  t.estimator = estimator_options();
  t.threads = threads;
  return t;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["estimator"] = std::string(to_string(c.estimator));
  j["lambda"] = c.lambda;
  j["fractions"] = c.fractions;
  j["min_node_size"] = c.min_node_size;
  j["min_regime_followers"] = c.min_regime_followers;
  j["max_depth"] = c.max_depth;
  j["cutpoint_grid"] = c.cutpoint_grid;
  j["truncation_bound"] = c.truncation_bound;
  j["fluctuation"] = c.fluctuation == Fluctuation::logistic ? "logistic" : "gaussian";
  j["bootstrap"] = c.bootstrap;
  j["level"] = c.level;
  j["seed"] = c.seed;
  j["regime1"] = c.regime1;
  j["regime0"] = c.regime0;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("estimator")) c.estimator = parse_method(j["estimator"].get<std::string>());
    c.lambda = j.value("lambda", c.lambda);
    c.fractions = j.value("fractions", c.fractions);
    c.min_node_size = j.value("min_node_size", c.min_node_size);
    c.min_regime_followers = j.value("min_regime_followers", c.min_regime_followers);
    c.max_depth = j.value("max_depth", c.max_depth);
    c.cutpoint_grid = j.value("cutpoint_grid", c.cutpoint_grid);
    c.truncation_bound = j.value("truncation_bound", c.truncation_bound);
    if (j.contains("fluctuation")) {
      const auto f = j["fluctuation"].get<std::string>();
      if (f == "logistic") {
        c.fluctuation = Fluctuation::logistic;
      } else if (f == "gaussian") {
        c.fluctuation = Fluctuation::gaussian;
      } else {
        throw std::invalid_argument("unknown fluctuation: " + f);
      }
    }
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.level = j.value("level", c.level);
    c.seed = j.value("seed", c.seed);
    c.regime1 = j.value("regime1", c.regime1);
    c.regime0 = j.value("regime0", c.regime0);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.check();
  return c;
}

}  // namespace sdld
