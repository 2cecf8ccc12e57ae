#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "sdld/panel_data.hpp"

namespace sdld::testing {

inline double expit_ref(double x) { return std::exp(x) / (1.0 + std::exp(x)); }

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("sdld_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// K = 0 panel with one binary baseline covariate x. Treatment depends on x,
// optional dropout depends on (x, a), outcome has an x-by-a interaction.
inline PanelDataset discrete_k0(std::size_t n, std::uint64_t seed, bool censoring) {
  PanelDataset d;
  d.schema.baseline = {"x"};
  d.schema.horizon = 0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> e(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    SubjectRecord s;
    s.id = std::to_string(i);
    const double x = u(rng) < 0.4 ? 1.0 : 0.0;
    const int a = u(rng) < expit_ref(-0.3 + 1.2 * x);
    const int c = censoring ? (u(rng) < expit_ref(-2.0 + 0.8 * x - 0.5 * a)) : 0;
    s.baseline = {x};
    s.periods.push_back({{}, a, c});
    if (!c) s.outcome = 1.0 + 2.0 * x + 1.5 * a - 3.0 * x * a + e(rng);
    d.subjects.push_back(std::move(s));
  }
  return d;
}

// Σ_x Ê[Y | A = a, C = 0, X = x] P̂(X = x): the g-formula with empirical cell means.
inline double standardization_k0(const PanelDataset& d, int a) {
  std::map<double, double> count, ysum, yn;
  for (const auto& s : d.subjects) {
    const double x = s.baseline[0];
    count[x] += 1.0;
    if (s.periods[0].treatment == a && s.periods[0].censored == 0) {
      ysum[x] += *s.outcome;
      yn[x] += 1.0;
    }
  }
  double total = 0.0;
  for (auto& [x, c] : count) total += ysum[x] / yn[x] * c;
  return total / static_cast<double>(d.size());
}

}  // namespace sdld::testing
