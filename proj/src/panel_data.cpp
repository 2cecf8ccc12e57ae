#include "sdld/panel_data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace sdld {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_number(std::string_view cell, const std::string& where) {
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw DataError(DataErrorKind::malformed_value, "cannot parse '" + std::string(cell) + "' at " + where);
  }
  return v;
}

int parse_binary(std::string_view cell, const std::string& where) {
  const auto v = parse_number(cell, where);
  if (!v || (*v != 0.0 && *v != 1.0)) {
    throw DataError(DataErrorKind::malformed_value, "expected 0 or 1 at " + where + ", got '" + std::string(cell) + "'");
  }
  return static_cast<int>(*v);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorKind::io, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    lines.push_back(std::move(line));
  }
  return lines;
}

std::string tv_column(int k, const std::string& name) { return "l" + std::to_string(k) + "_" + name; }

}  // namespace

std::optional<std::size_t> PanelSchema::baseline_index(const std::string& name) const {
  const auto it = std::find(baseline.begin(), baseline.end(), name);
  if (it == baseline.end()) return std::nullopt;
  return static_cast<std::size_t>(it - baseline.begin());
}

std::optional<std::size_t> PanelSchema::time_varying_index(const std::string& name) const {
  const auto it = std::find(time_varying.begin(), time_varying.end(), name);
  if (it == time_varying.end()) return std::nullopt;
  return static_cast<std::size_t>(it - time_varying.begin());
}

bool PanelSchema::is_binary(const std::string& name) const {
  return std::find(binary.begin(), binary.end(), name) != binary.end();
}

void TreatmentRegime::check(int horizon) const {
  if (values.size() != static_cast<std::size_t>(horizon + 1)) {
    throw DataError(DataErrorKind::schema_mismatch,
                    "regime has length " + std::to_string(values.size()) + " but horizon is " +
                        std::to_string(horizon));
  }
  for (int v : values) {
    if (v != 0 && v != 1) throw DataError(DataErrorKind::malformed_value, "regime values must be 0 or 1");
  }
}

bool Subgroup::contains(std::span<const double> baseline) const noexcept {
  return std::all_of(constraints.begin(), constraints.end(), [&](const Condition& c) { return c.holds(baseline); });
}

Subgroup Subgroup::with(Condition c) const {
  Subgroup out = *this;
  out.constraints.push_back(c);
  return out;
}

std::string Subgroup::describe(const std::vector<std::string>& names) const {
  if (constraints.empty()) return "all";
  std::string out;
  for (std::size_t i = 0; i < constraints.size(); ++i) {
    const auto& c = constraints[i];
    if (i) out += " & ";
    out += c.covariate < names.size() ? names[c.covariate] : "x" + std::to_string(c.covariate);
    out += c.relation == Relation::less ? " < " : " >= ";
    out += format_double(c.cutpoint);
  }
  return out;
}

std::vector<std::size_t> subgroup_members(const PanelDataset& d, const Subgroup& w) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < d.subjects.size(); ++i) {
    if (w.contains(d.subjects[i].baseline)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> all_members(const PanelDataset& d) {
  std::vector<std::size_t> out(d.subjects.size());
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

std::vector<Violation> validate_monotone_censoring(const PanelDataset& d) {
  std::vector<Violation> out;
  const int K = d.horizon();
  const auto J = d.schema.baseline.size();
  const auto T = d.schema.time_varying.size();
  bool any_complete = false;
  for (const auto& s : d.subjects) {
    auto flag = [&](int k, std::string msg) { out.push_back({s.id, k, std::move(msg)}); };
    if (s.baseline.size() != J) flag(-1, "baseline has wrong width");
    if (s.periods.empty()) {
      flag(0, "no period-0 record");
      continue;
    }
    if (s.periods.size() > static_cast<std::size_t>(K + 1)) flag(K + 1, "more periods than the horizon");
    for (std::size_t k = 0; k < s.periods.size(); ++k) {
      const auto& p = s.periods[k];
      const int kk = static_cast<int>(k);
      if (p.treatment != 0 && p.treatment != 1) flag(kk, "treatment not binary");
      if (p.censored != 0 && p.censored != 1) flag(kk, "censoring indicator not binary");
      if (p.covariates.size() != (k == 0 ? 0 : T)) flag(kk, "time-varying covariates have wrong width");
      if (p.censored == 1 && k + 1 < s.periods.size()) flag(kk, "data observed after dropout");
    }
    const auto& last = s.periods.back();
    const int last_k = static_cast<int>(s.periods.size()) - 1;
    const bool complete = last_k == K && last.censored == 0;
    if (last.censored == 0 && last_k < K) flag(last_k + 1, "periods missing without dropout");
    if (last.censored == 1 && s.outcome) flag(last_k, "outcome observed after dropout");
    if (complete && !s.outcome) flag(K, "outcome missing for subject uncensored through the horizon");
    if (complete && s.outcome) any_complete = true;
  }
  if (!d.subjects.empty() && !any_complete) out.push_back({"", K, "no subject is uncensored through the horizon"});
  return out;
}

bool has_missing_covariates(const PanelDataset& d) {
  for (const auto& s : d.subjects) {
    if (std::any_of(s.baseline.begin(), s.baseline.end(), is_missing)) return true;
    for (const auto& p : s.periods) {
      if (std::any_of(p.covariates.begin(), p.covariates.end(), is_missing)) return true;
    }
  }
  return false;
}

std::string format_double(double v) {
  if (is_missing(v)) return "";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::vector<std::string> wide_header(const PanelSchema& schema) {
  std::vector<std::string> h{"subject_id"};
  for (const auto& b : schema.baseline) h.push_back("l0_" + b);
  for (int k = 0; k <= schema.horizon; ++k) {
    if (k > 0) {
      for (const auto& t : schema.time_varying) h.push_back(tv_column(k, t));
    }
    h.push_back("a_" + std::to_string(k));
    h.push_back("c_" + std::to_string(k));
  }
  h.push_back("y");
  return h;
}

PanelSchema infer_schema(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw DataError(DataErrorKind::missing_column, "empty file " + path.string());
  PanelSchema schema;
  int max_a = -1;
  for (auto f : split_fields(lines.front())) {
    const std::string col(f);
    if (col.rfind("l0_", 0) == 0) {
      schema.baseline.push_back(col.substr(3));
    } else if (col.rfind("l1_", 0) == 0) {
      schema.time_varying.push_back(col.substr(3));
    } else if (col.rfind("a_", 0) == 0) {
      int k = -1;
      const auto [p, ec] = std::from_chars(col.data() + 2, col.data() + col.size(), k);
      if (ec != std::errc() || p != col.data() + col.size()) {
        throw DataError(DataErrorKind::malformed_value, "bad treatment column " + col);
      }
      max_a = std::max(max_a, k);
    }
  }
  if (max_a < 0) throw DataError(DataErrorKind::missing_column, "a_0");
  schema.horizon = max_a;
  return schema;
}

PanelDataset load_panel_csv(const std::filesystem::path& path, const PanelSchema& schema) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw DataError(DataErrorKind::missing_column, "empty file " + path.string());
  std::map<std::string, std::size_t, std::less<>> column;
  {
    const auto header = split_fields(lines.front());
    for (std::size_t i = 0; i < header.size(); ++i) column.emplace(std::string(header[i]), i);
  }
  auto col = [&](const std::string& name) {
    const auto it = column.find(name);
    if (it == column.end()) throw DataError(DataErrorKind::missing_column, name);
    return it->second;
  };
  const int K = schema.horizon;
  const std::size_t id_col = col("subject_id");
  std::vector<std::size_t> base_cols;
  for (const auto& b : schema.baseline) base_cols.push_back(col("l0_" + b));
  std::vector<std::vector<std::size_t>> tv_cols(K + 1);
  std::vector<std::size_t> a_cols, c_cols;
  for (int k = 0; k <= K; ++k) {
    if (k > 0) {
      for (const auto& t : schema.time_varying) tv_cols[k].push_back(col(tv_column(k, t)));
    }
    a_cols.push_back(col("a_" + std::to_string(k)));
    c_cols.push_back(col("c_" + std::to_string(k)));
  }
  const std::size_t y_col = col("y");

  PanelDataset d;
  d.schema = schema;
  d.subjects.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split_fields(lines[r]);
    if (fields.size() != column.size()) {
      throw DataError(DataErrorKind::malformed_value,
                      "row " + std::to_string(r) + " has " + std::to_string(fields.size()) + " fields, expected " +
                          std::to_string(column.size()));
    }
    SubjectRecord s;
    s.id = std::string(fields[id_col]);
    const std::string where = "subject " + s.id;
    for (auto c : base_cols) s.baseline.push_back(parse_number(fields[c], where).value_or(kMissing));
    bool dropped = false;
    int dropped_at = -1;
    for (int k = 0; k <= K; ++k) {
      const std::string wk = where + ", period " + std::to_string(k);
      if (dropped) {
        bool any = !fields[a_cols[k]].empty() || !fields[c_cols[k]].empty();
        for (auto c : tv_cols[k]) any = any || !fields[c].empty();
        if (any) {
          throw DataError(DataErrorKind::non_monotone_censoring,
                          where + " has data at period " + std::to_string(k) + " after dropout at period " +
                              std::to_string(dropped_at));
        }
        continue;
      }
      PeriodRecord p;
      for (auto c : tv_cols[k]) p.covariates.push_back(parse_number(fields[c], wk).value_or(kMissing));
      p.treatment = parse_binary(fields[a_cols[k]], wk + " (a_" + std::to_string(k) + ")");
      p.censored = parse_binary(fields[c_cols[k]], wk + " (c_" + std::to_string(k) + ")");
      s.periods.push_back(std::move(p));
      if (s.periods.back().censored == 1) {
        dropped = true;
        dropped_at = k;
      }
    }
    const auto y = parse_number(fields[y_col], where + " (y)");
    if (dropped && y) {
      throw DataError(DataErrorKind::non_monotone_censoring,
                      where + " has an outcome after dropout at period " + std::to_string(dropped_at));
    }
    if (!dropped && !y) throw DataError(DataErrorKind::malformed_value, where + " is uncensored but has no outcome");
    s.outcome = y;
    d.subjects.push_back(std::move(s));
  }
  if (const auto v = validate_monotone_censoring(d); !v.empty()) {
    throw DataError(DataErrorKind::non_monotone_censoring, v.front().subject_id + ": " + v.front().message);
  }
  return d;
}

PanelDataset load_panel_csv(const std::filesystem::path& path) { return load_panel_csv(path, infer_schema(path)); }

std::string panel_csv_string(const PanelDataset& d, const std::vector<std::string>& comments) {
  std::ostringstream out;
  for (const auto& c : comments) out << "# " << c << '\n';
  const auto header = wide_header(d.schema);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  const int K = d.horizon();
  const auto T = d.schema.time_varying.size();
  for (const auto& s : d.subjects) {
    out << s.id;
    for (double v : s.baseline) out << ',' << format_double(v);
    for (int k = 0; k <= K; ++k) {
      if (s.at_risk(k)) {
        const auto& p = s.periods[k];
        for (double v : p.covariates) out << ',' << format_double(v);
        out << ',' << p.treatment << ',' << p.censored;
      } else {
        const std::size_t blanks = (k > 0 ? T : 0) + 2;
        for (std::size_t i = 0; i < blanks; ++i) out << ',';
      }
    }
    out << ',' << (s.outcome ? format_double(*s.outcome) : std::string());
    out << '\n';
  }
  return out.str();
}

void write_panel_csv(const PanelDataset& d, const std::filesystem::path& path,
                     const std::vector<std::string>& comments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorKind::io, "cannot write " + path.string());
  out << panel_csv_string(d, comments);
}

PanelSchema load_schema_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorKind::io, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    PanelSchema s;
    s.baseline = j.at("baseline").get<std::vector<std::string>>();
    s.time_varying = j.value("time_varying", std::vector<std::string>{});
    s.binary = j.value("binary", std::vector<std::string>{});
    s.horizon = j.at("horizon").get<int>();
    if (s.horizon < 0) throw DataError(DataErrorKind::malformed_value, "negative horizon");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataErrorKind::malformed_value, std::string("schema: ") + e.what());
  }
}

void save_schema_json(const PanelSchema& schema, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["baseline"] = schema.baseline;
  j["time_varying"] = schema.time_varying;
  j["binary"] = schema.binary;
  j["horizon"] = schema.horizon;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorKind::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

PanelDataset locf_impute(const PanelDataset& d, const std::vector<std::string>& covariates) {
  PanelDataset out = d;
  const int K = d.horizon();
  for (const auto& name : covariates) {
    const auto t = d.schema.time_varying_index(name);
    if (!t) throw DataError(DataErrorKind::unknown_covariate, name);
    const auto b = d.schema.baseline_index(name);
    const bool binary = d.schema.is_binary(name);

    auto cell = [&](SubjectRecord& s, int k) -> double* {
      if (k == 0) return b ? &s.baseline[*b] : nullptr;
      if (!s.at_risk(k)) return nullptr;
      return &s.periods[k].covariates[*t];
    };

    std::vector<double> previous(out.subjects.size(), kMissing);
    for (int k = 0; k <= K; ++k) {
      double sum = 0.0;
      std::size_t count = 0;
      for (auto& s : out.subjects) {
        if (const double* v = cell(s, k); v && !is_missing(*v)) {
          sum += *v;
          ++count;
        }
      }
      const double fallback = binary || count == 0 ? 0.0 : sum / static_cast<double>(count);
      for (std::size_t i = 0; i < out.subjects.size(); ++i) {
        double* v = cell(out.subjects[i], k);
        if (!v) continue;
        if (is_missing(*v)) *v = is_missing(previous[i]) ? fallback : previous[i];
        previous[i] = *v;
      }
    }
  }
  return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n, std::array<double, 3> fractions,
                                                      std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw DataError(DataErrorKind::invalid_fractions, "fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError(DataErrorKind::invalid_fractions, "fractions must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int p = 0; p < 3; ++p) {
    const double exact = fractions[p] * static_cast<double>(n);
    sizes[p] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[p] = exact - static_cast<double>(sizes[p]);
    assigned += sizes[p];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int i = 0; assigned < n; i = (i + 1) % 3) {
    if (fractions[order[i]] > 0.0) {
      ++sizes[order[i]];
      ++assigned;
    }
  }

  const auto perm = shuffled_indices(n, seed);
  std::array<std::vector<std::size_t>, 3> parts;
  std::size_t pos = 0;
  for (int p = 0; p < 3; ++p) {
    parts[p].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                    perm.begin() + static_cast<std::ptrdiff_t>(pos + sizes[p]));
    std::sort(parts[p].begin(), parts[p].end());
    pos += sizes[p];
  }
  return parts;
}

PanelDataset subset(const PanelDataset& d, std::span<const std::size_t> indices) {
  PanelDataset out;
  out.schema = d.schema;
  out.subjects.reserve(indices.size());
  for (auto i : indices) out.subjects.push_back(d.subjects.at(i));
  return out;
}

std::array<PanelDataset, 3> split_dataset(const PanelDataset& d, std::array<double, 3> fractions,
                                          std::uint64_t seed) {
  const auto parts = split_indices(d.size(), fractions, seed);
  return {subset(d, parts[0]), subset(d, parts[1]), subset(d, parts[2])};
}

PanelDataset truncate_horizon(const PanelDataset& d, int k, const std::string& interim_outcome) {
  const int K = d.horizon();
  if (k < 0 || k > K) throw DataError(DataErrorKind::schema_mismatch, "horizon prefix out of range");
  if (k == K) return d;
  const auto t = d.schema.time_varying_index(interim_outcome);
  if (!t) throw DataError(DataErrorKind::unknown_covariate, interim_outcome);
  PanelDataset out;
  out.schema = d.schema;
  out.schema.horizon = k;
  out.subjects.reserve(d.size());
  for (const auto& s : d.subjects) {
    SubjectRecord r;
    r.id = s.id;
    r.baseline = s.baseline;
    const auto keep = std::min<std::size_t>(s.periods.size(), static_cast<std::size_t>(k + 1));
    r.periods.assign(s.periods.begin(), s.periods.begin() + static_cast<std::ptrdiff_t>(keep));
    if (s.uncensored_through(k)) {
      const double y = s.periods[k + 1].covariates[*t];
      if (is_missing(y)) {
        throw DataError(DataErrorKind::malformed_value, "subject " + s.id + " has a missing interim outcome");
      }
      r.outcome = y;
    }
    out.subjects.push_back(std::move(r));
  }
  return out;
}

}  // namespace sdld
