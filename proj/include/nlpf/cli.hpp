#pragma once
// Experiment harness: a JSON config in, TSV tables and a manifest out.
//
// Physical parameters (p, d, tau, L) have no defaults.  Every table row
// carries module / operation / anchor columns; numbers are printed with 17
// significant digits so identical runs give identical bytes.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <json.hpp>

#include "nlpf/diagnostics.hpp"
#include "nlpf/geometry1d.hpp"
#include "nlpf/lattice.hpp"
#include "nlpf/optimizer.hpp"
#include "nlpf/slicing.hpp"

namespace nlpf {

inline constexpr const char* tool_version = "0.1.0";

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"constants", "stripe-scan", "slice-check", "lattice-check",
                                          "compare",   "anneal",      "curvature",   "gamma-check"};
  return k;
}

struct ExperimentConfig {
  std::string kind;
  bool has_kernel = false;
  double p = 0, tau = 0;
  int d = 0;
  std::optional<double> L;
  std::uint64_t seed = 0;
  int threads = 1;
  bool strict_p = false;
  nlohmann::json params = nlohmann::json::object();

  KernelSpec kernel() const {
    if (!has_kernel) throw ConfigError("experiment '" + kind + "' needs a kernel block with p, d, tau");
    return KernelSpec::make(p, d, tau, strict_p);
  }
  double period() const {
    if (!L) throw ConfigError("experiment '" + kind + "' needs the period L");
    return *L;
  }
};

namespace detail {

inline void only_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
T need(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("missing '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

template <class T>
T want(const nlohmann::json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? need<T>(j, key, where) : fallback;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::need;
  detail::only_keys(j, {"experiment", "units", "kernel", "L", "seed", "threads", "strict_p", "params"}, "config");
  ExperimentConfig c;
  c.kind = need<std::string>(j, "experiment", "config");
  if (std::find(experiment_kinds().begin(), experiment_kinds().end(), c.kind) == experiment_kinds().end())
    throw ConfigError("unknown experiment '" + c.kind + "'");
  if (need<std::string>(j, "units", "config") != "nondimensional")
    throw ConfigError("units must be 'nondimensional'");
  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    detail::only_keys(k, {"p", "d", "tau"}, "kernel");
    c.has_kernel = true;
    c.p = need<double>(k, "p", "kernel");
    c.d = need<int>(k, "d", "kernel");
    c.tau = need<double>(k, "tau", "kernel");
  }
  if (j.contains("L")) {
    c.L = need<double>(j, "L", "config");
    if (!(*c.L > 0) || !std::isfinite(*c.L)) throw ConfigError("L must be positive");
  }
  c.seed = need<std::uint64_t>(j, "seed", "config");
  c.threads = detail::want<int>(j, "threads", 1, "config");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  c.strict_p = detail::want<bool>(j, "strict_p", false, "config");
  if (j.contains("params")) {
    c.params = j.at("params");
    if (!c.params.is_object()) throw ConfigError("params must be an object");
  }
  if (c.has_kernel) (void)c.kernel();
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["experiment"] = c.kind;
  j["units"] = "nondimensional";
  if (c.has_kernel) j["kernel"] = {{"p", c.p}, {"d", c.d}, {"tau", c.tau}};
  if (c.L) j["L"] = *c.L;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["strict_p"] = c.strict_p;
  j["params"] = c.params;
  return j;
}

// ---- tables

inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string text() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += '\t';
        out += cells[i];
      }
      out += '\n';
    };
    line(columns);
    for (const auto& r : rows) line(r);
    return out;
  }
};

// module, operation, anchor, label, param, value, stderr, reference, flagged
struct ResultTable : Table {
  explicit ResultTable(std::string n) {
    name = std::move(n);
    columns = {"module", "operation", "anchor", "label", "param", "value", "stderr", "reference", "flagged"};
  }
  void add(const std::string& module, const std::string& op, const std::string& anchor, const std::string& label,
           double param, double value, double err = 0, std::optional<double> ref = std::nullopt, bool flagged = false) {
    rows.push_back({module, op, anchor, label, fmt(param), fmt(value), fmt(err), ref ? fmt(*ref) : "", flagged ? "1" : "0"});
  }
};

struct RunOutput {
  std::vector<Table> tables;
  std::vector<std::pair<std::string, VoxelSet>> fields;  // file name, field
  bool flagged = false;
};

namespace detail {

inline std::vector<double> vec_of(const nlohmann::json& j, const char* key, const std::string& where) {
  return need<std::vector<double>>(j, key, where);
}

inline SliceQuadrature quadrature_from(const nlohmann::json& j, const ExperimentConfig& c, const std::string& where) {
  only_keys(j, {"n_dirs", "n_offsets", "mode", "reach", "tolerance"}, where);
  SliceQuadrature q;
  q.n_dirs = need<int>(j, "n_dirs", where);
  q.n_offsets = want<int>(j, "n_offsets", 1, where);
  const auto mode = want<std::string>(j, "mode", "stratified", where);
  if (mode == "stratified") q.mode = SliceQuadrature::Mode::stratified;
  else if (mode == "low-discrepancy") q.mode = SliceQuadrature::Mode::low_discrepancy;
  else throw ConfigError("quadrature mode must be stratified or low-discrepancy");
  q.reach = want<double>(j, "reach", q.reach, where);
  q.tolerance = want<double>(j, "tolerance", 0.0, where);
  q.seed = c.seed;
  q.threads = c.threads;
  q.validate();
  return q;
}

inline AnalyticShape shape_from(const nlohmann::json& j, const ExperimentConfig& c) {
  try {
    AnalyticShape s = shape_from_json(j);
    if (c.has_kernel && s.d != c.d) throw ConfigError("shape and kernel dimensions differ");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad shape document: ") + e.what());
  }
}

inline LatticeMode lattice_mode(const nlohmann::json& p, double& J, const std::string& where) {
  const auto m = want<std::string>(p, "mode", "tau", where);
  if (m == "tau") return LatticeMode::tau;
  if (m != "tilde") throw ConfigError("mode must be tau or tilde");
  J = need<double>(p, "J", where);
  return LatticeMode::tilde;
}

// half-period of a stripe shape whose 1D energy is a reference value
inline std::optional<double> stripe_half_period(const AnalyticShape& s) {
  if (const auto* st = std::get_if<shapes::Stripes>(&s.node)) return st->half_period;
  return std::nullopt;
}

// ---- experiments

inline double quad_surface_constant(int d) {
  if (d == 1) return 2.0;
  using boost::math::quadrature::gauss_kronrod;
  const double I = gauss_kronrod<double, 61>::integrate(
      [d](double f) { return std::abs(std::cos(f)) * std::pow(std::sin(f), d - 2); }, 0.0, std::numbers::pi, 15, 1e-14);
  return sphere_area(d - 2) * I;
}

inline double quad_critical_constant(double p, int d) {
  using boost::math::quadrature::gauss_kronrod;
  boost::math::quadrature::exp_sinh<double> es;
  const double inner = gauss_kronrod<double, 61>::integrate([d](double r) { return std::pow(r, d); }, 0.0, 1.0, 15, 1e-14);
  const double outer =
      es.integrate([&](double r) { return std::pow(r, d - p); }, 1.0, std::numeric_limits<double>::infinity());
  return quad_surface_constant(d) * (inner + outer);
}

inline RunOutput run_constants(const ExperimentConfig& c) {
  const std::string w = "params";
  only_keys(c.params, {"pairs"}, w);
  const auto pairs = need<std::vector<std::pair<double, int>>>(c.params, "pairs", w);
  if (pairs.empty()) throw ConfigError("pairs must not be empty");
  for (const auto& [p, d] : pairs) (void)KernelSpec::make(p, d, 0, c.strict_p);
  ResultTable t("constants");
  std::set<int> dims;
  for (const auto& [p, d] : pairs) {
    const double closed = critical_constant(p, d), quad = quad_critical_constant(p, d);
    t.add("kernel", "critical_constant", "critical-constant", "p=" + fmt(p) + " d=" + std::to_string(d), p, closed,
          std::abs(quad / closed - 1), quad, std::abs(quad / closed - 1) > 1e-8);
    dims.insert(d);
  }
  for (int d : dims) {
    const double closed = surface_constant(d), quad = quad_surface_constant(d);
    t.add("kernel", "surface_constant", "surface-constant", "d=" + std::to_string(d), d, closed, std::abs(quad - closed),
          quad, std::abs(quad - closed) > 1e-10);
  }
  RunOutput out;
  out.tables.push_back(t);
  return out;
}

inline RunOutput run_stripe_scan(const ExperimentConfig& c) {
  const std::string w = "params";
  only_keys(c.params, {"h_min", "fit_h_lo", "fit_h_hi", "fit_points"}, w);
  const auto k = c.kernel();
  const double L = c.period();
  const double h_min = want<double>(c.params, "h_min", 0.0, w);
  const double lo = want<double>(c.params, "fit_h_lo", std::max(20 * k.cutoff, 1e-3), w);
  const double hi = want<double>(c.params, "fit_h_hi", 16.0, w);
  const int n = want<int>(c.params, "fit_points", 24, w);
  if (!(hi > lo) || n < 3) throw ConfigError("fit window needs fit_h_hi > fit_h_lo and at least 3 points");

  const auto opt = optimal_half_period(L, k, h_min);
  ResultTable scan("stripe_scan");
  for (std::size_t i = 0; i < opt.scan_h.size(); ++i) {
    const bool is_min = !opt.trivial && opt.scan_h[i] == opt.h_L;
    scan.add("geometry1d", "stripe_energy", "stripe-energy", "k=" + fmt(std::round(L / (2 * opt.scan_h[i]))),
             opt.scan_h[i], opt.scan_energy[i], 0, std::nullopt, is_min);
  }
  // unimodal: strictly down to the minimum, strictly up after it
  const auto& E = opt.scan_energy;
  const std::size_t im = std::min_element(E.begin(), E.end()) - E.begin();
  bool unimodal = true;
  for (std::size_t i = 1; i < E.size(); ++i)
    if ((i <= im && !(E[i] < E[i - 1])) || (i > im && !(E[i] > E[i - 1]))) unimodal = false;
  const bool beats = (im == 0 || E[im] < E[im - 1]) && (im + 1 == E.size() || E[im] < E[im + 1]);

  std::vector<double> hs;
  for (int i = 0; i < n; ++i) hs.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
  const auto fit = fit_stripe_model(k, hs);

  ResultTable sum("stripe_summary");
  sum.add("geometry1d", "optimal_half_period", "optimal-half-period", "h_L", L, opt.h_L, 0, std::nullopt, opt.trivial);
  sum.add("geometry1d", "optimal_half_period", "optimal-half-period", "energy_L", L, opt.energy);
  sum.add("geometry1d", "optimal_half_period", "optimal-half-period", "h_free", L, opt.h_free);
  sum.add("geometry1d", "optimal_half_period", "optimal-half-period", "energy_free", L, opt.energy_free);
  sum.add("geometry1d", "optimal_half_period", "optimal-half-period", "unimodal", L, unimodal, 0, std::nullopt, !unimodal);
  sum.add("geometry1d", "optimal_half_period", "optimal-half-period", "beats_neighbors", L, beats, 0, std::nullopt, !beats);
  sum.add("geometry1d", "optimal_half_period", "optimal-half-period", "increasing_beyond", L, opt.increasing_beyond, 0,
          std::nullopt, !opt.increasing_beyond);
  sum.add("geometry1d", "fit_stripe_model", "stripe-model-fit", "a", lo, fit.a);
  sum.add("geometry1d", "fit_stripe_model", "stripe-model-fit", "b", hi, fit.b);
  sum.add("geometry1d", "fit_stripe_model", "stripe-model-fit", "max_rel_residual", n, fit.max_rel_residual);
  RunOutput out;
  out.tables = {scan, sum};
  return out;
}

inline RunOutput run_slice_check(const ExperimentConfig& c) {
  const std::string w = "params";
  only_keys(c.params, {"shape", "window", "quadrature", "f0bar_levels", "perimeter"}, w);
  const auto k = c.kernel();
  const auto s = shape_from(need<nlohmann::json>(c.params, "shape", w), c);
  Window win;
  if (c.params.contains("window")) {
    const auto& wj = c.params.at("window");
    only_keys(wj, {"lo", "hi"}, "window");
    win.lo = pad(vec_of(wj, "lo", "window"), s.d);
    win.hi = pad(vec_of(wj, "hi", "window"), s.d);
  } else if (!s.periodic) {
    throw ConfigError("a non-periodic shape needs a window");
  }
  const auto q = quadrature_from(need<nlohmann::json>(c.params, "quadrature", w), c, "quadrature");
  ResultTable t("slice_check");
  RunOutput out;
  const auto r = energy_by_slicing(s, win, k, q);
  std::optional<double> ref;
  if (auto h = stripe_half_period(s)) ref = stripe_energy(*h, k);
  const bool off = ref && std::abs(r.value - *ref) > 3 * r.stderr_;
  t.add("slicing", "energy_by_slicing", "slicing-energy", "energy", static_cast<double>(r.samples), r.value, r.stderr_,
        ref, r.flagged || off);
  if (want<bool>(c.params, "perimeter", true, w)) {
    const auto pc = perimeter_crofton(s, win, q);
    t.add("slicing", "perimeter_crofton", "crofton", "perimeter", static_cast<double>(r.samples), pc.value, pc.stderr_);
  }
  const int levels = want<int>(c.params, "f0bar_levels", -1, w);
  if (levels >= 0) {
    const auto f = f0bar(s, win, k.p, q, F0Route::directions, levels);
    for (const auto& l : f.trace)
      t.add("slicing", "f0bar", "f0bar", "level", l.n_offsets, l.value, l.stderr_, l.median, f.divergent);
    t.add("slicing", "f0bar", "f0bar", "growth_slope", levels, f.growth_slope, 0, std::nullopt, f.divergent);
    out.flagged |= f.divergent;
  }
  out.flagged |= r.flagged || off;
  out.tables.push_back(t);
  return out;
}

inline RunOutput run_lattice_check(const ExperimentConfig& c) {
  const std::string w = "params";
  only_keys(c.params, {"shape", "grids", "mode", "J"}, w);
  const auto k = c.kernel();
  const double L = c.period();
  const auto s = shape_from(need<nlohmann::json>(c.params, "shape", w), c);
  const auto grids = need<std::vector<int>>(c.params, "grids", w);
  if (grids.empty()) throw ConfigError("grids must not be empty");
  for (int N : grids)
    if (N < 2) throw ConfigError("grid sizes must be >= 2");
  double J = 0;
  const auto mode = lattice_mode(c.params, J, w);
  std::optional<double> ref;
  if (auto h = stripe_half_period(s); h && mode == LatticeMode::tau) ref = stripe_energy(*h, k);
  ResultTable t("lattice_check");
  double prev_err = NAN;
  for (int N : grids) {
    const auto v = rasterize(s, N, L);
    const auto r = lattice_energy(v, k, mode, J);
    t.add("lattice", "lattice_energy", "lattice-energy", "energy", N, r.value, r.bound, ref);
    t.add("lattice", "lattice_perimeter", "lattice-energy", "perimeter", N, lattice_perimeter(v) / std::pow(L, s.d));
    if (ref) {
      const double err = std::abs(r.value - *ref);
      t.add("lattice", "lattice_energy", "lattice-energy", "abs_error", N, err);
      if (std::isfinite(prev_err)) t.add("lattice", "lattice_energy", "lattice-energy", "error_ratio", N, prev_err / err);
      prev_err = err;
    }
  }
  RunOutput out;
  out.tables.push_back(t);
  return out;
}

inline std::vector<CandidateSpec> candidates_from(const nlohmann::json& j, int d) {
  if (!j.is_array() || j.empty()) throw ConfigError("candidates must be a non-empty list");
  std::vector<CandidateSpec> out;
  try {
    for (const auto& cj : j) out.push_back(candidate_from_json(cj, d));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad candidate: ") + e.what());
  }
  return out;
}

inline RunOutput run_compare(const ExperimentConfig& c) {
  const std::string w = "params";
  only_keys(c.params, {"N", "candidates", "mode", "J"}, w);
  const auto k = c.kernel();
  const double L = c.period();
  const int N = need<int>(c.params, "N", w);
  double J = 0;
  const auto mode = lattice_mode(c.params, J, w);
  const auto specs = candidates_from(need<nlohmann::json>(c.params, "candidates", w), k.d);
  for (const auto& sp : specs) (void)make_candidate(sp, N, L);  // validate all before computing
  const auto rows = compare_candidates(specs, k, N, L, mode, J);
  ResultTable t("compare");
  RunOutput out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    t.add("optimizer", "compare_candidates", "candidate-ranking", rows[i].label, static_cast<double>(i + 1),
          rows[i].value, rows[i].bound, std::nullopt, rows[i].flagged);
    out.flagged |= rows[i].flagged;
  }
  out.tables.push_back(t);
  return out;
}

inline AnnealSchedule schedule_from(const nlohmann::json& j, std::uint64_t seed) {
  const std::string w = "schedule";
  only_keys(j, {"T0", "target_acceptance", "cooling", "sweeps_per_temp", "mix_single", "mix_block", "mix_shift",
                "T_min", "stall_sweeps", "max_sweeps", "stripedness_coeff"},
            w);
  AnnealSchedule s;
  s.T0 = want<double>(j, "T0", s.T0, w);
  s.target_acceptance = want<double>(j, "target_acceptance", s.target_acceptance, w);
  s.cooling = want<double>(j, "cooling", s.cooling, w);
  s.sweeps_per_temp = want<int>(j, "sweeps_per_temp", s.sweeps_per_temp, w);
  s.mix_single = want<double>(j, "mix_single", s.mix_single, w);
  s.mix_block = want<double>(j, "mix_block", s.mix_block, w);
  s.mix_shift = want<double>(j, "mix_shift", s.mix_shift, w);
  s.T_min = want<double>(j, "T_min", s.T_min, w);
  s.stall_sweeps = want<int>(j, "stall_sweeps", s.stall_sweeps, w);
  s.max_sweeps = want<int>(j, "max_sweeps", s.max_sweeps, w);
  s.stripedness_coeff = want<int>(j, "stripedness_coeff", s.stripedness_coeff, w);
  s.seed = seed;
  s.validate();
  return s;
}

inline RunOutput run_anneal(const ExperimentConfig& c) {
  const std::string w = "params";
  only_keys(c.params, {"N", "chains", "fraction", "schedule", "write_fields"}, w);
  const auto k = c.kernel();
  const double L = c.period();
  if (k.d != 2) throw ConfigError("annealing supports d = 2");
  const int N = need<int>(c.params, "N", w);
  const int chains = need<int>(c.params, "chains", w);
  if (chains < 1) throw ConfigError("chains must be >= 1");
  const double fraction = want<double>(c.params, "fraction", 0.5, w);
  const auto s = schedule_from(want<nlohmann::json>(c.params, "schedule", nlohmann::json::object(), w), c.seed);
  std::vector<VoxelSet> inits;
  for (int i = 0; i < chains; ++i) {
    CandidateSpec r;
    r.kind = CandidateKind::random;
    r.fraction = fraction;
    r.seed = mix_seed(c.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i + 1)));
    inits.push_back(make_candidate(r, N, L));
  }
  const auto res = anneal_chains(inits, k, s, c.threads);

  ResultTable sum("anneal_summary");
  Table trace{"anneal_trace",
              {"module", "operation", "anchor", "chain", "sweep", "temperature", "energy", "best", "stripedness",
               "acceptance"},
              {}};
  RunOutput out;
  int improved = 0;
  for (int i = 0; i < chains; ++i) {
    const auto& r = res[i];
    const std::string lab = "chain=" + std::to_string(i);
    const double s0 = r.trace.front().stripedness, s1 = r.trace.back().stripedness;
    improved += s1 > s0;
    sum.add("optimizer", "anneal", "annealing", lab + " initial_energy", i, r.trace.front().energy);
    sum.add("optimizer", "anneal", "annealing", lab + " final_energy", i, r.trace.back().energy);
    sum.add("optimizer", "anneal", "annealing", lab + " best_energy", i, r.trace.back().best);
    sum.add("optimizer", "anneal", "annealing", lab + " initial_stripedness", i, s0);
    sum.add("optimizer", "anneal", "annealing", lab + " final_stripedness", i, s1, 0, std::nullopt, !(s1 > s0));
    sum.add("optimizer", "anneal", "annealing", lab + " T0", i, r.T0);
    sum.add("optimizer", "anneal", "annealing", lab + " sweeps", i, r.trace.back().sweep);
    sum.add("optimizer", "anneal", "annealing", lab + " audit_error", i, r.audit_error);
    for (const auto& row : r.trace)
      trace.rows.push_back({"optimizer", "anneal", "annealing", std::to_string(i), std::to_string(row.sweep),
                            fmt(row.temperature), fmt(row.energy), fmt(row.best), fmt(row.stripedness),
                            fmt(row.acceptance)});
    if (want<bool>(c.params, "write_fields", true, w)) out.fields.emplace_back("chain_" + std::to_string(i) + ".nlpf", r.final_);
  }
  sum.add("optimizer", "anneal", "annealing", "chains_with_higher_stripedness", chains, improved);
  out.tables = {sum, trace};
  return out;
}

inline RunOutput run_curvature(const ExperimentConfig& c) {
  const std::string w = "params";
  only_keys(c.params, {"shape", "probes", "eps0", "levels", "e_dirs", "delta"}, w);
  const auto k = c.kernel();
  const auto s = shape_from(need<nlohmann::json>(c.params, "shape", w), c);
  const double eps0 = need<double>(c.params, "eps0", w);
  const int levels = want<int>(c.params, "levels", 4, w);
  const int e_dirs = want<int>(c.params, "e_dirs", 0, w);
  const double delta = want<double>(c.params, "delta", 0.0, w);
  if (!(eps0 > 0) || levels < 0) throw ConfigError("eps0 must be positive and levels >= 0");
  const auto probes = need<nlohmann::json>(c.params, "probes", w);
  if (!probes.is_array() || probes.empty()) throw ConfigError("probes must be a non-empty list");
  const Boundary b(s);
  std::vector<BoundaryProbe> pr;
  for (const auto& pj : probes) {
    only_keys(pj, {"x", "r"}, "probe");
    const double r = need<double>(pj, "r", "probe");
    if (!(r > 0)) throw ConfigError("probe radius must be positive");
    pr.push_back(probe_at(s, pad(vec_of(pj, "x", "probe"), s.d), r));
  }
  ResultTable t("curvature");
  RunOutput out;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    const std::string lab = "probe=" + std::to_string(i);
    const auto ex = excess(b, pr[i]);
    t.add("diagnostics", "excess", "spherical-excess", lab, pr[i].r, ex.value, 0, std::nullopt, ex.flagged);
    const auto tr = curvature_refinement(b, pr[i], k.p, eps0, levels);
    for (std::size_t l = 0; l < tr.eps.size(); ++l)
      t.add("diagnostics", "nonlocal_curvature", "nonlocal-curvature", lab, tr.eps[l], tr.value[l]);
    const char* g = tr.growth == Growth::convergent ? "convergent" : tr.growth == Growth::logarithmic ? "logarithmic" : "power";
    t.add("diagnostics", "curvature_refinement", "nonlocal-curvature", lab + " " + g, tr.max_change, tr.rate, 0,
          tr.growth == Growth::logarithmic ? tr.r2_log : tr.r2_power, tr.growth != Growth::convergent);
    out.flagged |= tr.growth != Growth::convergent;
    if (e_dirs > 0) {
      SliceQuadrature q;
      q.n_dirs = e_dirs;
      q.seed = mix_seed(c.seed + i);
      const auto e = e_density(b, pr[i], k.p, s.d, q);
      t.add("diagnostics", "e_density", "direction-energy", lab, e_dirs, e.value, e.stderr_);
      if (delta > 0) {
        const auto et = e_density(b, pr[i], k.p, s.d, q, Truncation{k.tau, delta});
        t.add("diagnostics", "e_density_truncated", "direction-energy", lab, delta, et.value, et.stderr_);
      }
    }
  }
  out.tables.push_back(t);
  return out;
}

inline PeriodicProfile1D random_profile(std::uint64_t seed, int n, double L, double min_gap) {
  Rng g = stream(seed, 0x6a);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::vector<double> x(n);
    for (auto& v : x) v = L * uniform01(g);
    std::sort(x.begin(), x.end());
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      const double gap = (i + 1 < n ? x[i + 1] : x[0] + L) - x[i];
      ok = gap >= min_gap;
    }
    if (ok) return PeriodicProfile1D::make(L, x, true);
  }
  throw ConfigError("could not place interfaces with the requested minimum gap");
}

inline RunOutput run_gamma_check(const ExperimentConfig& c) {
  const std::string w = "params";
  only_keys(c.params, {"taus", "profiles", "random"}, w);
  const auto k = c.kernel();
  const auto taus = need<std::vector<double>>(c.params, "taus", w);
  if (taus.empty()) throw ConfigError("taus must not be empty");
  for (double t : taus)
    if (!(t > 0)) throw ConfigError("taus must be positive");
  std::vector<PeriodicProfile1D> profs;
  if (c.params.contains("profiles"))
    for (const auto& pj : c.params.at("profiles")) {
      only_keys(pj, {"L", "points", "phase"}, "profile");
      profs.push_back(PeriodicProfile1D::make(need<double>(pj, "L", "profile"), vec_of(pj, "points", "profile"),
                                              want<bool>(pj, "phase", true, "profile")));
    }
  if (c.params.contains("random")) {
    const auto& rj = c.params.at("random");
    only_keys(rj, {"count", "interfaces", "L", "min_gap"}, "random");
    const int count = need<int>(rj, "count", "random"), n = need<int>(rj, "interfaces", "random");
    if (count < 1 || n < 2 || n % 2) throw ConfigError("random profiles need count >= 1 and an even interface count");
    for (int i = 0; i < count; ++i)
      profs.push_back(random_profile(mix_seed(c.seed + i), n, need<double>(rj, "L", "random"),
                                     need<double>(rj, "min_gap", "random")));
  }
  if (profs.empty()) throw ConfigError("gamma-check needs profiles or random");
  ResultTable t("gamma_check");
  RunOutput out;
  bool all_monotone = true;
  double worst_last = 0;
  const auto k0 = KernelSpec::make(k.p, k.d, 0);
  for (std::size_t pi = 0; pi < profs.size(); ++pi)
    for (std::size_t i = 0; i < profs[pi].size(); ++i) {
      const double r0 = interface_charge(profs[pi], i, k0, ChargeMode::zero).value;
      double prev = INFINITY;
      for (double tau : taus) {
        const double gap = std::abs(interface_charge(profs[pi], i, k.with_tau(tau), ChargeMode::tau).value - r0);
        const bool bad = gap > prev;
        all_monotone &= !bad;
        t.add("geometry1d", "interface_charge", "gamma-convergence",
              "profile=" + std::to_string(pi) + " interface=" + std::to_string(i), tau, gap, 0, r0, bad);
        prev = gap;
      }
      worst_last = std::max(worst_last, prev);
    }
  t.add("geometry1d", "interface_charge", "gamma-convergence", "monotone", taus.back(), all_monotone, 0, std::nullopt,
        !all_monotone);
  t.add("geometry1d", "interface_charge", "gamma-convergence", "max_gap_at_smallest_tau", taus.back(), worst_last);
  out.flagged = !all_monotone;
  out.tables.push_back(t);
  return out;
}

}  // namespace detail

struct RunSummary {
  std::vector<std::string> files;
  bool flagged = false;
  double seconds = 0;
};

// Validates, runs, and writes <out>/<table>.tsv, voxel fields and manifest.json.
inline RunSummary run_experiment(const ExperimentConfig& c, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  RunOutput r;
  if (c.kind == "constants") r = detail::run_constants(c);
  else if (c.kind == "stripe-scan") r = detail::run_stripe_scan(c);
  else if (c.kind == "slice-check") r = detail::run_slice_check(c);
  else if (c.kind == "lattice-check") r = detail::run_lattice_check(c);
  else if (c.kind == "compare") r = detail::run_compare(c);
  else if (c.kind == "anneal") r = detail::run_anneal(c);
  else if (c.kind == "curvature") r = detail::run_curvature(c);
  else if (c.kind == "gamma-check") r = detail::run_gamma_check(c);
  else throw ConfigError("unknown experiment '" + c.kind + "'");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw ConfigError("cannot create output directory " + out_dir);
  RunSummary sum;
  sum.flagged = r.flagged;
  for (const auto& t : r.tables) {
    const std::string name = t.name + ".tsv";
    std::ofstream os(fs::path(out_dir) / name, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + name);
    os << t.text();
    sum.files.push_back(name);
  }
  for (const auto& [name, v] : r.fields) {
    write_voxels(v, (fs::path(out_dir) / name).string(), name);
    sum.files.push_back(name);
  }
  sum.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json m;
  m["tool"] = "nlpf";
  m["version"] = tool_version;
  m["config"] = to_json(c);
  m["seed"] = c.seed;
  m["threads"] = c.threads;
  m["wall_seconds"] = sum.seconds;
  m["files"] = sum.files;
  m["flagged"] = sum.flagged;
  std::ofstream ms(fs::path(out_dir) / "manifest.json");
  ms << m.dump(2) << "\n";
  return sum;
}

inline void error_record(const std::string& kind, const std::string& msg) {
  std::cerr << nlohmann::json{{"status", "error"}, {"kind", kind}, {"message", msg}}.dump() << std::endl;
}

// Exit codes: 0 success, 2 configuration error, 3 audit or internal failure.
inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"nlpf: nonlocal pattern-formation experiments"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool strict = false;
  for (const auto& k : experiment_kinds()) {
    auto* sub = app.add_subcommand(k, "run the " + k + " experiment");
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "override the master seed");
    sub->add_option("--threads", threads, "worker cap")->check(CLI::PositiveNumber);
    sub->add_flag("--strict-p", strict, "require p >= d+3");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_record("config", e.what());
    return 2;
  }
  const std::string kind = app.get_subcommands().front()->get_name();
  ExperimentConfig cfg;
  try {
    std::ifstream is(config_path);
    if (!is) throw ConfigError("cannot read config " + config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.contains("experiment") && j.is_object()) j["experiment"] = kind;
    cfg = config_from_json(j);
    if (cfg.kind != kind) throw ConfigError("config is for '" + cfg.kind + "', not '" + kind + "'");
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (strict) cfg.strict_p = true;
    if (cfg.has_kernel) (void)cfg.kernel();
    const auto sum = run_experiment(cfg, out_dir);
    std::cout << nlohmann::json{{"status", "ok"}, {"experiment", kind}, {"files", sum.files}, {"flagged", sum.flagged}}.dump()
              << std::endl;
    return 0;
  } catch (const ConfigError& e) {
    error_record("config", e.what());
    return 2;
  } catch (const AuditError& e) {
    error_record("audit", e.what());
    return 3;
  } catch (const std::exception& e) {
    error_record("internal", e.what());
    return 3;
  }
}

}  // namespace nlpf
