// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "nlpf/cli.hpp"
#include "oracles.hpp"

using namespace nlpf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double x, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

Outcome constants() {
  Outcome o;
  const double j41 = critical_constant(4, 1), j52 = critical_constant(5, 2);
  const double q41 = detail::quad_critical_constant(4, 1), q52 = detail::quad_critical_constant(5, 2);
  const double c2 = surface_constant(2), c3 = surface_constant(3);
  const double qc2 = detail::quad_surface_constant(2), qc3 = detail::quad_surface_constant(3);
  o.pass = std::abs(j41 - 2) < 1e-12 && rel(j52, 10.0 / 3) < 1e-12 && rel(q41, j41) < 1e-8 && rel(q52, j52) < 1e-8 &&
           std::abs(c2 - 4) < 1e-10 && std::abs(c3 - 2 * std::numbers::pi) < 1e-10 && std::abs(qc2 - 4) < 1e-10 &&
           std::abs(qc3 - 2 * std::numbers::pi) < 1e-10;
  o.detail = "J_c(4,1)=" + num(j41, 12) + " J_c(5,2)=" + num(j52, 12) + " quadrature rel " +
             num(std::max(rel(q41, j41), rel(q52, j52)), 3) + "; C_{1,2}=" + num(c2, 12) + " C_{1,3}=" + num(c3, 12);
  return o;
}

Outcome isolated_charge() {
  Outcome o;
  double worst = 0;
  const WindowedProfile1D lone{{0.0}, true};
  for (auto [p, d] : {std::pair{4.0, 1}, {5.0, 2}, {6.0, 3}, {7.5, 2}}) {
    const double r0 = interface_charge(lone, 0, KernelSpec::make(p, d, 0), ChargeMode::zero).value;
    worst = std::max(worst, std::abs(r0 + 2 / (p - d - 1)));
    for (double tau : {0.9, 0.5, 0.1, 0.01})
      worst = std::max(worst, std::abs(interface_charge(lone, 0, KernelSpec::make(p, d, tau), ChargeMode::tau).value - r0));
    // neighbours farther than 1 on both sides: the truncation never acts
    const auto prof = PeriodicProfile1D::make(7.0, {0.0, 1.6, 3.1, 5.2}, true);
    for (std::size_t i = 0; i < prof.size(); ++i) {
      const double z = interface_charge(prof, i, KernelSpec::make(p, d, 0), ChargeMode::zero).value;
      for (double tau : {0.9, 0.5, 0.1, 0.01})
        worst = std::max(worst, std::abs(interface_charge(prof, i, KernelSpec::make(p, d, tau), ChargeMode::tau).value - z));
    }
  }
  const double r41 = interface_charge(lone, 0, KernelSpec::make(4, 1, 0), ChargeMode::zero).value;
  o.pass = worst < 1e-10;
  o.detail = "r0(4,1)=" + num(r41, 15) + ", max deviation over (p,d,tau) " + num(worst, 3);
  return o;
}

Outcome route_equivalence() {
  Outcome o;
  std::mt19937_64 rng(2024);
  double worst = 0;
  const auto k = KernelSpec::make(5, 2, 0.1);
  for (int i = 0; i < 20; ++i) {
    const auto prof = oracle::random_profile(rng, 2 + 2 * (i % 4), 2.0 + 0.5 * (i % 5), 0.05);
    const double a = profile_energy(prof, k, Route::direct), b = profile_energy(prof, k, Route::charges);
    worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(a)));
  }
  SliceQuadrature q;
  q.n_dirs = 100;
  q.n_offsets = 100;
  q.seed = 11;
  const auto sl = energy_by_slicing(periodic(stripes(2, {0, 1}, 1.0), 4.0), {}, k, q);
  const double ref = stripe_energy(1.0, k);
  const bool slice_ok = std::abs(sl.value - ref) <= 3 * sl.stderr_;
  std::vector<double> err;
  for (int N : {64, 128, 256})
    err.push_back(std::abs(lattice_energy(rasterize(periodic(stripes(2, {1, 0}, 1.0), 4.0), N, 4.0), k).value - ref));
  const double r1 = err[0] / err[1], r2 = err[1] / err[2];
  o.pass = worst < 1e-8 && slice_ok && r1 >= 1.5 && r2 >= 1.5;
  o.detail = "direct vs charges max rel " + num(worst, 3) + "; slicing " + num(sl.value) + " +- " + num(sl.stderr_, 3) +
             " vs " + num(ref) + "; lattice errors " + num(err[0], 3) + ", " + num(err[1], 3) + ", " + num(err[2], 3) +
             " (ratios " + num(r1, 3) + ", " + num(r2, 3) + ")";
  return o;
}

Outcome positivity() {
  Outcome o;
  std::mt19937_64 rng(99);
  double lo = INFINITY;
  const double Jc = critical_constant(5, 2);
  for (int i = 0; i < 100; ++i) {
    const auto prof = oracle::random_profile(rng, 2 + 2 * (i % 5), 1.0 + 0.25 * (i % 9), 0.01);
    lo = std::min(lo, tilde_profile_energy(prof, 5, 2, Jc));
  }
  const auto k = KernelSpec::make(5, 2, 0.1);
  std::vector<CandidateSpec> cs(5);
  cs[0].half_period = 1;
  cs[1].half_period = 2;
  cs[2].kind = CandidateKind::checkerboard;
  cs[2].cell = 2;
  cs[3].kind = CandidateKind::droplets;
  cs[3].lattice = "hex";
  cs[3].radius = 0.9;
  cs[3].count = 4;
  cs[4].kind = CandidateKind::random;
  cs[4].seed = 3;
  double vlo = INFINITY;
  for (const auto& c : cs) vlo = std::min(vlo, lattice_energy(make_candidate(c, 64, 8.0), k, LatticeMode::tilde, Jc).value);
  auto empty = VoxelSet::make(2, 64, 8.0);
  const double e0 = lattice_energy(empty, k, LatticeMode::tilde, Jc).value;
  const double e1 = lattice_energy(empty.complement(), k, LatticeMode::tilde, Jc).value;
  const double p0 = tilde_profile_energy(PeriodicProfile1D::make(3.0, {}, true), 5, 2, Jc);
  o.pass = lo >= -1e-9 && lo > 0 && vlo > 0 && e0 == 0 && e1 == 0 && p0 == 0;
  o.detail = "min over 100 profiles " + num(lo, 4) + ", min over 5 voxel candidates " + num(vlo, 4) +
             "; trivial fields " + num(e0) + ", " + num(e1) + ", " + num(p0);
  return o;
}

Outcome stripe_scan() {
  Outcome o;
  const auto k = KernelSpec::make(5, 2, 0.1);
  const auto opt = optimal_half_period(8.0, k);
  const auto& E = opt.scan_energy;
  const std::size_t im = std::min_element(E.begin(), E.end()) - E.begin();
  bool unimodal = true;
  for (std::size_t i = 1; i < E.size(); ++i)
    if ((i <= im && !(E[i] < E[i - 1])) || (i > im && !(E[i] > E[i - 1]))) unimodal = false;
  const bool beats = im > 0 && im + 1 < E.size() && E[im] < E[im - 1] && E[im] < E[im + 1] && opt.scan_h[im] == opt.h_L;
  std::vector<double> hs;
  const double lo = 20 * k.cutoff, hi = 16;
  for (int i = 0; i < 24; ++i) hs.push_back(lo * std::pow(hi / lo, i / 23.0));
  const auto fit = fit_stripe_model(k, hs);
  o.pass = unimodal && beats && fit.max_rel_residual < 1e-4;
  o.detail = "h*_L=" + num(opt.h_L) + " (free " + num(opt.h_free) + "), " + std::to_string(E.size()) +
             " admissible h, unimodal=" + std::to_string(unimodal) + ", fit residual " + num(fit.max_rel_residual, 3) +
             " on [" + num(lo, 4) + ", 16]";
  return o;
}

Outcome symmetry_breaking() {
  Outcome o;
  const double L = 8;
  const int N = 64;
  const auto k = KernelSpec::make(5, 2, 0.1);
  std::vector<VoxelSet> inits;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    CandidateSpec r;
    r.kind = CandidateKind::random;
    r.seed = s;
    inits.push_back(make_candidate(r, N, L));
  }
  AnnealSchedule sch;
  sch.seed = 1;
  const auto res = anneal_chains(inits, k, sch, 1);
  int up = 0;
  double s0 = 0, s1 = 0;
  for (const auto& r : res) {
    up += r.trace.back().stripedness > r.trace.front().stripedness;
    s0 += r.trace.front().stripedness / res.size();
    s1 += r.trace.back().stripedness / res.size();
  }
  const double hL = optimal_half_period(L, k).h_L;
  std::vector<CandidateSpec> cs;
  CandidateSpec st;
  st.half_period = hL;
  st.label = "stripes";
  cs.push_back(st);
  for (auto [lat, r, n] : {std::tuple{"hex", 0.9, 4}, {"hex", 0.6, 4}, {"square", 0.9, 4}, {"square", 0.4, 8}}) {
    CandidateSpec c;
    c.kind = CandidateKind::droplets;
    c.lattice = lat;
    c.radius = r;
    c.count = n;
    cs.push_back(c);
  }
  for (double cell : {1.0, 2.0, 4.0}) {
    CandidateSpec c;
    c.kind = CandidateKind::checkerboard;
    c.cell = cell;
    cs.push_back(c);
  }
  const auto rows = compare_candidates(cs, k, N, L);
  const bool first = rows[0].label == "stripes" && !rows[0].flagged && rows[1].value > rows[0].value;
  o.pass = up >= 9 && first;
  o.detail = std::to_string(up) + "/10 chains raised stripedness (mean " + num(s0, 3) + " -> " + num(s1, 3) +
             "); stripes(h=" + num(hL) + ") " + num(rows[0].value, 4) + ", next " + rows[1].label + " " +
             num(rows[1].value, 4) + ", gap " + num(rows[1].value - rows[0].value, 4);
  return o;
}

Outcome rigidity() {
  Outcome o;
  const auto hs = halfspace(2, {0.3, 1}, 0.2);
  const auto st = stripes(2, {0, 1}, 1.0);
  const double flat = nonlocal_curvature(Boundary(hs), probe_at(hs, {0, 0, 0}, 1), 5, 1e-3) +
                      nonlocal_curvature(Boundary(st), probe_at(st, {0.2, 0.1, 0}, 0.9), 5, 1e-3);
  const auto disk = ball(2, {0, 0}, 1);
  const auto tr = curvature_refinement(Boundary(disk), probe_at(disk, {1, 0, 0}, 0.5), 5, 0.5 / 16, 4);
  SliceQuadrature q;
  q.n_dirs = 64;
  q.n_offsets = 16;
  q.seed = 11;
  const auto sq = f0bar(box(2, {0, 0}, {1, 1}), cube_window(2, -0.25, 1.25), 5, q);
  const auto fs_ = f0bar(periodic(st, 4.0), {}, 5, q);
  bool stable = !fs_.divergent;
  for (const auto& l : fs_.trace)
    stable &= std::abs(l.value - fs_.trace[0].value) <= 3 * std::hypot(l.stderr_, fs_.trace[0].stderr_);
  o.pass = flat == 0 && tr.growth == Growth::logarithmic && tr.r2_log > 0.99 && sq.divergent && stable;
  o.detail = "flat curvature " + num(flat) + "; circle p=5 log slope " + num(tr.rate, 4) + " R2 " + num(tr.r2_log, 6) +
             "; f0bar square slope " + num(sq.growth_slope, 3) + " divergent=" + std::to_string(sq.divergent) +
             ", stripes slope " + num(fs_.growth_slope, 3) + " stable=" + std::to_string(stable);
  return o;
}

Outcome excess_behaviour() {
  Outcome o;
  const auto hs = halfspace(2, {0.6, 0.8}, 0.3);
  double hmax = 0;
  for (double r : {0.05, 0.5, 5.0}) hmax = std::max(hmax, excess(Boundary(hs), probe_at(hs, {0, 0, 0}, r)).value);
  const auto disk = ball(2, {0, 0}, 1);
  auto pr = probe_at(disk, {std::cos(1.0), std::sin(1.0), 0}, 0.4);
  std::vector<double> ratios;
  for (double r : {0.4, 0.2, 0.1}) {
    pr.r = r;
    const double a = excess(Boundary(disk), pr).value;
    pr.r = r / 2;
    ratios.push_back(a / excess(Boundary(disk), pr).value);
  }
  o.pass = hmax == 0;
  for (double x : ratios) o.pass &= x >= 3.6 && x <= 4.4;
  o.detail = "halfspace excess " + num(hmax) + "; circle ratios " + num(ratios[0], 4) + ", " + num(ratios[1], 4) + ", " +
             num(ratios[2], 4);
  return o;
}

Outcome gamma_trace() {
  Outcome o;
  std::mt19937_64 rng(17);
  bool mono = true;
  double last = 0;
  int n = 0;
  for (int rep = 0; rep < 5; ++rep) {
    const auto pr = oracle::random_profile(rng, 6, 4.0 + rep, 0.03);
    for (std::size_t i = 0; i < pr.size(); ++i, ++n) {
      const double r0 = interface_charge(pr, i, KernelSpec::make(5, 2, 0), ChargeMode::zero).value;
      double prev = INFINITY;
      for (double tau : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5}) {
        const double g = std::abs(interface_charge(pr, i, KernelSpec::make(5, 2, tau), ChargeMode::tau).value - r0);
        mono &= g <= prev;
        prev = g;
      }
      last = std::max(last, prev);
    }
  }
  o.pass = mono && last < 1e-6;
  o.detail = std::to_string(n) + " interfaces, monotone=" + std::to_string(mono) + ", max gap at tau=1e-5 " + num(last, 3);
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

Outcome determinism() {
  Outcome o;
  const auto root = fs::temp_directory_path() / "nlpf_acceptance_determinism";
  fs::remove_all(root);
  const auto slice = config_from_json(nlohmann::json::parse(R"({
    "experiment": "slice-check", "units": "nondimensional", "kernel": {"p": 5, "d": 2, "tau": 0.1}, "seed": 5,
    "params": {"shape": {"d": 2, "cell": 4.0, "shape": {"type": "stripes", "normal": [0.6, 0.8], "half_period": 1.0}},
               "quadrature": {"n_dirs": 32, "n_offsets": 32}, "f0bar_levels": 1}})"));
  const auto ann = config_from_json(nlohmann::json::parse(R"({
    "experiment": "anneal", "units": "nondimensional", "kernel": {"p": 5, "d": 2, "tau": 0.1}, "L": 8, "seed": 5,
    "params": {"N": 64, "chains": 4, "schedule": {"max_sweeps": 30}}})"));
  int files = 0;
  bool same = true;
  for (const auto& base : {slice, ann}) {
    std::vector<fs::path> dirs;
    for (int run = 0; run < 2; ++run)
      for (int threads : {1, 2}) {
        auto c = base;
        c.threads = threads;
        dirs.push_back(root / (base.kind + "_" + std::to_string(run) + "_" + std::to_string(threads)));
        run_experiment(c, dirs.back().string());
      }
    for (const auto& e : fs::directory_iterator(dirs[0])) {
      if (e.path().extension() != ".tsv") continue;
      ++files;
      const auto ref = slurp(e.path());
      for (std::size_t i = 1; i < dirs.size(); ++i) same &= slurp(dirs[i] / e.path().filename()) == ref;
    }
  }
  fs::remove_all(root);
  o.pass = same && files >= 3;
  o.detail = std::to_string(files) + " tables compared over 2 runs x 2 thread counts, identical=" + std::to_string(same);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::tuple<int, std::string, double, std::function<Outcome()>>> criteria{
      {1, "constants", 1, constants},
      {2, "isolated-interface charge", 1, isolated_charge},
      {3, "route equivalence", 120, route_equivalence},
      {4, "positivity at criticality", 60, positivity},
      {5, "stripe optimality scan", 30, stripe_scan},
      {6, "symmetry breaking at desk scale", 1200, symmetry_breaking},
      {7, "rigidity mechanism", 300, rigidity},
      {8, "excess behaviour", 60, excess_behaviour},
      {9, "gamma-convergence trace", 10, gamma_trace},
      {10, "determinism", 600, determinism},
  };
  int failed = 0;
  for (const auto& [id, name, budget, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < budget;
    failed += !pass;
    std::printf("criterion %2d %s: %s | %s | %.2f s (budget %g s)\n", id, pass ? "PASS" : "FAIL", name.c_str(),
                o.detail.c_str(), secs, budget);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
