#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "kernel.hpp"
#include "tail.hpp"

namespace nlpf {

// L-periodic subset of R. `phase` says whether the set contains the interval
// just right of boundary[0]; with no boundary it says empty (false) or full.
struct PeriodicProfile1D {
  double L = 1;
  std::vector<double> boundary;
  bool phase = true;

  static PeriodicProfile1D make(double L, std::vector<double> pts, bool phase) {
    if (!(L > 0) || !std::isfinite(L)) throw ConfigError("profile period must be positive");
    if (pts.size() % 2) throw ConfigError("periodic profile needs an even number of interfaces");
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!(pts[i] >= 0 && pts[i] < L)) throw ConfigError("interface outside [0,L)");
      if (i && !(pts[i] > pts[i - 1])) throw ConfigError("interfaces must be strictly increasing");
    }
    if (pts.size() >= 2 && !(L - pts.back() + pts.front() > 0))
      throw ConfigError("wrap-around gap must be positive");
    return {L, std::move(pts), phase};
  }

  std::size_t size() const { return boundary.size(); }

  // position of interface idx+m, unwrapped across periods
  double at(std::size_t idx, long m) const {
    const long n = static_cast<long>(boundary.size());
    const long q = static_cast<long>(idx) + m;
    long r = q % n;
    long k = q / n;
    if (r < 0) {
      r += n;
      --k;
    }
    return boundary[r] + k * L;
  }

  double min_gap() const {
    double g = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < size(); ++i) g = std::min(g, at(i, 1) - at(i, 0));
    return g;
  }

  PeriodicProfile1D complement() const { return {L, boundary, !phase}; }

  bool contains(double x) const {
    if (boundary.empty()) return phase;
    x -= std::floor(x / L) * L;
    const auto it = std::upper_bound(boundary.begin(), boundary.end(), x);
    const std::size_t crossed = it - boundary.begin();
    // before boundary[0] we are in the last interval, same as after an even count
    const bool right_of_first = crossed % 2 == 1;
    return right_of_first ? phase : !phase;
  }
};

// Finitely many interfaces on the line; `phase` is membership just right of boundary[0].
struct WindowedProfile1D {
  std::vector<double> boundary;
  bool phase = true;
};

enum class ChargeMode { tau, zero, tilde };

struct Charge {
  double value = 0;
  bool degenerate = false;  // a gap fell below the configured floor
};

namespace detail {

struct ChargeKernel {
  KernelSpec k;
  double self;  // -2 * int_1^inf rho Kbar, or 0 in tilde mode
};

inline ChargeKernel charge_kernel(const KernelSpec& s, ChargeMode mode) {
  switch (mode) {
    case ChargeMode::tau: return {s, -2.0 * far_moment(s)};
    case ChargeMode::zero: {
      const KernelSpec z = s.with_tau(0.0);
      return {z, -2.0 * far_moment(z)};
    }
    case ChargeMode::tilde: return {KernelSpec::unit(s.p, s.d), 0.0};
  }
  return {s, 0.0};
}

inline double P(const KernelSpec& k, double x) {
  return pair_potential(k, x).value_or(std::numeric_limits<double>::max());
}

// Charge of interface idx in the profile scaled by lambda.
inline double periodic_charge(const ChargeKernel& ck, const PeriodicProfile1D& prof, std::size_t idx,
                              double lambda = 1.0) {
  const KernelSpec& k = ck.k;
  const long n = static_cast<long>(prof.size());
  const double s = prof.at(idx, 0);
  auto rel = [&](long m) { return lambda * (prof.at(idx, m) - s); };
  const double gm = -rel(-1), gp = rel(1);
  const double period = lambda * prof.L;
  const long K = std::max<long>(8, static_cast<long>(std::ceil(k.cutoff / period)) + 1);

  double right = 0, left = 0;
  for (long m = 1; m <= K * n; ++m) {
    const double sg = (m % 2) ? -1.0 : 1.0;
    const double xr = rel(m), xl = -rel(-m);
    right += sg * (P(k, xr) - P(k, xr + gm));
    left += sg * (P(k, xl) - P(k, xl + gp));
  }
  // images beyond K periods follow the exact power law
  const double c2 = 1.0 / ((k.p - k.d) * (k.p - k.d - 1));
  std::vector<double> ar, br, al, bl;
  for (long j = 1; j <= n; ++j) {
    const double sg = (j % 2) ? -c2 : c2;
    ar.push_back(sg), br.push_back(rel(j));
    ar.push_back(-sg), br.push_back(rel(j) + gm);
    al.push_back(sg), bl.push_back(-rel(-j));
    al.push_back(-sg), bl.push_back(-rel(-j) + gp);
  }
  right += power_tail(ar, br, period, k.alpha(), K);
  left += power_tail(al, bl, period, k.alpha(), K);
  return ck.self + P(k, gm) + P(k, gp) - right - left;
}

inline double windowed_charge(const ChargeKernel& ck, const std::vector<double>& b, std::size_t i) {
  const KernelSpec& k = ck.k;
  const double inf = std::numeric_limits<double>::infinity();
  const double s = b[i];
  const double gm = i > 0 ? s - b[i - 1] : inf;
  const double gp = i + 1 < b.size() ? b[i + 1] - s : inf;
  auto Pi = [&](double x) { return std::isinf(x) ? 0.0 : P(k, x); };
  double right = 0, left = 0;
  for (std::size_t m = 1; i + m < b.size(); ++m) {
    const double sg = (m % 2) ? -1.0 : 1.0;
    const double x = b[i + m] - s;
    right += sg * (Pi(x) - Pi(x + gm));
  }
  for (std::size_t m = 1; m <= i; ++m) {
    const double sg = (m % 2) ? -1.0 : 1.0;
    const double x = s - b[i - m];
    left += sg * (Pi(x) - Pi(x + gp));
  }
  return ck.self + Pi(gm) + Pi(gp) - right - left;
}

// Sum of charges over one period of the profile scaled by lambda.
inline double period_charge_sum(const ChargeKernel& ck, const PeriodicProfile1D& prof, double lambda) {
  double acc = 0;
  for (std::size_t i = 0; i < prof.size(); ++i) acc += periodic_charge(ck, prof, i, lambda);
  return acc;
}

// Angles in (0, pi/2) where a scaled pair distance meets the cutoff.
inline std::vector<double> kink_angles(const PeriodicProfile1D& prof, double cutoff) {
  std::vector<double> out;
  if (cutoff <= 0) return out;
  const long n = static_cast<long>(prof.size());
  for (long i = 0; i < n; ++i)
    for (long m = 1;; ++m) {
      const double D = prof.at(i, m) - prof.at(i, 0);
      if (D >= cutoff) break;
      out.push_back(std::acos(D / cutoff));
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// |S^{d-2}|/L * int_0^{pi/2} cos g sin^{d-2} g R(1/cos g) dg
inline double angular_average(const ChargeKernel& ck, const PeriodicProfile1D& prof, int d) {
  auto f = [&](double g) {
    const double c = std::cos(g);
    if (c <= 0) return 0.0;
    return c * std::pow(std::sin(g), d - 2) * period_charge_sum(ck, prof, 1.0 / c);
  };
  std::vector<double> cuts{0.0};
  for (double a : kink_angles(prof, ck.k.cutoff))
    if (a > 0 && a < std::numbers::pi / 2) cuts.push_back(a);
  cuts.push_back(std::numbers::pi / 2);
  double acc = 0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    acc += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, cuts[i], cuts[i + 1], 10, 1e-12);
  return sphere_area(d - 2) / prof.L * acc;
}

}  // namespace detail

inline Charge interface_charge(const PeriodicProfile1D& prof, std::size_t idx, const KernelSpec& spec,
                               ChargeMode mode, double gap_floor = 0.0) {
  if (idx >= prof.size()) throw std::out_of_range("interface index");
  Charge c;
  c.value = detail::periodic_charge(detail::charge_kernel(spec, mode), prof, idx);
  c.degenerate = prof.min_gap() < gap_floor;
  return c;
}

inline Charge interface_charge(const WindowedProfile1D& prof, std::size_t idx, const KernelSpec& spec,
                               ChargeMode mode, double gap_floor = 0.0) {
  if (idx >= prof.boundary.size()) throw std::out_of_range("interface index");
  Charge c;
  c.value = detail::windowed_charge(detail::charge_kernel(spec, mode), prof.boundary, idx);
  const auto& b = prof.boundary;
  if (idx > 0 && b[idx] - b[idx - 1] < gap_floor) c.degenerate = true;
  if (idx + 1 < b.size() && b[idx + 1] - b[idx] < gap_floor) c.degenerate = true;
  return c;
}

//! P(delta-) + P(delta+) - 2 int_1^inf rho Kbar.
inline double charge_lower_bound(const PeriodicProfile1D& prof, std::size_t idx, const KernelSpec& spec) {
  if (idx >= prof.size()) throw std::out_of_range("interface index");
  const double gm = prof.at(idx, 0) - prof.at(idx, -1);
  const double gp = prof.at(idx, 1) - prof.at(idx, 0);
  return detail::P(spec, gm) + detail::P(spec, gp) - 2.0 * far_moment(spec);
}

enum class Route { direct, charges };

// Energy per unit volume of the stripe set profile x R^{d-1}.
inline double profile_energy(const PeriodicProfile1D& prof, const KernelSpec& spec, Route route,
                             ChargeMode mode = ChargeMode::tau) {
  if (prof.size() == 0) return 0.0;
  const auto ck = detail::charge_kernel(spec, mode);
  if (route == Route::charges) {
    if (spec.d == 1) return detail::period_charge_sum(ck, prof, 1.0) / prof.L;
    return detail::angular_average(ck, prof, spec.d);
  }
  const KernelSpec& k = ck.k;
  const long n = static_cast<long>(prof.size());
  const double L = prof.L;
  const double C = surface_constant(k.d);
  const long K = std::max<long>(9, static_cast<long>(std::ceil(k.cutoff / L)) + 2);
  auto Psi = [&](double t) { return marginal_potential(k, t).value_or(std::numeric_limits<double>::max()); };
  const double cfar = k.marginal_c / ((k.p - k.d) * (k.p - k.d - 1));
  double S = 0;
  for (long i = 0; i < n; ++i) {
    const double si = prof.boundary[i];
    double acc = 0;
    for (long kk = -(K - 1); kk <= K - 1; ++kk)
      for (long j = 0; j < n; ++j) {
        if (kk == 0 && j == i) continue;
        const double sg = ((i + j) % 2) ? -1.0 : 1.0;
        acc += sg * Psi(std::abs(prof.boundary[j] + kk * L - si));
      }
    std::vector<double> a, bp, bm;
    for (long j = 0; j < n; ++j) {
      a.push_back((((i + j) % 2) ? -1.0 : 1.0) * cfar);
      bp.push_back(prof.boundary[j] - si);
      bm.push_back(si - prof.boundary[j]);
    }
    acc += power_tail(a, bp, L, k.alpha(), K) + power_tail(a, bm, L, k.alpha(), K);
    S += acc;
  }
  // the self term J Per - int |t| Khat reduces to -C * int_1^inf rho Kbar per interface
  const double self = mode == ChargeMode::tilde ? 0.0 : -C * far_moment(k);
  return (n * self - 2.0 * S) / L;
}

//! (J - J_c) Per / L plus the summed tilde charges.
inline double tilde_profile_energy(const PeriodicProfile1D& prof, double p, int d, double J,
                                   Route route = Route::direct) {
  const KernelSpec k = KernelSpec::unit(p, d);
  const double perim = static_cast<double>(prof.size()) / prof.L;
  return (J - critical_constant(p, d)) * perim + profile_energy(prof, k, route, ChargeMode::tilde);
}

inline PeriodicProfile1D stripe_profile(double h) { return PeriodicProfile1D::make(2 * h, {0.0, h}, true); }

inline double stripe_energy(double h, const KernelSpec& spec) {
  if (!(h > 0)) throw ConfigError("half-period must be positive");
  return profile_energy(stripe_profile(h), spec, Route::direct);
}

struct StripeFit {
  double a = 0, b = 0;
  double max_rel_residual = 0;
};

//! Least squares of a/h + b h^{-(p-d)} against stripe_energy, rows weighted by 1/|F|.
inline StripeFit fit_stripe_model(const KernelSpec& spec, const std::vector<double>& hs) {
  double m11 = 0, m12 = 0, m22 = 0, r1 = 0, r2 = 0;
  std::vector<double> F;
  for (double h : hs) {
    const double f = stripe_energy(h, spec);
    F.push_back(f);
    const double w = 1.0 / std::abs(f);
    const double x1 = w / h, x2 = w * std::pow(h, -(spec.p - spec.d)), y = w * f;
    m11 += x1 * x1, m12 += x1 * x2, m22 += x2 * x2, r1 += x1 * y, r2 += x2 * y;
  }
  StripeFit fit;
  const double det = m11 * m22 - m12 * m12;
  fit.a = (r1 * m22 - r2 * m12) / det;
  fit.b = (m11 * r2 - m12 * r1) / det;
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const double model = fit.a / hs[i] + fit.b * std::pow(hs[i], -(spec.p - spec.d));
    fit.max_rel_residual = std::max(fit.max_rel_residual, std::abs(model - F[i]) / std::abs(F[i]));
  }
  return fit;
}

struct OptimalPeriod {
  double h_L = 0;  // best admissible half-period L/(2k); 0 when the trivial profile wins
  long k = 0;
  double energy = 0;
  double h_free = 0;  // unconstrained minimizer
  double energy_free = 0;
  bool trivial = false;
  bool increasing_beyond = true;  // sampled energies strictly increase for h > h_free
  std::vector<double> scan_h, scan_energy;  // admissible grid, ascending h
};

inline OptimalPeriod optimal_half_period(double L, const KernelSpec& spec, double h_min = 0) {
  if (!(L > 0)) throw ConfigError("L must be positive");
  if (h_min <= 0) h_min = std::max(0.5 * spec.cutoff, 1e-3);
  OptimalPeriod out;
  const long kmax = std::max<long>(1, static_cast<long>(std::floor(L / (2 * h_min))));
  out.energy = 0;
  out.trivial = true;
  for (long k = kmax; k >= 1; --k) {
    const double h = L / (2.0 * k);
    const double e = stripe_energy(h, spec);
    out.scan_h.push_back(h);
    out.scan_energy.push_back(e);
    if (e < out.energy) {
      out.energy = e;
      out.k = k;
      out.h_L = h;
      out.trivial = false;
    }
  }
  // unconstrained: coarse log scan then golden section
  auto E = [&](double h) { return stripe_energy(h, spec); };
  const double lo0 = h_min, hi0 = std::max(64.0, 4 * L);
  const int M = 200;
  int best = 0;
  std::vector<double> grid(M + 1), val(M + 1);
  for (int i = 0; i <= M; ++i) {
    grid[i] = lo0 * std::pow(hi0 / lo0, static_cast<double>(i) / M);
    val[i] = E(grid[i]);
    if (val[i] < val[best]) best = i;
  }
  double a = grid[std::max(0, best - 1)], b = grid[std::min(M, best + 1)];
  const double gr = 0.5 * (std::sqrt(5.0) - 1);
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = E(x1), f2 = E(x2);
  for (int it = 0; it < 200 && (b - a) > 1e-12 * b; ++it) {
    if (f1 < f2) {
      b = x2, x2 = x1, f2 = f1;
      x1 = b - gr * (b - a), f1 = E(x1);
    } else {
      a = x1, x1 = x2, f1 = f2;
      x2 = a + gr * (b - a), f2 = E(x2);
    }
  }
  out.h_free = 0.5 * (a + b);
  out.energy_free = E(out.h_free);
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.scan_h.size(); ++i) {
    if (out.scan_h[i] <= out.h_free) continue;
    if (!(out.scan_energy[i] > prev)) out.increasing_beyond = false;
    prev = out.scan_energy[i];
  }
  return out;
}

// Line-oriented text: header, period, phase, then one interface per line.
inline std::string format_profile(const PeriodicProfile1D& prof) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "nlpf-profile 1\n";
  os << "L " << prof.L << "\n";
  os << "phase " << (prof.phase ? 1 : 0) << "\n";
  for (double x : prof.boundary) os << x << "\n";
  return os.str();
}

inline PeriodicProfile1D parse_profile(const std::string& text) {
  std::istringstream is(text);
  std::string tag;
  int version = 0, phase = 0;
  double L = 0;
  if (!(is >> tag >> version) || tag != "nlpf-profile" || version != 1)
    throw ConfigError("profile: bad header");
  if (!(is >> tag >> L) || tag != "L") throw ConfigError("profile: missing period");
  if (!(is >> tag >> phase) || tag != "phase") throw ConfigError("profile: missing phase");
  std::vector<double> pts;
  double x;
  while (is >> x) pts.push_back(x);
  if (!is.eof()) throw ConfigError("profile: malformed interface list");
  return PeriodicProfile1D::make(L, std::move(pts), phase != 0);
}

} // namespace nlpf
