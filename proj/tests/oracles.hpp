#pragma once
// Brute-force references used by the unit and acceptance suites. They share
// only the verified kernel primitives with the library, never its algebra.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "nlpf/geometry1d.hpp"
#include "nlpf/kernel.hpp"

namespace oracle {

using boost::math::quadrature::gauss_kronrod;

// int_lo^hi f, split on the given sorted interior points
template <class F>
double piecewise(F f, double lo, double hi, std::vector<double> cuts, int depth = 8) {
  cuts.push_back(lo);
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());
  double acc = 0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = std::max(lo, cuts[i]), b = std::min(hi, cuts[i + 1]);
    if (b > a) acc += gauss_kronrod<double, 31>::integrate(f, a, b, depth, 1e-12);
  }
  return acc;
}

// Interfaces of the periodic profile in [lo, hi] with their signs
// (+1: entering the set when moving right).
struct Crossing {
  double x;
  int sign;
};

inline std::vector<Crossing> crossings(const nlpf::PeriodicProfile1D& prof, double lo, double hi) {
  std::vector<Crossing> out;
  const long n = static_cast<long>(prof.size());
  const long k0 = static_cast<long>(std::floor(lo / prof.L)) - 1, k1 = static_cast<long>(std::ceil(hi / prof.L)) + 1;
  for (long k = k0; k <= k1; ++k)
    for (long j = 0; j < n; ++j) {
      const double x = prof.boundary[j] + k * prof.L;
      if (x < lo || x > hi) continue;
      const int sg = ((j % 2 == 0) == prof.phase) ? 1 : -1;
      out.push_back({x, sg});
    }
  std::sort(out.begin(), out.end(), [](auto a, auto b) { return a.x < b.x; });
  return out;
}

// r(s) = M - int_{s-}^{s} int_0^inf |chi(u)-chi(u+rho)| Kbar - int_s^{s+} int_{-inf}^0 ...
// with M the symmetric first moment on [-1,1] (tau mode) or on R (tilde mode).
// The inner integral over rho is the exact sum of int Kbar over opposite intervals;
// the outer u-integral is numerical.
inline double charge(const nlpf::PeriodicProfile1D& prof, std::size_t idx, const nlpf::KernelSpec& k, bool tilde,
                     double reach = 3000.0) {
  using namespace nlpf;
  const double s = prof.at(idx, 0), sm = prof.at(idx, -1), sp = prof.at(idx, 1);
  auto X = crossings(prof, s - reach, s + reach);
  auto slope = [&](double x) { return pair_slope(k, x).value(); };
  const bool in_left = prof.contains(0.5 * (sm + s));
  // inner(u) for u in (s-, s): opposite-phase intervals to the right
  auto right_inner = [&](double u) {
    double acc = 0;
    for (const auto& c : X) {
      if (c.x < s) continue;
      // entering the opposite phase adds +int_{x-u}^inf, leaving subtracts
      const bool enters_opposite = (c.sign > 0) != in_left;
      acc += (enters_opposite ? 1.0 : -1.0) * slope(c.x - u);
    }
    return acc;
  };
  auto left_inner = [&](double u) {
    double acc = 0;
    for (const auto& c : X) {
      if (c.x > s) continue;
      // moving left from u in (s, s+) whose phase is !in_left
      const bool enters_opposite = (c.sign < 0) != !in_left;
      acc += (enters_opposite ? 1.0 : -1.0) * slope(u - c.x);
    }
    return acc;
  };
  const double cut = k.cutoff;
  std::vector<double> kr, kl;
  for (const auto& c : X) {
    if (c.x >= s) kr.push_back(c.x - cut);
    if (c.x <= s) kl.push_back(c.x + cut);
  }
  const double Am = piecewise(right_inner, sm, s, kr);
  const double Ap = piecewise(left_inner, s, sp, kl);
  double M;
  auto first = [&](double r) { return r * radial_weight(k, r).value(); };
  if (tilde) {
    M = 2 * (piecewise(first, 0, std::max(1.0, cut), {cut}) + far_moment(KernelSpec::make(k.p, k.d, 0)));
  } else {
    M = 2 * piecewise(first, 0, 1, {cut});
  }
  return M - Am - Ap;
}

// g(t) = int_0^L |chi(s+t) - chi(s)| ds, exactly, for the periodic profile.
inline double overlap(const nlpf::PeriodicProfile1D& prof, double t) {
  // intervals of the set inside one period [0, L)
  const auto X = crossings(prof, -prof.L, 2 * prof.L);
  std::vector<std::pair<double, double>> all;
  for (std::size_t i = 0; i + 1 < X.size(); ++i)
    if (X[i].sign > 0) all.push_back({X[i].x, X[i + 1].x});
  auto measure_in = [&](double a, double b) {  // |E cap (a,b)| on the periodic set
    double acc = 0;
    const long k0 = static_cast<long>(std::floor(a / prof.L)) - 2, k1 = static_cast<long>(std::ceil(b / prof.L)) + 2;
    for (long k = k0; k <= k1; ++k)
      for (auto [x, y] : all) {
        if (x < 0 || x >= prof.L) continue;
        const double lo = std::max(a, x + k * prof.L), hi = std::min(b, y + k * prof.L);
        if (hi > lo) acc += hi - lo;
      }
    return acc;
  };
  // |chi(s+t)-chi(s)| integrated: |E| + |E - t| - 2|E cap (E - t)|
  double vol = 0, inter = 0;
  for (auto [x, y] : all) {
    if (x < 0 || x >= prof.L) continue;
    vol += y - x;
    inter += measure_in(x + t, y + t);
  }
  if (prof.size() == 0) return 0.0;
  return 2 * vol - 2 * inter;
}

// F L = J_tau Per - int_R g(t) Khat(t) dt, with numerical t-integration.
inline double direct_energy(const nlpf::PeriodicProfile1D& prof, const nlpf::KernelSpec& k, double reach = 2000.0) {
  using namespace nlpf;
  if (prof.size() == 0) return 0.0;
  std::vector<double> cuts{k.cutoff};
  for (long kk = 0; kk * prof.L <= reach + prof.L; ++kk)
    for (std::size_t i = 0; i < prof.size(); ++i)
      for (std::size_t j = 0; j < prof.size(); ++j) {
        const double d = prof.boundary[j] - prof.boundary[i] + kk * prof.L;
        if (d > 0 && d < reach) cuts.push_back(d);
      }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  auto f = [&](double t) { return overlap(prof, t) * marginal_1d(k, t).value(); };
  double acc = 0;
  double lo = 0;
  for (double c : cuts) {
    if (c <= lo) continue;
    acc += gauss_kronrod<double, 15>::integrate(f, lo, c, c <= k.cutoff ? 10 : 4, 1e-12);
    lo = c;
  }
  acc += gauss_kronrod<double, 15>::integrate(f, lo, reach, 4, 1e-12);
  // beyond reach only the period average of g matters
  double mean = 0;
  const int M = 64;
  for (int i = 0; i < M; ++i) mean += overlap(prof, (i + 0.5) * prof.L / M);
  mean /= M;
  acc += mean * k.marginal_c * std::pow(reach, k.d - k.p) / (k.p - k.d);
  const double per = static_cast<double>(prof.size());
  return (j_tau(k).value() * per - 2 * acc) / prof.L;
}

inline nlpf::PeriodicProfile1D random_profile(std::mt19937_64& rng, int n, double L, double min_gap) {
  std::uniform_real_distribution<double> U(0, 1);
  for (;;) {
    std::vector<double> gaps(n);
    double tot = 0;
    for (auto& g : gaps) tot += (g = U(rng) + 0.05);
    std::vector<double> pts;
    double x = U(rng) * 0.1 * L;
    bool ok = true;
    for (int i = 0; i < n; ++i) {
      pts.push_back(x);
      const double g = gaps[i] / tot * L;
      if (g < min_gap) ok = false;
      x += g;
    }
    if (!ok || pts.back() >= L) continue;
    return nlpf::PeriodicProfile1D::make(L, pts, U(rng) < 0.5);
  }
}

}  // namespace oracle
