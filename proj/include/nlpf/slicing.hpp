#pragma once
// Integral-geometric estimators: averages over lines (theta, x_perp) of
// one-dimensional slice quantities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <thread>
#include <vector>

#include "nlpf/geometry1d.hpp"
#include "nlpf/report.hpp"
#include "nlpf/rng.hpp"
#include "nlpf/shape.hpp"

namespace nlpf {

struct SliceQuadrature {
  enum class Mode { stratified, low_discrepancy };
  int n_dirs = 64;
  int n_offsets = 64;
  Mode mode = Mode::stratified;
  std::uint64_t seed = 1;
  double reach = 40;      // interactions along a line are followed this far past the counted range
  int threads = 1;
  int retries = 3;        // jitter attempts on a tangent line before it is skipped
  double tolerance = 0;   // stderr above this flags the report; 0 disables

  void validate() const {
    if (n_dirs < 1 || n_offsets < 1) throw ConfigError("slice quadrature needs at least one direction and offset");
    if (!(reach >= 0)) throw ConfigError("reach must be >= 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

// Bounded observation box; ignored for periodic shapes, which use their cell.
struct Window {
  Vec lo{0, 0, 0}, hi{0, 0, 0};
};

inline Window cube_window(int d, double lo, double hi) {
  Window w;
  for (int i = 0; i < d; ++i) w.lo[i] = lo, w.hi[i] = hi;
  return w;
}

struct Estimate {
  double value = 0;
  double stderr_ = 0;
  double median = 0;  // median over directions of the per-direction means
};

namespace detail {

// Area-preserving map from [0,1)^2 to S^{d-1}.
inline Vec sphere_point(int d, double u0, double u1) {
  if (d == 1) return {u0 < 0.5 ? 1.0 : -1.0, 0, 0};
  const double phi = 2 * std::numbers::pi * u0;
  if (d == 2) return {std::cos(phi), std::sin(phi), 0};
  const double z = 1 - 2 * u1, r = std::sqrt(std::max(0.0, 1 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

inline Vec cross(const Vec& a, const Vec& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

// orthonormal basis of u^perp (d - 1 vectors used)
inline std::array<Vec, 2> perp_basis(const Vec& u, int d) {
  if (d == 2) return {Vec{-u[1], u[0], 0}, Vec{0, 0, 0}};
  if (d == 1) return {Vec{0, 0, 0}, Vec{0, 0, 0}};
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(u[i]) < std::abs(u[k])) k = i;
  Vec e{0, 0, 0};
  e[k] = 1;
  const Vec a = unit(cross(u, e));
  return {a, cross(u, a)};
}

inline double ball_volume(int k, double r) {
  if (k == 0) return 1.0;
  return std::pow(std::numbers::pi, 0.5 * k) / std::tgamma(0.5 * k + 1) * std::pow(r, k);
}

// Lines are o + t u. Interfaces with t in [c0, c1) are counted; the slice is
// taken over [c0 - reach, c1 + reach].
struct LineSample {
  Vec o, u;
  double c0, c1;
};

struct Domain {
  const AnalyticShape* shape;
  int d;
  bool torus;
  double L;     // cell length (torus)
  double ell;   // counted segment length (torus)
  Window w;
  Vec center;
  double rho;   // circumradius of the window
  double reach;

  Domain(const AnalyticShape& s, const Window& win, double reach_) : shape(&s), d(s.d), torus(s.periodic), L(s.L), w(win), reach(reach_) {
    ell = L;
    center = {0, 0, 0};
    double r2 = 0;
    if (!torus) {
      for (int i = 0; i < d; ++i) {
        if (!(w.hi[i] > w.lo[i])) throw ConfigError("window must have hi > lo on every axis");
        center[i] = 0.5 * (w.lo[i] + w.hi[i]);
        r2 += 0.25 * (w.hi[i] - w.lo[i]) * (w.hi[i] - w.lo[i]);
      }
    }
    rho = std::sqrt(r2);
  }

  double volume() const {
    if (torus) return std::pow(L, d);
    double v = 1;
    for (int i = 0; i < d; ++i) v *= w.hi[i] - w.lo[i];
    return v;
  }

  double diameter() const { return torus ? L * std::sqrt(static_cast<double>(d)) : 2 * rho; }

  // counted range of a line through the window
  bool clip(LineSample& ls) const {
    double a = -std::numeric_limits<double>::infinity(), b = std::numeric_limits<double>::infinity();
    for (int i = 0; i < d; ++i) {
      if (std::abs(ls.u[i]) < 1e-15) {
        if (!(ls.o[i] >= w.lo[i] && ls.o[i] < w.hi[i])) return false;
        continue;
      }
      double l = (w.lo[i] - ls.o[i]) / ls.u[i], h = (w.hi[i] - ls.o[i]) / ls.u[i];
      if (l > h) std::swap(l, h);
      a = std::max(a, l);
      b = std::min(b, h);
    }
    if (!(b > a)) return false;
    ls.c0 = a;
    ls.c1 = b;
    return true;
  }
};

struct SlotResult {
  double mean = 0;
  std::uint64_t skipped = 0;
};

// Evaluates f(slice, line) with tangency jitter; nullopt when the line is skipped.
template <class F>
std::optional<double> eval_line(const Domain& dom, LineSample ls, F& f, Rng& rng, int retries, bool clipped) {
  const auto perp = perp_basis(ls.u, dom.d);
  for (int attempt = 0; attempt <= retries; ++attempt) {
    if (!clipped && !dom.torus && !dom.clip(ls)) return 0.0;
    const auto sl = line_slice(*dom.shape, ls.o, ls.u, ls.c0 - dom.reach, ls.c1 + dom.reach);
    if (!sl.tangent) return f(sl, ls);
    const double j = 1e-9 * dom.diameter();
    for (int k = 0; k + 1 < dom.d; ++k) ls.o = axpy(j * (uniform01(rng) - 0.5), perp[k], ls.o);
    if (dom.d == 1) ls.o[0] += j * (uniform01(rng) - 0.5);
    clipped = false;
  }
  return std::nullopt;
}

// Runs slot(i) for i < n over the configured threads; slot results land in
// index order so the reduction is independent of the thread count.
template <class Slot>
std::vector<SlotResult> run_slots(int n, int threads, Slot slot) {
  std::vector<SlotResult> out(n);
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) out[i] = slot(i);
    return out;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) out[i] = slot(i);
    });
  for (auto& th : pool) th.join();
  return out;
}

inline double median_of(const std::vector<SlotResult>& res) {
  std::vector<double> m;
  for (const auto& r : res) m.push_back(r.mean);
  std::sort(m.begin(), m.end());
  const std::size_t n = m.size();
  return n % 2 ? m[n / 2] : 0.5 * (m[n / 2 - 1] + m[n / 2]);
}

inline double frac(double x) { return x - std::floor(x); }

// Offsets for sample j of a slot: stratified first coordinate with a slot
// shift xi, additive-recurrence remaining coordinates.  Refinement levels
// reuse xi and the slot direction.
inline std::array<double, 3> offset_point(int j, int n, const std::array<double, 3>& xi) {
  static constexpr double g[3] = {0.0, 0.7548776662466927, 0.5698402909980532};
  return {(j + xi[0]) / n, frac(xi[1] + j * g[1]), frac(xi[2] + j * g[2])};
}

inline Vec slot_direction(int d, int i, int n, SliceQuadrature::Mode mode, Rng& rng, std::uint64_t seed) {
  if (mode == SliceQuadrature::Mode::stratified) {
    const double a = (i + uniform01(rng)) / n;
    return sphere_point(d, a, uniform01(rng));
  }
  // shifted Kronecker sequence, one shift per run
  Rng g = stream(seed, 0x5eedULL);
  const double s0 = uniform01(g), s1 = uniform01(g);
  return sphere_point(d, frac(s0 + i * 0.7548776662466927), frac(s1 + i * 0.5698402909980532));
}

inline LineSample start_line(const Domain& dom, const Vec& u, const std::array<double, 3>& v) {
  LineSample ls{{0, 0, 0}, u, 0, 0};
  if (dom.torus) {
    for (int i = 0; i < dom.d; ++i) ls.o[i] = dom.L * v[i];
    ls.c1 = dom.ell;
    return ls;
  }
  ls.o = dom.center;
  const auto perp = perp_basis(u, dom.d);
  if (dom.d == 2) {
    ls.o = axpy(dom.rho * (2 * v[0] - 1), perp[0], ls.o);
  } else if (dom.d == 3) {
    const double r = dom.rho * std::sqrt(v[0]), phi = 2 * std::numbers::pi * v[1];
    ls.o = axpy(r * std::cos(phi), perp[0], axpy(r * std::sin(phi), perp[1], ls.o));
  }
  return ls;
}

// measure of the offset set per direction, times the torus length factor
inline double offset_weight(const Domain& dom) {
  if (dom.torus) return std::pow(dom.L, dom.d) / dom.ell;
  return ball_volume(dom.d - 1, dom.rho);
}

// mean over directions of per-direction averages; stderr across directions
template <class F>
Estimate line_average(const Domain& dom, const SliceQuadrature& q, int n_off, F f, std::uint64_t* skipped = nullptr) {
  auto res = run_slots(q.n_dirs, q.threads, [&](int i) {
    Rng rng = stream(q.seed, static_cast<std::uint64_t>(i));
    const Vec u = slot_direction(dom.d, i, q.n_dirs, q.mode, rng, q.seed);
    const std::array<double, 3> xi{uniform01(rng), uniform01(rng), uniform01(rng)};
    Rng jitter = stream(q.seed, static_cast<std::uint64_t>(i), 1);
    SlotResult r;
    double acc = 0;
    for (int j = 0; j < n_off; ++j) {
      auto val = eval_line(dom, start_line(dom, u, offset_point(j, n_off, xi)), f, jitter, q.retries, false);
      if (val) acc += *val;
      else ++r.skipped;
    }
    r.mean = acc / n_off;
    return r;
  });
  Estimate e;
  std::uint64_t sk = 0;
  for (const auto& r : res) e.value += r.mean, sk += r.skipped;
  const int n = q.n_dirs;
  e.value /= n;
  double ss = 0;
  for (const auto& r : res) ss += (r.mean - e.value) * (r.mean - e.value);
  e.stderr_ = n > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
  e.median = median_of(res);
  if (skipped) *skipped = sk;
  return e;
}

inline bool counted(const LineSample& ls, double t) { return t >= ls.c0 && t < ls.c1; }

}  // namespace detail

// Energy per unit volume: 1/2 |S^{d-1}| E[sum of interface charges per unit of offset measure] / |window|.
inline EnergyReport energy_by_slicing(const AnalyticShape& shape, const Window& window, const KernelSpec& spec,
                                      const SliceQuadrature& q, ChargeMode mode = ChargeMode::tau) {
  q.validate();
  if (shape.d != spec.d) throw ConfigError("shape and kernel dimensions differ");
  const detail::Domain dom(shape, window, q.reach);
  const auto ck = detail::charge_kernel(spec, mode);
  auto f = [&](const LineSlice& sl, const detail::LineSample& ls) {
    double acc = 0;
    for (std::size_t i = 0; i < sl.boundary.size(); ++i)
      if (detail::counted(ls, sl.boundary[i])) acc += detail::windowed_charge(ck, sl.boundary, i);
    return acc;
  };
  std::uint64_t skipped = 0;
  const Estimate e = detail::line_average(dom, q, q.n_offsets, f, &skipped);
  const double scale = 0.5 * sphere_area(shape.d - 1) * detail::offset_weight(dom) / dom.volume();
  EnergyReport r;
  r.route = "slicing";
  r.value = scale * e.value;
  r.stderr_ = scale * e.stderr_;
  r.samples = static_cast<std::uint64_t>(q.n_dirs) * q.n_offsets;
  r.seed = q.seed;
  r.skipped = skipped;
  r.flagged = q.tolerance > 0 && r.stderr_ > q.tolerance;
  if (r.flagged) r.note = "stderr above tolerance";
  return r;
}

// Per(E; window) = |S^{d-1}| E[crossings] * offset measure / C_{1,d}.
inline Estimate perimeter_crofton(const AnalyticShape& shape, const Window& window, const SliceQuadrature& q) {
  q.validate();
  const detail::Domain dom(shape, window, 0.0);
  auto f = [&](const LineSlice& sl, const detail::LineSample& ls) {
    double n = 0;
    for (double t : sl.boundary) n += detail::counted(ls, t);
    return n;
  };
  Estimate e = detail::line_average(dom, q, q.n_offsets, f);
  const double scale = sphere_area(shape.d - 1) * detail::offset_weight(dom) / surface_constant(shape.d);
  return {scale * e.value, scale * e.stderr_};
}

enum class F0Route { directions, two_plane };

struct F0Level {
  int n_offsets;
  double value, stderr_;
  double median;  // robust per-direction level used for the growth test
};

struct F0barResult {
  double value = 0;
  double stderr_ = 0;
  bool divergent = false;
  double growth_slope = 0;  // d log(median) / d log(offset count) over the trace
  std::vector<F0Level> trace;
};

namespace detail {

// sum over counted interfaces of |s - s+|^{-alpha}, s+ the next crossing along the line
inline double forward_gap_sum(const LineSlice& sl, const LineSample& ls, double alpha) {
  double acc = 0;
  for (std::size_t i = 0; i + 1 < sl.boundary.size(); ++i)
    if (counted(ls, sl.boundary[i])) acc += std::pow(sl.boundary[i + 1] - sl.boundary[i], -alpha);
  return acc;
}

inline Vec gaussian_vec(int d, Rng& g) {
  Vec v{0, 0, 0};
  for (int i = 0; i < d; ++i) {
    const double u1 = 1.0 - uniform01(g), u2 = uniform01(g);
    v[i] = std::sqrt(-2 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
  }
  return v;
}

// Two-plane route: planes drawn from the rotation-invariant law, lines inside
// each plane over a stratified circle of directions.
inline Estimate two_plane_average(const Domain& dom, const SliceQuadrature& q, int n_off, double alpha) {
  constexpr int inner = 8;
  const int d = dom.d;
  auto res = run_slots(q.n_dirs, q.threads, [&](int i) {
    Rng rng = stream(q.seed, static_cast<std::uint64_t>(i), 7);
    Vec e1{1, 0, 0}, e2{0, 1, 0};
    if (d == 3) {
      e1 = unit(gaussian_vec(d, rng));
      Vec g = gaussian_vec(d, rng);
      const double c = dot(g, e1);
      e2 = unit(axpy(-c, e1, g));
    }
    const Vec n = d == 3 ? cross(e1, e2) : Vec{0, 0, 0};
    const std::array<double, 3> xi{uniform01(rng), uniform01(rng), uniform01(rng)};
    const double phase = uniform01(rng);
    Rng jitter = stream(q.seed, static_cast<std::uint64_t>(i), 8);
    auto f = [&](const LineSlice& sl, const LineSample& ls) { return forward_gap_sum(sl, ls, alpha); };
    SlotResult r;
    double acc = 0;
    for (int j = 0; j < n_off; ++j) {
      const auto v = offset_point(j, n_off, xi);
      double in_plane = 0;
      for (int k = 0; k < inner; ++k) {
        const double phi = 2 * std::numbers::pi * (k + phase) / inner;
        const Vec u = axpy(std::cos(phi), e1, axpy(std::sin(phi), e2, Vec{0, 0, 0}));
        LineSample ls{{0, 0, 0}, u, 0, 0};
        if (dom.torus) {
          for (int a = 0; a < d; ++a) ls.o[a] = dom.L * v[a];
          ls.c1 = dom.ell;
        } else {
          const Vec w = axpy(-std::sin(phi), e1, axpy(std::cos(phi), e2, Vec{0, 0, 0}));
          ls.o = axpy(dom.rho * (2 * v[0] - 1), w, dom.center);
          if (d == 3) ls.o = axpy(dom.rho * (2 * v[1] - 1), n, ls.o);
        }
        auto val = eval_line(dom, ls, f, jitter, q.retries, false);
        if (val) in_plane += *val;
        else ++r.skipped;
      }
      acc += in_plane / inner;
    }
    r.mean = acc / n_off;
    return r;
  });
  Estimate e;
  for (const auto& r : res) e.value += r.mean;
  e.value /= q.n_dirs;
  double ss = 0;
  for (const auto& r : res) ss += (r.mean - e.value) * (r.mean - e.value);
  e.stderr_ = q.n_dirs > 1 ? std::sqrt(ss / (q.n_dirs - 1) / q.n_dirs) : 0.0;
  e.median = median_of(res);
  return e;
}

}  // namespace detail

// F0bar(E, window) with the offset grid refined `levels` times by doubling.
// A trace whose log-log growth slope reaches 1/2, or which passes the
// ceiling, is reported divergent.  The slope uses the median over directions:
// near a corner the per-line values have no finite mean, so the plain average
// jumps around while the median grows like the grid resolution.  ceiling <= 0 selects 1e6 times the
// scale |window| diam^{-(p-d)}.
inline F0barResult f0bar(const AnalyticShape& shape, const Window& window, double p, const SliceQuadrature& q,
                         F0Route route = F0Route::directions, int levels = 4, double ceiling = 0) {
  q.validate();
  const int d = shape.d;
  if (!(p > d + 1)) throw ConfigError("p must exceed d+1");
  if (route == F0Route::two_plane && d < 2) throw ConfigError("two-plane route needs d >= 2");
  if (levels < 0) throw ConfigError("refinement levels must be >= 0");
  const detail::Domain dom(shape, window, q.reach);
  const double alpha = p - d - 1;
  if (ceiling <= 0) ceiling = 1e6 * dom.volume() * std::pow(dom.diameter(), -(p - d));
  // two-plane offsets cover a square of side 2 rho in theta^perp
  const double weight = (route == F0Route::two_plane && !dom.torus)
                            ? std::pow(2 * dom.rho, d - 1)
                            : detail::offset_weight(dom);
  const double scale = sphere_area(d - 1) * weight;
  F0barResult out;
  for (int k = 0; k <= levels; ++k) {
    const int n = q.n_offsets << k;
    Estimate e;
    if (route == F0Route::directions) {
      e = detail::line_average(dom, q, n, [&](const LineSlice& sl, const detail::LineSample& ls) {
        return detail::forward_gap_sum(sl, ls, alpha);
      });
    } else {
      e = detail::two_plane_average(dom, q, n, alpha);
    }
    out.trace.push_back({n, scale * e.value, scale * e.stderr_, scale * e.median});
    if (out.trace.back().value > ceiling) {
      out.divergent = true;
      break;
    }
  }
  out.value = out.trace.back().value;
  out.stderr_ = out.trace.back().stderr_;
  if (out.trace.size() >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    bool positive = true;
    for (const auto& l : out.trace) {
      if (!(l.median > 0)) positive = false;
      const double x = std::log(static_cast<double>(l.n_offsets)), y = std::log(std::max(l.median, 1e-300));
      sx += x, sy += y, sxx += x * x, sxy += x * y, ++m;
    }
    if (positive) out.growth_slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    if (out.growth_slope >= 0.5) out.divergent = true;
  }
  return out;
}

}  // namespace nlpf
