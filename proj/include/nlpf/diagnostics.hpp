#pragma once
// Boundary diagnostics in the plane: spherical excess, the nonlocal curvature
// pair integral, the direction-energy density e(x) and its truncation, and the
// two sides of the stability inequality.
//
// Boundaries are lists of pieces (segments with a fixed outward normal, or
// circular arcs), exact for analytic primitives and polygonal for voxel fields.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "nlpf/lattice.hpp"
#include "nlpf/slicing.hpp"

namespace nlpf {

struct Piece {
  bool arc = false;
  Vec a{}, b{};  // segment endpoints
  Vec n{};       // segment outward normal
  Vec c{};       // arc centre
  double R = 0, t0 = 0, t1 = 0;
  double sign = 1;  // arc outward normal is sign * (cos t, sin t)

  static Piece segment(const Vec& a, const Vec& b, const Vec& n) {
    Piece p;
    p.a = a;
    p.b = b;
    p.n = n;
    return p;
  }
  static Piece circle(const Vec& c, double R, double t0, double t1, double sign) {
    Piece p;
    p.arc = true;
    p.c = c;
    p.R = R;
    p.t0 = t0;
    p.t1 = t1;
    p.sign = sign;
    return p;
  }
  Piece flipped() const {
    Piece p = *this;
    p.n = {-n[0], -n[1], -n[2]};
    p.sign = -sign;
    return p;
  }
  Piece moved(const Vec& s) const {
    Piece p = *this;
    for (int i = 0; i < 2; ++i) {
      p.a[i] += s[i];
      p.b[i] += s[i];
      p.c[i] += s[i];
    }
    return p;
  }
  double length() const { return arc ? R * (t1 - t0) : std::hypot(b[0] - a[0], b[1] - a[1]); }
  Vec point(double s) const {  // s in [0,1]
    if (arc) {
      const double t = t0 + s * (t1 - t0);
      return {c[0] + R * std::cos(t), c[1] + R * std::sin(t), 0};
    }
    return {a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), 0};
  }
  Vec normal(double s) const {
    if (!arc) return n;
    const double t = t0 + s * (t1 - t0);
    return {sign * std::cos(t), sign * std::sin(t), 0};
  }
  Piece sub(double s0, double s1) const {
    Piece p = *this;
    if (arc) {
      p.t0 = t0 + s0 * (t1 - t0);
      p.t1 = t0 + s1 * (t1 - t0);
    } else {
      p.a = point(s0);
      p.b = point(s1);
    }
    return p;
  }
  // integral of the outward normal over the piece
  Vec normal_integral() const {
    if (!arc) {
      const double l = length();
      return {n[0] * l, n[1] * l, 0};
    }
    return {sign * R * (std::sin(t1) - std::sin(t0)), sign * R * (std::cos(t0) - std::cos(t1)), 0};
  }
};

namespace detail {

inline Vec perp(const Vec& u) { return {-u[1], u[0], 0}; }

// parameter range of a segment inside the disk B_r(x)
inline std::optional<std::pair<double, double>> segment_in_disk(const Piece& p, const Vec& x, double r) {
  const double vx = p.b[0] - p.a[0], vy = p.b[1] - p.a[1];
  const double wx = p.a[0] - x[0], wy = p.a[1] - x[1];
  const double A = vx * vx + vy * vy, B = 2 * (vx * wx + vy * wy), C = wx * wx + wy * wy - r * r;
  if (A == 0) return std::nullopt;
  const double disc = B * B - 4 * A * C;
  if (disc <= 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double s0 = std::max(0.0, (-B - sq) / (2 * A)), s1 = std::min(1.0, (-B + sq) / (2 * A));
  if (!(s1 > s0)) return std::nullopt;
  return std::make_pair(s0, s1);
}

// parts of a piece inside B_r(x)
inline std::vector<Piece> clip_to_disk(const Piece& p, const Vec& x, double r) {
  std::vector<Piece> out;
  if (!p.arc) {
    if (auto s = segment_in_disk(p, x, r)) out.push_back(p.sub(s->first, s->second));
    return out;
  }
  const double D = std::hypot(x[0] - p.c[0], x[1] - p.c[1]);
  double lo, hi;
  if (D + p.R <= r) {
    out.push_back(p);
    return out;
  }
  if (D == 0) return out;  // concentric and not contained
  const double cphi = (p.R * p.R + D * D - r * r) / (2 * p.R * D);
  if (cphi >= 1) return out;
  const double phi = cphi <= -1 ? std::numbers::pi : std::acos(cphi);
  const double psi = std::atan2(x[1] - p.c[1], x[0] - p.c[0]);
  lo = psi - phi;
  hi = psi + phi;
  const double tau = 2 * std::numbers::pi;
  for (int k = -2; k <= 2; ++k) {
    const double a = std::max(p.t0, lo + k * tau), b = std::min(p.t1, hi + k * tau);
    if (b > a) {
      Piece q = p;
      q.t0 = a;
      q.t1 = b;
      out.push_back(q);
    }
  }
  return out;
}

// Liang-Barsky clip of a segment to an axis box
inline std::optional<Piece> clip_to_box(const Piece& p, const Vec& lo, const Vec& hi) {
  double s0 = 0, s1 = 1;
  for (int i = 0; i < 2; ++i) {
    const double v = p.b[i] - p.a[i];
    for (int side = 0; side < 2; ++side) {
      const double q = side ? hi[i] - p.a[i] : p.a[i] - lo[i];
      const double pp = side ? v : -v;
      if (pp == 0) {
        if (q < 0) return std::nullopt;
        continue;
      }
      const double t = q / pp;
      if (pp < 0) s0 = std::max(s0, t);
      else s1 = std::min(s1, t);
    }
  }
  if (!(s1 > s0)) return std::nullopt;
  return p.sub(s0, s1);
}

inline std::vector<Piece> arc_as_segments(const Piece& p, int n) {
  std::vector<Piece> out;
  for (int i = 0; i < n; ++i) {
    const double s0 = static_cast<double>(i) / n, s1 = static_cast<double>(i + 1) / n;
    const Vec a = p.point(s0), b = p.point(s1);
    out.push_back(Piece::segment(a, b, p.normal(0.5 * (s0 + s1))));
  }
  return out;
}

// Pieces of the node's boundary that may meet B_radius(x); unbounded pieces
// are cut to a length covering the ball.
inline void node_pieces(const AnalyticShape::Node& node, const Vec& x, double radius, std::vector<Piece>& out) {
  const double ext = 2 * radius + 1;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, shapes::Empty> || std::is_same_v<T, shapes::Full>) {
        } else if constexpr (std::is_same_v<T, shapes::Halfspace>) {
          const double g = s.offset - dot(s.normal, x);
          if (std::abs(g) > radius) return;
          const Vec foot = axpy(g, s.normal, x), t = perp(s.normal);
          out.push_back(Piece::segment(axpy(-ext, t, foot), axpy(ext, t, foot), s.normal));
        } else if constexpr (std::is_same_v<T, shapes::Ball>) {
          out.push_back(Piece::circle(s.center, s.radius, -std::numbers::pi, std::numbers::pi, 1));
        } else if constexpr (std::is_same_v<T, shapes::Box>) {
          const Vec c00{s.lo[0], s.lo[1], 0}, c10{s.hi[0], s.lo[1], 0}, c11{s.hi[0], s.hi[1], 0}, c01{s.lo[0], s.hi[1], 0};
          out.push_back(Piece::segment(c00, c10, {0, -1, 0}));
          out.push_back(Piece::segment(c10, c11, {1, 0, 0}));
          out.push_back(Piece::segment(c11, c01, {0, 1, 0}));
          out.push_back(Piece::segment(c01, c00, {-1, 0, 0}));
        } else if constexpr (std::is_same_v<T, shapes::Polytope>) {
          for (std::size_t i = 0; i < s.faces.size(); ++i) {
            const auto& f = s.faces[i];
            const Vec p0 = axpy(f.offset, f.normal, Vec{0, 0, 0}), t = perp(f.normal);
            const double c = dot(t, x);
            double lo = c - ext, hi = c + ext;
            for (std::size_t j = 0; j < s.faces.size() && lo < hi; ++j) {
              if (j == i) continue;
              const auto& g = s.faces[j];
              const double a = dot(g.normal, t), b = g.offset - dot(g.normal, p0);
              if (std::abs(a) < 1e-15) {
                if (b < 0) hi = lo;
              } else if (a > 0) {
                hi = std::min(hi, b / a);
              } else {
                lo = std::max(lo, b / a);
              }
            }
            if (hi > lo) out.push_back(Piece::segment(axpy(lo, t, p0), axpy(hi, t, p0), f.normal));
          }
        } else if constexpr (std::is_same_v<T, shapes::Stripes>) {
          const double u = dot(s.normal, x);
          const long k0 = static_cast<long>(std::floor((u - radius - s.shift) / s.half_period));
          const long k1 = static_cast<long>(std::ceil((u + radius - s.shift) / s.half_period));
          const Vec t = perp(s.normal);
          for (long k = k0; k <= k1; ++k) {
            const double level = s.shift + k * s.half_period;
            const Vec foot = axpy(level - u, s.normal, x);
            // the band just past the boundary is inside when its parity matches the phase
            const bool inside_after = (std::abs(k) % 2 == 0) == s.phase;
            const Vec n = inside_after ? Vec{-s.normal[0], -s.normal[1], 0} : s.normal;
            out.push_back(Piece::segment(axpy(-ext, t, foot), axpy(ext, t, foot), n));
          }
        } else if constexpr (std::is_same_v<T, shapes::Wavy>) {
          const double sc = dot(s.along, x);
          const double lo = sc - radius - s.amplitude - s.wavelength / 8, hi = sc + radius + s.amplitude + s.wavelength / 8;
          const int per_wave = 1024;
          const int n = std::max(8, static_cast<int>(std::ceil((hi - lo) / s.wavelength * per_wave)));
          auto curve = [&](double sig) {
            const double h = s.offset + s.amplitude * std::sin(2 * std::numbers::pi * sig / s.wavelength + s.shift);
            return axpy(sig, s.along, Vec{h * s.normal[0], h * s.normal[1], 0});
          };
          Vec prev = curve(lo);
          for (int i = 1; i <= n; ++i) {
            const Vec cur = curve(lo + (hi - lo) * i / n);
            Vec nn = unit(perp({cur[0] - prev[0], cur[1] - prev[1], 0}));
            if (dot(nn, s.normal) < 0) nn = {-nn[0], -nn[1], 0};
            out.push_back(Piece::segment(prev, cur, nn));
            prev = cur;
          }
        } else {
          if (s.op != Composite::Op::complement)
            throw ConfigError("boundary diagnostics need a primitive shape or its complement");
          std::vector<Piece> inner;
          node_pieces(s.parts[0].node, x, radius, inner);
          for (const auto& p : inner) out.push_back(p.flipped());
        }
      },
      node);
}

inline std::vector<Piece> shape_pieces(const AnalyticShape& s, const Vec& x, double radius) {
  if (s.d != 2) throw ConfigError("boundary diagnostics support d = 2");
  std::vector<Piece> out;
  if (!s.periodic || lattice_native(s.node)) {
    node_pieces(s.node, x, radius, out);
    return out;
  }
  // restrict the cell's boundary to [0,L)^2 and add the neighbouring images
  const Vec lo{0, 0, 0}, hi{s.L, s.L, 0};
  const Vec xc{x[0] - std::floor(x[0] / s.L) * s.L, x[1] - std::floor(x[1] / s.L) * s.L, 0};
  const int K = static_cast<int>(std::ceil(radius / s.L)) + 1;
  std::vector<Piece> cell;
  node_pieces(s.node, {0.5 * s.L, 0.5 * s.L, 0}, 0.75 * s.L, cell);
  std::vector<Piece> clipped;
  for (const auto& p : cell) {
    if (p.arc) {
      const bool inside = p.c[0] - p.R >= 0 && p.c[0] + p.R <= s.L && p.c[1] - p.R >= 0 && p.c[1] + p.R <= s.L;
      if (!inside) throw ConfigError("arc crosses the periodic cell boundary");
      clipped.push_back(p);
    } else if (auto q = clip_to_box(p, lo, hi)) {
      clipped.push_back(*q);
    }
  }
  for (int i = -K; i <= K; ++i)
    for (int j = -K; j <= K; ++j) {
      const Vec shift{x[0] - xc[0] + i * s.L, x[1] - xc[1] + j * s.L, 0};
      for (const auto& p : clipped) out.push_back(p.moved(shift));
    }
  return out;
}

}  // namespace detail

// Polygonal boundary of a voxel field: marching squares at level 1/2 on the
// occupancy smoothed by a 3x3 binomial filter, with linear crossings.  A
// corner exactly at 1/2 takes its own voxel's bit, and saddle cells always cut
// their first and third corners, so a field and its complement share the
// polygon.
inline std::vector<Piece> voxel_boundary(const VoxelSet& v) {
  if (v.d != 2) throw ConfigError("voxel boundaries support d = 2");
  const double h = v.spacing();
  const int N = v.N;
  std::vector<double> sm(static_cast<std::size_t>(N) * N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      int acc = 0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) acc += (2 - std::abs(a)) * (2 - std::abs(b)) * v.bits[v.index(i + a, j + b)];
      sm[v.index(i, j)] = acc / 16.0;
    }
  std::vector<Piece> out;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      const int ci[4] = {i, i + 1, i + 1, i}, cj[4] = {j, j, j + 1, j + 1};
      double f[4];
      int val[4];
      Vec corner[4], cross[4];
      for (int k = 0; k < 4; ++k) {
        const auto id = v.index(ci[k], cj[k]);
        f[k] = sm[id];
        val[k] = f[k] > 0.5 || (f[k] == 0.5 && v.bits[id]);
        corner[k] = {(ci[k] + 0.5) * h, (cj[k] + 0.5) * h, 0};
      }
      const int s = val[0] + val[1] + val[2] + val[3];
      if (s == 0 || s == 4) continue;
      for (int e = 0; e < 4; ++e) {
        const int g = (e + 1) % 4;
        const double t = f[g] == f[e] ? 0.5 : std::clamp((0.5 - f[e]) / (f[g] - f[e]), 0.0, 1.0);
        cross[e] = {corner[e][0] + t * (corner[g][0] - corner[e][0]), corner[e][1] + t * (corner[g][1] - corner[e][1]), 0};
      }
      // segment between crossings on edges e0, e1, oriented away from the inside
      auto emit = [&](int e0, int e1, int k) {
        const Vec a = cross[e0], b = cross[e1];
        Vec n = unit(detail::perp({b[0] - a[0], b[1] - a[1], 0}));
        if (!(norm(n) > 0)) return;
        const double side = dot(n, {corner[k][0] - a[0], corner[k][1] - a[1], 0});
        if ((side > 0) == static_cast<bool>(val[k])) n = {-n[0], -n[1], 0};
        out.push_back(Piece::segment(a, b, n));
      };
      // corner k sits between edges k-1 and k
      auto cut = [&](int k) { emit((k + 3) % 4, k, k); };
      if (s == 1 || s == 3) {
        for (int k = 0; k < 4; ++k)
          if (val[k] != val[(k + 1) % 4] && val[k] != val[(k + 3) % 4]) cut(k);
      } else if (val[0] == val[2]) {
        cut(0);
        cut(2);
      } else {
        int e0 = -1, e1 = -1;
        for (int e = 0; e < 4; ++e)
          if (val[e] != val[(e + 1) % 4]) (e0 < 0 ? e0 : e1) = e;
        emit(e0, e1, 0);
      }
    }
  return out;
}

// A boundary model: local pieces and forward ray gaps.
class Boundary {
 public:
  explicit Boundary(AnalyticShape s) : shape_(std::move(s)) {}
  explicit Boundary(const VoxelSet& v) : L_(v.L), segs_(voxel_boundary(v)) {}

  std::vector<Piece> near(const Vec& x, double radius) const {
    if (shape_) return detail::shape_pieces(*shape_, x, radius);
    std::vector<Piece> out;
    const Vec xc{x[0] - std::floor(x[0] / L_) * L_, x[1] - std::floor(x[1] / L_) * L_, 0};
    const int K = static_cast<int>(std::ceil(radius / L_)) + 1;
    for (int i = -K; i <= K; ++i)
      for (int j = -K; j <= K; ++j) {
        const Vec s{x[0] - xc[0] + i * L_, x[1] - xc[1] + j * L_, 0};
        for (const auto& p : segs_) {
          const Vec a = p.moved(s).a;
          if (std::hypot(a[0] - x[0], a[1] - x[1]) <= radius + L_) out.push_back(p.moved(s));
        }
      }
    return out;
  }

  // distance to the first boundary crossing past x along u, infinity if none
  // within tmax; rays on voxel fields are followed at most one period
  double forward_gap(const Vec& x, const Vec& u, double tmax) const {
    const double tol = 1e-9 * std::max(1.0, tmax);
    if (shape_) {
      const auto sl = line_slice(*shape_, x, u, tol, tmax);
      return sl.boundary.empty() ? std::numeric_limits<double>::infinity() : sl.boundary.front();
    }
    tmax = std::min(tmax, L_);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : near(x, tmax)) {
      const double vx = p.b[0] - p.a[0], vy = p.b[1] - p.a[1];
      const double den = u[0] * vy - u[1] * vx;
      if (std::abs(den) < 1e-15) continue;
      const double wx = p.a[0] - x[0], wy = p.a[1] - x[1];
      const double t = (wx * vy - wy * vx) / den, s = (wx * u[1] - wy * u[0]) / den;
      if (t > tol && t <= tmax && s >= 0 && s <= 1) best = std::min(best, t);
    }
    return best;
  }

  int d() const { return shape_ ? shape_->d : 2; }

 private:
  std::optional<AnalyticShape> shape_;
  double L_ = 0;
  std::vector<Piece> segs_;
};

struct BoundaryProbe {
  Vec x{};
  Vec normal{};  // outward unit normal at x
  double r = 0;
};

// Probe at the boundary point nearest to x, with its exact normal.
inline BoundaryProbe probe_at(const AnalyticShape& s, const Vec& x, double r) {
  Boundary b(s);
  BoundaryProbe best;
  double dist = std::numeric_limits<double>::infinity();
  std::vector<Piece> cand;
  for (double rad = 1; cand.empty() && rad < 1e6; rad *= 8) cand = b.near(x, rad);
  for (const auto& p : cand) {
    double sb;
    if (p.arc) {
      const double t = std::clamp(std::atan2(x[1] - p.c[1], x[0] - p.c[0]), p.t0, p.t1);
      sb = (t - p.t0) / (p.t1 - p.t0);
    } else {
      const double vx = p.b[0] - p.a[0], vy = p.b[1] - p.a[1];
      sb = std::clamp(((x[0] - p.a[0]) * vx + (x[1] - p.a[1]) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
    }
    const Vec q = p.point(sb);
    const double dd = std::hypot(q[0] - x[0], q[1] - x[1]);
    if (dd < dist) {
      dist = dd;
      best.x = q;
      best.normal = p.normal(sb);
    }
  }
  if (!std::isfinite(dist)) throw ConfigError("no boundary near the probe point");
  best.r = r;
  return best;
}

// Voxel probe: snapped to the nearest polygon vertex, normal from a least
// squares plane fit of the occupancy over a 5x5 patch around it.
inline BoundaryProbe probe_at(const VoxelSet& v, const Vec& x, double r) {
  if (v.d != 2) throw ConfigError("voxel probes support d = 2");
  const double h = v.spacing();
  BoundaryProbe out;
  double dist = std::numeric_limits<double>::infinity();
  for (const auto& p : Boundary(v).near(x, 3 * h))
    for (const Vec& q : {p.a, p.b}) {
      const double dd = std::hypot(q[0] - x[0], q[1] - x[1]);
      if (dd < dist) {
        dist = dd;
        out.x = q;
      }
    }
  if (!std::isfinite(dist)) throw ConfigError("no boundary near the probe point");
  // chi ~ a + g.(y - x) over cell centres within two cells of the vertex
  double Sxx = 0, Sxy = 0, Syy = 0, Sx = 0, Sy = 0, S1 = 0, Sc = 0, Scx = 0, Scy = 0;
  // the patch is centred on the nearest cell and trimmed to its inscribed disk;
  // square corners pull the fitted gradient toward the axes
  const int ci = static_cast<int>(std::lround(out.x[0] / h - 0.5)), cj = static_cast<int>(std::lround(out.x[1] / h - 0.5));
  for (int a = -2; a <= 2; ++a)
    for (int b = -2; b <= 2; ++b) {
      const double dx = (ci + a + 0.5) * h - out.x[0], dy = (cj + b + 0.5) * h - out.x[1];
      if (dx * dx + dy * dy > 6.25 * h * h) continue;
      const double c = v.bits[v.index(ci + a, cj + b)];
      S1 += 1, Sx += dx, Sy += dy, Sxx += dx * dx, Sxy += dx * dy, Syy += dy * dy;
      Sc += c, Scx += c * dx, Scy += c * dy;
    }
  // centre the regressors, then solve the 2x2 normal equations
  const double mx = Sx / S1, my = Sy / S1, mc = Sc / S1;
  const double A = Sxx - S1 * mx * mx, B = Sxy - S1 * mx * my, C = Syy - S1 * my * my;
  const double bx = Scx - S1 * mx * mc, by = Scy - S1 * my * mc;
  const double det = A * C - B * B;
  const Vec g{(C * bx - B * by) / det, (A * by - B * bx) / det, 0};
  if (!(norm(g) > 0)) throw ConfigError("flat occupancy around the voxel probe");
  out.normal = unit({-g[0], -g[1], 0});
  out.r = r;
  return out;
}

struct ExcessResult {
  double value = 0;
  bool flagged = false;  // no boundary inside the ball
};

// (|D chi|(B_r) - |D chi(B_r)|) / r^{d-1}
inline ExcessResult excess(const Boundary& b, const BoundaryProbe& pr) {
  double measure = 0;
  Vec sum{0, 0, 0};
  for (const auto& p : b.near(pr.x, pr.r))
    for (const auto& q : detail::clip_to_disk(p, pr.x, pr.r)) {
      measure += q.length();
      const Vec n = q.normal_integral();
      sum[0] += n[0];
      sum[1] += n[1];
    }
  ExcessResult out;
  if (measure == 0) {
    out.flagged = true;
    return out;
  }
  out.value = std::max(0.0, (measure - std::hypot(sum[0], sum[1])) / pr.r);
  return out;
}

// Boundary sample points at spacing <= eps inside B_r(x): midpoints, weights,
// normals.
struct BoundarySample {
  Vec x;
  Vec n;
  double w;
};

inline std::vector<BoundarySample> sample_boundary(const std::vector<Piece>& pieces, double eps) {
  std::vector<BoundarySample> out;
  for (const auto& q : pieces) {
    const double len = q.length();
    const int m = std::max(1, static_cast<int>(std::ceil(len / eps)));
    for (int i = 0; i < m; ++i) {
      const double s = (i + 0.5) / m;
      out.push_back({q.point(s), q.normal(s), len / m});
    }
  }
  return out;
}

// int int |nu(x) - nu(y)|^2 / |x - y|^{p-2} over the boundary in B_r, pairs
// closer than eps dropped.
inline double nonlocal_curvature(const Boundary& b, const BoundaryProbe& pr, double p, double eps) {
  if (!(eps > 0)) throw ConfigError("mesh size must be positive");
  std::vector<Piece> inside;
  for (const auto& q : b.near(pr.x, pr.r))
    for (const auto& c : detail::clip_to_disk(q, pr.x, pr.r)) inside.push_back(c);
  const auto pts = sample_boundary(inside, eps);
  const double eps2 = eps * eps, half = 0.5 * (p - 2);
  double acc = 0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double dn0 = pts[i].n[0] - pts[j].n[0], dn1 = pts[i].n[1] - pts[j].n[1];
      const double dn2 = dn0 * dn0 + dn1 * dn1;
      if (dn2 == 0) continue;
      const double dx = pts[i].x[0] - pts[j].x[0], dy = pts[i].x[1] - pts[j].x[1];
      const double d2 = dx * dx + dy * dy;
      if (d2 < eps2) continue;
      acc += 2 * pts[i].w * pts[j].w * dn2 * std::pow(d2, -half);
    }
  return acc;
}

enum class Growth { convergent, logarithmic, power };

struct CurvatureTrace {
  std::vector<double> eps, value;
  Growth growth = Growth::convergent;
  double rate = 0;       // log slope a, or power exponent beta
  double r2_log = 0, r2_power = 0;
  double max_change = 0; // largest relative change between successive levels
};

namespace detail {
// least squares y = a x + b, returns (a, b, R^2)
inline std::array<double, 3> linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i], sy += y[i], sxx += x[i] * x[i], sxy += x[i] * y[i];
  }
  const double a = (n * sxy - sx * sy) / (n * sxx - sx * sx), b = (sy - a * sx) / n;
  double ss = 0, st = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ss += std::pow(y[i] - a * x[i] - b, 2);
    st += std::pow(y[i] - sy / n, 2);
  }
  return {a, b, st > 0 ? 1 - ss / st : 1.0};
}
}  // namespace detail

// Halve eps `levels` times; classify as convergent (successive changes < 2%),
// or divergent with the better of a log(1/eps) + b and a eps^-beta + b.
inline CurvatureTrace curvature_refinement(const Boundary& b, const BoundaryProbe& pr, double p, double eps0,
                                           int levels = 4) {
  CurvatureTrace t;
  for (int k = 0; k <= levels; ++k) {
    t.eps.push_back(eps0 / std::pow(2.0, k));
    t.value.push_back(nonlocal_curvature(b, pr, p, t.eps.back()));
  }
  for (std::size_t k = 1; k < t.value.size(); ++k) {
    const double ref = std::max(std::abs(t.value[k]), 1e-300);
    t.max_change = std::max(t.max_change, std::abs(t.value[k] - t.value[k - 1]) / ref);
  }
  std::vector<double> lx;
  for (double e : t.eps) lx.push_back(std::log(1 / e));
  const auto lf = detail::linear_fit(lx, t.value);
  t.r2_log = lf[2];
  double best_beta = 0, best_r2 = -1;
  for (int i = 1; i <= 400; ++i) {
    const double beta = 0.01 * i;
    std::vector<double> px;
    for (double e : t.eps) px.push_back(std::pow(e, -beta));
    const auto pf = detail::linear_fit(px, t.value);
    if (pf[2] > best_r2) best_r2 = pf[2], best_beta = beta;
  }
  t.r2_power = best_r2;
  if (t.max_change < 0.02 || levels < 2) {
    t.growth = Growth::convergent;
    t.rate = 0;
  } else if (t.r2_log >= t.r2_power - 1e-3 || best_beta <= 0.05) {
    t.growth = Growth::logarithmic;
    t.rate = lf[0];
  } else {
    t.growth = Growth::power;
    t.rate = best_beta;
  }
  return t;
}

struct Truncation {
  double tau = 0;
  double delta = 0;
};

// e(x) = int_{S^{d-1}} |nu.theta| r_theta(x)^{-(p-d-1)} dtheta, or the
// truncated form with 1/max(tau, r^{p-d-1}) gated by r < delta.
inline Estimate e_density(const Boundary& b, const BoundaryProbe& pr, double p, int d, const SliceQuadrature& q,
                          std::optional<Truncation> trunc = std::nullopt) {
  q.validate();
  if (!(p > d + 1)) throw ConfigError("p must exceed d+1");
  const double alpha = p - d - 1;
  const double tmax = trunc ? trunc->delta : q.reach;
  std::vector<double> vals(q.n_dirs);
  for (int i = 0; i < q.n_dirs; ++i) {
    Rng g = stream(q.seed, static_cast<std::uint64_t>(i), 0xe0);
    const Vec u = detail::slot_direction(d, i, q.n_dirs, q.mode, g, q.seed);
    const double w = std::abs(dot(pr.normal, u));
    double f = 0;
    if (w > 0) {
      const double r = b.forward_gap(pr.x, u, tmax);
      if (std::isfinite(r)) {
        if (!trunc) f = std::pow(r, -alpha);
        else if (r < trunc->delta) f = 1 / std::max(trunc->tau, std::pow(r, alpha));
      }
    }
    vals[i] = w * f;
  }
  const double area = sphere_area(d - 1);
  double mean = 0;
  for (double v : vals) mean += v;
  mean /= q.n_dirs;
  double var = 0;
  for (double v : vals) var += (v - mean) * (v - mean);
  const double sd = q.n_dirs > 1 ? std::sqrt(var / (q.n_dirs - 1)) : 0;
  Estimate e;
  e.value = area * mean;
  e.stderr_ = area * sd / std::sqrt(static_cast<double>(q.n_dirs));
  std::sort(vals.begin(), vals.end());
  e.median = area * vals[vals.size() / 2];
  return e;
}

struct StabilitySides {
  double lhs = 0;        // integral of e_{tau,delta} over the boundary in the slab
  double perimeter = 0;  // Per(E; slab)
  double net = 0;        // |integral of nu over the boundary in the slab|
  double rhs = 0;        // M1 (perimeter - net)
  std::size_t points = 0;
};

// Both sides of the stability inequality on a rectangle; M1 is supplied by
// the caller.  The boundary is sampled at spacing `spacing`.
inline StabilitySides stability_sides(const Boundary& b, const KernelSpec& k, double delta, const Window& slab,
                                      double M1, const SliceQuadrature& q, double spacing) {
  if (!(delta > 0)) throw ConfigError("delta must be positive");
  if (!(spacing > 0)) throw ConfigError("boundary spacing must be positive");
  const Vec centre{0.5 * (slab.lo[0] + slab.hi[0]), 0.5 * (slab.lo[1] + slab.hi[1]), 0};
  const double half_diag = 0.5 * std::hypot(slab.hi[0] - slab.lo[0], slab.hi[1] - slab.lo[1]);
  std::vector<Piece> inside;
  for (const auto& p : b.near(centre, half_diag)) {
    const auto segs = p.arc ? detail::arc_as_segments(p, 512) : std::vector<Piece>{p};
    for (const auto& s : segs)
      if (auto c = detail::clip_to_box(s, slab.lo, slab.hi)) inside.push_back(*c);
  }
  StabilitySides out;
  Vec sum{0, 0, 0};
  for (const auto& p : inside) {
    out.perimeter += p.length();
    const Vec n = p.normal_integral();
    sum[0] += n[0];
    sum[1] += n[1];
  }
  out.net = std::hypot(sum[0], sum[1]);
  out.rhs = M1 * std::max(0.0, out.perimeter - out.net);
  const auto pts = sample_boundary(inside, spacing);
  out.points = pts.size();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    SliceQuadrature qi = q;
    qi.seed = mix_seed(q.seed + i);
    const BoundaryProbe pr{pts[i].x, pts[i].n, 0};
    out.lhs += pts[i].w * e_density(b, pr, k.p, 2, qi, Truncation{k.tau, delta}).value;
  }
  return out;
}

}  // namespace nlpf
