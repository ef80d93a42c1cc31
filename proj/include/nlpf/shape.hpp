#pragma once
// Exact test shapes in dimension d <= 3 and their line intersections.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/tools/roots.hpp>
#include <json.hpp>

#include "nlpf/kernel.hpp"

namespace nlpf {

using Vec = std::array<double, 3>;

inline double dot(const Vec& a, const Vec& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec axpy(double t, const Vec& u, const Vec& o) { return {o[0] + t * u[0], o[1] + t * u[1], o[2] + t * u[2]}; }
inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }
inline Vec unit(Vec a) {
  const double n = norm(a);
  if (!(n > 0)) throw ConfigError("zero direction vector");
  // already unit up to rounding: keep as is so documents round-trip
  if (std::abs(n - 1) <= 4e-16) return a;
  for (auto& x : a) x /= n;
  return a;
}

struct Interval {
  double a, b;
};
using Intervals = std::vector<Interval>;

namespace shapes {
struct Empty {};
struct Full {};
// {x : n.x < offset}
struct Halfspace {
  Vec normal;
  double offset;
};
struct Ball {
  Vec center;
  double radius;
};
// lo <= x < hi on the first d axes
struct Box {
  Vec lo, hi;
};
// {x : floor((n.x - shift)/h) even} when phase, odd otherwise
struct Stripes {
  Vec normal;
  double half_period;
  double shift;
  bool phase;
};
struct Polytope {
  std::vector<Halfspace> faces;
};
// {x : n.x < offset + amplitude sin(2 pi t.x / wavelength + shift)}, t orthogonal to n
struct Wavy {
  Vec normal, along;
  double offset, amplitude, wavelength, shift;
};
}  // namespace shapes

struct AnalyticShape;

struct Composite {
  enum class Op { unite, intersect, complement };
  Op op;
  std::vector<AnalyticShape> parts;
};

struct AnalyticShape {
  using Node = std::variant<shapes::Empty, shapes::Full, shapes::Halfspace, shapes::Ball, shapes::Box,
                            shapes::Stripes, shapes::Polytope, shapes::Wavy, Composite>;
  int d = 2;
  Node node = shapes::Empty{};
  // E = {x : x mod L in node} when periodic
  bool periodic = false;
  double L = 0;
};

// ---- construction

namespace detail {
inline void check_dim(int d) {
  if (d < 1 || d > 3) throw ConfigError("shapes support d in {1,2,3}");
}
inline Vec pad(const std::vector<double>& v, int d) {
  if (static_cast<int>(v.size()) != d) throw ConfigError("vector length does not match dimension");
  Vec out{0, 0, 0};
  for (int i = 0; i < d; ++i) out[i] = v[i];
  return out;
}
}  // namespace detail

inline AnalyticShape empty_shape(int d) { return {d, shapes::Empty{}}; }
inline AnalyticShape full_shape(int d) { return {d, shapes::Full{}}; }

inline AnalyticShape halfspace(int d, const std::vector<double>& normal, double offset) {
  detail::check_dim(d);
  return {d, shapes::Halfspace{unit(detail::pad(normal, d)), offset}};
}

inline AnalyticShape ball(int d, const std::vector<double>& center, double radius) {
  detail::check_dim(d);
  if (!(radius > 0)) throw ConfigError("ball radius must be positive");
  return {d, shapes::Ball{detail::pad(center, d), radius}};
}

inline AnalyticShape box(int d, const std::vector<double>& lo, const std::vector<double>& hi) {
  detail::check_dim(d);
  Vec a = detail::pad(lo, d), b = detail::pad(hi, d);
  for (int i = 0; i < d; ++i)
    if (!(b[i] > a[i])) throw ConfigError("box must have hi > lo on every axis");
  return {d, shapes::Box{a, b}};
}

inline AnalyticShape stripes(int d, const std::vector<double>& normal, double h, double shift = 0, bool phase = true) {
  detail::check_dim(d);
  if (!(h > 0)) throw ConfigError("stripe half-period must be positive");
  return {d, shapes::Stripes{unit(detail::pad(normal, d)), h, shift, phase}};
}

inline AnalyticShape polytope(int d, const std::vector<std::pair<std::vector<double>, double>>& faces) {
  detail::check_dim(d);
  shapes::Polytope p;
  for (const auto& [n, c] : faces) p.faces.push_back({unit(detail::pad(n, d)), c});
  return {d, p};
}

inline AnalyticShape wavy(int d, const std::vector<double>& normal, const std::vector<double>& along, double offset,
                          double amplitude, double wavelength, double shift = 0) {
  detail::check_dim(d);
  if (d < 2) throw ConfigError("wavy boundary needs d >= 2");
  if (!(wavelength > 0)) throw ConfigError("wavelength must be positive");
  const Vec n = unit(detail::pad(normal, d)), t = unit(detail::pad(along, d));
  if (std::abs(dot(n, t)) > 1e-12) throw ConfigError("wave direction must be orthogonal to the normal");
  return {d, shapes::Wavy{n, t, offset, amplitude, wavelength, shift}};
}

inline AnalyticShape unite(std::vector<AnalyticShape> parts) {
  if (parts.empty()) throw ConfigError("union of nothing");
  const int d = parts[0].d;
  for (const auto& p : parts)
    if (p.d != d) throw ConfigError("dimension mismatch in union");
  return {d, Composite{Composite::Op::unite, std::move(parts)}};
}

inline AnalyticShape intersect(std::vector<AnalyticShape> parts) {
  if (parts.empty()) throw ConfigError("intersection of nothing");
  const int d = parts[0].d;
  for (const auto& p : parts)
    if (p.d != d) throw ConfigError("dimension mismatch in intersection");
  return {d, Composite{Composite::Op::intersect, std::move(parts)}};
}

inline AnalyticShape complement(AnalyticShape s) {
  const int d = s.d;
  const bool per = s.periodic;
  const double L = s.L;
  s.periodic = false;
  AnalyticShape out{d, Composite{Composite::Op::complement, {std::move(s)}}};
  out.periodic = per;
  out.L = L;
  return out;
}

inline AnalyticShape periodic(AnalyticShape s, double L) {
  if (!(L > 0)) throw ConfigError("cell length must be positive");
  s.periodic = true;
  s.L = L;
  return s;
}

// ---- membership and line intersection

namespace detail {

inline bool in_node(const AnalyticShape::Node& node, const Vec& x, int d);

inline bool in_stripes(const shapes::Stripes& s, const Vec& x) {
  const double k = std::floor((dot(s.normal, x) - s.shift) / s.half_period);
  const bool even = std::fmod(std::abs(k), 2.0) == 0.0;
  return even == s.phase;
}

inline double wavy_gap(const shapes::Wavy& w, const Vec& x) {
  return dot(w.normal, x) - w.offset -
         w.amplitude * std::sin(2 * std::numbers::pi * dot(w.along, x) / w.wavelength + w.shift);
}

inline bool in_node(const AnalyticShape::Node& node, const Vec& x, int d) {
  return std::visit(
      [&](const auto& s) -> bool {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, shapes::Empty>) return false;
        else if constexpr (std::is_same_v<T, shapes::Full>) return true;
        else if constexpr (std::is_same_v<T, shapes::Halfspace>) return dot(s.normal, x) < s.offset;
        else if constexpr (std::is_same_v<T, shapes::Ball>) {
          Vec w{x[0] - s.center[0], x[1] - s.center[1], x[2] - s.center[2]};
          return dot(w, w) < s.radius * s.radius;
        } else if constexpr (std::is_same_v<T, shapes::Box>) {
          for (int i = 0; i < d; ++i)
            if (!(x[i] >= s.lo[i] && x[i] < s.hi[i])) return false;
          return true;
        } else if constexpr (std::is_same_v<T, shapes::Stripes>) return in_stripes(s, x);
        else if constexpr (std::is_same_v<T, shapes::Polytope>) {
          for (const auto& f : s.faces)
            if (!(dot(f.normal, x) < f.offset)) return false;
          return true;
        } else if constexpr (std::is_same_v<T, shapes::Wavy>) return wavy_gap(s, x) < 0;
        else {
          switch (s.op) {
            case Composite::Op::unite:
              return std::any_of(s.parts.begin(), s.parts.end(), [&](const auto& p) { return in_node(p.node, x, d); });
            case Composite::Op::intersect:
              return std::all_of(s.parts.begin(), s.parts.end(), [&](const auto& p) { return in_node(p.node, x, d); });
            case Composite::Op::complement: return !in_node(s.parts[0].node, x, d);
          }
          return false;
        }
      },
      node);
}

// sort and merge, dropping empty pieces
inline Intervals normalize(Intervals v, double tol = 0) {
  v.erase(std::remove_if(v.begin(), v.end(), [](const Interval& i) { return !(i.b > i.a); }), v.end());
  std::sort(v.begin(), v.end(), [](const Interval& x, const Interval& y) { return x.a < y.a; });
  Intervals out;
  for (const auto& i : v) {
    if (!out.empty() && i.a <= out.back().b + tol)
      out.back().b = std::max(out.back().b, i.b);
    else
      out.push_back(i);
  }
  return out;
}

inline Intervals complement_in(const Intervals& v, double t0, double t1) {
  Intervals out;
  double cur = t0;
  for (const auto& i : v) {
    if (i.a > cur) out.push_back({cur, i.a});
    cur = std::max(cur, i.b);
  }
  if (cur < t1) out.push_back({cur, t1});
  return out;
}

inline Intervals intersect_lists(const Intervals& x, const Intervals& y) {
  Intervals out;
  std::size_t i = 0, j = 0;
  while (i < x.size() && j < y.size()) {
    const double a = std::max(x[i].a, y[j].a), b = std::min(x[i].b, y[j].b);
    if (b > a) out.push_back({a, b});
    (x[i].b < y[j].b) ? ++i : ++j;
  }
  return out;
}

// t-range where n.(o + t u) < c, clipped to [t0, t1]
inline Intervals half_line(const Vec& n, double c, const Vec& o, const Vec& u, double t0, double t1) {
  const double a = dot(n, u), b = c - dot(n, o);
  if (std::abs(a) < 1e-15) return b > 0 ? Intervals{{t0, t1}} : Intervals{};
  const double r = b / a;
  return a > 0 ? Intervals{{t0, std::min(t1, r)}} : Intervals{{std::max(t0, r), t1}};
}

inline Intervals wavy_line(const shapes::Wavy& w, const Vec& o, const Vec& u, double t0, double t1) {
  auto g = [&](double t) { return wavy_gap(w, axpy(t, u, o)); };
  const double k = std::abs(dot(w.along, u));
  const double slope = std::abs(dot(w.normal, u));
  // sine phase advances at most pi/16 per step, and the linear part is resolved too
  double step = t1 - t0;
  if (k > 0) step = std::min(step, w.wavelength / (32 * k));
  if (slope > 0 && w.amplitude > 0) step = std::min(step, 0.25 * w.amplitude / slope);
  step = std::max(step, (t1 - t0) * 1e-7);
  std::vector<double> roots;
  double ta = t0, ga = g(t0);
  while (ta < t1) {
    const double tb = std::min(t1, ta + step), gb = g(tb);
    if ((ga < 0) != (gb < 0)) {
      if (ga == 0 || gb == 0) {
        roots.push_back(ga == 0 ? ta : tb);
      } else {
        boost::uintmax_t it = 100;
        auto r = boost::math::tools::toms748_solve(g, ta, tb, ga, gb,
                                                   boost::math::tools::eps_tolerance<double>(52), it);
        roots.push_back(0.5 * (r.first + r.second));
      }
    }
    ta = tb;
    ga = gb;
  }
  Intervals out;
  double cur = t0;
  bool inside = g(t0) < 0;
  for (double r : roots) {
    if (inside) out.push_back({cur, r});
    cur = r;
    inside = !inside;
  }
  if (inside) out.push_back({cur, t1});
  return out;
}

inline Intervals node_line(const AnalyticShape::Node& node, int d, const Vec& o, const Vec& u, double t0, double t1) {
  return std::visit(
      [&](const auto& s) -> Intervals {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, shapes::Empty>) return {};
        else if constexpr (std::is_same_v<T, shapes::Full>) return {{t0, t1}};
        else if constexpr (std::is_same_v<T, shapes::Halfspace>) return normalize(half_line(s.normal, s.offset, o, u, t0, t1));
        else if constexpr (std::is_same_v<T, shapes::Ball>) {
          const Vec w{o[0] - s.center[0], o[1] - s.center[1], o[2] - s.center[2]};
          const double uu = dot(u, u), b = dot(w, u) / uu, c = (dot(w, w) - s.radius * s.radius) / uu;
          const double disc = b * b - c;
          if (disc <= 0) return {};
          const double q = std::sqrt(disc);
          return normalize({{std::max(t0, -b - q), std::min(t1, -b + q)}});
        } else if constexpr (std::is_same_v<T, shapes::Box>) {
          double a = t0, b = t1;
          for (int i = 0; i < d; ++i) {
            if (std::abs(u[i]) < 1e-15) {
              if (!(o[i] >= s.lo[i] && o[i] < s.hi[i])) return {};
              continue;
            }
            double l = (s.lo[i] - o[i]) / u[i], h = (s.hi[i] - o[i]) / u[i];
            if (l > h) std::swap(l, h);
            a = std::max(a, l);
            b = std::min(b, h);
          }
          return normalize({{a, b}});
        } else if constexpr (std::is_same_v<T, shapes::Stripes>) {
          const double a = dot(s.normal, u), s0 = dot(s.normal, o) - s.shift, h = s.half_period;
          if (std::abs(a) < 1e-15) return in_stripes(s, o) ? Intervals{{t0, t1}} : Intervals{};
          const double lo = std::min(s0 + a * t0, s0 + a * t1), hi = std::max(s0 + a * t0, s0 + a * t1);
          Intervals out;
          for (double k = std::floor(lo / h); k * h < hi; k += 1) {
            const bool even = std::fmod(std::abs(k), 2.0) == 0.0;
            if (even != s.phase) continue;
            double ta = (k * h - s0) / a, tb = ((k + 1) * h - s0) / a;
            if (ta > tb) std::swap(ta, tb);
            out.push_back({std::max(t0, ta), std::min(t1, tb)});
          }
          return normalize(out);
        } else if constexpr (std::is_same_v<T, shapes::Polytope>) {
          Intervals cur{{t0, t1}};
          for (const auto& f : s.faces) cur = intersect_lists(cur, normalize(half_line(f.normal, f.offset, o, u, t0, t1)));
          return cur;
        } else if constexpr (std::is_same_v<T, shapes::Wavy>) return normalize(wavy_line(s, o, u, t0, t1));
        else {
          switch (s.op) {
            case Composite::Op::unite: {
              Intervals all;
              for (const auto& p : s.parts) {
                auto v = node_line(p.node, d, o, u, t0, t1);
                all.insert(all.end(), v.begin(), v.end());
              }
              return normalize(all);
            }
            case Composite::Op::intersect: {
              Intervals cur{{t0, t1}};
              for (const auto& p : s.parts) cur = intersect_lists(cur, node_line(p.node, d, o, u, t0, t1));
              return cur;
            }
            case Composite::Op::complement:
              return complement_in(node_line(s.parts[0].node, d, o, u, t0, t1), t0, t1);
          }
          return {};
        }
      },
      node);
}

// Shapes already invariant under the cell lattice need no cell walking.
inline bool lattice_native(const AnalyticShape::Node& node) {
  return std::visit(
      [](const auto& s) -> bool {
        using T = std::decay_t<decltype(s)>;
        // stripes are taken as cell-compatible; candidate construction checks that
        if constexpr (std::is_same_v<T, shapes::Empty> || std::is_same_v<T, shapes::Full> ||
                      std::is_same_v<T, shapes::Stripes>)
          return true;
        else if constexpr (std::is_same_v<T, Composite>) {
          return std::all_of(s.parts.begin(), s.parts.end(), [](const auto& p) { return lattice_native(p.node); });
        } else return false;
      },
      node);
}

}  // namespace detail

inline bool contains(const AnalyticShape& s, Vec x) {
  if (s.periodic && !detail::lattice_native(s.node))
    for (int i = 0; i < s.d; ++i) x[i] -= std::floor(x[i] / s.L) * s.L;
  return detail::in_node(s.node, x, s.d);
}

// Membership intervals of the line o + t u, t in [t0, t1]; u need not be unit.
inline Intervals line_intervals(const AnalyticShape& s, const Vec& o, const Vec& u, double t0, double t1) {
  if (!s.periodic || detail::lattice_native(s.node)) return detail::node_line(s.node, s.d, o, u, t0, t1);
  // walk the cells met by the segment
  std::vector<double> cuts{t0, t1};
  for (int i = 0; i < s.d; ++i) {
    if (std::abs(u[i]) < 1e-15) continue;
    double xa = o[i] + t0 * u[i], xb = o[i] + t1 * u[i];
    if (xa > xb) std::swap(xa, xb);
    for (double m = std::ceil(xa / s.L); m * s.L <= xb; m += 1) {
      const double t = (m * s.L - o[i]) / u[i];
      if (t > t0 && t < t1) cuts.push_back(t);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  Intervals all;
  for (std::size_t j = 0; j + 1 < cuts.size(); ++j) {
    const double ta = cuts[j], tb = cuts[j + 1];
    if (!(tb > ta)) continue;
    const Vec mid = axpy(0.5 * (ta + tb), u, o);
    Vec shifted = o;
    for (int i = 0; i < s.d; ++i) shifted[i] -= std::floor(mid[i] / s.L) * s.L;
    auto v = detail::node_line(s.node, s.d, shifted, u, ta, tb);
    all.insert(all.end(), v.begin(), v.end());
  }
  return detail::normalize(all, 1e-12 * s.L);
}

struct LineSlice {
  std::vector<double> boundary;  // interface parameters strictly inside (t0, t1)
  bool phase = false;            // inside just right of boundary[0]; whole-line membership if none
  bool tangent = false;          // a sliver below tolerance was seen
};

inline LineSlice line_slice(const AnalyticShape& s, const Vec& o, const Vec& u, double t0, double t1) {
  const auto iv = line_intervals(s, o, u, t0, t1);
  LineSlice out;
  const double tol = 1e-10 * std::max(1.0, t1 - t0);
  for (const auto& i : iv) {
    if (i.b - i.a < tol) out.tangent = true;
    if (i.a > t0) out.boundary.push_back(i.a);
    if (i.b < t1) out.boundary.push_back(i.b);
  }
  for (std::size_t i = 1; i < out.boundary.size(); ++i)
    if (out.boundary[i] - out.boundary[i - 1] < tol) out.tangent = true;
  if (out.boundary.empty())
    out.phase = !iv.empty();
  else
    out.phase = !iv.empty() && iv.front().a > t0 && iv.front().a == out.boundary.front();
  return out;
}

// ---- serialization

namespace detail {
inline nlohmann::json vec_json(const Vec& v, int d) { return std::vector<double>(v.begin(), v.begin() + d); }

inline nlohmann::json node_json(const AnalyticShape::Node& node, int d) {
  using nlohmann::json;
  return std::visit(
      [&](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, shapes::Empty>) return {{"type", "empty"}};
        else if constexpr (std::is_same_v<T, shapes::Full>) return {{"type", "full"}};
        else if constexpr (std::is_same_v<T, shapes::Halfspace>)
          return {{"type", "halfspace"}, {"normal", vec_json(s.normal, d)}, {"offset", s.offset}};
        else if constexpr (std::is_same_v<T, shapes::Ball>)
          return {{"type", "ball"}, {"center", vec_json(s.center, d)}, {"radius", s.radius}};
        else if constexpr (std::is_same_v<T, shapes::Box>)
          return {{"type", "box"}, {"lo", vec_json(s.lo, d)}, {"hi", vec_json(s.hi, d)}};
        else if constexpr (std::is_same_v<T, shapes::Stripes>)
          return {{"type", "stripes"}, {"normal", vec_json(s.normal, d)}, {"half_period", s.half_period},
                  {"shift", s.shift}, {"phase", s.phase}};
        else if constexpr (std::is_same_v<T, shapes::Polytope>) {
          json faces = json::array();
          for (const auto& f : s.faces) faces.push_back({{"normal", vec_json(f.normal, d)}, {"offset", f.offset}});
          return {{"type", "polytope"}, {"faces", faces}};
        } else if constexpr (std::is_same_v<T, shapes::Wavy>)
          return {{"type", "wavy"}, {"normal", vec_json(s.normal, d)}, {"along", vec_json(s.along, d)},
                  {"offset", s.offset}, {"amplitude", s.amplitude}, {"wavelength", s.wavelength}, {"shift", s.shift}};
        else {
          static const char* names[] = {"union", "intersection", "complement"};
          json parts = json::array();
          for (const auto& p : s.parts) parts.push_back(node_json(p.node, d));
          return {{"type", names[static_cast<int>(s.op)]}, {"parts", parts}};
        }
      },
      node);
}

inline AnalyticShape node_from_json(const nlohmann::json& j, int d) {
  const std::string t = j.at("type").get<std::string>();
  auto v = [&](const char* key) { return j.at(key).get<std::vector<double>>(); };
  if (t == "empty") return empty_shape(d);
  if (t == "full") return full_shape(d);
  if (t == "halfspace") return halfspace(d, v("normal"), j.at("offset").get<double>());
  if (t == "ball") return ball(d, v("center"), j.at("radius").get<double>());
  if (t == "box") return box(d, v("lo"), v("hi"));
  if (t == "stripes")
    return stripes(d, v("normal"), j.at("half_period").get<double>(), j.value("shift", 0.0), j.value("phase", true));
  if (t == "polytope") {
    std::vector<std::pair<std::vector<double>, double>> faces;
    for (const auto& f : j.at("faces")) faces.push_back({f.at("normal").get<std::vector<double>>(), f.at("offset").get<double>()});
    return polytope(d, faces);
  }
  if (t == "wavy")
    return wavy(d, v("normal"), v("along"), j.at("offset").get<double>(), j.at("amplitude").get<double>(),
                j.at("wavelength").get<double>(), j.value("shift", 0.0));
  if (t == "union" || t == "intersection" || t == "complement") {
    std::vector<AnalyticShape> parts;
    for (const auto& p : j.at("parts")) parts.push_back(node_from_json(p, d));
    if (t == "union") return unite(std::move(parts));
    if (t == "intersection") return intersect(std::move(parts));
    if (parts.size() != 1) throw ConfigError("complement takes one part");
    return complement(std::move(parts[0]));
  }
  throw ConfigError("unknown shape type '" + t + "'");
}
}  // namespace detail

inline nlohmann::json to_json(const AnalyticShape& s) {
  nlohmann::json j{{"d", s.d}, {"shape", detail::node_json(s.node, s.d)}};
  if (s.periodic) j["cell"] = s.L;
  return j;
}

inline AnalyticShape shape_from_json(const nlohmann::json& j) {
  try {
    const int d = j.at("d").get<int>();
    detail::check_dim(d);
    AnalyticShape s = detail::node_from_json(j.at("shape"), d);
    if (j.contains("cell")) s = periodic(std::move(s), j.at("cell").get<double>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad shape document: ") + e.what());
  }
}

}  // namespace nlpf
