#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace nlpf {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A real value or the distinguished "infinite" outcome.
class Extended {
public:
  constexpr Extended(double v = 0.0) : v_(v), inf_(false) {}
  static constexpr Extended infinite() {
    Extended e;
    e.inf_ = true;
    return e;
  }
  constexpr bool is_finite() const { return !inf_; }
  double value() const {
    if (inf_) throw std::domain_error("non-finite kernel quantity");
    return v_;
  }
  // Value with the infinite case mapped to `fallback`.
  constexpr double value_or(double fallback) const { return inf_ ? fallback : v_; }

private:
  double v_;
  bool inf_;
};

//! |S^k|, surface measure of the unit k-sphere; |S^0| = 2.
inline double sphere_area(int k) {
  const double a = 0.5 * (k + 1);
  return 2.0 * std::pow(std::numbers::pi, a) / std::tgamma(a);
}

//! C_{1,d}: integral of |theta_1| over S^{d-1}.
inline double surface_constant(int d) {
  if (d < 1) throw ConfigError("dimension must be >= 1");
  return 2.0 * std::pow(std::numbers::pi, 0.5 * (d - 1)) / std::tgamma(0.5 * (d + 1));
}

inline double critical_constant(double p, int d) {
  if (d < 1) throw ConfigError("dimension must be >= 1");
  if (!(p > d + 1)) throw ConfigError("p must exceed d+1, critical constant diverges");
  return surface_constant(d) * (1.0 / (d + 1) + 1.0 / (p - d - 1));
}

struct KernelSpec {
  double p = 0;
  int d = 0;
  double tau = 0;
  double cutoff = 0;
  // c(p,d) in the marginal law c |t|^{d-1-p}
  double marginal_c = 0;

  static KernelSpec make(double p, int d, double tau, bool strict = false) {
    if (d < 1) throw ConfigError("dimension must be >= 1");
    if (!std::isfinite(p) || !(p > d + 1)) throw ConfigError("p must exceed d+1");
    if (strict && p < d + 3) throw ConfigError("strict mode requires p >= d+3");
    if (!std::isfinite(tau) || tau < 0) throw ConfigError("tau must be finite and >= 0");
    KernelSpec s;
    s.p = p;
    s.d = d;
    s.tau = tau;
    s.cutoff = tau > 0 ? std::pow(tau, 1.0 / (p - d - 1)) : 0.0;
    if (d == 1) {
      s.marginal_c = 1.0;
    } else {
      s.marginal_c = sphere_area(d - 2) * 0.5 *
                     boost::math::beta(0.5 * (d - 1), 0.5 * (p - d + 1));
    }
    return s;
  }

  // Kernel of the unscaled functional: cutoff fixed at 1.
  static KernelSpec unit(double p, int d) { return make(p, d, 1.0); }

  KernelSpec with_tau(double t) const { return make(p, d, t); }

  double alpha() const { return p - d - 1; }
};

inline Extended kernel_radial(const KernelSpec& s, double r) {
  r = std::abs(r);
  const double m = std::max(s.cutoff, r);
  if (m == 0.0) return Extended::infinite();
  return std::pow(m, -s.p);
}

inline Extended kernel_value(const KernelSpec& s, std::span<const double> zeta) {
  double n2 = 0;
  for (double z : zeta) n2 += z * z;
  return kernel_radial(s, std::sqrt(n2));
}

//! |rho|^{d-1} K(rho).
inline Extended radial_weight(const KernelSpec& s, double rho) {
  rho = std::abs(rho);
  const Extended k = kernel_radial(s, rho);
  if (!k.is_finite()) return k;
  return std::pow(rho, s.d - 1) * k.value();
}

//! Integral of K over the hyperplane t e_1 + R^{d-1}.
inline Extended marginal_1d(const KernelSpec& s, double t) {
  t = std::abs(t);
  const double c = s.cutoff;
  if (t >= c) {
    if (t == 0.0) return Extended::infinite();
    return s.marginal_c * std::pow(t, s.d - 1 - s.p);
  }
  if (s.d == 1) return std::pow(c, -s.p);
  const double sphere = sphere_area(s.d - 2);
  const double r0 = std::sqrt((c - t) * (c + t));
  const double inner = std::pow(c, -s.p) * std::pow(r0, s.d - 1) / (s.d - 1);
  double outer;
  const double a = 0.5 * (s.p - s.d + 1), b = 0.5 * (s.d - 1);
  // t^{-2a} B(a, b, x0) = c^{-2a} x0^{-a} B(a, b, x0); series near t = 0
  const double x0 = (t / c) * (t / c);
  if (x0 < 1e-10) {
    outer = 0.5 * std::pow(c, -2 * a) * (1.0 / a + (1.0 - b) * x0 / (a + 1.0));
  } else {
    outer = 0.5 * std::pow(t, s.d - 1 - s.p) * boost::math::beta(a, b, x0);
  }
  return sphere * (inner + outer);
}

inline Extended j_tau(const KernelSpec& s) {
  if (s.tau == 0.0) return Extended::infinite();
  const double c = s.cutoff, d = s.d, p = s.p;
  const double C = surface_constant(s.d);
  if (c >= 1.0) return C * std::pow(c, -p) / (d + 1);
  return C * (std::pow(c, d + 1 - p) / (d + 1) + (std::pow(c, d + 1 - p) - 1.0) / (p - d - 1));
}

//! Integral of rho * radial_weight over [1, inf).
inline double far_moment(const KernelSpec& s) {
  const double c = s.cutoff, d = s.d, p = s.p;
  if (c <= 1.0) return 1.0 / (p - d - 1);
  return std::pow(c, -p) * (std::pow(c, d + 1) - 1.0) / (d + 1) + std::pow(c, d + 1 - p) / (p - d - 1);
}

// Second antiderivative of the radial weight, vanishing at infinity:
// P(x) = int_x^inf (rho - x) Kbar(rho) drho.
inline Extended pair_potential(const KernelSpec& s, double x) {
  if (std::isinf(x)) return 0.0;
  x = std::abs(x);
  const double c = s.cutoff, d = s.d, p = s.p;
  if (x >= c) {
    if (x == 0.0) return Extended::infinite();
    return std::pow(x, d + 1 - p) / ((p - d) * (p - d - 1));
  }
  const double near = std::pow(c, -p) *
                      ((std::pow(c, d + 1) - std::pow(x, d + 1)) / (d + 1) -
                       x * (std::pow(c, d) - std::pow(x, d)) / d);
  return near + std::pow(c, d + 1 - p) / (p - d - 1) - x * std::pow(c, d - p) / (p - d);
}

// First antiderivative: int_x^inf Kbar.
inline Extended pair_slope(const KernelSpec& s, double x) {
  if (std::isinf(x)) return 0.0;
  x = std::abs(x);
  const double c = s.cutoff, d = s.d, p = s.p;
  if (x >= c) {
    if (x == 0.0) return Extended::infinite();
    return std::pow(x, d - p) / (p - d);
  }
  return std::pow(c, -p) * (std::pow(c, d) - std::pow(x, d)) / d + std::pow(c, d - p) / (p - d);
}

//! int_t^inf (rho - t) Khat(rho) drho.
inline Extended marginal_potential(const KernelSpec& s, double t) {
  t = std::abs(t);
  const double c = s.cutoff, d = s.d, p = s.p;
  const double far = s.marginal_c / ((p - d) * (p - d - 1));
  if (t >= c) {
    if (t == 0.0) return Extended::infinite();
    return far * std::pow(t, d + 1 - p);
  }
  const double tail = far * std::pow(c, d + 1 - p) + (c - t) * s.marginal_c * std::pow(c, d - p) / (p - d);
  double head;
  if (s.d == 1) {
    head = std::pow(c, -p) * 0.5 * (c - t) * (c - t);
  } else {
    // rho = c - w^2 removes the square-root behaviour of Khat at the cutoff
    auto f = [&](double w) {
      const double rho = c - w * w;
      return 2 * w * (rho - t) * marginal_1d(s, rho).value();
    };
    head = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, std::sqrt(c - t), 6, 1e-13);
  }
  return head + tail;
}

} // namespace nlpf
