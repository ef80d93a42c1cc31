#pragma once

#include <cmath>
#include <span>

namespace nlpf {

// Euler-Maclaurin evaluation of
//   sum_{k >= K} sum_j a_j (b_j + k L)^{-alpha}.
// For alpha <= 1 the weights a_j must sum to zero so the series converges;
// the antiderivative below is then the convergent combination.
inline double power_tail(std::span<const double> a, std::span<const double> b, double L,
                         double alpha, long K) {
  static constexpr double bern[] = {1.0 / 6, -1.0 / 30, 1.0 / 42, -1.0 / 30, 5.0 / 66, -691.0 / 2730};
  const std::size_t n = a.size();
  double integral = 0, head = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double x = b[j] + K * L;
    if (alpha == 1.0)
      integral -= a[j] * std::log(x) / L;
    else
      integral += a[j] * std::pow(x, 1.0 - alpha) / ((alpha - 1.0) * L);
    head += a[j] * std::pow(x, -alpha);
  }
  double corr = 0;
  double fact = 1;  // (2i)!
  for (int i = 1; i <= 6; ++i) {
    fact *= (2.0 * i - 1) * (2.0 * i);
    const int order = 2 * i - 1;
    double der = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double x = b[j] + K * L;
      double poch = 1;
      for (int q = 0; q < order; ++q) poch *= (-alpha - q);
      der += a[j] * poch * std::pow(L, order) * std::pow(x, -alpha - order);
    }
    corr += bern[i - 1] / fact * der;
  }
  return integral + 0.5 * head - corr;
}

} // namespace nlpf
