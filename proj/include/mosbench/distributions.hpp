#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include "mosbench/common.hpp"

namespace mosbench {

// Tail probabilities implemented from scratch: continued-fraction
// regularized incomplete beta for t/F, and direct numeric integration for
// the studentized range. Golden values from published tables are pinned in
// the test suite.

namespace dist_detail {

// Continued fraction for the incomplete beta (Lentz's algorithm).
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

// Gauss-Legendre nodes/weights on [-1, 1], Newton iteration on P_n.
inline std::vector<std::pair<double, double>> gauss_legendre(int n) {
  std::vector<std::pair<double, double>> nw(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    nw[i] = {-x, w};
    nw[n - 1 - i] = {x, w};
  }
  return nw;
}

inline const std::vector<std::pair<double, double>>& gl128() {
  static const auto nodes = gauss_legendre(128);
  return nodes;
}
inline const std::vector<std::pair<double, double>>& gl160() {
  static const auto nodes = gauss_legendre(160);
  return nodes;
}

}  // namespace dist_detail

// Regularized incomplete beta I_x(a, b).
inline double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lnb = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                     a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(lnb);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * dist_detail::betacf(a, b, x) / a;
  return 1.0 - front * dist_detail::betacf(b, a, 1.0 - x) / b;
}

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

// Student-t CDF via the incomplete beta.
inline double student_t_cdf(double t, double nu) {
  if (nu <= 0) throw ValidationError("student_t_cdf: nu must be positive");
  const double x = nu / (nu + t * t);
  const double p = 0.5 * reg_inc_beta(nu / 2.0, 0.5, x);
  return t >= 0 ? 1.0 - p : p;
}

// Inverse Student-t CDF by bisection.
inline double student_t_quantile(double p, double nu) {
  if (!(p > 0.0 && p < 1.0))
    throw ValidationError("student_t_quantile: p must be in (0, 1)");
  if (p == 0.5) return 0.0;
  const bool upper = p > 0.5;
  const double target = upper ? p : 1.0 - p;
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, nu) < target) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (student_t_cdf(mid, nu) < target) lo = mid;
    else hi = mid;
    if (hi - lo < 1e-12 * std::max(1.0, hi)) break;
  }
  const double q = 0.5 * (lo + hi);
  return upper ? q : -q;
}

// Upper tail of the F distribution: P(F > f) with (d1, d2) df.
inline double f_sf(double f, double d1, double d2) {
  if (d1 <= 0 || d2 <= 0) throw ValidationError("f_sf: df must be positive");
  if (f <= 0) return 1.0;
  if (std::isinf(f)) return 0.0;
  return reg_inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

// P(range of k iid standard normals <= q).
inline double normal_range_cdf(double q, int k) {
  if (q <= 0.0) return 0.0;
  if (k < 2) throw ValidationError("normal_range_cdf: k must be >= 2");
  // k * int phi(x) [Phi(x) - Phi(x-q)]^(k-1) dx over the location of the max.
  const auto& nodes = dist_detail::gl128();
  const double lo = -9.0, hi = 9.0;
  const double c = (hi - lo) / 2.0, mid = (hi + lo) / 2.0;
  double acc = 0.0;
  for (const auto& [xi, wi] : nodes) {
    const double x = mid + c * xi;
    const double inner = normal_cdf(x) - normal_cdf(x - q);
    if (inner <= 0.0) continue;
    acc += wi * normal_pdf(x) * std::pow(inner, k - 1);
  }
  return std::min(1.0, k * c * acc);
}

// CDF of the studentized range Q_{k, nu}: numeric integration over the
// scale variable s = sqrt(chi^2_nu / nu).
inline double studentized_range_cdf(double q, int k, double nu) {
  if (k < 2) throw ValidationError("studentized_range_cdf: k must be >= 2");
  if (nu <= 0) throw ValidationError("studentized_range_cdf: nu must be positive");
  if (q <= 0.0) return 0.0;
  // log of the normalizing constant of the density of s.
  const double log_coef = (1.0 - nu / 2.0) * std::log(2.0) +
                          (nu / 2.0) * std::log(nu) - std::lgamma(nu / 2.0);
  const double s_hi = std::max(4.0, 1.0 + 14.0 / std::sqrt(nu));
  const auto& nodes = dist_detail::gl160();
  const double c = s_hi / 2.0;
  double acc = 0.0;
  for (const auto& [xi, wi] : nodes) {
    const double s = c + c * xi;  // maps [-1,1] -> (0, s_hi)
    if (s <= 0.0) continue;
    const double log_dens =
        log_coef + (nu - 1.0) * std::log(s) - nu * s * s / 2.0;
    if (log_dens < -700.0) continue;
    acc += wi * std::exp(log_dens) * normal_range_cdf(q * s, k);
  }
  return std::min(1.0, c * acc);
}

inline double studentized_range_sf(double q, int k, double nu) {
  return std::max(0.0, 1.0 - studentized_range_cdf(q, k, nu));
}

// Inverse CDF by bisection; p in (0, 1).
inline double studentized_range_quantile(double p, int k, double nu) {
  if (!(p > 0.0 && p < 1.0))
    throw ValidationError("studentized_range_quantile: p must be in (0, 1)");
  double lo = 0.0, hi = 2.0;
  while (studentized_range_cdf(hi, k, nu) < p && hi < 1e4) hi *= 2.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (studentized_range_cdf(mid, k, nu) < p) lo = mid;
    else hi = mid;
    if (hi - lo < 1e-10 * std::max(1.0, hi)) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace mosbench
