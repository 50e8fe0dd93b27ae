#pragma once

// Scalar special functions for the chi-squared and normal distributions.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "pvfuse/error.hpp"

namespace pvfuse {

struct ToleranceConfig {
  double abs_tol = 1e-12;
  int max_iter = 200;

  void validate() const {
    if (!(abs_tol > 0.0) || !std::isfinite(abs_tol)) throw DomainError("ToleranceConfig: abs_tol must be positive");
    if (max_iter < 1) throw DomainError("ToleranceConfig: max_iter must be >= 1");
  }
};

// Lower / upper saturation bounds for probabilities produced by this layer.
inline constexpr double kMinProbability = 1e-300;
inline constexpr double kMaxProbability = 1.0 - 1e-16;

inline double clamp_probability(double p) { return std::clamp(p, kMinProbability, kMaxProbability); }

namespace detail {

inline void require_gamma_args(double a, double x, const char* fn) {
  if (!std::isfinite(a) || !std::isfinite(x) || !(a > 0.0) || x < 0.0)
    throw DomainError(std::string(fn) + ": requires finite a > 0 and x >= 0");
}

// Safeguarded Newton iteration for cdf(x) = q on a bracket [lo, hi] with cdf(lo) <= q <= cdf(hi).
// Falls back to bisection whenever the Newton step leaves the bracket.
template <class Cdf, class Pdf>
double solve_increasing(Cdf&& cdf, Pdf&& pdf, double q, double lo, double hi, const ToleranceConfig& tol) {
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < tol.max_iter; ++it) {
    const double fx = cdf(x) - q;
    if (fx == 0.0) return x;
    if (fx < 0.0) lo = x;
    else hi = x;
    const double d = pdf(x);
    double next = (d > 0.0 && std::isfinite(d)) ? x - fx / d : lo - 1.0;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - x);
    x = next;
    if (std::abs(fx) <= tol.abs_tol && step <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(x), 1e-300))
      return x;
    if (hi - lo <= 2.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(x), 1e-300)) return x;
  }
  if (std::abs(cdf(x) - q) <= tol.abs_tol) return x;
  throw DomainError("inverse cdf did not converge");
}

}  // namespace detail

// P(a, x) = gamma(a, x) / Gamma(a).
inline double regularized_lower_gamma(double a, double x) {
  detail::require_gamma_args(a, x, "regularized_lower_gamma");
  if (x == 0.0) return 0.0;
  return boost::math::gamma_p(a, x);
}

// Q(a, x) = 1 - P(a, x), evaluated directly so small tails keep relative precision.
inline double regularized_upper_gamma(double a, double x) {
  detail::require_gamma_args(a, x, "regularized_upper_gamma");
  if (x == 0.0) return 1.0;
  return boost::math::gamma_q(a, x);
}

inline double chi2_cdf(double x, double dof) {
  if (!(dof > 0.0) || !std::isfinite(dof) || !(x >= 0.0)) throw DomainError("chi2_cdf: requires x >= 0 and dof > 0");
  return regularized_lower_gamma(dof / 2.0, x / 2.0);
}

inline double chi2_sf(double x, double dof) {
  if (!(dof > 0.0) || !std::isfinite(dof) || !(x >= 0.0)) throw DomainError("chi2_sf: requires x >= 0 and dof > 0");
  return regularized_upper_gamma(dof / 2.0, x / 2.0);
}

// Quantile of Gamma(shape, 1).
inline double gamma_inv_cdf(double q, double shape, const ToleranceConfig& tol = {}) {
  tol.validate();
  if (!(q > 0.0 && q < 1.0)) throw DomainError("gamma_inv_cdf: q must lie in (0,1)");
  if (!(shape > 0.0) || !std::isfinite(shape)) throw DomainError("gamma_inv_cdf: shape must be positive");
  auto cdf = [shape](double x) { return x <= 0.0 ? 0.0 : boost::math::gamma_p(shape, x); };
  auto pdf = [shape](double x) { return x <= 0.0 ? 0.0 : boost::math::gamma_p_derivative(shape, x); };
  double hi = std::max(1.0, shape);
  while (cdf(hi) < q) {
    hi *= 2.0;
    if (!std::isfinite(hi)) throw DomainError("gamma_inv_cdf: failed to bracket quantile");
  }
  return detail::solve_increasing(cdf, pdf, q, 0.0, hi, tol);
}

inline double chi2_inv_cdf(double q, double dof, const ToleranceConfig& tol = {}) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("chi2_inv_cdf: q must lie in (0,1)");
  if (!(dof > 0.0) || !std::isfinite(dof)) throw DomainError("chi2_inv_cdf: dof must be positive");
  return 2.0 * gamma_inv_cdf(q, dof / 2.0, tol);
}

// Saturates to [1e-300, 1 - 1e-16] so that log and probit downstream stay finite.
inline double std_normal_cdf(double z) {
  if (std::isnan(z)) throw DomainError("std_normal_cdf: NaN input");
  return clamp_probability(0.5 * std::erfc(-z / std::numbers::sqrt2));
}

inline double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double probit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("probit: p must lie in (0,1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

}  // namespace pvfuse
