#include "shel/truncnorm.hpp"

#include "shel/errors.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <limits>

namespace shel {
namespace {

constexpr double kTail = 5.0;
const double kInvSqrt2 = 1.0 / std::sqrt(2.0);

double upper_q(double z) { return 0.5 * std::erfc(z * kInvSqrt2); }

double density(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); }

// P(u < Z < v) for u < v without cancellation.
double mass(double u, double v) {
  if (u >= 0.0) {
    const double qu = upper_q(u), qv = upper_q(v);
    if (std::isfinite(v) && qv > 0.5 * qu)
      return boost::math::quadrature::gauss<double, 20>::integrate(density, u, v);
    return qu - qv;
  }
  if (v <= 0.0) return mass(-v, -u);
  return 0.5 * (std::erf(v * kInvSqrt2) - std::erf(u * kInvSqrt2));
}

// 1 - Q(z)/Q(alpha) for z >= alpha > 5.
double one_minus_ratio(double z, double alpha) {
  if (std::isinf(z)) return 1.0;
  if ((z - alpha) * (z + alpha) < 2.0) {
    // Narrow interval: integrate the density scaled by phi(alpha).
    const double area = boost::math::quadrature::gauss<double, 20>::integrate(
        [alpha](double t) { return std::exp(-0.5 * (t - alpha) * (t + alpha)); }, alpha, z);
    return area * std::exp(-log_mills_ratio(alpha));
  }
  const double log_rho = -0.5 * (z - alpha) * (z + alpha) + log_mills_ratio(z) - log_mills_ratio(alpha);
  return -std::expm1(log_rho);
}

double standardized_cdf(double xi, double alpha, double beta) {
  if (alpha > kTail) return one_minus_ratio(xi, alpha) / one_minus_ratio(beta, alpha);
  if (beta < -kTail) {
    // Lower tail: with s = -beta <= t = -xi <= r = -alpha,
    // T = Q(t)/Q(s) * (1 - Q(r)/Q(t)) / (1 - Q(r)/Q(s)).
    const double s = -beta, t = -xi, r = -alpha;
    if (std::isinf(t)) return 0.0;
    const double log_ratio = -0.5 * (t - s) * (t + s) + log_mills_ratio(t) - log_mills_ratio(s);
    return std::min(1.0, std::exp(log_ratio) * one_minus_ratio(r, t) / one_minus_ratio(r, s));
  }
  const double den = mass(alpha, beta);
  if (!(den > 0.0)) throw NumericalError("truncated normal", "truncation interval has zero probability");
  return std::min(1.0, mass(alpha, xi) / den);
}

}  // namespace

double log_mills_ratio(double z) {
  if (z < kTail) return std::log(upper_q(z)) + 0.5 * z * z + 0.5 * std::log(2.0 * M_PI);
  // Lentz evaluation of R(z) = 1/(z + 1/(z + 2/(z + 3/(z + ...)))).
  const double tiny = 1e-300;
  double f = z, c = z, d = 0.0;
  for (int k = 1; k < 500; ++k) {
    d = z + k * d;
    d = std::abs(d) < tiny ? tiny : d;
    c = z + k / c;
    c = std::abs(c) < tiny ? tiny : c;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-17) break;
  }
  return -std::log(f);
}

double truncated_normal_cdf(double x, double mu, double sigma2, double a, double b, bool* clamped) {
  if (!(sigma2 > 0.0)) throw NumericalError("truncated normal", "variance must be positive");
  if (!(a < b)) throw NumericalError("truncated normal", "truncation interval must satisfy a < b");
  if (clamped) *clamped = false;
  if (x <= a) {
    if (clamped && x < a) *clamped = true;
    return 0.0;
  }
  if (x >= b) {
    if (clamped && x > b) *clamped = true;
    return 1.0;
  }
  const double sd = std::sqrt(sigma2);
  return standardized_cdf((x - mu) / sd, (a - mu) / sd, (b - mu) / sd);
}

}  // namespace shel
