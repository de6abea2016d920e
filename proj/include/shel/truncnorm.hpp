#pragma once

namespace shel {

/// log(Q(z) / phi(z)), the log Mills ratio of the standard normal.
double log_mills_ratio(double z);

/// CDF at x of N(mu, sigma2) truncated to [a, b] (a or b may be infinite).
/// Uses upper-tail ratios when (a - mu)/sigma > 5 and the mirrored form when
/// (b - mu)/sigma < -5. Values of x outside [a, b] are clamped to 0 or 1 and
/// reported through `clamped`.
double truncated_normal_cdf(double x, double mu, double sigma2, double a, double b, bool* clamped = nullptr);

}  // namespace shel
