#pragma once

#include "shel/data.hpp"

#include <cmath>

#include <vector>

namespace shel {

struct SolverConfig {
  double tol = 1e-8;       // max abs coefficient change per sweep, scaled space
  int max_iters = 10000;   // coordinate sweeps
  int max_irls = 50;       // proximal Newton steps (binomial)
  std::vector<double> lambda_path;  // optional descending lambda1 grid
  bool track_objective = false;     // record the penalized objective after every sweep

  void validate() const;
};

/// sign(z) * max(|z| - t, 0). Returns exactly 0 on the closed dead zone |z| <= t.
double soft_threshold(double z, double t);

/// Weighted lasso with squared-error loss and an unpenalized intercept:
///   (2N)^-1 ||y - b0 - W theta||^2 + lambda1 * sum_k w_k |theta_k|.
/// Coordinate descent with covariance (Gram) updates and active-set cycling.
/// Columns with weight 0 are unpenalized; lambda1 may be +inf to fit only those.
/// `gram` optionally supplies W'W/N (reused along a path).
PenalizedFit fit_gaussian(const StackedDesign& design, const VectorXd& y, double lambda1,
                          const SolverConfig& config = {}, const PenalizedFit* warm = nullptr,
                          const MatrixXd* gram = nullptr);

/// W'W/N when it is small enough to keep (at most 3000 columns), else empty.
MatrixXd path_gram(const StackedDesign& design);

/// Observation-weighted variant: (2N)^-1 sum_i v_i (y_i - b0 - W_i theta)^2 + penalty.
/// Naive residual updates; this is the inner solve of the binomial solver.
PenalizedFit fit_weighted_gaussian(const StackedDesign& design, const VectorXd& y,
                                   const VectorXd& obs_weights, double lambda1,
                                   const SolverConfig& config = {},
                                   const PenalizedFit* warm = nullptr);

/// Weighted lasso with logistic loss, N^-1 sum_i [log(1 + e^eta_i) - y_i eta_i],
/// by proximal Newton (IRLS outer loop, penalized weighted least squares
/// inner solves, backtracking on the penalized objective).
/// Throws NumericalError when lambda1 = 0 and the classes are separable.
PenalizedFit fit_binomial(const StackedDesign& design, const VectorXd& y, double lambda1,
                          const SolverConfig& config = {}, const PenalizedFit* warm = nullptr);

PenalizedFit fit_family(const StackedDesign& design, const VectorXd& y, Family family, double lambda1,
                        const SolverConfig& config = {}, const PenalizedFit* warm = nullptr,
                        const VectorXd* obs_weights = nullptr);

/// Smallest lambda1 at which every penalized coefficient is zero.
double lambda_max(const StackedDesign& design, const VectorXd& y, Family family,
                  const VectorXd* obs_weights = nullptr);

/// `n` values log-spaced from `top` down to ratio_min * top.
std::vector<double> log_spaced_grid(double top, int n, double ratio_min);

/// Descending log-spaced grid from lambda_max down to ratio_min * lambda_max.
std::vector<double> lambda_path(const StackedDesign& design, const VectorXd& y, Family family,
                                int n_lambda, double ratio_min);

/// Warm-started fits along a descending grid.
std::vector<PenalizedFit> fit_path(const StackedDesign& design, const VectorXd& y, Family family,
                                   const std::vector<double>& grid, const SolverConfig& config = {},
                                   const VectorXd* obs_weights = nullptr);

/// Largest KKT stationarity violation of a fit in scaled space (intercept included).
double kkt_violation(const StackedDesign& design, const VectorXd& y, const PenalizedFit& fit,
                     const VectorXd* obs_weights = nullptr);

/// Penalized objective of the scaled-space solution in `fit` at fit.lambda1.
double penalized_objective(const StackedDesign& design, const VectorXd& y, const PenalizedFit& fit,
                           const VectorXd* obs_weights = nullptr);

/// Mean logistic negative log-likelihood for a given linear predictor.
double logistic_loss(const VectorXd& eta, const VectorXd& y);

inline double expit(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace shel
