#include "shel/solver.hpp"

#include "shel/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace shel {
namespace {

constexpr double kMinIrlsWeight = 1e-5;

double threshold(const StackedDesign& d, Index k, double lambda1) {
  const double w = d.weights[k];
  return w == 0.0 ? 0.0 : lambda1 * w;
}

double penalty_term(const StackedDesign& d, const VectorXd& theta, double lambda1) {
  double pen = 0.0;
  for (Index k = 0; k < theta.size(); ++k)
    if (theta[k] != 0.0) pen += threshold(d, k, lambda1) * std::abs(theta[k]);
  return pen;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Active-set cycling driver shared by the coordinate-descent solvers.
// `sweep(all)` runs one pass (over every coordinate when `all` is true, else
// over the current nonzeros) and returns the largest coefficient change.
template <class Sweep, class AfterSweep>
void cycle(const SolverConfig& cfg, int& iters, bool& converged, Sweep&& sweep, AfterSweep&& after) {
  converged = false;
  while (iters < cfg.max_iters) {
    const double full = sweep(true);
    ++iters;
    after();
    if (full < cfg.tol) {
      converged = true;
      return;
    }
    while (iters < cfg.max_iters) {
      const double partial = sweep(false);
      ++iters;
      after();
      if (partial < cfg.tol) break;
    }
  }
}

void check_shapes(const StackedDesign& d, const VectorXd& y, double lambda1) {
  if (y.size() != d.n_obs()) throw DataError("response length does not match design rows");
  if (!(lambda1 >= 0.0)) throw DataError("lambda1 must be nonnegative");
}

}  // namespace

void SolverConfig::validate() const {
  if (!(tol > 0.0)) throw ConfigError("solver tol must be positive");
  if (max_iters < 1 || max_irls < 1) throw ConfigError("solver iteration limits must be positive");
  for (std::size_t i = 1; i < lambda_path.size(); ++i)
    if (!(lambda_path[i] < lambda_path[i - 1])) throw ConfigError("lambda grid must be strictly descending");
}

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

namespace {

// Gram matrix shared by every fit along a path; null means per-column caching.
PenalizedFit gaussian_cd(const StackedDesign& d, const VectorXd& y, double lambda1, const SolverConfig& cfg,
                         const PenalizedFit* warm, const MatrixXd* shared_gram) {
  check_shapes(d, y, lambda1);
  const Index n = d.n_obs();
  const Index q = d.n_cols();
  const double nn = static_cast<double>(n);
  const double ymean = y.mean();
  const VectorXd yc = y.array() - ymean;
  const VectorXd c = d.W.transpose() * yc / nn;
  const VectorXd diag = d.W.colwise().squaredNorm().transpose() / nn;

  VectorXd theta = VectorXd::Zero(q);
  if (warm && warm->theta_scaled.size() == q) theta = warm->theta_scaled;
  for (Index k : d.dropped) theta[k] = 0.0;

  VectorXd grad = c;
  std::vector<VectorXd> gram(shared_gram ? 0 : q);
  auto gram_col = [&](Index k) -> Eigen::Ref<const VectorXd> {
    if (shared_gram) return shared_gram->col(k);
    if (gram[k].size() == 0) gram[k] = d.W.transpose() * d.W.col(k) / nn;
    return gram[k];
  };
  if (theta.any()) grad -= shared_gram ? VectorXd(*shared_gram * theta) : VectorXd(d.W.transpose() * (d.W * theta) / nn);

  auto update = [&](Index k) -> double {
    if (diag[k] == 0.0) return 0.0;
    const double old = theta[k];
    const double next = soft_threshold(grad[k] + diag[k] * old, threshold(d, k, lambda1)) / diag[k];
    if (next == old) return 0.0;
    const double delta = next - old;
    grad.noalias() -= delta * gram_col(k);
    theta[k] = next;
    return std::abs(delta);
  };
  auto sweep = [&](bool all) {
    double change = 0.0;
    for (Index k = 0; k < q; ++k)
      if (all || theta[k] != 0.0 || d.weights[k] == 0.0) change = std::max(change, update(k));
    return change;
  };

  PenalizedFit fit;
  fit.family = Family::gaussian;
  const double base = yc.squaredNorm() / (2.0 * nn);
  auto record = [&] {
    if (!cfg.track_objective || !std::isfinite(lambda1)) return;
    fit.objective_trace.push_back(base - 0.5 * theta.dot(c + grad) + penalty_term(d, theta, lambda1));
  };
  cycle(cfg, fit.n_iters, fit.converged, sweep, record);

  fit.lambda1 = lambda1;
  fit.theta_scaled = std::move(theta);
  fit.intercept_scaled = ymean;
  finalize_fit(fit, d);
  return fit;
}

}  // namespace

PenalizedFit fit_gaussian(const StackedDesign& d, const VectorXd& y, double lambda1, const SolverConfig& cfg,
                          const PenalizedFit* warm, const MatrixXd* gram) {
  if (gram && (gram->rows() != d.n_cols() || gram->cols() != d.n_cols())) gram = nullptr;
  return gaussian_cd(d, y, lambda1, cfg, warm, gram);
}

MatrixXd path_gram(const StackedDesign& d) {
  if (d.n_cols() > 3000) return MatrixXd();
  return d.W.transpose() * d.W / static_cast<double>(d.n_obs());
}

PenalizedFit fit_weighted_gaussian(const StackedDesign& d, const VectorXd& y, const VectorXd& v, double lambda1,
                                   const SolverConfig& cfg, const PenalizedFit* warm) {
  check_shapes(d, y, lambda1);
  if (v.size() != y.size()) throw DataError("observation weight length does not match the response");
  const Index q = d.n_cols();
  const double nn = static_cast<double>(d.n_obs());
  const double vsum = v.sum();
  if (!(vsum > 0.0)) throw DataError("observation weights sum to zero");

  VectorXd theta = VectorXd::Zero(q);
  double b0 = v.dot(y) / vsum;
  if (warm && warm->theta_scaled.size() == q) {
    theta = warm->theta_scaled;
    b0 = warm->intercept_scaled;
  }
  for (Index k : d.dropped) theta[k] = 0.0;

  VectorXd r = y - d.W * theta;
  r.array() -= b0;
  VectorXd xv(q);
  for (Index k = 0; k < q; ++k) xv[k] = (d.W.col(k).array().square() * v.array()).sum() / nn;

  auto update = [&](Index k) -> double {
    if (xv[k] <= 0.0) return 0.0;
    const double old = theta[k];
    const double g = (d.W.col(k).array() * v.array() * r.array()).sum() / nn;
    const double next = soft_threshold(g + xv[k] * old, threshold(d, k, lambda1)) / xv[k];
    if (next == old) return 0.0;
    const double delta = next - old;
    r.noalias() -= delta * d.W.col(k);
    theta[k] = next;
    return std::abs(delta);
  };
  auto sweep = [&](bool all) {
    double change = 0.0;
    for (Index k = 0; k < q; ++k)
      if (all || theta[k] != 0.0 || d.weights[k] == 0.0) change = std::max(change, update(k));
    const double shift = v.dot(r) / vsum;
    b0 += shift;
    r.array() -= shift;
    return std::max(change, std::abs(shift));
  };

  PenalizedFit fit;
  fit.family = Family::gaussian;
  auto record = [&] {
    if (!cfg.track_objective || !std::isfinite(lambda1)) return;
    fit.objective_trace.push_back((v.array() * r.array().square()).sum() / (2.0 * nn) +
                                  penalty_term(d, theta, lambda1));
  };
  cycle(cfg, fit.n_iters, fit.converged, sweep, record);

  fit.lambda1 = lambda1;
  fit.theta_scaled = std::move(theta);
  fit.intercept_scaled = b0;
  finalize_fit(fit, d);
  return fit;
}

double logistic_loss(const VectorXd& eta, const VectorXd& y) {
  double s = 0.0;
  for (Index i = 0; i < eta.size(); ++i) s += softplus(eta[i]) - y[i] * eta[i];
  return s / static_cast<double>(eta.size());
}

PenalizedFit fit_binomial(const StackedDesign& d, const VectorXd& y, double lambda1, const SolverConfig& cfg,
                          const PenalizedFit* warm) {
  check_shapes(d, y, lambda1);
  const double ybar = y.mean();
  if (ybar <= 0.0 || ybar >= 1.0) throw DataError("binomial fit needs both response classes present");
  const Index n = d.n_obs();

  PenalizedFit cur;
  cur.theta_scaled = VectorXd::Zero(d.n_cols());
  cur.intercept_scaled = std::log(ybar / (1.0 - ybar));
  if (warm && warm->theta_scaled.size() == d.n_cols()) {
    cur.theta_scaled = warm->theta_scaled;
    cur.intercept_scaled = warm->intercept_scaled;
  }
  for (Index k : d.dropped) cur.theta_scaled[k] = 0.0;

  auto objective = [&](const VectorXd& theta, double b0) {
    VectorXd eta = d.W * theta;
    eta.array() += b0;
    return logistic_loss(eta, y) + penalty_term(d, theta, lambda1);
  };

  SolverConfig inner = cfg;
  inner.track_objective = false;
  PenalizedFit out;
  out.family = Family::binomial;
  int total_sweeps = 0;
  bool converged = false;
  double f_cur = objective(cur.theta_scaled, cur.intercept_scaled);
  for (int it = 0; it < cfg.max_irls; ++it) {
    VectorXd eta = d.W * cur.theta_scaled;
    eta.array() += cur.intercept_scaled;
    VectorXd v(n), z(n);
    for (Index i = 0; i < n; ++i) {
      const double mu = expit(eta[i]);
      v[i] = std::max(mu * (1.0 - mu), kMinIrlsWeight);
      z[i] = eta[i] + (y[i] - mu) / v[i];
    }
    PenalizedFit step = fit_weighted_gaussian(d, z, v, lambda1, inner, &cur);
    total_sweeps += step.n_iters;

    double t = 1.0;
    VectorXd theta_new = step.theta_scaled;
    double b0_new = step.intercept_scaled;
    double f_new = objective(theta_new, b0_new);
    while (f_new > f_cur + 1e-13 * std::max(1.0, std::abs(f_cur)) && t > 1e-6) {
      t *= 0.5;
      theta_new = cur.theta_scaled + t * (step.theta_scaled - cur.theta_scaled);
      b0_new = cur.intercept_scaled + t * (step.intercept_scaled - cur.intercept_scaled);
      f_new = objective(theta_new, b0_new);
    }
    if (f_new > f_cur + 1e-13 * std::max(1.0, std::abs(f_cur))) {
      converged = true;  // no descent direction left at working precision
      break;
    }
    const double change = std::max((theta_new - cur.theta_scaled).cwiseAbs().maxCoeff(),
                                   std::abs(b0_new - cur.intercept_scaled));
    cur.theta_scaled = std::move(theta_new);
    cur.intercept_scaled = b0_new;
    f_cur = f_new;
    if (cfg.track_objective) out.objective_trace.push_back(f_cur);
    if (change < cfg.tol) {
      converged = true;
      break;
    }
  }

  out.lambda1 = lambda1;
  out.n_iters = total_sweeps;
  out.converged = converged;
  out.theta_scaled = std::move(cur.theta_scaled);
  out.intercept_scaled = cur.intercept_scaled;
  finalize_fit(out, d);

  if (lambda1 == 0.0) {
    VectorXd eta = d.W * out.theta_scaled;
    eta.array() += out.intercept_scaled;
    const double margin = ((2.0 * y.array() - 1.0) * eta.array()).minCoeff();
    if (margin > 0.0 && (!out.converged || eta.cwiseAbs().maxCoeff() > 15.0))
      throw NumericalError("binomial solver", "complete separation: the unpenalized likelihood is unbounded");
  }
  return out;
}

PenalizedFit fit_family(const StackedDesign& d, const VectorXd& y, Family family, double lambda1,
                        const SolverConfig& cfg, const PenalizedFit* warm, const VectorXd* obs_weights) {
  if (family == Family::binomial) return fit_binomial(d, y, lambda1, cfg, warm);
  if (obs_weights) return fit_weighted_gaussian(d, y, *obs_weights, lambda1, cfg, warm);
  return fit_gaussian(d, y, lambda1, cfg, warm);
}

double lambda_max(const StackedDesign& d, const VectorXd& y, Family family, const VectorXd* obs_weights) {
  const double nn = static_cast<double>(d.n_obs());
  bool has_unpenalized = false;
  for (Index k = 0; k < d.n_cols(); ++k)
    if (d.weights[k] == 0.0 && !d.is_dropped(k)) has_unpenalized = true;

  VectorXd resid;
  if (!has_unpenalized) {
    if (obs_weights) {
      const double mean = obs_weights->dot(y) / obs_weights->sum();
      resid = obs_weights->cwiseProduct((y.array() - mean).matrix());
    } else {
      resid = y.array() - y.mean();
    }
  } else {
    const double inf = std::numeric_limits<double>::infinity();
    PenalizedFit null_fit = fit_family(d, y, family, inf, SolverConfig{}, nullptr, obs_weights);
    VectorXd eta = d.W * null_fit.theta_scaled;
    eta.array() += null_fit.intercept_scaled;
    if (family == Family::binomial) {
      resid = y - eta.unaryExpr([](double e) { return expit(e); });
    } else {
      resid = y - eta;
      if (obs_weights) resid = resid.cwiseProduct(*obs_weights);
    }
  }
  const VectorXd grad = d.W.transpose() * resid / nn;
  double top = 0.0;
  for (Index k = 0; k < d.n_cols(); ++k)
    if (d.weights[k] > 0.0 && !d.is_dropped(k)) top = std::max(top, std::abs(grad[k]) / d.weights[k]);
  return top;
}

std::vector<double> log_spaced_grid(double top, int n, double ratio_min) {
  if (n < 2) throw ConfigError("lambda path needs at least 2 points");
  if (!(ratio_min > 0.0 && ratio_min < 1.0)) throw ConfigError("lambda ratio_min must lie in (0, 1)");
  if (!(top > 0.0)) throw DataError("lambda_max is zero: no penalized column is correlated with the response");
  std::vector<double> grid(n);
  const double step = std::log(ratio_min) / static_cast<double>(n - 1);
  for (int j = 0; j < n; ++j) grid[j] = top * std::exp(step * j);
  grid.front() = top;
  grid.back() = top * ratio_min;
  return grid;
}

std::vector<double> lambda_path(const StackedDesign& d, const VectorXd& y, Family family, int n_lambda,
                                double ratio_min) {
  return log_spaced_grid(lambda_max(d, y, family), n_lambda, ratio_min);
}

std::vector<PenalizedFit> fit_path(const StackedDesign& d, const VectorXd& y, Family family,
                                   const std::vector<double>& grid, const SolverConfig& cfg,
                                   const VectorXd* obs_weights) {
  std::vector<PenalizedFit> fits;
  fits.reserve(grid.size());
  // one Gram matrix for the whole gaussian path when it fits comfortably in memory
  const bool share = family == Family::gaussian && !obs_weights && grid.size() > 1;
  const MatrixXd gram = share ? path_gram(d) : MatrixXd();
  for (double lambda : grid) {
    const PenalizedFit* warm = fits.empty() ? nullptr : &fits.back();
    fits.push_back(gram.size() > 0 ? fit_gaussian(d, y, lambda, cfg, warm, &gram)
                                   : fit_family(d, y, family, lambda, cfg, warm, obs_weights));
  }
  return fits;
}

double kkt_violation(const StackedDesign& d, const VectorXd& y, const PenalizedFit& fit,
                     const VectorXd* obs_weights) {
  const double nn = static_cast<double>(d.n_obs());
  VectorXd eta = d.W * fit.theta_scaled;
  eta.array() += fit.intercept_scaled;
  VectorXd resid;
  if (fit.family == Family::binomial) {
    resid = y - eta.unaryExpr([](double e) { return expit(e); });
  } else {
    resid = y - eta;
    if (obs_weights) resid = resid.cwiseProduct(*obs_weights);
  }
  const VectorXd grad = d.W.transpose() * resid / nn;
  double worst = std::abs(resid.sum()) / nn;
  for (Index k = 0; k < d.n_cols(); ++k) {
    if (d.is_dropped(k)) continue;
    const double t = threshold(d, k, fit.lambda1);
    const double th = fit.theta_scaled[k];
    if (th != 0.0 || t == 0.0)
      worst = std::max(worst, std::abs(grad[k] - t * (th > 0.0 ? 1.0 : th < 0.0 ? -1.0 : 0.0)));
    else
      worst = std::max(worst, std::abs(grad[k]) - t);
  }
  return worst;
}

double penalized_objective(const StackedDesign& d, const VectorXd& y, const PenalizedFit& fit,
                           const VectorXd* obs_weights) {
  VectorXd eta = d.W * fit.theta_scaled;
  eta.array() += fit.intercept_scaled;
  const double pen = penalty_term(d, fit.theta_scaled, fit.lambda1);
  if (fit.family == Family::binomial) return logistic_loss(eta, y) + pen;
  const double nn = static_cast<double>(d.n_obs());
  const VectorXd r = y - eta;
  if (obs_weights) return (obs_weights->array() * r.array().square()).sum() / (2.0 * nn) + pen;
  return r.squaredNorm() / (2.0 * nn) + pen;
}

}  // namespace shel
