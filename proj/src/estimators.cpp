#include "shel/estimators.hpp"

#include "shel/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace shel {
namespace {

void require_family(const ClusteredDataset& data, Family family, const char* what) {
  if (data.family() != family)
    throw ConfigError(std::string(what) + " needs the " + to_string(family) + " family");
}

double coupling(const ClusteredDataset& data, const SyntheticDesign& sd) {
  return penalty_ratio(data.n_covariates(), sd.p0());
}

void set_lambda2(PenalizedFit& fit, Index p0, double ratio) {
  fit.lambda2 = p0 > 0 ? ratio * fit.lambda1 : 0.0;
}

VectorXd least_squares(const MatrixXd& A, const VectorXd& b) { return A.colPivHouseholderQr().solve(b); }

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::lasso: return "lasso";
    case Method::shel: return "shel";
    case Method::gshel: return "gshel";
    case Method::ishel1: return "ishel1";
    case Method::ishel2: return "ishel2";
    case Method::igshel: return "igshel";
  }
  return "shel";
}

Method method_from_string(std::string_view name) {
  for (Method m : {Method::lasso, Method::shel, Method::gshel, Method::ishel1, Method::ishel2, Method::igshel})
    if (name == to_string(m)) return m;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

bool is_iterative(Method m) { return m == Method::ishel1 || m == Method::ishel2 || m == Method::igshel; }

MatrixXd stacked_columns(const ClusteredDataset& data, const SyntheticDesign& sd) {
  if (sd.p0() > 0 && sd.B.rows() != data.n_obs()) throw DataError("B rows do not match the dataset");
  MatrixXd raw(data.n_obs(), data.n_covariates() + sd.p0());
  raw.leftCols(data.n_covariates()) = data.X();
  if (sd.p0() > 0) raw.rightCols(sd.p0()) = sd.B;
  return raw;
}

VectorXd stacked_weights(Index p, Index p0, double ratio) {
  VectorXd w(p + p0);
  w.head(p).setOnes();
  w.tail(p0).setConstant(ratio);
  return w;
}

StackedDesign shel_design(const ClusteredDataset& data, const SyntheticDesign& sd) {
  return stack_design(data.X(), sd.p0() > 0 ? sd.B : MatrixXd(data.n_obs(), 0), coupling(data, sd));
}

PenalizedFit fit_lasso(const ClusteredDataset& data, double lambda1, const SolverConfig& cfg) {
  const StackedDesign d = stack_design(data.X(), MatrixXd(data.n_obs(), 0), 1.0);
  return fit_family(d, data.y(), data.family(), lambda1, cfg);
}

PenalizedFit fit_shel(const ClusteredDataset& data, const SyntheticDesign& sd, double lambda1,
                      const SolverConfig& cfg) {
  require_family(data, Family::gaussian, "SHEL");
  PenalizedFit fit = fit_gaussian(shel_design(data, sd), data.y(), lambda1, cfg);
  set_lambda2(fit, sd.p0(), coupling(data, sd));
  return fit;
}

PenalizedFit fit_gshel(const ClusteredDataset& data, const SyntheticDesign& sd, double lambda1,
                       const SolverConfig& cfg) {
  require_family(data, Family::binomial, "GSHEL");
  PenalizedFit fit = fit_binomial(shel_design(data, sd), data.y(), lambda1, cfg);
  set_lambda2(fit, sd.p0(), coupling(data, sd));
  return fit;
}

CvResult cross_validate(const ClusteredDataset& data, const SyntheticDesign& sd, const CvConfig& cfg) {
  return cross_validate(stacked_columns(data, sd), stacked_weights(data.n_covariates(), sd.p0(), coupling(data, sd)),
                        data.n_covariates(), data.y(), data.family(), data.clusters(), cfg);
}

ShelFit fit_cv(const ClusteredDataset& data, const SyntheticDesign& sd, const EstimatorConfig& cfg, bool use_1se) {
  ShelFit out;
  out.family = data.family();
  out.method = sd.p0() == 0 ? Method::lasso : (data.family() == Family::binomial ? Method::gshel : Method::shel);
  out.synthetic = sd;
  out.use_1se = use_1se;
  out.raw = stacked_columns(data, sd);
  const double ratio = coupling(data, sd);
  const VectorXd w = stacked_weights(data.n_covariates(), sd.p0(), ratio);
  out.cv = cross_validate(out.raw, w, data.n_covariates(), data.y(), data.family(), data.clusters(), cfg.cv);
  out.design = standardize_columns(out.raw, w, data.n_covariates());
  out.fit = fit_selected(out.design, data.y(), data.family(), out.cv,
                         use_1se ? out.cv.index_1se : out.cv.index_min, cfg.cv);
  set_lambda2(out.fit, sd.p0(), ratio);
  return out;
}

ShelFit fit_ishel(const ClusteredDataset& data, const SyntheticDesign& sd, const EstimatorConfig& cfg,
                  bool use_1se) {
  const Index n = data.n_obs();
  const Index p = data.n_covariates();
  const Index p0 = sd.p0();
  const double e_thr = cfg.e_thr > 0.0 ? cfg.e_thr : 1e-6 * static_cast<double>(n);
  if (cfg.max_outer < 1) throw ConfigError("max_outer must be at least 1");

  ShelFit cur = fit_cv(data, sd, cfg, use_1se);
  const double ratio = coupling(data, sd);
  VectorXd offset = p0 > 0 ? VectorXd(sd.B * cur.fit.gamma) : VectorXd::Zero(n);

  IterativeTrace trace;
  trace.e_thr = e_thr;
  VectorXd w(p + p0 + 1);
  w.head(p + p0) = stacked_weights(p, p0, ratio);
  w[p + p0] = 0.0;

  ShelFit best = cur;
  VectorXd best_offset = offset;
  double best_change = std::numeric_limits<double>::infinity();
  for (int s = 1; s <= cfg.max_outer; ++s) {
    ShelFit step;
    step.family = data.family();
    step.synthetic = sd;
    step.use_1se = use_1se;
    step.raw.resize(n, p + p0 + 1);
    step.raw.leftCols(p + p0) = stacked_columns(data, sd);
    step.raw.col(p + p0) = offset;
    step.cv = cross_validate(step.raw, w, p, data.y(), data.family(), data.clusters(), cfg.cv);
    step.design = standardize_columns(step.raw, w, p);
    step.fit = fit_selected(step.design, data.y(), data.family(), step.cv,
                            use_1se ? step.cv.index_1se : step.cv.index_min, cfg.cv);
    step.fit.gamma = step.fit.theta.segment(p, p0);
    set_lambda2(step.fit, p0, ratio);

    const double carry = step.fit.theta[p + p0];
    VectorXd next = carry * offset;
    if (p0 > 0) next += sd.B * step.fit.gamma;
    const double change = (next - offset).squaredNorm();
    trace.change.push_back(change);
    trace.carry_coef.push_back(carry);
    trace.lambdas.push_back(step.fit.lambda1);
    trace.n_iterations = s;
    offset = std::move(next);
    if (change < best_change) {
      best_change = change;
      best = step;
      best_offset = offset;
      trace.best = static_cast<std::size_t>(s - 1);
    }
    if (change < e_thr) {
      trace.converged = true;
      break;
    }
  }
  trace.offset = best_offset;
  best.trace = std::move(trace);
  best.method = data.family() == Family::binomial ? Method::igshel : (use_1se ? Method::ishel1 : Method::ishel2);
  return best;
}

ShelFit run_method(const ClusteredDataset& data, Method method, const EstimatorConfig& cfg) {
  switch (method) {
    case Method::shel:
    case Method::ishel1:
    case Method::ishel2: require_family(data, Family::gaussian, to_string(method).c_str()); break;
    case Method::gshel:
    case Method::igshel: require_family(data, Family::binomial, to_string(method).c_str()); break;
    case Method::lasso: break;
  }
  ScreeningReport report;
  SyntheticDesign sd;
  sd.B.resize(data.n_obs(), 0);
  sd.alpha = cfg.alpha;
  if (method != Method::lasso) sd = build_synthetic_design(data, cfg.alpha, cfg.cv.threads, &report);

  ShelFit out;
  if (is_iterative(method))
    out = fit_ishel(data, sd, cfg, method != Method::ishel2);
  else
    out = fit_cv(data, sd, cfg, true);
  out.method = method;
  out.screening = std::move(report);
  return out;
}

TargetShift target_shift_oracle(const VectorXd& alpha, const MatrixXd& Bc, int M2, bool greedy) {
  const Index m = Bc.rows();
  const Index p0 = Bc.cols();
  if (alpha.size() != m) throw DataError("alpha length does not match the rows of Bc");
  if (M2 < 0) throw ConfigError("M2 must be nonnegative");
  const Index k = std::min<Index>(M2, p0);
  TargetShift out;
  out.gamma_star = VectorXd::Zero(p0);
  double best = alpha.squaredNorm();

  auto evaluate = [&](const std::vector<Index>& support) {
    MatrixXd A(m, static_cast<Index>(support.size()));
    for (std::size_t j = 0; j < support.size(); ++j) A.col(static_cast<Index>(j)) = Bc.col(support[j]);
    const VectorXd coef = least_squares(A, alpha);
    return std::make_pair((alpha - A * coef).squaredNorm(), coef);
  };
  auto take = [&](const std::vector<Index>& support, const VectorXd& coef) {
    out.gamma_star.setZero();
    for (std::size_t j = 0; j < support.size(); ++j) out.gamma_star[support[j]] = coef[static_cast<Index>(j)];
    out.support = support;
  };

  if (k == 0) {
  } else if (!greedy) {
    if (p0 > 12) throw ConfigError("exhaustive target-shift search supports p0 <= 12; use greedy mode");
    std::vector<Index> support;
    std::function<void(Index)> rec = [&](Index start) {
      if (static_cast<Index>(support.size()) == k) {
        const auto [rss, coef] = evaluate(support);
        if (rss < best - 1e-14 * std::max(1.0, best) || out.support.empty()) {
          best = rss;
          take(support, coef);
        }
        return;
      }
      for (Index j = start; j < p0; ++j) {
        support.push_back(j);
        rec(j + 1);
        support.pop_back();
      }
    };
    rec(0);
  } else {
    out.approximate = true;
    std::vector<Index> support;
    VectorXd resid = alpha;
    for (Index step = 0; step < k; ++step) {
      Index pick = -1;
      double score = -1.0;
      for (Index j = 0; j < p0; ++j) {
        if (std::find(support.begin(), support.end(), j) != support.end()) continue;
        const double norm = Bc.col(j).norm();
        if (norm == 0.0) continue;
        const double s = std::abs(Bc.col(j).dot(resid)) / norm;
        if (s > score) {
          score = s;
          pick = j;
        }
      }
      if (pick < 0) break;
      support.push_back(pick);
      std::sort(support.begin(), support.end());
      const auto [rss, coef] = evaluate(support);
      best = rss;
      take(support, coef);
      MatrixXd A(m, static_cast<Index>(support.size()));
      for (std::size_t j = 0; j < support.size(); ++j) A.col(static_cast<Index>(j)) = Bc.col(support[j]);
      resid = alpha - A * coef;
    }
  }
  out.delta_m = std::sqrt(best / static_cast<double>(m));
  return out;
}

}  // namespace shel
