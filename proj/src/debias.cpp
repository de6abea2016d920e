#include "shel/debias.hpp"

#include "shel/errors.hpp"
#include "shel/estimators.hpp"
#include "shel/parallel.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <optional>
#include <ostream>

namespace shel {
namespace {

VectorXd fitted_mean(const StackedDesign& design, const PenalizedFit& fit, Family family) {
  VectorXd eta = design.W * fit.theta_scaled;
  eta.array() += fit.intercept_scaled;
  if (family == Family::binomial)
    for (Index i = 0; i < eta.size(); ++i) eta[i] = expit(eta[i]);
  return eta;
}

// V^{1/2} (W - 1 c'), c the V-weighted column means.
MatrixXd weighted_design(const MatrixXd& W, const VectorXd& v) {
  const double sw = v.sum();
  const Eigen::RowVectorXd c = (v.transpose() * W) / sw;
  MatrixXd out = W.rowwise() - c;
  return v.cwiseSqrt().asDiagonal() * out;
}

}  // namespace

VectorXd working_variance(const StackedDesign& design, const PenalizedFit& fit, Family family) {
  if (family == Family::gaussian) return VectorXd::Ones(design.n_obs());
  const VectorXd mu = fitted_mean(design, fit, family);
  return (mu.array() * (1.0 - mu.array())).max(1e-5).matrix();
}

NodewiseResult nodewise_fit(const StackedDesign& design, const VectorXd& v, const ClusterIndex& clusters, Index l,
                            const CvConfig& cv, bool use_1se, bool project_synthetic) {
  const Index p = design.p;
  const Index q = design.n_cols();
  const Index n = design.n_obs();
  if (l < 0 || l >= p) throw ConfigError("nodewise target must be a covariate index");
  if (v.size() != n) throw DataError("working variance length does not match the design");

  const MatrixXd Xt = weighted_design(design.W, v);
  const Index others = q - 1;
  MatrixXd raw(n, others);
  VectorXd w(others);
  for (Index k = 0, j = 0; k < q; ++k) {
    if (k == l) continue;
    raw.col(j) = Xt.col(k);
    w[j] = design.weights[k];
    ++j;
  }
  const VectorXd target = Xt.col(l);

  NodewiseResult out;
  VectorXd coef = VectorXd::Zero(others);
  if (others > 0 && target.squaredNorm() > 0.0) {
    const CvResult res = cross_validate(raw, w, p - 1, target, Family::gaussian, clusters, cv);
    const StackedDesign d = standardize_columns(raw, w, p - 1);
    const PenalizedFit nf = fit_selected(d, target, Family::gaussian, res, use_1se ? res.index_1se : res.index_min, cv);
    coef = nf.theta;
    out.lambda = nf.lambda1;
  }
  // literal variant: B coefficients dropped from both the residual and a_hat
  if (!project_synthetic) coef.tail(others - (p - 1)).setZero();
  out.zeta = coef;
  const VectorXd resid = target - raw * coef;
  out.sigma2 = resid.squaredNorm() / static_cast<double>(n);
  if (!(out.sigma2 >= 1e-10))
    throw NumericalError("nodewise regression",
                         "residual variance below 1e-10 for covariate " + std::to_string(l + 1) + " (collinear)");
  out.a_hat = VectorXd::Zero(q);
  out.a_hat[l] = 1.0;
  for (Index k = 0, j = 0; k < q; ++k) {
    if (k == l) continue;
    out.a_hat[k] = -coef[j++];
  }
  out.a_hat /= out.sigma2;
  return out;
}

double debias(const StackedDesign& design, const VectorXd& y, const PenalizedFit& fit, Family family,
              const VectorXd& a_hat, Index l) {
  const VectorXd r = y - fitted_mean(design, fit, family);
  const VectorXd score = design.W.transpose() * r / static_cast<double>(y.size());
  return fit.theta_scaled[l] + a_hat.dot(score);
}

ClusterVariance cluster_variance(const StackedDesign& design, const VectorXd& y, const PenalizedFit& fit,
                                 Family family, const ClusterIndex& clusters, const VectorXd& a_hat) {
  const VectorXd r = y - fitted_mean(design, fit, family);
  const VectorXd phi = (design.W * a_hat).cwiseProduct(r);
  ClusterVariance out;
  out.Phi = clusters.cluster_sums(phi);
  out.V = out.Phi.squaredNorm() / static_cast<double>(clusters.n_clusters());
  out.V_obs = phi.squaredNorm() / static_cast<double>(phi.size());
  return out;
}

std::vector<Index> active_beta(const ShelFit& fit) {
  std::vector<Index> out;
  for (Index k : fit.fit.active_set)
    if (k < fit.design.p) out.push_back(k);
  return out;
}

DebiasReport debiased_test_suite(const ShelFit& fit, const ClusteredDataset& data, const std::vector<Index>& targets,
                                 const DebiasConfig& cfg) {
  if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  const StackedDesign& d = fit.design;
  for (Index l : targets)
    if (l < 0 || l >= d.p) throw ConfigError("debiasing target " + std::to_string(l + 1) + " is not a covariate");
  const VectorXd& y = data.y();
  const VectorXd v = working_variance(d, fit.fit, fit.family);
  const double m = static_cast<double>(data.n_clusters());
  const double n = static_cast<double>(data.n_obs());
  const boost::math::normal nd;
  const double zq = boost::math::quantile(boost::math::complement(nd, 0.5 * cfg.level));
  const MatrixXd Xt = weighted_design(d.W, v);

  std::vector<std::optional<DebiasRow>> rows(targets.size());
  std::vector<std::string> errs(targets.size());
  parallel_for(targets.size(), cfg.threads, [&](std::size_t t) {
    const Index l = targets[t];
    try {
      if (d.is_dropped(l)) throw NumericalError("nodewise regression", "covariate is constant");
      const NodewiseResult nw = nodewise_fit(d, v, data.clusters(), l, cfg.cv, cfg.use_1se, cfg.project_synthetic);
      const double b1 = debias(d, y, fit.fit, fit.family, nw.a_hat, l);
      const ClusterVariance cv = cluster_variance(d, y, fit.fit, fit.family, data.clusters(), nw.a_hat);
      const double scale = d.column_scales[l];
      DebiasRow r;
      r.index = l;
      r.estimate = fit.fit.theta_scaled[l] / scale;
      r.debiased = b1 / scale;
      r.V = cv.V;
      r.se = std::sqrt(cv.V / m) * (cfg.cluster_normalization ? 1.0 : m / n) / scale;
      r.nodewise_lambda = nw.lambda;
      r.a_l1 = nw.a_hat.lpNorm<1>();
      VectorXd resid = Xt.transpose() * (Xt * nw.a_hat) / n;
      resid[l] -= 1.0;
      r.kkt_inf = resid.cwiseAbs().maxCoeff();
      if (r.se > 0.0) {
        r.z = r.debiased / r.se;
        r.pvalue = 2.0 * boost::math::cdf(boost::math::complement(nd, std::abs(r.z)));
      } else {
        r.infinite_precision = true;
        r.z = r.debiased == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.debiased);
        r.pvalue = r.debiased == 0.0 ? 1.0 : 0.0;
      }
      r.lo = r.debiased - zq * r.se;
      r.hi = r.debiased + zq * r.se;
      rows[t] = r;
    } catch (const NumericalError& e) {
      errs[t] = "covariate " + std::to_string(l + 1) + ": " + e.what();
    } catch (const DataError& e) {
      errs[t] = "covariate " + std::to_string(l + 1) + ": " + e.what();
    }
  });
  DebiasReport out;
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t]) out.rows.push_back(*rows[t]);
    if (!errs[t].empty()) out.errors.push_back(errs[t]);
  }
  return out;
}

void write_debias_csv(std::ostream& out, const DebiasReport& report) {
  out << "index,estimate,debiased,V,se,z,pvalue,ci_lo,ci_hi,a_l1,kkt_inf\n";
  out.precision(17);
  for (const auto& r : report.rows)
    out << r.index + 1 << ',' << r.estimate << ',' << r.debiased << ',' << r.V << ',' << r.se << ',' << r.z << ','
        << r.pvalue << ',' << r.lo << ',' << r.hi << ',' << r.a_l1 << ',' << r.kkt_inf << '\n';
}

}  // namespace shel
