#include "shel/lmm.hpp"

#include "shel/errors.hpp"
#include "shel/solver.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <limits>
#include <ostream>

namespace shel {
namespace {

MatrixXd with_intercept(const MatrixXd& X) {
  MatrixXd Z(X.rows(), X.cols() + 1);
  Z.col(0).setOnes();
  Z.rightCols(X.cols()) = X;
  return Z;
}

MatrixXd cluster_sum_rows(const MatrixXd& Z, const ClusterIndex& ci) {
  MatrixXd S = MatrixXd::Zero(ci.n_clusters(), Z.cols());
  for (Index r = 0; r < Z.rows(); ++r) S.row(ci.cluster_of(r)) += Z.row(r);
  return S;
}

struct Profile {
  VectorXd coef;
  MatrixXd info;  // Z' V^-1 Z
  double sigma2 = 0.0;
  double loglik = -std::numeric_limits<double>::infinity();
};

}  // namespace

LmmFit fit_random_intercept_lmm(const MatrixXd& X, const VectorXd& y, const ClusterIndex& ci) {
  if (X.rows() != y.size() || ci.n_obs() != y.size()) throw DataError("LMM inputs differ in length");
  const MatrixXd Z = with_intercept(X);
  if (Z.rows() <= Z.cols()) throw DataError("LMM needs more observations than coefficients");
  const double n = static_cast<double>(y.size());
  const MatrixXd ZtZ = Z.transpose() * Z;
  const VectorXd Zty = Z.transpose() * y;
  const MatrixXd S = cluster_sum_rows(Z, ci);
  const VectorXd t = ci.cluster_sums(y);
  VectorXd sizes(ci.n_clusters());
  for (Index c = 0; c < ci.n_clusters(); ++c) sizes[c] = static_cast<double>(ci.size_of(c));

  auto profile = [&](double rho) {
    Profile pr;
    const VectorXd c = (rho / (1.0 + sizes.array() * rho)).matrix();
    pr.info = ZtZ - S.transpose() * c.asDiagonal() * S;
    const VectorXd rhs = Zty - S.transpose() * c.cwiseProduct(t);
    Eigen::LDLT<MatrixXd> ldlt(pr.info);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-12 * pr.info.diagonal().maxCoeff())
      throw NumericalError("lmm refit", "fixed-effects design is rank deficient");
    pr.coef = ldlt.solve(rhs);
    const VectorXd r = y - Z * pr.coef;
    const VectorXd rs = ci.cluster_sums(r);
    const double q = r.squaredNorm() - c.dot(rs.cwiseProduct(rs));
    pr.sigma2 = std::max(q / n, std::numeric_limits<double>::min());
    pr.loglik = -0.5 * n * (std::log(2.0 * M_PI * pr.sigma2) + 1.0) -
                0.5 * (1.0 + sizes.array() * rho).log().sum();
    return pr;
  };

  Profile best = profile(0.0);
  double best_rho = 0.0;
  boost::uintmax_t iters = 200;
  const auto r = boost::math::tools::brent_find_minima([&](double u) { return -profile(std::exp(u)).loglik; }, -20.0,
                                                       std::log(1e6), std::numeric_limits<double>::digits / 2, iters);
  const Profile cand = profile(std::exp(r.first));
  if (cand.loglik > best.loglik) {
    best = cand;
    best_rho = std::exp(r.first);
  }
  LmmFit out;
  out.coef = best.coef;
  out.sigma2 = best.sigma2;
  out.tau2 = best_rho * best.sigma2;
  out.loglik = best.loglik;
  out.cov = best.sigma2 * best.info.inverse();
  return out;
}

GlmFit fit_logistic_glm(const MatrixXd& X, const VectorXd& y) {
  const MatrixXd Z = with_intercept(X);
  const Index n = Z.rows();
  GlmFit out;
  out.coef = VectorXd::Zero(Z.cols());
  auto nll = [&](const VectorXd& b) {
    const VectorXd eta = Z * b;
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double e = eta[i];
      s += (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) - y[i] * e;
    }
    return s;
  };
  MatrixXd H;
  for (int it = 0; it < 100; ++it) {
    const VectorXd eta = Z * out.coef;
    VectorXd mu(n), w(n);
    for (Index i = 0; i < n; ++i) {
      mu[i] = expit(eta[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-12);
    }
    const VectorXd g = Z.transpose() * (mu - y);
    H = Z.transpose() * w.asDiagonal() * Z;
    const VectorXd step = H.ldlt().solve(g);
    const double f0 = nll(out.coef);
    double s = 1.0;
    while (nll(out.coef - s * step) > f0 + 1e-12 * std::abs(f0) && s > 1e-10) s *= 0.5;
    out.coef -= s * step;
    if ((s * step).cwiseAbs().maxCoeff() < 1e-10 * (1.0 + out.coef.cwiseAbs().maxCoeff())) {
      out.converged = true;
      break;
    }
  }
  const VectorXd eta = Z * out.coef;
  VectorXd w(n);
  for (Index i = 0; i < n; ++i) w[i] = expit(eta[i]) * (1.0 - expit(eta[i]));
  out.cov = (Z.transpose() * w.asDiagonal() * Z).inverse();
  return out;
}

std::vector<NaiveRow> naive_refit(const ClusteredDataset& data, const std::vector<Index>& cols, double level) {
  std::vector<NaiveRow> rows;
  if (cols.empty()) return rows;
  MatrixXd X(data.n_obs(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= data.n_covariates()) throw ConfigError("naive refit covariate out of range");
    X.col(static_cast<Index>(j)) = data.X().col(cols[j]);
  }
  VectorXd coef;
  MatrixXd cov;
  if (data.family() == Family::gaussian) {
    const LmmFit f = fit_random_intercept_lmm(X, data.y(), data.clusters());
    coef = f.coef;
    cov = f.cov;
  } else {
    const GlmFit f = fit_logistic_glm(X, data.y());
    coef = f.coef;
    cov = f.cov;
  }
  const boost::math::normal nd;
  const double zq = boost::math::quantile(boost::math::complement(nd, 0.5 * level));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const Index k = static_cast<Index>(j) + 1;
    NaiveRow r;
    r.index = cols[j];
    r.estimate = coef[k];
    r.se = std::sqrt(std::max(cov(k, k), 0.0));
    r.z = r.estimate / r.se;
    r.pvalue = std::isfinite(r.z) ? 2.0 * boost::math::cdf(boost::math::complement(nd, std::abs(r.z))) : 1.0;
    r.lo = r.estimate - zq * r.se;
    r.hi = r.estimate + zq * r.se;
    rows.push_back(r);
  }
  return rows;
}

void write_naive_csv(std::ostream& out, const std::vector<NaiveRow>& rows) {
  out << "index,estimate,se,z,pvalue,ci_lo,ci_hi\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.index + 1 << ',' << r.estimate << ',' << r.se << ',' << r.z << ',' << r.pvalue << ',' << r.lo << ','
        << r.hi << '\n';
}

}  // namespace shel
