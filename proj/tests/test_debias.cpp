#include <doctest.h>

#include "shel/debias.hpp"
#include "shel/errors.hpp"
#include "shel/estimators.hpp"
#include "shel/lmm.hpp"
#include "support/oracles.hpp"

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace shel;

namespace {

std::vector<int> labels(int m, int n) {
  std::vector<int> lab;
  for (int c = 0; c < m; ++c)
    for (int j = 0; j < n; ++j) lab.push_back(c + 1);
  return lab;
}

CvConfig quick_cv(int k = 5) {
  CvConfig c;
  c.n_folds = k;
  c.n_lambda = 30;
  c.solver.tol = 1e-10;
  return c;
}

SolverConfig tight() {
  SolverConfig s;
  s.tol = 1e-13;
  s.max_iters = 100000;
  return s;
}

double ks_normal(std::vector<double> z) {
  std::sort(z.begin(), z.end());
  const double n = static_cast<double>(z.size());
  double d = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double f = 0.5 * std::erfc(-z[i] / std::sqrt(2.0));
    d = std::max({d, std::abs((i + 1) / n - f), std::abs(f - i / n)});
  }
  return d;
}

}  // namespace

TEST_CASE("orthogonal columns give a unit nodewise row") {
  // three mutually orthogonal, centered +-1 columns
  MatrixXd X(8, 3);
  X << 1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, 1, 1, 1, -1, -1, 1, 1, 1, -1, 1, -1, -1, -1;
  const StackedDesign d = stack_design(X, MatrixXd(8, 0), 1.0);
  const ClusterIndex ci(labels(8, 1));
  for (Index l = 0; l < 3; ++l) {
    const NodewiseResult nw = nodewise_fit(d, VectorXd::Ones(8), ci, l, quick_cv(4));
    CHECK(nw.zeta.cwiseAbs().maxCoeff() == 0.0);
    CHECK(nw.sigma2 == doctest::Approx(1.0));
    CHECK((nw.a_hat - VectorXd::Unit(3, l)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(nodewise_fit(d, VectorXd::Ones(8), ci, 3, quick_cv(4)), ConfigError);
}

TEST_CASE("zero fit with a unit nodewise row gives the marginal score") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  MatrixXd X(40, 4);
  for (Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
  VectorXd y(40);
  for (auto& v : y) v = nd(rng) + 2.0;
  const StackedDesign d = stack_design(X, MatrixXd(40, 0), 1.0);
  const PenalizedFit fit = fit_gaussian(d, y, 1e6);
  REQUIRE(fit.theta_scaled.isZero());
  const double s2 = 0.7;
  const VectorXd a = VectorXd::Unit(4, 2) / s2;
  const double b1 = debias(d, y, fit, Family::gaussian, a, 2);
  CHECK(b1 == doctest::Approx(d.W.col(2).dot(y) / (40 * s2)).epsilon(1e-12));
}

TEST_CASE("unpenalized full-rank fit is unchanged and equals OLS") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  MatrixXd X(50, 3);
  for (Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
  VectorXd y = 0.5 * X.col(0) - X.col(2);
  for (auto& v : y) v += nd(rng);
  const StackedDesign d = stack_design(X, MatrixXd(50, 0), 1.0);
  const PenalizedFit fit = fit_gaussian(d, y, 0.0, tight());
  const ClusterIndex ci(labels(25, 2));
  const VectorXd ols = oracle::ols_slopes(X, y);
  for (Index l = 0; l < 3; ++l) {
    const NodewiseResult nw = nodewise_fit(d, VectorXd::Ones(50), ci, l, quick_cv());
    const double b1 = debias(d, y, fit, Family::gaussian, nw.a_hat, l);
    CHECK(b1 == doctest::Approx(fit.theta_scaled[l]).epsilon(1e-9));
    CHECK(b1 / d.column_scales[l] == doctest::Approx(ols[l]).epsilon(1e-6));
  }
}

TEST_CASE("nodewise rows approximate the population precision") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const int p = 6, N = 2000;
  MatrixXd Theta = MatrixXd::Constant(p, p, 0.5);
  Theta.diagonal().setOnes();
  const MatrixXd Sigma = Theta.inverse();
  const MatrixXd Lc = Sigma.llt().matrixL();
  MatrixXd X(N, p);
  for (int i = 0; i < N; ++i) {
    VectorXd z(p);
    for (auto& v : z) v = nd(rng);
    X.row(i) = (Lc * z).transpose();
  }
  const StackedDesign d = stack_design(X, MatrixXd(N, 0), 1.0);
  const ClusterIndex ci(labels(N / 2, 2));
  // precision of the unit-variance columns
  const VectorXd sd = Sigma.diagonal().cwiseSqrt();
  const MatrixXd target = sd.asDiagonal() * Theta * sd.asDiagonal();
  for (Index l = 0; l < p; ++l) {
    const NodewiseResult nw = nodewise_fit(d, VectorXd::Ones(N), ci, l, quick_cv());
    const double rel = (nw.a_hat - target.col(l)).norm() / target.col(l).norm();
    CHECK(rel < 0.2);
  }
}

TEST_CASE("cluster sandwich: relabeling, singletons and duplication") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  const int m = 30, n = 3;
  MatrixXd X(m * n, 4);
  for (Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
  VectorXd y = X.col(0);
  for (auto& v : y) v += nd(rng);
  const StackedDesign d = stack_design(X, MatrixXd(m * n, 0), 1.0);
  const PenalizedFit fit = fit_gaussian(d, y, 0.05);
  VectorXd a(4);
  a << 1.2, -0.3, 0.1, 0.0;

  const ClusterIndex ci(labels(m, n));
  std::vector<int> relabeled = labels(m, n);
  for (int& v : relabeled) v = 1000 - 7 * v;
  const auto base = cluster_variance(d, y, fit, Family::gaussian, ci, a);
  const auto other = cluster_variance(d, y, fit, Family::gaussian, ClusterIndex(relabeled), a);
  CHECK(base.V == other.V);
  CHECK(base.V >= 0.0);

  const auto single = cluster_variance(d, y, fit, Family::gaussian, ClusterIndex(labels(m * n, 1)), a);
  CHECK(single.V == doctest::Approx(single.V_obs).epsilon(1e-14));

  // every cluster twice, same fit: V is unchanged and the s.e. shrinks by sqrt(2)
  StackedDesign dd = d;
  dd.W.resize(2 * m * n, 4);
  dd.W << d.W, d.W;
  VectorXd yy(2 * m * n);
  yy << y, y;
  std::vector<int> lab2 = labels(m, n);
  for (int v : labels(m, n)) lab2.push_back(v + m);
  const auto dup = cluster_variance(dd, yy, fit, Family::gaussian, ClusterIndex(lab2), a);
  CHECK(dup.V == doctest::Approx(base.V).epsilon(1e-12));
  auto se = [](double V, double mm, double nn) { return std::sqrt(V / mm) * (mm / nn); };
  CHECK(se(dup.V, 2 * m, 2 * m * n) == doctest::Approx(se(base.V, m, m * n) / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("cluster and observation sandwiches agree without cluster effects") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  const int m = 400, n = 4;
  MatrixXd X(m * n, 5);
  for (Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
  VectorXd y = 0.5 * X.col(1);
  for (auto& v : y) v += nd(rng);
  const StackedDesign d = stack_design(X, MatrixXd(m * n, 0), 1.0);
  const PenalizedFit fit = fit_gaussian(d, y, 0.02);
  const ClusterIndex ci(labels(m, n));
  const NodewiseResult nw = nodewise_fit(d, VectorXd::Ones(m * n), ci, 1, quick_cv());
  const auto cv = cluster_variance(d, y, fit, Family::gaussian, ci, nw.a_hat);
  CHECK(cv.V / n == doctest::Approx(cv.V_obs).epsilon(0.1));
}

TEST_CASE("debiased z statistics are standard normal under the global null") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;
  const int m = 50, n = 4, p = 8;
  const std::vector<int> lab = labels(m, n);
  std::vector<double> z;
  DebiasConfig cfg;
  cfg.cv = quick_cv();
  cfg.cv.solver.tol = 1e-8;
  // sqrt(V/m) alone would give z with variance about 1/n here
  cfg.cluster_normalization = false;
  EstimatorConfig ecfg;
  ecfg.cv.n_folds = 5;
  ecfg.cv.n_lambda = 30;
  for (int rep = 0; rep < 2000; ++rep) {
    MatrixXd X(m * n, p);
    for (Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
    VectorXd y(m * n);
    for (int c = 0; c < m; ++c) {
      const double a = nd(rng);
      for (int j = 0; j < n; ++j) y[c * n + j] = a + nd(rng);
    }
    const ClusteredDataset data(y, X, lab, Family::gaussian);
    const ShelFit fit = run_method(data, Method::lasso, ecfg);
    const DebiasReport rep_ = debiased_test_suite(fit, data, {0}, cfg);
    REQUIRE(rep_.rows.size() == 1);
    z.push_back(rep_.rows[0].z);
  }
  CHECK(ks_normal(z) < 0.06);
}

TEST_CASE("suite flags, errors and CSV") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  const int m = 20, n = 3;
  MatrixXd X(m * n, 4);
  for (Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
  X.col(3).setConstant(2.0);
  EstimatorConfig ecfg;
  ecfg.cv.n_folds = 5;
  DebiasConfig cfg;
  cfg.cv = quick_cv();

  SUBCASE("constant response has infinite precision") {
    // CV has nothing to select here, so the fit is built directly
    const ClusteredDataset data(VectorXd::Constant(m * n, 1.5), X, labels(m, n), Family::gaussian);
    ShelFit fit;
    fit.raw = X;
    fit.design = stack_design(X, MatrixXd(m * n, 0), 1.0);
    fit.fit = fit_gaussian(fit.design, data.y(), 1.0);
    const DebiasReport r = debiased_test_suite(fit, data, {0, 1}, cfg);
    REQUIRE(r.rows.size() == 2);
    for (const auto& row : r.rows) {
      CHECK(row.infinite_precision);
      CHECK(row.V == 0.0);
      CHECK(row.pvalue == 1.0);
    }
  }
  SUBCASE("a failing target does not stop the others") {
    VectorXd y = X.col(0);
    for (auto& v : y) v += nd(rng);
    const ClusteredDataset data(y, X, labels(m, n), Family::gaussian);
    const ShelFit fit = run_method(data, Method::lasso, ecfg);
    const DebiasReport r = debiased_test_suite(fit, data, {0, 3, 1}, cfg);
    CHECK(r.rows.size() == 2);
    CHECK(r.errors.size() == 1);
    for (const auto& row : r.rows) {
      CHECK(row.hi - row.debiased == doctest::Approx(row.debiased - row.lo));
      CHECK(row.V >= 0.0);
      CHECK(row.kkt_inf >= 0.0);
    }
    CHECK_THROWS_AS(debiased_test_suite(fit, data, {4}, cfg), ConfigError);
    DebiasConfig exact = cfg;
    exact.cluster_normalization = false;
    const DebiasReport re = debiased_test_suite(fit, data, {0, 3, 1}, exact);
    REQUIRE(re.rows.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(re.rows[i].debiased == r.rows[i].debiased);
      CHECK(r.rows[i].se == doctest::Approx(n * re.rows[i].se).epsilon(1e-12));
      CHECK(r.rows[i].se == doctest::Approx(std::sqrt(r.rows[i].V / m) / fit.design.column_scales[r.rows[i].index]));
    }
    std::ostringstream os;
    write_debias_csv(os, r);
    CHECK(os.str().rfind("index,estimate,debiased,V,se,z,pvalue,ci_lo,ci_hi,a_l1,kkt_inf\n", 0) == 0);
  }
  SUBCASE("binomial fit") {
    VectorXd y(m * n);
    std::uniform_real_distribution<double> ud;
    for (Index i = 0; i < y.size(); ++i) y[i] = ud(rng) < expit(1.5 * X(i, 0)) ? 1.0 : 0.0;
    const ClusteredDataset data(y, X, labels(m, n), Family::binomial);
    const ShelFit fit = run_method(data, Method::lasso, ecfg);
    const DebiasReport r = debiased_test_suite(fit, data, {0, 1}, cfg);
    CHECK(r.rows.size() == 2);
    for (const auto& row : r.rows) CHECK(std::isfinite(row.z));
  }
}

TEST_CASE("projecting on the synthetic columns shrinks the full-frame KKT residual") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  const int m = 100, n = 4;
  MatrixXd X(m * n, 3), B(m * n, 1);
  VectorXd y(m * n);
  for (int c = 0; c < m; ++c) {
    const double u = nd(rng);
    for (int j = 0; j < n; ++j) {
      const Index r = c * n + j;
      B(r, 0) = u;
      X(r, 0) = u + 0.5 * nd(rng);
      X(r, 1) = nd(rng);
      X(r, 2) = nd(rng);
      y[r] = X(r, 1) + nd(rng);
    }
  }
  const ClusteredDataset data(y, X, labels(m, n), Family::gaussian);
  ShelFit fit;
  fit.raw = X;
  fit.design = stack_design(X, B, 1.0);
  fit.fit = fit_gaussian(fit.design, y, 0.05);
  DebiasConfig cfg;
  cfg.cv = quick_cv();
  const DebiasReport lit = debiased_test_suite(fit, data, {0}, cfg);
  cfg.project_synthetic = true;
  const DebiasReport proj = debiased_test_suite(fit, data, {0}, cfg);
  REQUIRE(lit.rows.size() == 1);
  REQUIRE(proj.rows.size() == 1);
  CHECK(proj.rows[0].kkt_inf < 0.5 * lit.rows[0].kkt_inf);

  const VectorXd v = VectorXd::Ones(m * n);
  const NodewiseResult a = nodewise_fit(fit.design, v, data.clusters(), 0, quick_cv(), false, false);
  const NodewiseResult b = nodewise_fit(fit.design, v, data.clusters(), 0, quick_cv(), false, true);
  CHECK(a.a_hat[3] == 0.0);
  CHECK(b.a_hat[3] != 0.0);
}

TEST_CASE("random-intercept LMM matches a dense likelihood oracle") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  const int m = 25;
  std::vector<int> lab;
  for (int c = 0; c < m; ++c)
    for (int j = 0; j < 2 + c % 3; ++j) lab.push_back(c);
  const Index N = static_cast<Index>(lab.size());
  MatrixXd X(N, 2);
  for (Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
  VectorXd a(m);
  for (auto& v : a) v = 1.3 * nd(rng);
  VectorXd y(N);
  for (Index i = 0; i < N; ++i) y[i] = 1.0 + 0.7 * X(i, 0) + a[lab[static_cast<std::size_t>(i)]] + nd(rng);
  const ClusterIndex ci(lab);
  const LmmFit fit = fit_random_intercept_lmm(X, y, ci);

  // dense: V = I + rho D D', GLS, profiled sigma2
  MatrixXd Z(N, 3);
  Z.col(0).setOnes();
  Z.rightCols(2) = X;
  MatrixXd DD = MatrixXd::Zero(N, N);
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < N; ++j) DD(i, j) = lab[static_cast<std::size_t>(i)] == lab[static_cast<std::size_t>(j)];
  auto dense = [&](double rho, VectorXd* coef) {
    const MatrixXd V = MatrixXd::Identity(N, N) + rho * DD;
    const Eigen::LLT<MatrixXd> llt(V);
    const MatrixXd ViZ = llt.solve(Z);
    const VectorXd b = (Z.transpose() * ViZ).ldlt().solve(ViZ.transpose() * y);
    const VectorXd r = y - Z * b;
    const double s2 = r.dot(llt.solve(r)) / N;
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    if (coef) *coef = b;
    return -0.5 * N * (std::log(2 * M_PI * s2) + 1) - 0.5 * logdet;
  };
  boost::uintmax_t it = 500;
  const auto best = boost::math::tools::brent_find_minima([&](double u) { return -dense(std::exp(u), nullptr); },
                                                          -15.0, 10.0, 50, it);
  VectorXd coef;
  const double ll = dense(std::exp(best.first), &coef);
  CHECK(fit.loglik == doctest::Approx(ll).epsilon(1e-9));
  CHECK((fit.coef - coef).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(fit.tau2 > 0.5);
  CHECK(fit.cov.rows() == 3);
}

TEST_CASE("logistic GLM score vanishes at the estimate") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud;
  MatrixXd X(300, 2);
  for (Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
  VectorXd y(300);
  for (Index i = 0; i < 300; ++i) y[i] = ud(rng) < expit(0.3 + X(i, 0)) ? 1.0 : 0.0;
  const GlmFit g = fit_logistic_glm(X, y);
  CHECK(g.converged);
  MatrixXd Z(300, 3);
  Z.col(0).setOnes();
  Z.rightCols(2) = X;
  VectorXd mu = Z * g.coef;
  for (auto& v : mu) v = expit(v);
  CHECK((Z.transpose() * (y - mu)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(g.cov(1, 1) > 0.0);
}

TEST_CASE("naive refit rows") {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd;
  MatrixXd X(60, 3);
  for (Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
  VectorXd y = 2.0 * X.col(1);
  for (auto& v : y) v += nd(rng);
  const ClusteredDataset data(y, X, labels(20, 3), Family::gaussian);
  const auto rows = naive_refit(data, {1, 2});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].index == 1);
  CHECK(rows[0].pvalue < 1e-6);
  CHECK(rows[1].pvalue > 0.0);
  CHECK(rows[1].pvalue <= 1.0);
  CHECK(naive_refit(data, {}).empty());
  CHECK_THROWS_AS(naive_refit(data, {7}), ConfigError);
  std::ostringstream os;
  write_naive_csv(os, rows);
  CHECK(os.str().rfind("index,estimate,se,z,pvalue,ci_lo,ci_hi\n", 0) == 0);
}
