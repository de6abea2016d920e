#include <doctest.h>

#include "shel/errors.hpp"
#include "shel/estimators.hpp"
#include "shel/selective.hpp"
#include "shel/solver.hpp"
#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace shel;

namespace {

struct Problem {
  StackedDesign design;
  MatrixXd Z;
  VectorXd y;
  PenalizedFit fit;
};

SolverConfig tight() {
  SolverConfig c;
  c.tol = 1e-13;
  c.max_iters = 200000;
  return c;
}

MatrixXd gaussian_matrix(std::mt19937_64& rng, int n, int q) {
  std::normal_distribution<double> nd;
  MatrixXd X(n, q);
  for (Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
  return X;
}

Problem make_problem(const MatrixXd& X, const VectorXd& y, double lambda) {
  Problem p;
  p.design = stack_design(X, MatrixXd(X.rows(), 0), 1.0);
  p.Z = selection_design(p.design);
  p.y = y;
  p.fit = fit_gaussian(p.design, y, lambda, tight());
  return p;
}

// (active set, signs) of the oracle lasso solution for y.
std::pair<std::vector<Index>, std::vector<int>> oracle_event(const MatrixXd& W, const VectorXd& y, double lambda) {
  const auto sol = oracle::gaussian_lasso_enumerate(W, y, VectorXd::Ones(W.cols()), lambda);
  REQUIRE(sol.found);
  std::vector<Index> act;
  std::vector<int> sg;
  for (Index k = 0; k < W.cols(); ++k)
    if (sol.theta[k] != 0.0) {
      act.push_back(k);
      sg.push_back(sol.theta[k] > 0 ? 1 : -1);
    }
  return {act, sg};
}

// Kolmogorov-Smirnov distance from U(0,1).
double ks_uniform(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0;
  for (std::size_t i = 0; i < u.size(); ++i)
    d = std::max({d, std::abs((i + 1) / n - u[i]), std::abs(u[i] - i / n)});
  return d;
}

std::vector<int> balanced_labels(int m, int n) {
  std::vector<int> lab;
  for (int c = 0; c < m; ++c)
    for (int j = 0; j < n; ++j) lab.push_back(c + 1);
  return lab;
}

}  // namespace

TEST_CASE("polyhedron membership matches the lasso event of an independent solver") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  int checked = 0, agree = 0;
  for (int inst = 0; inst < 10; ++inst) {
    const MatrixXd X = gaussian_matrix(rng, 30, 5);
    VectorXd y = 0.8 * X.col(0) - 0.6 * X.col(3);
    for (Index i = 0; i < y.size(); ++i) y[i] += nd(rng);
    const Problem pr = make_problem(X, y, 0.15);
    const SelectionEvent ev = build_polyhedron(pr.Z, y, pr.fit.active_set, pr.fit.signs, 0.15);
    CHECK(ev.A.rows() == 2 * (5 - static_cast<Index>(ev.active_set.size())) + static_cast<Index>(ev.active_set.size()));
    CHECK((ev.A * y - ev.b).maxCoeff() <= 1e-8);
    for (int t = 0; t < 30; ++t) {
      VectorXd y2 = y;
      for (Index i = 0; i < y2.size(); ++i) y2[i] += 0.3 * nd(rng);
      const VectorXd slack = ev.A * y2 - ev.b;
      if (std::abs(slack.maxCoeff()) < 1e-6) continue;  // on the boundary
      const bool inside = slack.maxCoeff() < 0;
      const auto [act, sg] = oracle_event(pr.design.W, y2, 0.15);
      const bool same = act == pr.fit.active_set && sg == pr.fit.signs;
      ++checked;
      agree += inside == same ? 1 : 0;
    }
  }
  CHECK(checked > 200);
  CHECK(agree == checked);
}

TEST_CASE("truncation limits bound the segment of the line that keeps the event") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int inst = 0; inst < 8; ++inst) {
    const MatrixXd X = gaussian_matrix(rng, 25, 4);
    VectorXd y = 1.0 * X.col(1);
    for (Index i = 0; i < y.size(); ++i) y[i] += nd(rng);
    const double lambda = 0.1;
    const Problem pr = make_problem(X, y, lambda);
    if (pr.fit.active_set.empty()) continue;
    const SelectionEvent ev = build_polyhedron(pr.Z, y, pr.fit.active_set, pr.fit.signs, lambda);
    const MatrixXd ZM = pr.Z(Eigen::all, pr.fit.active_set);
    const VectorXd eta = ZM * (ZM.transpose() * ZM).ldlt().solve(VectorXd::Unit(ZM.cols(), 0));
    const VectorXd seta = 1.7 * eta;
    const auto [L, U] = truncation_limits(ev.A, ev.b, eta, seta, y);
    const double est = eta.dot(y);
    CHECK(L < est);
    CHECK(est < U);
    const VectorXd c = seta / eta.dot(seta);
    const VectorXd f = y - c * est;
    auto same_event = [&](double z) {
      const auto [act, sg] = oracle_event(pr.design.W, VectorXd(f + c * z), lambda);
      return act == pr.fit.active_set && sg == pr.fit.signs;
    };
    const double span = std::isfinite(U) && std::isfinite(L) ? U - L : 1.0;
    if (std::isfinite(L)) {
      CHECK(same_event(L + 1e-3 * span));
      CHECK_FALSE(same_event(L - 1e-3 * span));
    }
    if (std::isfinite(U)) {
      CHECK(same_event(U - 1e-3 * span));
      CHECK_FALSE(same_event(U + 1e-3 * span));
    }
  }
}

TEST_CASE("empty truncation interval is a numerical error") {
  MatrixXd A(2, 1);
  A << 1, -1;
  VectorXd b(2);
  b << -1, -1;  // y <= -1 and y >= 1
  VectorXd eta = VectorXd::Ones(1), y = VectorXd::Zero(1);
  CHECK_THROWS_AS(truncation_limits(A, b, eta, eta, y), NumericalError);
}

TEST_CASE("a response outside the polyhedron is rejected") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const MatrixXd X = gaussian_matrix(rng, 20, 3);
  VectorXd y = 2.0 * X.col(0);
  for (Index i = 0; i < y.size(); ++i) y[i] += 0.5 * nd(rng);
  const Problem pr = make_problem(X, y, 0.2);
  REQUIRE_FALSE(pr.fit.active_set.empty());
  std::vector<int> flipped = pr.fit.signs;
  flipped[0] = -flipped[0];
  CHECK_THROWS_AS(build_polyhedron(pr.Z, y, pr.fit.active_set, flipped, 0.2), NumericalError);
}

TEST_CASE("pivot is uniform under the global null with known iid variance") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd;
  const MatrixXd X = gaussian_matrix(rng, 40, 6);
  const std::vector<int> lab = balanced_labels(10, 4);
  const ClusterIndex ci(lab);
  CovarianceModel cov;
  cov.sigma2 = 1.0;
  std::vector<double> piv;
  int covered = 0;
  while (piv.size() < 800) {
    VectorXd y(40);
    for (Index i = 0; i < 40; ++i) y[i] = nd(rng);
    const Problem pr = make_problem(X, y, 0.12);
    if (pr.fit.active_set.empty()) continue;
    const SelectionEvent ev = build_polyhedron(pr.Z, y, pr.fit.active_set, pr.fit.signs, 0.12);
    const SelectiveCI r = selective_test(ev, pr.Z, y, cov, ci, pr.fit.active_set[0]);
    piv.push_back(r.pivot);
    covered += (r.lo <= 0.0 && 0.0 <= r.hi) ? 1 : 0;
  }
  CHECK(ks_uniform(piv) < 1.63 / std::sqrt(800.0));
  const double cover = covered / 800.0;
  CHECK(std::abs(cover - 0.95) < 3 * std::sqrt(0.95 * 0.05 / 800.0));
}

TEST_CASE("pivot is uniform for clustered errors with the clustered covariance") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd;
  const int m = 15, n = 4;
  const MatrixXd X = gaussian_matrix(rng, m * n, 5);
  const std::vector<int> lab = balanced_labels(m, n);
  const ClusterIndex ci(lab);
  CovarianceModel cov;
  cov.kind = CovKind::clustered;
  cov.sigma2 = 1.0;
  cov.tau2 = 2.0;
  std::vector<double> piv;
  while (piv.size() < 600) {
    VectorXd a(m);
    for (int c = 0; c < m; ++c) a[c] = std::sqrt(2.0) * nd(rng);
    VectorXd y = ci.expand(a);
    for (Index i = 0; i < y.size(); ++i) y[i] += nd(rng);
    const Problem pr = make_problem(X, y, 0.15);
    if (pr.fit.active_set.empty()) continue;
    const SelectionEvent ev = build_polyhedron(pr.Z, y, pr.fit.active_set, pr.fit.signs, 0.15);
    piv.push_back(selective_test(ev, pr.Z, y, cov, ci, pr.fit.active_set[0]).pivot);
  }
  CHECK(ks_uniform(piv) < 1.63 / std::sqrt(600.0));
}

TEST_CASE("CI covers a nonzero projected target") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  const MatrixXd X = gaussian_matrix(rng, 50, 5);
  const VectorXd mu = 0.4 * X.col(0) + 0.25 * X.col(2);
  const ClusterIndex ci(balanced_labels(25, 2));
  CovarianceModel cov;
  int covered = 0, total = 0;
  while (total < 600) {
    VectorXd y = mu;
    for (Index i = 0; i < y.size(); ++i) y[i] += nd(rng);
    const Problem pr = make_problem(X, y, 0.1);
    if (pr.fit.active_set.empty()) continue;
    const SelectionEvent ev = build_polyhedron(pr.Z, y, pr.fit.active_set, pr.fit.signs, 0.1);
    const Index l = pr.fit.active_set.back();
    const SelectiveCI r = selective_test(ev, pr.Z, y, cov, ci, l);
    const MatrixXd ZM = pr.Z(Eigen::all, pr.fit.active_set);
    const VectorXd eta = ZM * (ZM.transpose() * ZM).ldlt().solve(VectorXd::Unit(ZM.cols(), ZM.cols() - 1));
    const double target = eta.dot(mu);
    covered += (r.lo <= target && target <= r.hi) ? 1 : 0;
    ++total;
  }
  CHECK(std::abs(covered / 600.0 - 0.95) < 3.5 * std::sqrt(0.95 * 0.05 / 600.0));
}

TEST_CASE("iid and clustered tests agree exactly when tau2 is zero") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  const MatrixXd X = gaussian_matrix(rng, 30, 4);
  VectorXd y = X.col(1);
  for (Index i = 0; i < y.size(); ++i) y[i] += nd(rng);
  const ClusterIndex ci(balanced_labels(10, 3));
  const Problem pr = make_problem(X, y, 0.1);
  REQUIRE_FALSE(pr.fit.active_set.empty());
  const SelectionEvent ev = build_polyhedron(pr.Z, y, pr.fit.active_set, pr.fit.signs, 0.1);
  CovarianceModel a, b;
  a.sigma2 = b.sigma2 = 1.3;
  b.kind = CovKind::clustered;
  b.tau2 = 0.0;
  for (Index l : pr.fit.active_set) {
    const auto ra = selective_test(ev, pr.Z, y, a, ci, l);
    const auto rb = selective_test(ev, pr.Z, y, b, ci, l);
    CHECK(ra.pivot == rb.pivot);
    CHECK(ra.L == rb.L);
    CHECK(ra.U == rb.U);
    CHECK(ra.lo == rb.lo);
    CHECK(ra.hi == rb.hi);
  }
}

TEST_CASE("pivot is invariant to a common rescaling of y, sigma and lambda") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  const MatrixXd X = gaussian_matrix(rng, 30, 4);
  VectorXd y = 0.7 * X.col(2);
  for (Index i = 0; i < y.size(); ++i) y[i] += nd(rng);
  const ClusterIndex ci(balanced_labels(10, 3));
  const double c = 3.5;
  const Problem p1 = make_problem(X, y, 0.1);
  const Problem p2 = make_problem(X, VectorXd(c * y), 0.1 * c);
  REQUIRE(p1.fit.active_set == p2.fit.active_set);
  REQUIRE_FALSE(p1.fit.active_set.empty());
  CovarianceModel c1, c2;
  c1.kind = c2.kind = CovKind::clustered;
  c1.sigma2 = 0.8;
  c1.tau2 = 0.3;
  c2.sigma2 = c * c * 0.8;
  c2.tau2 = c * c * 0.3;
  const auto e1 = build_polyhedron(p1.Z, p1.y, p1.fit.active_set, p1.fit.signs, 0.1);
  const auto e2 = build_polyhedron(p2.Z, p2.y, p2.fit.active_set, p2.fit.signs, 0.1 * c);
  for (Index l : p1.fit.active_set) {
    const auto r1 = selective_test(e1, p1.Z, p1.y, c1, ci, l);
    const auto r2 = selective_test(e2, p2.Z, p2.y, c2, ci, l);
    CHECK(r2.pivot == doctest::Approx(r1.pivot).epsilon(1e-9));
    CHECK(r2.lo == doctest::Approx(c * r1.lo).epsilon(1e-5));
  }
}

TEST_CASE("moment estimates of the variance components") {
  SUBCASE("balanced hand computation") {
    // clusters {1,3}, {2,6}, {10,14}
    VectorXd r(6);
    r << 1, 3, 2, 6, 10, 14;
    const ClusterIndex ci(balanced_labels(3, 2));
    const auto iid = estimate_covariance(r, ci, CovKind::iid);
    const auto cl = estimate_covariance(r, ci, CovKind::clustered);
    // SSW = 2 + 8 + 8 = 18 on 3 df; cluster means 2, 4, 12, grand 6
    // SSB = 2 * (16 + 4 + 36) = 112 on 2 df; n~ = 2
    CHECK(iid.sigma2 == doctest::Approx(6.0));
    CHECK(iid.tau2 == 0.0);
    CHECK(cl.sigma2 == doctest::Approx(6.0));
    CHECK(cl.tau2 == doctest::Approx((56.0 - 6.0) / 2.0));
  }
  SUBCASE("cluster-constant residuals") {
    VectorXd r(6);
    r << 1, 1, -2, -2, 4, 4;
    const auto cl = estimate_covariance(r, ClusterIndex(balanced_labels(3, 2)), CovKind::clustered);
    CHECK(cl.sigma2 > 0.0);
    CHECK(cl.sigma2 < 1e-10);
    // grand mean 1, SSB = 2 * (0 + 9 + 9) = 36, MSB = 18, n~ = 2
    CHECK(cl.tau2 == doctest::Approx(9.0));
  }
  SUBCASE("singleton clusters fall back to iid") {
    VectorXd r(4);
    r << 1, -1, 2, -2;
    const std::vector<int> lab{1, 2, 3, 4};
    const auto cl = estimate_covariance(r, ClusterIndex(lab), CovKind::clustered);
    CHECK(cl.fallback);
    CHECK(cl.tau2 == 0.0);
    CHECK(cl.sigma2 == doctest::Approx(10.0 / 3.0));
  }
  SUBCASE("unbalanced recovery on a large sample") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    std::vector<int> lab;
    for (int c = 0; c < 2000; ++c)
      for (int j = 0; j < 2 + c % 4; ++j) lab.push_back(c);
    const ClusterIndex ci(lab);
    VectorXd a(2000);
    for (auto& v : a) v = 1.5 * nd(rng);
    VectorXd r = ci.expand(a);
    for (Index i = 0; i < r.size(); ++i) r[i] += 0.5 * nd(rng);
    const auto cl = estimate_covariance(r, ci, CovKind::clustered);
    CHECK(cl.sigma2 == doctest::Approx(0.25).epsilon(0.05));
    CHECK(cl.tau2 == doctest::Approx(2.25).epsilon(0.1));
  }
}

TEST_CASE("zero-weight columns and invalid covariance are rejected") {
  StackedDesign d = stack_design(MatrixXd::Identity(3, 2), MatrixXd(3, 0), 1.0);
  d.weights[1] = 0.0;
  CHECK_THROWS_AS(selection_design(d), ConfigError);
  CovarianceModel cov;
  cov.sigma2 = 0.0;
  CHECK_THROWS_AS(cov.validate(), ConfigError);
}

TEST_CASE("selective inference on a SHEL fit and its CSV") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd;
  const int m = 30, n = 4;
  const std::vector<int> lab = balanced_labels(m, n);
  MatrixXd X = gaussian_matrix(rng, m * n, 6);
  VectorXd y = 1.0 * X.col(0) - 0.8 * X.col(4);
  for (Index i = 0; i < y.size(); ++i) y[i] += nd(rng);
  const ClusteredDataset data(y, X, lab, Family::gaussian);
  EstimatorConfig cfg;
  cfg.cv.n_folds = 5;
  const ShelFit fit = run_method(data, Method::shel, cfg);
  REQUIRE_FALSE(fit.fit.active_set.empty());
  const SelectiveReport rep = selective_inference(fit, data, CovKind::clustered);
  CHECK(rep.errors.empty());
  CHECK(rep.rows.size() == fit.fit.active_set.size());
  for (const auto& r : rep.rows) {
    CHECK(r.L < r.estimate);
    CHECK(r.estimate < r.U);
    CHECK(r.pvalue >= 0.0);
    CHECK(r.pvalue <= 1.0);
    CHECK(r.lo <= r.hi);
  }
  std::ostringstream os;
  write_selective_csv(os, rep);
  const std::string s = os.str();
  CHECK(s.rfind("index,estimate,L,U,pivot,pvalue,ci_lo,ci_hi,covariance\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == static_cast<long>(rep.rows.size()) + 1);

  const SelectiveReport known = selective_inference(fit, data, CovKind::iid, 1.0);
  CHECK_FALSE(known.cov.estimated);
  CHECK(known.cov.sigma2 == 1.0);
}
