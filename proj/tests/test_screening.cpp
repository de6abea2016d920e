#include <doctest.h>

#include "shel/errors.hpp"
#include "shel/screening.hpp"

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

using namespace shel;

namespace {

std::vector<int> balanced_labels(int m, int n) {
  std::vector<int> labels;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) labels.push_back(i + 1);
  return labels;
}

// Direct one-way ANOVA via total and within sums of squares.
double anova_oracle(const VectorXd& x, const std::vector<int>& labels) {
  std::map<int, std::vector<double>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(x[static_cast<Index>(i)]);
  const double grand = x.mean();
  const double sst = (x.array() - grand).square().sum();
  double ssw = 0;
  for (const auto& [key, v] : groups) {
    double mean = 0;
    for (double e : v) mean += e;
    mean /= static_cast<double>(v.size());
    for (double e : v) ssw += (e - mean) * (e - mean);
  }
  const double m = static_cast<double>(groups.size()), n = static_cast<double>(x.size());
  const double f = ((sst - ssw) / (m - 1)) / (ssw / (n - m));
  return boost::math::cdf(boost::math::complement(boost::math::fisher_f(m - 1, n - m), f));
}

ClusteredDataset heterogeneous_data(std::mt19937_64& rng, int m, int n, int p, int p_het) {
  std::normal_distribution<double> nd;
  const auto labels = balanced_labels(m, n);
  MatrixXd X(m * n, p);
  for (int l = 0; l < p; ++l) {
    for (int i = 0; i < m; ++i) {
      const double mu = l < p_het ? nd(rng) : 0.0;
      for (int j = 0; j < n; ++j) X(i * n + j, l) = mu + nd(rng);
    }
  }
  return ClusteredDataset(VectorXd::Zero(m * n), X, labels, Family::gaussian);
}

}  // namespace

TEST_CASE("anova: cluster-constant covariate differing across clusters") {
  const auto labels = balanced_labels(2, 3);
  VectorXd x(6);
  x << 0, 0, 0, 10, 10, 10;
  CHECK(anova_heterogeneity(x, ClusterIndex(labels)) < 1e-12);
}

TEST_CASE("anova: identical covariate gives p = 1") {
  const auto labels = balanced_labels(4, 3);
  CHECK(anova_heterogeneity(VectorXd::Constant(12, 0.1), ClusterIndex(labels)) == 1.0);
}

TEST_CASE("anova: singleton clusters are rejected") {
  const auto labels = balanced_labels(5, 1);
  CHECK_THROWS_AS(anova_heterogeneity(VectorXd::LinSpaced(5, 0, 1), ClusterIndex(labels)), DataError);
}

TEST_CASE("anova matches the sum-of-squares oracle on unbalanced clusters") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> cl(1, 7);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<int> labels(40);
    for (auto& l : labels) l = cl(rng);
    VectorXd x(40);
    for (auto& v : x) v = nd(rng) + 0.3 * labels[&v - x.data()];
    CHECK(anova_heterogeneity(x, ClusterIndex(labels)) == doctest::Approx(anova_oracle(x, labels)).epsilon(1e-9));
  }
}

TEST_CASE("anova size under iid normal covariates") {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> nd;
  const ClusterIndex ci(balanced_labels(50, 4));
  const int reps = 2000;
  int rejections = 0;
  for (int r = 0; r < reps; ++r) {
    VectorXd x(200);
    for (auto& v : x) v = nd(rng);
    rejections += anova_heterogeneity(x, ci) < 0.05 ? 1 : 0;
  }
  const double rate = rejections / double(reps);
  const double se = std::sqrt(0.05 * 0.95 / reps);
  CHECK(std::abs(rate - 0.05) <= 2 * se);
}

TEST_CASE("random-intercept log-likelihood matches adaptive Gauss-Kronrod integration") {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.4);
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 1 + i % 5; ++j) labels.push_back(i + 1);
  VectorXd x(static_cast<Index>(labels.size()));
  for (auto& v : x) v = coin(rng) ? 1.0 : 0.0;
  const ClusterIndex ci(labels);
  for (double sigma : {0.0, 0.3, 1.0, 2.5}) {
    const double b0 = -0.4;
    double oracle = 0;
    for (Index c = 0; c < ci.n_clusters(); ++c) {
      double k = 0;
      for (Index r : ci.rows_of(c)) k += x[r];
      const double n = static_cast<double>(ci.size_of(c));
      auto f = [&](double b) {
        const double p = 1 / (1 + std::exp(-(b0 + sigma * b)));
        return std::pow(p, k) * std::pow(1 - p, n - k) * std::exp(-b * b / 2) / std::sqrt(2 * M_PI);
      };
      const double inf = std::numeric_limits<double>::infinity();
      oracle += std::log(boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -inf, inf, 15, 1e-14));
    }
    CHECK(random_intercept_loglik(x, ci, b0, sigma, 40) == doctest::Approx(oracle).epsilon(1e-9));
    CHECK(random_intercept_loglik(x, ci, b0, sigma) == doctest::Approx(oracle).epsilon(1e-5));
  }
}

TEST_CASE("binary test: clusters entirely 0 or entirely 1") {
  const auto labels = balanced_labels(20, 5);
  VectorXd x(100);
  for (Index i = 0; i < 100; ++i) x[i] = (i / 5) % 2 == 0 ? 0.0 : 1.0;
  const auto r = binary_heterogeneity(x, ClusterIndex(labels));
  CHECK(r.pvalue < 1e-6);
  CHECK(r.statistic > 0);
}

TEST_CASE("binary test size under iid Bernoulli(0.5)") {
  std::mt19937_64 rng(202);
  std::bernoulli_distribution coin(0.5);
  const ClusterIndex ci(balanced_labels(50, 4));
  const int reps = 2000;
  int rejections = 0;
  for (int r = 0; r < reps; ++r) {
    VectorXd x(200);
    for (auto& v : x) v = coin(rng) ? 1.0 : 0.0;
    const auto res = binary_heterogeneity(x, ci);
    CHECK(res.statistic >= 0.0);
    CHECK(res.pvalue >= 0.0);
    CHECK(res.pvalue <= 1.0);
    rejections += res.pvalue < 0.05 ? 1 : 0;
  }
  const double rate = rejections / double(reps);
  CHECK(rate <= 0.05 + 2 * std::sqrt(0.05 * 0.95 / reps));
}

TEST_CASE("score test variance matches exact binomial moments") {
  // Var((K - np)^2) for K ~ Bin(n, p), enumerated directly.
  for (int n : {1, 3, 6}) {
    for (double p : {0.2, 0.5}) {
      double m2 = 0, m4 = 0;
      for (int k = 0; k <= n; ++k) {
        const double pr = std::tgamma(n + 1.0) / (std::tgamma(k + 1.0) * std::tgamma(n - k + 1.0)) *
                          std::pow(p, k) * std::pow(1 - p, n - k);
        const double d = k - n * p;
        m2 += pr * d * d;
        m4 += pr * d * d * d * d;
      }
      const double q = 1 - p;
      const double formula = n * p * q * (1 - 6 * p * q) + 2.0 * n * n * p * p * q * q;
      CHECK(formula == doctest::Approx(m4 - m2 * m2).epsilon(1e-12));
    }
  }
  const auto labels = balanced_labels(20, 5);
  VectorXd x(100);
  for (Index i = 0; i < 100; ++i) x[i] = (i / 5) % 2 == 0 ? 0.0 : 1.0;
  const auto s = binary_score_test(x, ClusterIndex(labels));
  CHECK(s.fallback);
  CHECK(s.pvalue < 1e-6);
}

TEST_CASE("synthetic design: alpha = 0 gives an empty B") {
  std::mt19937_64 rng(1);
  const auto data = heterogeneous_data(rng, 20, 4, 6, 3);
  const auto sd = build_synthetic_design(data, 0.0);
  CHECK(sd.p0() == 0);
  CHECK(sd.B.rows() == data.n_obs());
}

TEST_CASE("synthetic design columns are replicated cluster means") {
  MatrixXd X(5, 1);
  X << 1, 1, 2, 4, 3;
  const ClusteredDataset data(VectorXd::Zero(5), X, {1, 1, 2, 2, 2}, Family::gaussian);
  ScreeningReport report;
  report.alpha = 0.5;
  report.entries = {{0, "anova", 0.01, true}};
  const auto sd = synthetic_design_from_report(data, report);
  REQUIRE(sd.p0() == 1);
  VectorXd expected(5);
  expected << 1, 1, 3, 3, 3;
  CHECK(sd.B.col(0) == expected);
  CHECK(sd.source_column == std::vector<Index>{0});
}

TEST_CASE("screening properties: cluster constancy, monotone alpha, row-order and thread invariance") {
  std::mt19937_64 rng(9);
  const auto data = heterogeneous_data(rng, 30, 4, 20, 8);
  ScreeningReport r1;
  const auto sd = build_synthetic_design(data, 0.05, 1, &r1);
  const auto& ci = data.clusters();
  for (Index j = 0; j < sd.p0(); ++j)
    for (Index c = 0; c < ci.n_clusters(); ++c)
      for (Index r : ci.rows_of(c)) CHECK(sd.B(r, j) == sd.B(ci.rows_of(c)[0], j));

  const auto loose = build_synthetic_design(data, 0.2);
  const auto strict = build_synthetic_design(data, 0.01);
  CHECK(strict.p0() <= sd.p0());
  CHECK(sd.p0() <= loose.p0());
  for (Index c : strict.source_column)
    CHECK(std::find(sd.source_column.begin(), sd.source_column.end(), c) != sd.source_column.end());

  // Reverse rows within each cluster.
  MatrixXd Xr = data.X();
  for (Index c = 0; c < ci.n_clusters(); ++c) {
    const auto& rows = ci.rows_of(c);
    for (std::size_t j = 0; j < rows.size(); ++j) Xr.row(rows[j]) = data.X().row(rows[rows.size() - 1 - j]);
  }
  const ClusteredDataset reversed(data.y(), Xr, data.cluster_id(), Family::gaussian);
  const auto r2 = screen_covariates(reversed, 0.05);
  for (std::size_t l = 0; l < r1.entries.size(); ++l)
    CHECK(r2.entries[l].pvalue == doctest::Approx(r1.entries[l].pvalue).epsilon(1e-10));

  const auto r4 = screen_covariates(data, 0.05, 4);
  for (std::size_t l = 0; l < r1.entries.size(); ++l) CHECK(r4.entries[l].pvalue == r1.entries[l].pvalue);
}

TEST_CASE("screening power for unit-variance cluster means") {
  std::mt19937_64 rng(77);
  const int m = 100, n = 4, p_het = 50;
  const auto data = heterogeneous_data(rng, m, n, p_het, p_het);
  const auto sd = build_synthetic_design(data, 0.05);
  // Random-effects oracle: F / (1 + n) ~ F(m - 1, N - m).
  const boost::math::fisher_f F(m - 1, m * n - m);
  const double crit = boost::math::quantile(boost::math::complement(F, 0.05));
  const double power = boost::math::cdf(boost::math::complement(F, crit / (1.0 + n)));
  CHECK(power > 0.99);
  CHECK(sd.p0() >= static_cast<Index>(std::ceil(0.95 * p_het)));
}

TEST_CASE("screening report csv") {
  ScreeningReport r;
  r.entries = {{0, "anova", 0.5, false}, {2, "lrt", 0.001, true}};
  std::ostringstream out;
  write_screening_csv(out, r);
  CHECK(out.str() == "covariate,test,pvalue,selected\n1,anova,0.5,0\n3,lrt,0.001,1\n");
}
