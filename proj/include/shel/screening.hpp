#pragma once

#include "shel/data.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace shel {

/// One-way ANOVA F-test p-value for equal cluster means of x.
/// Degenerate cases: zero within and between variation gives 1, zero
/// within but positive between variation gives 0. Throws DataError when
/// m < 2 or every cluster is a singleton.
double anova_heterogeneity(const VectorXd& x, const ClusterIndex& clusters);

struct BinaryTestResult {
  double pvalue = 1.0;
  double statistic = 0.0;   // LRT, or the standardized score when fallback is set
  double sigma = 0.0;       // fitted random-intercept s.d.
  bool fallback = false;    // quadrature check failed, score test used
};

/// Between-cluster variance test for a 0/1 covariate: likelihood ratio of a
/// logistic random-intercept model (adaptive Gauss-Hermite, 15 nodes) vs the
/// intercept-only model, referred to 0.5*chi2_0 + 0.5*chi2_1.
BinaryTestResult binary_heterogeneity(const VectorXd& x, const ClusterIndex& clusters);

/// Marginal log-likelihood of the logistic random-intercept model,
/// sum_i log int prod_j p^x (1-p)^(1-x) phi(b) db with p = expit(b0 + sigma b),
/// evaluated with `nodes`-point adaptive Gauss-Hermite quadrature.
double random_intercept_loglik(const VectorXd& x, const ClusterIndex& clusters, double b0, double sigma,
                               int nodes = 15);

/// Variance-component score test used as the fallback (one-sided normal).
BinaryTestResult binary_score_test(const VectorXd& x, const ClusterIndex& clusters);

/// True when every entry is exactly 0 or 1.
bool is_binary(const VectorXd& x);

struct ScreeningEntry {
  Index covariate = 0;  // 0-based
  std::string test;     // "anova", "lrt" or "score"
  double pvalue = 1.0;
  bool selected = false;
};

struct ScreeningReport {
  std::vector<ScreeningEntry> entries;
  double alpha = 0.05;
};

/// Tests every covariate (concurrently when threads != 1).
ScreeningReport screen_covariates(const ClusteredDataset& data, double alpha, int threads = 1);

/// Cluster means of the covariates selected by `report`, in covariate order.
SyntheticDesign synthetic_design_from_report(const ClusteredDataset& data, const ScreeningReport& report);

/// Screening followed by B construction. p-value < alpha selects a covariate.
SyntheticDesign build_synthetic_design(const ClusteredDataset& data, double alpha, int threads = 1,
                                       ScreeningReport* report = nullptr);

/// CSV columns: covariate (1-based), test, pvalue, selected.
void write_screening_csv(std::ostream& out, const ScreeningReport& report);

}  // namespace shel
