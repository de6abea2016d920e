#pragma once

#include "shel/data.hpp"

#include <iosfwd>
#include <vector>

namespace shel {

/// Random-intercept linear mixed model fitted by maximum likelihood
/// (profile over tau2 / sigma2). Coefficients start with the intercept.
struct LmmFit {
  VectorXd coef;
  MatrixXd cov;        // Wald covariance of coef
  double sigma2 = 0.0;
  double tau2 = 0.0;
  double loglik = 0.0;
};

LmmFit fit_random_intercept_lmm(const MatrixXd& X, const VectorXd& y, const ClusterIndex& clusters);

/// Unpenalized logistic regression by Newton's method, intercept first.
struct GlmFit {
  VectorXd coef;
  MatrixXd cov;
  bool converged = false;
};

GlmFit fit_logistic_glm(const MatrixXd& X, const VectorXd& y);

struct NaiveRow {
  Index index = 0;  // 0-based covariate
  double estimate = 0.0, se = 0.0, z = 0.0, pvalue = 1.0, lo = 0.0, hi = 0.0;
};

/// Refit of the selected covariates, ignoring the selection step: LMM for
/// the gaussian family, logistic GLM for the binomial family. Wald tests.
std::vector<NaiveRow> naive_refit(const ClusteredDataset& data, const std::vector<Index>& covariates,
                                  double level = 0.05);

void write_naive_csv(std::ostream& out, const std::vector<NaiveRow>& rows);

}  // namespace shel
