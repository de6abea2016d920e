#pragma once

#include "shel/crossval.hpp"
#include "shel/data.hpp"
#include "shel/solver.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace shel {

struct ShelFit;

struct DebiasConfig {
  CvConfig cv;           // nodewise lambda selection
  bool use_1se = false;  // nodewise lambda: lambda_min unless set
  // default: B coefficients of the nodewise fit are dropped (zeros in the gamma
  // slots, B part left out of the residual). true keeps them in both, so a_hat
  // is also orthogonal to the B columns
  bool project_synthetic = false;
  // s.e. sqrt(V/m) as in the cluster-level limit; false rescales by m/N,
  // the exact spread of the N-normalized correction (n times smaller at n_i = n)
  bool cluster_normalization = true;
  double level = 0.05;
  int threads = 1;       // across targets
};

/// Row l of the approximate inverse Hessian, in the standardized frame of
/// the stacked design (length p + p0; zeros in the gamma slots unless projected).
struct NodewiseResult {
  VectorXd a_hat;
  VectorXd zeta;         // coefficients on the other stacked columns (length p + p0 - 1)
  double sigma2 = 0.0;   // N^-1 ||W~_l - W~_{-l} zeta||^2
  double lambda = 0.0;
};

/// Working-variance diagonal at a fit: 1 (gaussian) or mu(1 - mu) (binomial).
VectorXd working_variance(const StackedDesign& design, const PenalizedFit& fit, Family family);

/// Nodewise SHEL regression of column l on the other X columns plus the B
/// columns of `design`, all weighted by V^{1/2} after V-weighted centering.
/// Throws NumericalError when sigma2 < 1e-10.
NodewiseResult nodewise_fit(const StackedDesign& design, const VectorXd& v, const ClusterIndex& clusters, Index l,
                            const CvConfig& cv, bool use_1se = false, bool project_synthetic = false);

/// One-step corrected coefficient, standardized frame:
///   theta_l + a' N^-1 sum W_ij (y_ij - mu_ij).
double debias(const StackedDesign& design, const VectorXd& y, const PenalizedFit& fit, Family family,
              const VectorXd& a_hat, Index l);

struct ClusterVariance {
  double V = 0.0;   // m^-1 sum_i Phi_i^2
  VectorXd Phi;     // per-cluster sums of a' W_ij (y_ij - mu_ij)
  double V_obs = 0.0;  // N^-1 sum_ij phi_ij^2, observation-level analogue
};

ClusterVariance cluster_variance(const StackedDesign& design, const VectorXd& y, const PenalizedFit& fit,
                                 Family family, const ClusterIndex& clusters, const VectorXd& a_hat);

struct DebiasRow {
  Index index = 0;            // 0-based covariate
  double estimate = 0.0;      // penalized beta_l, raw scale
  double debiased = 0.0;      // raw scale
  double V = 0.0;             // standardized frame
  double se = 0.0;            // raw scale
  double z = 0.0;
  double pvalue = 1.0;
  double lo = 0.0, hi = 0.0;
  bool infinite_precision = false;
  double a_l1 = 0.0;          // ||a||_1
  double kkt_inf = 0.0;       // ||Sigma a - e_l||_inf
  double nodewise_lambda = 0.0;
};

struct DebiasReport {
  std::vector<DebiasRow> rows;
  std::vector<std::string> errors;
};

/// Active beta coordinates (0-based covariates) of a fit.
std::vector<Index> active_beta(const ShelFit& fit);

/// Nodewise fit, correction and cluster-level sandwich for each target.
/// The standard error is sqrt(V/m) * m/N on the scale of the N-normalized loss.
DebiasReport debiased_test_suite(const ShelFit& fit, const ClusteredDataset& data, const std::vector<Index>& targets,
                                 const DebiasConfig& config = {});

/// CSV: index, estimate, debiased, V, se, z, pvalue, ci_lo, ci_hi, a_l1, kkt_inf
void write_debias_csv(std::ostream& out, const DebiasReport& report);

}  // namespace shel
