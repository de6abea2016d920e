#pragma once

#include "shel/crossval.hpp"
#include "shel/data.hpp"
#include "shel/screening.hpp"
#include "shel/solver.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace shel {

enum class Method { lasso, shel, gshel, ishel1, ishel2, igshel };

std::string to_string(Method method);
Method method_from_string(std::string_view name);
bool is_iterative(Method method);

struct IterativeTrace {
  std::vector<double> change;       // ||D(s) - D(s-1)||^2 per outer iteration
  std::vector<double> carry_coef;   // coefficient of the carried column per iteration
  std::vector<double> lambdas;      // selected lambda1 per iteration
  double e_thr = 0.0;
  int n_iterations = 0;
  bool converged = false;
  std::size_t best = 0;             // iteration whose fit is returned
  VectorXd offset;                  // final D, the estimated cluster component
};

struct EstimatorConfig {
  double alpha = 0.05;   // screening level
  CvConfig cv;
  double e_thr = 0.0;    // <= 0 means 1e-6 * N
  int max_outer = 20;
};

/// A fitted estimator together with everything needed to reuse it.
struct ShelFit {
  Method method = Method::shel;
  Family family = Family::gaussian;
  PenalizedFit fit;
  StackedDesign design;
  MatrixXd raw;                // raw stacked columns [X B (D)]
  SyntheticDesign synthetic;
  ScreeningReport screening;
  CvResult cv;
  bool use_1se = true;
  std::optional<IterativeTrace> trace;
};

/// Raw stacked columns [X B] and penalty weights (1 on X, ratio on B).
MatrixXd stacked_columns(const ClusteredDataset& data, const SyntheticDesign& synthetic);
VectorXd stacked_weights(Index p, Index p0, double ratio);

/// Standardized [X B] with the lambda2/lambda1 coupling ratio.
StackedDesign shel_design(const ClusteredDataset& data, const SyntheticDesign& synthetic);

/// Marginal lasso on X alone.
PenalizedFit fit_lasso(const ClusteredDataset& data, double lambda1, const SolverConfig& config = {});
/// Weighted lasso on [X B], Gaussian loss.
PenalizedFit fit_shel(const ClusteredDataset& data, const SyntheticDesign& synthetic, double lambda1,
                      const SolverConfig& config = {});
/// Weighted lasso on [X B], logistic loss.
PenalizedFit fit_gshel(const ClusteredDataset& data, const SyntheticDesign& synthetic, double lambda1,
                       const SolverConfig& config = {});

/// Cluster-level CV on [X B] for the dataset's family.
CvResult cross_validate(const ClusteredDataset& data, const SyntheticDesign& synthetic, const CvConfig& config);

/// CV followed by a warm-started fit at lambda_1se (or lambda_min).
ShelFit fit_cv(const ClusteredDataset& data, const SyntheticDesign& synthetic, const EstimatorConfig& config,
               bool use_1se);

/// Iterative refit. Each outer step adds the previous cluster component
/// D(s-1) as an unpenalized column next to X and B, selects lambda1 by CV
/// and sets D(s) = c D(s-1) + B gamma, with c the carried coefficient.
ShelFit fit_ishel(const ClusteredDataset& data, const SyntheticDesign& synthetic, const EstimatorConfig& config,
                  bool use_1se);

/// Screening (skipped for lasso) plus the requested estimator.
ShelFit run_method(const ClusteredDataset& data, Method method, const EstimatorConfig& config);

struct TargetShift {
  VectorXd gamma_star;           // length p0
  double delta_m = 0.0;          // sqrt(||alpha - Bc gamma*||^2 / m)
  std::vector<Index> support;
  bool approximate = false;      // greedy mode
};

/// Best M2-sparse least-squares predictor of alpha from the columns of Bc.
/// Exhaustive over supports when greedy is false (p0 <= 12), else
/// orthogonal matching pursuit.
TargetShift target_shift_oracle(const VectorXd& alpha, const MatrixXd& Bc, int M2, bool greedy = false);

}  // namespace shel
