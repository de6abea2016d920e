#pragma once

#include "shel/data.hpp"
#include "shel/solver.hpp"

#include <cstdint>
#include <vector>

namespace shel {

struct CvConfig {
  int n_folds = 10;
  int n_lambda = 50;
  double ratio_min = 0.01;
  std::uint64_t seed = 1;
  int threads = 1;
  SolverConfig solver = [] { SolverConfig s; s.tol = 1e-5; return s; }();  // fold paths and the path to the selected lambda
  double final_tol = 1e-10;   // polish of the fit at the selected lambda
  // stop descending the grid once the CV error has risen past the minimum
  // (at least 5 points below it and above min + se)
  bool early_stop = true;

  void validate(Index n_clusters) const;
};

struct CvResult {
  std::vector<double> lambdas;  // descending; shorter than n_lambda after an early stop
  std::vector<double> cv_mean;  // mean of the per-fold errors
  std::vector<double> cv_se;    // s.d. of the per-fold errors / sqrt(K)
  std::size_t index_min = 0;
  std::size_t index_1se = 0;
  double lambda_min = 0.0;
  double lambda_1se = 0.0;
  std::vector<int> fold_of_cluster;  // 0-based fold for each dense cluster index
  int refolds = 0;
};

/// Balanced random partition of m clusters into K folds (sizes differ by <= 1).
std::vector<int> assign_folds(Index n_clusters, int n_folds, std::uint64_t seed);

/// Largest lambda_max over the full data and every training fold.
double cv_lambda_top(const MatrixXd& raw, const VectorXd& penalty_weights, Index p, const VectorXd& y,
                     Family family, const ClusterIndex& clusters, const std::vector<int>& folds, int n_folds);

/// Cluster-level K-fold cross-validation of the weighted lasso on raw
/// stacked columns. Each training fold is standardized on its own rows.
/// Fold error: mean squared error (Gaussian) or mean deviance (binomial)
/// on the held-out clusters.
CvResult cross_validate(const MatrixXd& raw, const VectorXd& penalty_weights, Index p, const VectorXd& y,
                        Family family, const ClusterIndex& clusters, const CvConfig& config);

/// Warm-started path down to lambdas[index], then a polish at final_tol.
PenalizedFit fit_selected(const StackedDesign& design, const VectorXd& y, Family family, const CvResult& cv,
                          std::size_t index, const CvConfig& config);

/// Held-out error of predictions eta for responses y.
double prediction_error(const VectorXd& eta, const VectorXd& y, Family family);

}  // namespace shel
