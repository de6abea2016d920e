#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace shel {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Family { gaussian, binomial };

std::string to_string(Family family);
Family family_from_string(std::string_view name);

/// Maps arbitrary integer cluster labels onto dense indices 0..m-1 in
/// first-appearance order. Rows need not be contiguous.
class ClusterIndex {
 public:
  ClusterIndex() = default;
  explicit ClusterIndex(std::span<const int> labels);

  Index n_clusters() const { return static_cast<Index>(members_.size()); }
  Index n_obs() const { return static_cast<Index>(cluster_of_.size()); }
  Index cluster_of(Index row) const { return cluster_of_[row]; }
  const std::vector<Index>& cluster_of() const { return cluster_of_; }
  const std::vector<Index>& rows_of(Index cluster) const { return members_[cluster]; }
  Index size_of(Index cluster) const { return static_cast<Index>(members_[cluster].size()); }

  /// Per-cluster sums of v (length m).
  VectorXd cluster_sums(const VectorXd& v) const;
  /// Per-cluster means of v.
  VectorXd cluster_means(const VectorXd& v) const;
  /// Expands a length-m vector back to length N.
  VectorXd expand(const VectorXd& per_cluster) const;

 private:
  std::vector<Index> cluster_of_;
  std::vector<std::vector<Index>> members_;
};

/// Responses, covariates and cluster labels for one clustered study.
///
/// Immutable after construction. The constructor validates shape, rejects
/// NaN/inf and checks that binomial responses are exactly 0 or 1.
class ClusteredDataset {
 public:
  ClusteredDataset(VectorXd y, MatrixXd X, std::vector<int> cluster_id,
                   Family family, std::vector<std::string> covariate_names = {});

  const VectorXd& y() const { return y_; }
  const MatrixXd& X() const { return X_; }
  const std::vector<int>& cluster_id() const { return cluster_id_; }
  const ClusterIndex& clusters() const { return clusters_; }
  Family family() const { return family_; }
  const std::vector<std::string>& covariate_names() const { return names_; }

  Index n_obs() const { return y_.size(); }
  Index n_covariates() const { return X_.cols(); }
  Index n_clusters() const { return clusters_.n_clusters(); }

  /// Original row index of each row (identity unless produced by canonicalize).
  const std::vector<Index>& row_order() const { return row_order_; }

  /// True when labels are 1..m in order of appearance and every cluster's
  /// rows are contiguous.
  bool is_canonical() const;

 private:
  friend ClusteredDataset canonicalize(const ClusteredDataset& dataset);

  VectorXd y_;
  MatrixXd X_;
  std::vector<int> cluster_id_;
  Family family_;
  std::vector<std::string> names_;
  ClusterIndex clusters_;
  std::vector<Index> row_order_;
};

/// Relabels clusters 1..m in first-appearance order and groups their rows
/// contiguously, keeping the within-cluster row order. Idempotent.
ClusteredDataset canonicalize(const ClusteredDataset& dataset);

/// Cluster-constant synthetic columns built from screened covariates.
struct SyntheticDesign {
  MatrixXd B;                       // N x p0, constant within each cluster
  std::vector<Index> source_column; // 0-based covariate index of each column
  std::vector<double> pvalues;      // screening p-value of each column
  double alpha = 0.05;

  Index p0() const { return B.cols(); }
};

/// Standardized stacked design W = [X B (extra)] with per-column penalty
/// weights. Columns are centered and scaled to ||W_l||^2 / N = 1; constant
/// columns are zeroed and listed in `dropped` (their coefficient is 0).
struct StackedDesign {
  MatrixXd W;
  VectorXd weights;
  VectorXd centers;
  VectorXd column_scales;  // 0 for dropped columns
  std::vector<Index> dropped;
  Index p = 0;             // leading covariate columns (beta block)
  Index p0 = 0;            // synthetic columns (gamma block)

  Index n_obs() const { return W.rows(); }
  Index n_cols() const { return W.cols(); }
  bool is_dropped(Index k) const { return column_scales[k] == 0.0; }

  /// Maps scaled-space coefficients back to the raw column scale.
  VectorXd unscale(const VectorXd& theta_scaled) const;
  /// Raw-scale intercept matching a scaled-space fit.
  double unscale_intercept(double intercept_scaled, const VectorXd& theta_scaled) const;
  /// Rebuilds standardized rows for new raw data with this design's centers/scales.
  MatrixXd transform(const MatrixXd& raw) const;
};

/// Standardizes arbitrary raw columns. `p` is the size of the leading
/// (beta) block; the remaining columns form the gamma block and beyond.
StackedDesign standardize_columns(const MatrixXd& raw, VectorXd penalty_weights, Index p);

/// W = [X B], weight 1 on X columns and `ratio` on B columns.
StackedDesign stack_design(const MatrixXd& X, const MatrixXd& B, double ratio);

/// Ratio lambda2/lambda1 = sqrt(log p0 / log p); 1 when p0 <= 1 or p <= 1.
double penalty_ratio(Index p, Index p0);

/// Output of a weighted-l1 penalized fit, reported on the raw column scale.
struct PenalizedFit {
  VectorXd beta;
  VectorXd gamma;
  double intercept = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::vector<Index> active_set;  // sorted indices into theta = (beta, gamma, extra)
  std::vector<int> signs;
  int n_iters = 0;
  bool converged = false;

  // Solver-frame quantities (standardized columns, centered response).
  VectorXd theta_scaled;
  double intercept_scaled = 0.0;
  VectorXd theta;  // raw-scale theta over all stacked columns
  Family family = Family::gaussian;
  std::vector<double> objective_trace;
};

/// Fills beta/gamma/theta/active_set/signs from a scaled-space solution.
void finalize_fit(PenalizedFit& fit, const StackedDesign& design);

/// Linear predictor intercept + raw_W * theta for raw stacked columns.
VectorXd linear_predictor(const PenalizedFit& fit, const MatrixXd& raw_W);

}  // namespace shel
