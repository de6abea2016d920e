#pragma once

#include "shel/data.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace shel {

struct ShelFit;

/// {A y <= b}: the lasso selected `active_set` with `signs`.
struct SelectionEvent {
  MatrixXd A;
  VectorXd b;
  std::vector<Index> active_set;
  std::vector<int> signs;
  Index n_inactive_rows = 0;  // leading rows belonging to the inactive block
};

enum class CovKind { iid, clustered };

std::string to_string(CovKind kind);

/// Omega = sigma2 I + tau2 D D^T, D the cluster indicator matrix.
struct CovarianceModel {
  CovKind kind = CovKind::iid;
  double sigma2 = 1.0;
  double tau2 = 0.0;
  bool fallback = false;   // clustered requested but only singleton clusters
  bool estimated = true;   // plug-in estimate rather than a known value

  void validate() const;
  VectorXd apply(const VectorXd& v, const ClusterIndex& clusters) const;
};

/// Z = W diag(1/w): the weighted lasso on W is the plain lasso on Z.
MatrixXd selection_design(const StackedDesign& design);

/// Explicit polyhedron of the (active set, sign) event for the lasso
///   (2N)^-1 ||y - Z phi||^2 + lambda1 ||phi||_1
/// with centered Z. Throws NumericalError when Z_M is rank deficient or
/// when y violates A y <= b by more than `tol`.
SelectionEvent build_polyhedron(const MatrixXd& Z, const VectorXd& y, const std::vector<Index>& active_set,
                                const std::vector<int>& signs, double lambda1, double tol = 1e-6);

/// L and U from c = Sigma eta / (eta' Sigma eta) and f = y - c eta'y.
/// Throws NumericalError when L >= U.
std::pair<double, double> truncation_limits(const MatrixXd& A, const VectorXd& b, const VectorXd& eta,
                                            const VectorXd& sigma_eta, const VectorXd& y);

struct SelectiveCI {
  Index index = 0;          // position in the stacked theta
  double estimate = 0.0;    // eta' y
  double sd = 0.0;          // sqrt(eta' Sigma eta)
  double L = 0.0, U = 0.0;
  double pivot = 0.5;       // T at mu = 0
  double pvalue = 1.0;
  double lo = 0.0, hi = 0.0;
  bool lo_unbounded = false, hi_unbounded = false;
  double to_raw = 1.0;      // multiply eta-units by this for the raw coefficient scale
};

/// Pivot, two-sided p-value and (1 - level) CI for the l-th stacked coefficient.
SelectiveCI selective_test(const SelectionEvent& event, const MatrixXd& Z, const VectorXd& y,
                           const CovarianceModel& cov, const ClusterIndex& clusters, Index l, double level = 0.05);

/// One-way ANOVA moment estimates of (sigma2, tau2) from residuals.
CovarianceModel estimate_covariance(const VectorXd& residuals, const ClusterIndex& clusters, CovKind kind);

struct SelectiveReport {
  CovarianceModel cov;
  std::vector<SelectiveCI> rows;
  std::vector<std::string> errors;  // per-coefficient failures
};

/// Selective tests for every active coefficient of a SHEL fit. sigma2 is
/// estimated from the fit residuals unless `known_sigma2` is given (then
/// tau2 is also taken from `known_tau2` for the clustered kind).
SelectiveReport selective_inference(const ShelFit& fit, const ClusteredDataset& data, CovKind kind,
                                    std::optional<double> known_sigma2 = std::nullopt,
                                    std::optional<double> known_tau2 = std::nullopt, double level = 0.05,
                                    int threads = 1);

/// CSV: index, estimate, L, U, pivot, pvalue, ci_lo, ci_hi, covariance (raw coefficient scale
/// for estimate and CI; index is 1-based over [X B]).
void write_selective_csv(std::ostream& out, const SelectiveReport& report);

}  // namespace shel
