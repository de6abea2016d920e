#include "shel/data.hpp"

#include "shel/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace shel {

std::string to_string(Family family) {
  return family == Family::gaussian ? "gaussian" : "binomial";
}

Family family_from_string(std::string_view name) {
  if (name == "gaussian") return Family::gaussian;
  if (name == "binomial") return Family::binomial;
  throw ConfigError("unknown family '" + std::string(name) + "' (expected gaussian or binomial)");
}

ClusterIndex::ClusterIndex(std::span<const int> labels) {
  std::unordered_map<int, Index> dense;
  cluster_of_.reserve(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    auto [it, inserted] = dense.try_emplace(labels[r], static_cast<Index>(members_.size()));
    if (inserted) members_.emplace_back();
    members_[it->second].push_back(static_cast<Index>(r));
    cluster_of_.push_back(it->second);
  }
}

VectorXd ClusterIndex::cluster_sums(const VectorXd& v) const {
  VectorXd s = VectorXd::Zero(n_clusters());
  for (Index r = 0; r < n_obs(); ++r) s[cluster_of_[r]] += v[r];
  return s;
}

VectorXd ClusterIndex::cluster_means(const VectorXd& v) const {
  VectorXd s = cluster_sums(v);
  for (Index c = 0; c < n_clusters(); ++c) s[c] /= static_cast<double>(size_of(c));
  return s;
}

VectorXd ClusterIndex::expand(const VectorXd& per_cluster) const {
  VectorXd out(n_obs());
  for (Index r = 0; r < n_obs(); ++r) out[r] = per_cluster[cluster_of_[r]];
  return out;
}

ClusteredDataset::ClusteredDataset(VectorXd y, MatrixXd X, std::vector<int> cluster_id,
                                   Family family, std::vector<std::string> covariate_names)
    : y_(std::move(y)),
      X_(std::move(X)),
      cluster_id_(std::move(cluster_id)),
      family_(family),
      names_(std::move(covariate_names)) {
  if (y_.size() == 0) throw DataError("dataset is empty");
  if (X_.rows() != y_.size())
    throw DataError("covariate matrix has " + std::to_string(X_.rows()) + " rows but response has " +
                    std::to_string(y_.size()));
  if (static_cast<Index>(cluster_id_.size()) != y_.size())
    throw DataError("cluster id vector length does not match the response");
  if (!y_.allFinite()) throw DataError("response contains NaN or infinite values");
  if (!X_.allFinite()) throw DataError("covariates contain NaN or infinite values");
  if (family_ == Family::binomial) {
    for (Index i = 0; i < y_.size(); ++i)
      if (y_[i] != 0.0 && y_[i] != 1.0) throw DataError("binomial response must be exactly 0 or 1");
  }
  if (names_.empty()) {
    names_.reserve(X_.cols());
    for (Index l = 0; l < X_.cols(); ++l) names_.push_back("x" + std::to_string(l + 1));
  } else if (static_cast<Index>(names_.size()) != X_.cols()) {
    throw DataError("covariate name count does not match the covariate matrix");
  }
  clusters_ = ClusterIndex(cluster_id_);
  row_order_.resize(y_.size());
  std::iota(row_order_.begin(), row_order_.end(), Index{0});
}

bool ClusteredDataset::is_canonical() const {
  int expected = 1;
  for (std::size_t r = 0; r < cluster_id_.size(); ++r) {
    if (r > 0 && cluster_id_[r] == cluster_id_[r - 1]) continue;
    if (cluster_id_[r] != expected) return false;
    ++expected;
  }
  return true;
}

ClusteredDataset canonicalize(const ClusteredDataset& dataset) {
  const ClusterIndex& ci = dataset.clusters();
  const Index n = dataset.n_obs();
  std::vector<Index> order;
  order.reserve(n);
  for (Index c = 0; c < ci.n_clusters(); ++c)
    for (Index r : ci.rows_of(c)) order.push_back(r);

  VectorXd y(n);
  MatrixXd X(n, dataset.n_covariates());
  std::vector<int> labels(n);
  for (Index r = 0; r < n; ++r) {
    y[r] = dataset.y()[order[r]];
    X.row(r) = dataset.X().row(order[r]);
    labels[r] = static_cast<int>(ci.cluster_of(order[r])) + 1;
  }
  ClusteredDataset out(std::move(y), std::move(X), std::move(labels), dataset.family(),
                       dataset.covariate_names());
  for (Index r = 0; r < n; ++r) out.row_order_[r] = dataset.row_order()[order[r]];
  return out;
}

VectorXd StackedDesign::unscale(const VectorXd& theta_scaled) const {
  VectorXd theta = VectorXd::Zero(theta_scaled.size());
  for (Index k = 0; k < theta.size(); ++k)
    if (column_scales[k] > 0.0) theta[k] = theta_scaled[k] / column_scales[k];
  return theta;
}

double StackedDesign::unscale_intercept(double intercept_scaled, const VectorXd& theta_scaled) const {
  return intercept_scaled - centers.dot(unscale(theta_scaled));
}

MatrixXd StackedDesign::transform(const MatrixXd& raw) const {
  MatrixXd out(raw.rows(), raw.cols());
  for (Index k = 0; k < raw.cols(); ++k) {
    if (column_scales[k] > 0.0)
      out.col(k) = (raw.col(k).array() - centers[k]) / column_scales[k];
    else
      out.col(k).setZero();
  }
  return out;
}

StackedDesign standardize_columns(const MatrixXd& raw, VectorXd penalty_weights, Index p) {
  if (penalty_weights.size() != raw.cols())
    throw DataError("penalty weight count does not match design columns");
  if ((penalty_weights.array() < 0.0).any()) throw DataError("penalty weights must be nonnegative");
  const Index n = raw.rows();
  StackedDesign d;
  d.W.resize(n, raw.cols());
  d.weights = std::move(penalty_weights);
  d.centers.resize(raw.cols());
  d.column_scales.resize(raw.cols());
  d.p = p;
  d.p0 = raw.cols() - p;
  for (Index k = 0; k < raw.cols(); ++k) {
    const auto col = raw.col(k);
    const double mean = col.mean();
    const bool constant = (col.array() == col[0]).all();
    const double scale = constant ? 0.0 : std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n));
    d.centers[k] = mean;
    if (scale == 0.0 || scale < 1e-14 * std::max(1.0, std::abs(mean))) {
      d.column_scales[k] = 0.0;
      d.W.col(k).setZero();
      d.dropped.push_back(k);
    } else {
      d.column_scales[k] = scale;
      d.W.col(k) = (col.array() - mean) / scale;
    }
  }
  return d;
}

StackedDesign stack_design(const MatrixXd& X, const MatrixXd& B, double ratio) {
  if (B.cols() > 0 && B.rows() != X.rows())
    throw DataError("X has " + std::to_string(X.rows()) + " rows but B has " + std::to_string(B.rows()));
  if (!(ratio > 0.0)) throw DataError("penalty ratio must be positive");
  const Index p = X.cols();
  const Index p0 = B.cols();
  MatrixXd raw(X.rows(), p + p0);
  raw.leftCols(p) = X;
  if (p0 > 0) raw.rightCols(p0) = B;
  VectorXd w(p + p0);
  w.head(p).setOnes();
  w.tail(p0).setConstant(ratio);
  return standardize_columns(raw, std::move(w), p);
}

double penalty_ratio(Index p, Index p0) {
  if (p0 <= 1 || p <= 1) return 1.0;
  return std::sqrt(std::log(static_cast<double>(p0)) / std::log(static_cast<double>(p)));
}

void finalize_fit(PenalizedFit& fit, const StackedDesign& design) {
  fit.theta = design.unscale(fit.theta_scaled);
  fit.intercept = design.unscale_intercept(fit.intercept_scaled, fit.theta_scaled);
  fit.beta = fit.theta.head(design.p);
  fit.gamma = fit.theta.segment(design.p, design.p0);
  fit.active_set.clear();
  fit.signs.clear();
  for (Index k = 0; k < fit.theta_scaled.size(); ++k) {
    if (fit.theta_scaled[k] != 0.0) {
      fit.active_set.push_back(k);
      fit.signs.push_back(fit.theta_scaled[k] > 0.0 ? 1 : -1);
    }
  }
}

VectorXd linear_predictor(const PenalizedFit& fit, const MatrixXd& raw_W) {
  return (raw_W * fit.theta).array() + fit.intercept;
}

}  // namespace shel
