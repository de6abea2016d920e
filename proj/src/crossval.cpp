#include "shel/crossval.hpp"

#include "shel/errors.hpp"
#include "shel/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace shel {
namespace {

struct Split {
  std::vector<Index> train;
  std::vector<Index> test;
};

std::vector<Split> make_splits(const ClusterIndex& ci, const std::vector<int>& folds, int k) {
  std::vector<Split> splits(k);
  for (Index r = 0; r < ci.n_obs(); ++r) {
    const int f = folds[ci.cluster_of(r)];
    for (int j = 0; j < k; ++j) (j == f ? splits[j].test : splits[j].train).push_back(r);
  }
  return splits;
}

MatrixXd take_rows(const MatrixXd& m, const std::vector<Index>& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

VectorXd take(const VectorXd& v, const std::vector<Index>& rows) {
  VectorXd out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Index>(i)] = v[rows[i]];
  return out;
}

bool both_classes(const VectorXd& y) {
  const double s = y.sum();
  return s > 0.0 && s < static_cast<double>(y.size());
}

}  // namespace

void CvConfig::validate(Index n_clusters) const {
  if (n_folds < 2) throw ConfigError("cross-validation needs K >= 2 folds");
  if (n_folds > n_clusters) throw ConfigError("cross-validation needs K <= number of clusters");
  if (n_lambda < 2) throw ConfigError("lambda path needs at least 2 points");
  if (!(ratio_min > 0.0 && ratio_min < 1.0)) throw ConfigError("lambda ratio_min must lie in (0, 1)");
  solver.validate();
  if (!(final_tol > 0.0)) throw ConfigError("final_tol must be positive");
}

std::vector<int> assign_folds(Index m, int k, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> folds(static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < perm.size(); ++i) folds[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return folds;
}

double prediction_error(const VectorXd& eta, const VectorXd& y, Family family) {
  double s = 0.0;
  if (family == Family::binomial) {
    for (Index i = 0; i < y.size(); ++i) {
      const double e = eta[i];
      const double sp = e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      s += 2.0 * (sp - y[i] * e);
    }
  } else {
    s = (y - eta).squaredNorm();
  }
  return s / static_cast<double>(y.size());
}

PenalizedFit fit_selected(const StackedDesign& d, const VectorXd& y, Family family, const CvResult& cv,
                          std::size_t index, const CvConfig& cfg) {
  if (index >= cv.lambdas.size()) throw ConfigError("selected lambda index is outside the CV grid");
  const std::vector<double> head(cv.lambdas.begin(), cv.lambdas.begin() + static_cast<long>(index) + 1);
  const PenalizedFit rough = fit_path(d, y, family, head, cfg.solver).back();
  SolverConfig tight = cfg.solver;
  tight.tol = std::min(cfg.final_tol, cfg.solver.tol);
  tight.max_iters = std::max(cfg.solver.max_iters, 100000);
  return fit_family(d, y, family, rough.lambda1, tight, &rough);
}

double cv_lambda_top(const MatrixXd& raw, const VectorXd& w, Index p, const VectorXd& y, Family family,
                     const ClusterIndex& ci, const std::vector<int>& folds, int k) {
  double top = lambda_max(standardize_columns(raw, w, p), y, family);
  for (const auto& s : make_splits(ci, folds, k)) {
    const VectorXd yt = take(y, s.train);
    if (family == Family::binomial && !both_classes(yt)) continue;
    top = std::max(top, lambda_max(standardize_columns(take_rows(raw, s.train), w, p), yt, family));
  }
  return top;
}

CvResult cross_validate(const MatrixXd& raw, const VectorXd& w, Index p, const VectorXd& y, Family family,
                        const ClusterIndex& ci, const CvConfig& cfg) {
  cfg.validate(ci.n_clusters());
  if (raw.rows() != y.size() || ci.n_obs() != y.size()) throw DataError("cross-validation inputs differ in length");
  const int k = cfg.n_folds;

  CvResult out;
  std::vector<Split> splits;
  for (int attempt = 0;; ++attempt) {
    const std::uint64_t seed = attempt == 0 ? cfg.seed : mix_seed(cfg.seed, static_cast<std::uint64_t>(attempt));
    out.fold_of_cluster = assign_folds(ci.n_clusters(), k, seed);
    splits = make_splits(ci, out.fold_of_cluster, k);
    bool ok = true;
    if (family == Family::binomial)
      for (const auto& s : splits) ok = ok && both_classes(take(y, s.train));
    if (ok) break;
    if (attempt == 1) throw DataError("a cross-validation training fold lacks one response class after refolding");
    out.refolds = 1;
  }

  const double top = cv_lambda_top(raw, w, p, y, family, ci, out.fold_of_cluster, k);
  out.lambdas = log_spaced_grid(top, cfg.n_lambda, cfg.ratio_min);
  const std::size_t nl = out.lambdas.size();
  out.cv_mean.reserve(nl);
  out.cv_se.reserve(nl);

  struct FoldData {
    StackedDesign design;
    VectorXd y_train, y_test;
    MatrixXd raw_test;
    MatrixXd gram;
    PenalizedFit last;
  };
  std::vector<FoldData> fd(static_cast<std::size_t>(k));
  parallel_for(static_cast<std::size_t>(k), cfg.threads, [&](std::size_t f) {
    const auto& s = splits[f];
    fd[f].design = standardize_columns(take_rows(raw, s.train), w, p);
    fd[f].y_train = take(y, s.train);
    fd[f].raw_test = take_rows(raw, s.test);
    fd[f].y_test = take(y, s.test);
    if (family == Family::gaussian) fd[f].gram = path_gram(fd[f].design);
  });

  // lambda-major so the sweep can stop early; folds of one lambda run in parallel
  std::vector<double> err(static_cast<std::size_t>(k));
  std::size_t best = 0;
  for (std::size_t j = 0; j < nl; ++j) {
    parallel_for(static_cast<std::size_t>(k), cfg.threads, [&](std::size_t f) {
      FoldData& d = fd[f];
      const PenalizedFit* warm = j == 0 ? nullptr : &d.last;
      d.last = d.gram.size() > 0 ? fit_gaussian(d.design, d.y_train, out.lambdas[j], cfg.solver, warm, &d.gram)
                                 : fit_family(d.design, d.y_train, family, out.lambdas[j], cfg.solver, warm);
      err[f] = prediction_error(linear_predictor(d.last, d.raw_test), d.y_test, family);
    });
    double mean = 0.0;
    for (int f = 0; f < k; ++f) mean += err[static_cast<std::size_t>(f)];
    mean /= k;
    double ss = 0.0;
    for (int f = 0; f < k; ++f) ss += (err[static_cast<std::size_t>(f)] - mean) * (err[static_cast<std::size_t>(f)] - mean);
    out.cv_mean.push_back(mean);
    out.cv_se.push_back(std::sqrt(ss / (k - 1)) / std::sqrt(static_cast<double>(k)));
    if (mean < out.cv_mean[best]) best = j;
    if (cfg.early_stop && j >= best + 5 && mean > out.cv_mean[best] + out.cv_se[best]) break;
  }
  out.lambdas.resize(out.cv_mean.size());

  out.index_min = static_cast<std::size_t>(std::min_element(out.cv_mean.begin(), out.cv_mean.end()) - out.cv_mean.begin());
  const double bound = out.cv_mean[out.index_min] + out.cv_se[out.index_min];
  out.index_1se = out.index_min;
  for (std::size_t j = 0; j <= out.index_min; ++j) {
    if (out.cv_mean[j] <= bound) {
      out.index_1se = j;
      break;
    }
  }
  out.lambda_min = out.lambdas[out.index_min];
  out.lambda_1se = out.lambdas[out.index_1se];
  return out;
}

}  // namespace shel
