#include "shel/selective.hpp"

#include "shel/errors.hpp"
#include "shel/estimators.hpp"
#include "shel/parallel.hpp"
#include "shel/truncnorm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <tuple>

namespace shel {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

MatrixXd active_columns(const MatrixXd& Z, const std::vector<Index>& active) {
  MatrixXd out(Z.rows(), static_cast<Index>(active.size()));
  for (std::size_t j = 0; j < active.size(); ++j) out.col(static_cast<Index>(j)) = Z.col(active[j]);
  return out;
}

// Solves T(mu) = target for mu; T is decreasing in mu.
double invert_pivot(double est, double var, double L, double U, double target, double lo, double hi) {
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double t = truncated_normal_cdf(est, mid, var, L, U);
    if (std::abs(t - target) < 1e-6 && hi - lo < 1e-8 * (1.0 + std::abs(mid))) return mid;
    if (t > target) lo = mid; else hi = mid;
    if (hi - lo <= 1e-14 * (1.0 + std::abs(mid))) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

std::string to_string(CovKind kind) { return kind == CovKind::iid ? "iid" : "clustered"; }

void CovarianceModel::validate() const {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw ConfigError("sigma2 must be positive and finite");
  if (!(tau2 >= 0.0) || !std::isfinite(tau2)) throw ConfigError("tau2 must be nonnegative and finite");
}

VectorXd CovarianceModel::apply(const VectorXd& v, const ClusterIndex& clusters) const {
  VectorXd out = sigma2 * v;
  if (tau2 > 0.0) out += tau2 * clusters.expand(clusters.cluster_sums(v));
  return out;
}

MatrixXd selection_design(const StackedDesign& design) {
  MatrixXd Z = design.W;
  for (Index k = 0; k < Z.cols(); ++k) {
    if (design.is_dropped(k)) continue;
    if (!(design.weights[k] > 0.0))
      throw ConfigError("selective inference needs every column penalized (weight > 0)");
    Z.col(k) /= design.weights[k];
  }
  return Z;
}

SelectionEvent build_polyhedron(const MatrixXd& Z, const VectorXd& y, const std::vector<Index>& active,
                                const std::vector<int>& signs, double lambda1, double tol) {
  if (active.size() != signs.size()) throw ConfigError("active set and signs differ in length");
  if (!(lambda1 > 0.0)) throw ConfigError("selective inference needs lambda1 > 0");
  const Index n = Z.rows();
  const Index q = Z.cols();
  const Index k = static_cast<Index>(active.size());
  const double lam = static_cast<double>(n) * lambda1;

  std::vector<char> is_active(static_cast<std::size_t>(q), 0);
  for (Index a : active) is_active[static_cast<std::size_t>(a)] = 1;
  std::vector<Index> inactive;
  for (Index j = 0; j < q; ++j)
    if (!is_active[static_cast<std::size_t>(j)]) inactive.push_back(j);
  const Index r = static_cast<Index>(inactive.size());

  SelectionEvent ev;
  ev.active_set = active;
  ev.signs = signs;
  ev.n_inactive_rows = 2 * r;
  ev.A.resize(2 * r + k, n);
  ev.b.resize(2 * r + k);

  const MatrixXd Zi = active_columns(Z, inactive);
  if (k == 0) {
    ev.A.topRows(r) = Zi.transpose() / lam;
    ev.A.middleRows(r, r) = -Zi.transpose() / lam;
    ev.b.setOnes();
  } else {
    const MatrixXd ZM = active_columns(Z, active);
    const MatrixXd G = ZM.transpose() * ZM;
    Eigen::LDLT<MatrixXd> ldlt(G);
    const double diag_max = G.diagonal().maxCoeff();
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, diag_max))
      throw NumericalError("selective inference", "active design is rank deficient");
    VectorXd s(k);
    for (Index j = 0; j < k; ++j) s[j] = signs[static_cast<std::size_t>(j)];
    const MatrixXd pinv = ldlt.solve(ZM.transpose());  // k x n
    // Z_{-M}^T (I - P_M)
    const MatrixXd R = Zi.transpose() - (Zi.transpose() * ZM) * pinv;
    const VectorXd t = Zi.transpose() * (pinv.transpose() * s);
    ev.A.topRows(r) = R / lam;
    ev.A.middleRows(r, r) = -R / lam;
    ev.b.head(r) = VectorXd::Ones(r) - t;
    ev.b.segment(r, r) = VectorXd::Ones(r) + t;
    ev.A.bottomRows(k) = -(s.asDiagonal() * pinv);
    ev.b.tail(k) = -lam * (s.asDiagonal() * ldlt.solve(s));
  }

  const VectorXd slack = ev.A * y - ev.b;
  for (Index i = 0; i < slack.size(); ++i)
    if (slack[i] > tol * std::max(1.0, std::abs(ev.b[i])))
      throw NumericalError("selective inference",
                           "response violates the selection polyhedron by " + std::to_string(slack[i]));
  return ev;
}

std::pair<double, double> truncation_limits(const MatrixXd& A, const VectorXd& b, const VectorXd& eta,
                                            const VectorXd& sigma_eta, const VectorXd& y) {
  const double v = eta.dot(sigma_eta);
  if (!(v > 0.0)) throw NumericalError("selective inference", "eta' Sigma eta is not positive");
  const VectorXd c = sigma_eta / v;
  const VectorXd f = y - c * eta.dot(y);
  const VectorXd Ac = A * c;
  const VectorXd Af = A * f;
  double L = -kInf, U = kInf;
  const double tiny = 1e-14 * std::max(1.0, Ac.cwiseAbs().maxCoeff());
  for (Index i = 0; i < Ac.size(); ++i) {
    if (std::abs(Ac[i]) <= tiny) continue;
    const double bound = (b[i] - Af[i]) / Ac[i];
    if (Ac[i] < 0) L = std::max(L, bound); else U = std::min(U, bound);
  }
  if (!(L < U)) throw NumericalError("selective inference", "empty truncation interval (L >= U)");
  return {L, U};
}

SelectiveCI selective_test(const SelectionEvent& event, const MatrixXd& Z, const VectorXd& y,
                           const CovarianceModel& cov, const ClusterIndex& clusters, Index l, double level) {
  cov.validate();
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  const auto it = std::find(event.active_set.begin(), event.active_set.end(), l);
  if (it == event.active_set.end()) throw ConfigError("coefficient is not in the active set");
  const Index j = static_cast<Index>(it - event.active_set.begin());

  const MatrixXd ZM = active_columns(Z, event.active_set);
  const MatrixXd G = ZM.transpose() * ZM;
  const VectorXd ej = VectorXd::Unit(ZM.cols(), j);
  const VectorXd eta = ZM * G.ldlt().solve(ej);
  const VectorXd seta = cov.apply(eta, clusters);

  SelectiveCI out;
  out.index = l;
  out.estimate = eta.dot(y);
  const double var = eta.dot(seta);
  out.sd = std::sqrt(var);
  std::tie(out.L, out.U) = truncation_limits(event.A, event.b, eta, seta, y);

  out.pivot = truncated_normal_cdf(out.estimate, 0.0, var, out.L, out.U);
  out.pvalue = std::min(1.0, 2.0 * std::min(out.pivot, 1.0 - out.pivot));

  const double B = std::abs(out.estimate) + 20.0 * out.sd;
  const double t_lo = 1.0 - 0.5 * level, t_hi = 0.5 * level;
  if (truncated_normal_cdf(out.estimate, -B, var, out.L, out.U) < t_lo) {
    out.lo_unbounded = true;
    out.lo = -kInf;
  } else {
    out.lo = invert_pivot(out.estimate, var, out.L, out.U, t_lo, -B, B);
  }
  if (truncated_normal_cdf(out.estimate, B, var, out.L, out.U) > t_hi) {
    out.hi_unbounded = true;
    out.hi = kInf;
  } else {
    out.hi = invert_pivot(out.estimate, var, out.L, out.U, t_hi, -B, B);
  }
  return out;
}

CovarianceModel estimate_covariance(const VectorXd& r, const ClusterIndex& clusters, CovKind kind) {
  const Index n = r.size();
  const Index m = clusters.n_clusters();
  if (n < 2) throw DataError("covariance estimation needs at least two observations");
  CovarianceModel cov;
  cov.kind = kind;
  const double total = (r.array() - r.mean()).square().sum() / static_cast<double>(n - 1);
  const double floor = 1e-12 * std::max(1.0, total);
  if (n - m < 1) {
    // singletons only: nothing separates the two components
    cov.sigma2 = std::max(total, floor);
    cov.tau2 = 0.0;
    cov.fallback = kind == CovKind::clustered;
    return cov;
  }
  const VectorXd means = clusters.cluster_means(r);
  const double grand = r.mean();
  double ssb = 0.0, ssw = 0.0, sum_n2 = 0.0;
  for (Index c = 0; c < m; ++c) {
    const double nc = static_cast<double>(clusters.size_of(c));
    sum_n2 += nc * nc;
    ssb += nc * (means[c] - grand) * (means[c] - grand);
    for (Index i : clusters.rows_of(c)) ssw += (r[i] - means[c]) * (r[i] - means[c]);
  }
  const double msw = ssw / static_cast<double>(n - m);
  cov.sigma2 = std::max(msw, floor);
  if (kind == CovKind::clustered && m > 1) {
    const double msb = ssb / static_cast<double>(m - 1);
    const double ntilde = (static_cast<double>(n) - sum_n2 / static_cast<double>(n)) / static_cast<double>(m - 1);
    cov.tau2 = std::max(0.0, (msb - msw) / ntilde);
  }
  return cov;
}

SelectiveReport selective_inference(const ShelFit& fit, const ClusteredDataset& data, CovKind kind,
                                    std::optional<double> known_sigma2, std::optional<double> known_tau2,
                                    double level, int threads) {
  if (fit.family != Family::gaussian) throw ConfigError("selective inference supports the gaussian family only");
  const MatrixXd Z = selection_design(fit.design);
  const VectorXd& y = data.y();

  SelectiveReport report;
  if (known_sigma2) {
    report.cov.kind = kind;
    report.cov.sigma2 = *known_sigma2;
    report.cov.tau2 = kind == CovKind::clustered ? known_tau2.value_or(0.0) : 0.0;
    report.cov.estimated = false;
  } else {
    const VectorXd resid = y - linear_predictor(fit.fit, fit.raw);
    report.cov = estimate_covariance(resid, data.clusters(), kind);
  }
  report.cov.validate();

  const auto& active = fit.fit.active_set;
  if (active.empty()) return report;
  const SelectionEvent event = build_polyhedron(Z, y, active, fit.fit.signs, fit.fit.lambda1);

  std::vector<std::optional<SelectiveCI>> rows(active.size());
  std::vector<std::string> errs(active.size());
  parallel_for(active.size(), threads, [&](std::size_t j) {
    try {
      SelectiveCI ci = selective_test(event, Z, y, report.cov, data.clusters(), active[j], level);
      const Index l = active[j];
      ci.to_raw = 1.0 / (fit.design.weights[l] * fit.design.column_scales[l]);
      rows[j] = ci;
    } catch (const NumericalError& e) {
      errs[j] = "coefficient " + std::to_string(active[j] + 1) + ": " + e.what();
    }
  });
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j]) report.rows.push_back(*rows[j]);
    if (!errs[j].empty()) report.errors.push_back(errs[j]);
  }
  return report;
}

void write_selective_csv(std::ostream& out, const SelectiveReport& report) {
  out << "index,estimate,L,U,pivot,pvalue,ci_lo,ci_hi,covariance\n";
  out.precision(17);
  for (const auto& r : report.rows) {
    out << r.index + 1 << ',' << r.estimate * r.to_raw << ',' << r.L * r.to_raw << ',' << r.U * r.to_raw << ','
        << r.pivot << ',' << r.pvalue << ',' << r.lo * r.to_raw << ',' << r.hi * r.to_raw << ','
        << to_string(report.cov.kind) << '\n';
  }
}

}  // namespace shel
