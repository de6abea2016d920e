#include "shel/screening.hpp"

#include "shel/errors.hpp"
#include "shel/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <utility>

namespace shel {
namespace {

struct HermiteRule {
  VectorXd nodes;
  VectorXd log_weights;  // log(w_t) + t^2, so the rule integrates plain functions
};

// Golub-Welsch for the physicists' Hermite weight exp(-t^2).
HermiteRule hermite_rule(int n) {
  MatrixXd J = MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
  HermiteRule rule{es.eigenvalues(), VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    const double t = rule.nodes[i];
    rule.log_weights[i] = std::log(std::sqrt(M_PI) * v0 * v0) + t * t;
  }
  return rule;
}

const HermiteRule& rule15() {
  static const HermiteRule r = hermite_rule(15);
  return r;
}
const HermiteRule& rule25() {
  static const HermiteRule r = hermite_rule(25);
  return r;
}

double log_expit(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

struct Pattern {
  int n = 0;
  int k = 0;
  double count = 0;
};

// log of  int p(b)^k (1-p(b))^(n-k) phi(b) db,  p(b) = expit(b0 + sigma b)
double cluster_log_integral(const Pattern& g, double b0, double sigma, const HermiteRule& rule) {
  const double n = g.n, k = g.k;
  auto h = [&](double b) {
    const double e = b0 + sigma * b;
    return k * log_expit(e) + (n - k) * log_expit(-e) - 0.5 * b * b - 0.5 * std::log(2 * M_PI);
  };
  auto dh = [&](double b) {
    const double p = 1.0 / (1.0 + std::exp(-(b0 + sigma * b)));
    return std::make_pair(sigma * (k - n * p) - b, -sigma * sigma * n * p * (1 - p) - 1.0);
  };
  // h is strictly concave; its mode lies in [-sigma n, sigma n].
  double lo = -sigma * n - 1e-12, hi = sigma * n + 1e-12, b = 0.0;
  for (int it = 0; it < 100; ++it) {
    const auto [g1, g2] = dh(b);
    if (g1 > 0) lo = b; else hi = b;
    double next = b - g1 / g2;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - b) < 1e-12 * (1 + std::abs(b))) {
      b = next;
      break;
    }
    b = next;
  }
  const double s = 1.0 / std::sqrt(-dh(b).second);
  const double scale = std::sqrt(2.0) * s;
  double top = -std::numeric_limits<double>::infinity();
  VectorXd terms(rule.nodes.size());
  for (Index i = 0; i < terms.size(); ++i) {
    terms[i] = rule.log_weights[i] + h(b + scale * rule.nodes[i]);
    top = std::max(top, terms[i]);
  }
  return std::log(scale) + top + std::log((terms.array() - top).exp().sum());
}

double marginal_loglik(const std::vector<Pattern>& groups, double b0, double sigma, const HermiteRule& rule) {
  double ll = 0.0;
  for (const auto& g : groups) ll += g.count * cluster_log_integral(g, b0, sigma, rule);
  return ll;
}

std::vector<Pattern> patterns(const VectorXd& x, const ClusterIndex& ci) {
  std::map<std::pair<int, int>, double> counts;
  for (Index c = 0; c < ci.n_clusters(); ++c) {
    int k = 0;
    for (Index r : ci.rows_of(c)) k += x[r] > 0.5 ? 1 : 0;
    counts[{static_cast<int>(ci.size_of(c)), k}] += 1.0;
  }
  std::vector<Pattern> out;
  for (const auto& [key, cnt] : counts) out.push_back({key.first, key.second, cnt});
  return out;
}

constexpr int kBrentBits = std::numeric_limits<double>::digits / 2;
constexpr double kSigmaMax = 15.0;

// Profile over the intercept for fixed sigma: returns (loglik, b0).
std::pair<double, double> profile(const std::vector<Pattern>& groups, double sigma, const HermiteRule& rule) {
  boost::uintmax_t iters = 200;
  const auto r = boost::math::tools::brent_find_minima(
      [&](double b0) { return -marginal_loglik(groups, b0, sigma, rule); }, -40.0, 40.0, kBrentBits, iters);
  return {-r.second, r.first};
}

}  // namespace

double random_intercept_loglik(const VectorXd& x, const ClusterIndex& ci, double b0, double sigma, int nodes) {
  const HermiteRule rule = nodes == 15 ? rule15() : nodes == 25 ? rule25() : hermite_rule(nodes);
  return marginal_loglik(patterns(x, ci), b0, sigma, rule);
}

bool is_binary(const VectorXd& x) {
  return (x.array() == 0.0 || x.array() == 1.0).all();
}

double anova_heterogeneity(const VectorXd& x, const ClusterIndex& ci) {
  const Index m = ci.n_clusters();
  const Index n = ci.n_obs();
  if (m < 2) throw DataError("ANOVA screening needs at least two clusters");
  if (n - m < 1) throw DataError("ANOVA screening needs a cluster with two or more observations");
  const double grand = x.mean();
  const VectorXd means = ci.cluster_means(x);
  double ssb = 0.0, ssw = 0.0;
  for (Index c = 0; c < m; ++c) {
    ssb += static_cast<double>(ci.size_of(c)) * (means[c] - grand) * (means[c] - grand);
    for (Index r : ci.rows_of(c)) ssw += (x[r] - means[c]) * (x[r] - means[c]);
  }
  const double level = std::max(1.0, x.squaredNorm());
  const double eps = 1e-26 * level;
  if (ssb <= eps && ssw <= eps) return 1.0;
  if (ssw <= eps) return 0.0;
  const double dfb = static_cast<double>(m - 1), dfw = static_cast<double>(n - m);
  const double f = (ssb / dfb) / (ssw / dfw);
  return boost::math::cdf(boost::math::complement(boost::math::fisher_f(dfb, dfw), f));
}

BinaryTestResult binary_score_test(const VectorXd& x, const ClusterIndex& ci) {
  const double p = x.mean();
  const double q = 1.0 - p;
  BinaryTestResult out;
  out.fallback = true;
  if (p <= 0.0 || q <= 0.0) return out;
  double s = 0.0, var = 0.0;
  for (Index c = 0; c < ci.n_clusters(); ++c) {
    const double n = static_cast<double>(ci.size_of(c));
    double k = 0.0;
    for (Index r : ci.rows_of(c)) k += x[r];
    s += (k - n * p) * (k - n * p) - n * p * q;
    var += n * p * q * (1 - 6 * p * q) + 2 * n * n * p * p * q * q;
  }
  out.statistic = var > 0 ? s / std::sqrt(var) : 0.0;
  out.pvalue = boost::math::cdf(boost::math::complement(boost::math::normal(), out.statistic));
  return out;
}

BinaryTestResult binary_heterogeneity(const VectorXd& x, const ClusterIndex& ci) {
  if (!is_binary(x)) throw DataError("binary screening needs a 0/1 covariate");
  const double pbar = x.mean();
  if (pbar <= 0.0 || pbar >= 1.0) throw DataError("binary screening needs both covariate levels present");
  if (ci.n_clusters() < 2) throw DataError("binary screening needs at least two clusters");

  const auto groups = patterns(x, ci);
  const double n_all = static_cast<double>(x.size());
  const double ones = x.sum();
  const double ll0 = ones * std::log(pbar) + (n_all - ones) * std::log1p(-pbar);

  try {
    boost::uintmax_t iters = 200;
    const auto best = boost::math::tools::brent_find_minima(
        [&](double sigma) { return -profile(groups, sigma, rule15()).first; }, 0.0, kSigmaMax, kBrentBits, iters);
    double sigma = best.first;
    auto [ll1, b0] = profile(groups, sigma, rule15());
    const auto edge = profile(groups, kSigmaMax, rule15());
    if (edge.first > ll1) {
      sigma = kSigmaMax;
      ll1 = edge.first;
      b0 = edge.second;
    }
    const double check = marginal_loglik(groups, b0, sigma, rule25());
    if (!std::isfinite(ll1) || std::abs(check - ll1) > 1e-4 * std::max(1.0, std::abs(ll1)))
      return binary_score_test(x, ci);

    BinaryTestResult out;
    out.sigma = sigma;
    double lrt = 2.0 * (ll1 - ll0);
    if (!(lrt > 1e-9)) lrt = 0.0;
    out.statistic = lrt;
    out.pvalue = lrt == 0.0
                     ? 1.0
                     : 0.5 * boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), lrt));
    return out;
  } catch (const std::exception&) {
    return binary_score_test(x, ci);
  }
}

ScreeningReport screen_covariates(const ClusteredDataset& data, double alpha, int threads) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("screening alpha must lie in [0, 1)");
  ScreeningReport report;
  report.alpha = alpha;
  report.entries.resize(data.n_covariates());
  parallel_for(report.entries.size(), threads, [&](std::size_t l) {
    const VectorXd x = data.X().col(static_cast<Index>(l));
    ScreeningEntry e;
    e.covariate = static_cast<Index>(l);
    const bool binary = is_binary(x) && x.sum() > 0 && x.sum() < static_cast<double>(x.size());
    if (binary) {
      const auto r = binary_heterogeneity(x, data.clusters());
      e.test = r.fallback ? "score" : "lrt";
      e.pvalue = r.pvalue;
    } else {
      e.test = "anova";
      e.pvalue = anova_heterogeneity(x, data.clusters());
    }
    e.selected = e.pvalue < alpha;
    report.entries[l] = e;
  });
  return report;
}

SyntheticDesign synthetic_design_from_report(const ClusteredDataset& data, const ScreeningReport& report) {
  SyntheticDesign sd;
  sd.alpha = report.alpha;
  for (const auto& e : report.entries) {
    if (!e.selected) continue;
    sd.source_column.push_back(e.covariate);
    sd.pvalues.push_back(e.pvalue);
  }
  sd.B.resize(data.n_obs(), static_cast<Index>(sd.source_column.size()));
  for (Index j = 0; j < sd.B.cols(); ++j) {
    const VectorXd means = data.clusters().cluster_means(data.X().col(sd.source_column[j]));
    sd.B.col(j) = data.clusters().expand(means);
  }
  return sd;
}

SyntheticDesign build_synthetic_design(const ClusteredDataset& data, double alpha, int threads,
                                       ScreeningReport* report) {
  ScreeningReport r = screen_covariates(data, alpha, threads);
  SyntheticDesign sd = synthetic_design_from_report(data, r);
  if (report) *report = std::move(r);
  return sd;
}

void write_screening_csv(std::ostream& out, const ScreeningReport& report) {
  out << "covariate,test,pvalue,selected\n";
  out.precision(17);
  for (const auto& e : report.entries)
    out << e.covariate + 1 << ',' << e.test << ',' << e.pvalue << ',' << (e.selected ? 1 : 0) << '\n';
}

}  // namespace shel
