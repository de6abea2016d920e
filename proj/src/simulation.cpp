#include "shel/simulation.hpp"

#include "shel/errors.hpp"
#include "shel/lmm.hpp"
#include "shel/parallel.hpp"
#include "shel/selective.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

namespace shel {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double draw_intercept(InterceptDist dist, std::mt19937_64& rng, std::normal_distribution<double>& nd) {
  if (dist == InterceptDist::gaussian) return nd(rng);
  std::bernoulli_distribution coin(0.5);
  const double centre = coin(rng) ? 1.0 : -1.0;
  return centre + std::sqrt(0.5) * nd(rng);
}

const std::set<std::string>& inference_methods() {
  static const std::set<std::string> s{"si1", "si2", "debias", "naive"};
  return s;
}

bool is_min_variant(const std::string& name) {
  return name.size() > 4 && name.compare(name.size() - 4, 4, "_min") == 0;
}

Method base_method(const std::string& name) {
  return method_from_string(is_min_variant(name) ? name.substr(0, name.size() - 4) : name);
}

void check_method(const std::string& name, Family family) {
  if (inference_methods().count(name)) return;
  const Method m = base_method(name);
  if (is_min_variant(name) && is_iterative(m)) throw ConfigError("method '" + name + "' is not available");
  const bool gauss_only = m == Method::shel || m == Method::ishel1 || m == Method::ishel2;
  const bool binom_only = m == Method::gshel || m == Method::igshel;
  if ((gauss_only && family != Family::gaussian) || (binom_only && family != Family::binomial))
    throw ConfigError("method '" + name + "' does not match the " + to_string(family) + " family");
}

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  const std::size_t k = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(k), v.end());
  const double hi = v[k];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<long>(k));
  return 0.5 * (lo + hi);
}

// Everything one replication needs, computed on demand.
struct RepContext {
  const ClusteredDataset& data;
  const EstimatorConfig& est;
  std::optional<SyntheticDesign> sd;
  ScreeningReport report;
  std::map<std::string, ShelFit> fits;

  const SyntheticDesign& synthetic() {
    if (!sd) sd = build_synthetic_design(data, est.alpha, 1, &report);
    return *sd;
  }

  const ShelFit& fit(const std::string& name) {
    auto it = fits.find(name);
    if (it != fits.end()) return it->second;
    const Method m = base_method(name);
    ShelFit f;
    if (m == Method::lasso) {
      SyntheticDesign none;
      none.B.resize(data.n_obs(), 0);
      f = fit_cv(data, none, est, !is_min_variant(name));
    } else if (is_iterative(m)) {
      f = fit_ishel(data, synthetic(), est, m != Method::ishel2);
      f.screening = report;
    } else {
      f = fit_cv(data, synthetic(), est, !is_min_variant(name));
      f.screening = report;
    }
    f.method = m;
    return fits.emplace(name, std::move(f)).first->second;
  }
};

}  // namespace

std::string to_string(Dependence d) { return d == Dependence::independent ? "independent" : "endogenous"; }
std::string to_string(InterceptDist d) { return d == InterceptDist::gaussian ? "gaussian" : "gaussian_mixture"; }

Dependence dependence_from_string(std::string_view s) {
  if (s == "independent") return Dependence::independent;
  if (s == "endogenous") return Dependence::endogenous;
  throw ConfigError("unknown dependence '" + std::string(s) + "'");
}

InterceptDist intercept_from_string(std::string_view s) {
  if (s == "gaussian") return InterceptDist::gaussian;
  if (s == "gaussian_mixture" || s == "mixture") return InterceptDist::gaussian_mixture;
  throw ConfigError("unknown intercept distribution '" + std::string(s) + "'");
}

void DgpConfig::validate() const {
  if (m < 2 || n < 1 || p < 1) throw ConfigError("DGP needs m >= 2, n >= 1, p >= 1");
  if (p0_true < 0 || p0_true > p) throw ConfigError("p0_true must lie in [0, p]");
  if (beta_support.size() != beta_values.size()) throw ConfigError("beta_support and beta_values differ in length");
  for (Index l : beta_support)
    if (l < 0 || l >= p) throw ConfigError("beta_support index out of range");
  if (std::set<Index>(beta_support.begin(), beta_support.end()).size() != beta_support.size())
    throw ConfigError("beta_support has duplicates");
  if (!(alpha_scale >= 0.0) || !std::isfinite(alpha_scale)) throw ConfigError("alpha_scale must be finite and >= 0");
}

MatrixXd within_block_covariance(int size) {
  MatrixXd theta = MatrixXd::Constant(size, size, 0.5);
  theta.diagonal().setOnes();
  return theta.inverse();
}

Generated generate(const DgpConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud;
  const int m = cfg.m, n = cfg.n, p = cfg.p;

  Truth truth;
  std::vector<Index> perm(static_cast<std::size_t>(p));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  truth.heterogeneous.assign(perm.begin(), perm.begin() + cfg.p0_true);
  std::sort(truth.heterogeneous.begin(), truth.heterogeneous.end());

  truth.h.resize(p);
  for (int l = 0; l < p; ++l) truth.h[l] = ud(rng);

  truth.mu = MatrixXd::Zero(m, p);
  truth.alpha.resize(m);
  for (int i = 0; i < m; ++i) {
    if (cfg.dependence == Dependence::independent) {
      truth.alpha[i] = draw_intercept(cfg.intercept, rng, nd);
      for (Index l : truth.heterogeneous) truth.mu(i, l) = nd(rng);
    } else {
      const double u = draw_intercept(cfg.intercept, rng, nd);
      const double z = nd(rng);
      for (Index l : truth.heterogeneous) truth.mu(i, l) = truth.h[l] * u + nd(rng) / n;
      truth.alpha[i] = 0.8 * u + 0.2 * z;
    }
    truth.alpha[i] *= cfg.alpha_scale;
  }

  truth.beta = VectorXd::Zero(p);
  for (std::size_t j = 0; j < cfg.beta_support.size(); ++j) truth.beta[cfg.beta_support[j]] = cfg.beta_values[j];

  const MatrixXd L5 = within_block_covariance(5).llt().matrixL();
  const int tail = p % 5;
  const MatrixXd Lt = tail > 0 ? MatrixXd(within_block_covariance(tail).llt().matrixL()) : MatrixXd();
  const Index N = static_cast<Index>(m) * n;
  MatrixXd X(N, p);
  VectorXd z5(5);
  for (Index r = 0; r < N; ++r) {
    const Index i = r / n;
    for (int b = 0; b < p; b += 5) {
      const int size = std::min(5, p - b);
      const MatrixXd& L = size == 5 ? L5 : Lt;
      for (int k = 0; k < size; ++k) z5[k] = nd(rng);
      const VectorXd e = L * z5.head(size);
      for (int k = 0; k < size; ++k) X(r, b + k) = truth.mu(i, b + k) + e[k];
    }
  }

  VectorXd eta = X * truth.beta;
  for (Index r = 0; r < N; ++r) eta[r] += truth.alpha[r / n];
  VectorXd y(N);
  for (Index r = 0; r < N; ++r)
    y[r] = cfg.family == Family::gaussian ? eta[r] + nd(rng) : (ud(rng) < expit(eta[r]) ? 1.0 : 0.0);

  std::vector<int> labels(static_cast<std::size_t>(N));
  for (Index r = 0; r < N; ++r) labels[static_cast<std::size_t>(r)] = static_cast<int>(r / n) + 1;
  return Generated{ClusteredDataset(std::move(y), std::move(X), std::move(labels), cfg.family), std::move(truth)};
}

double residual_icc(const VectorXd& r, const ClusterIndex& ci) {
  const CovarianceModel cov = estimate_covariance(r, ci, CovKind::clustered);
  const double level = 1e-12 * std::max(1.0, r.squaredNorm() / static_cast<double>(r.size()));
  if (cov.tau2 + cov.sigma2 <= level) return 0.0;
  return cov.tau2 / (cov.tau2 + cov.sigma2);
}

SelectionScore score_selection(const ShelFit& fit, const ClusteredDataset& data, const Truth& truth) {
  SelectionScore s;
  for (Index l = 0; l < fit.fit.beta.size(); ++l) {
    if (fit.fit.beta[l] == 0.0) continue;
    (truth.beta[l] != 0.0 ? s.tp : s.fp) += 1;
  }
  if (data.family() == Family::binomial) {
    const VectorXd eta = linear_predictor(fit.fit, fit.raw);
    double pos = 0, neg = 0, tp = 0, tn = 0;
    for (Index i = 0; i < eta.size(); ++i) {
      const bool pred = expit(eta[i]) > 0.5;
      if (data.y()[i] == 1.0) {
        pos += 1;
        tp += pred ? 1 : 0;
      } else {
        neg += 1;
        tn += pred ? 0 : 1;
      }
    }
    s.sensitivity = pos > 0 ? tp / pos : kNaN;
    s.specificity = neg > 0 ? tn / neg : kNaN;
  }
  return s;
}

EstimationScore score_estimation(const ShelFit& fit, const ClusteredDataset& data, const Truth& truth) {
  if (data.family() != Family::gaussian) throw ConfigError("estimation scores need the gaussian family");
  EstimationScore s;
  const VectorXd r = data.y() - linear_predictor(fit.fit, fit.raw);
  s.rmse = std::sqrt(r.squaredNorm() / static_cast<double>(r.size()));
  s.l1_error = (fit.fit.beta - truth.beta).lpNorm<1>();
  s.residual_icc = residual_icc(r, data.clusters());
  return s;
}

InferenceScore score_inference(const std::vector<InferenceItem>& items, const Truth& truth, double alpha) {
  InferenceScore s;
  double nulls = 0, null_hits = 0, trues = 0, true_hits = 0;
  std::vector<double> lengths;
  for (const auto& it : items) {
    const bool hit = it.pvalue < alpha;
    if (truth.beta[it.index] == 0.0) {
      nulls += 1;
      null_hits += hit ? 1 : 0;
    } else {
      trues += 1;
      true_hits += hit ? 1 : 0;
    }
    lengths.push_back(it.hi - it.lo);
  }
  if (nulls > 0) s.fpr = null_hits / nulls;
  if (trues > 0) s.power = true_hits / trues;
  s.median_ci_length = median_of(lengths);
  return s;
}

void StudyConfig::validate() const {
  if (reps < 1) throw ConfigError("reps must be at least 1");
  if (scenarios.empty()) throw ConfigError("study needs at least one scenario");
  if (methods.empty()) throw ConfigError("study needs at least one method");
  std::set<std::string> names;
  for (const auto& s : scenarios) {
    s.dgp.validate();
    if (!names.insert(s.name).second) throw ConfigError("duplicate scenario name '" + s.name + "'");
    for (const auto& m : methods) check_method(m, s.dgp.family);
  }
}

std::vector<std::string> metric_names() {
  return {"FP", "TP", "RMSE", "l1_error", "residual_ICC", "sensitivity", "specificity", "FPR", "power",
          "median_CI_length"};
}

double metric_value(const MetricsRow& r, const std::string& name) {
  if (name == "FP") return r.fp;
  if (name == "TP") return r.tp;
  if (name == "RMSE") return r.rmse;
  if (name == "l1_error") return r.l1_error;
  if (name == "residual_ICC") return r.residual_icc;
  if (name == "sensitivity") return r.sensitivity;
  if (name == "specificity") return r.specificity;
  if (name == "FPR") return r.fpr;
  if (name == "power") return r.power;
  if (name == "median_CI_length") return r.median_ci_length;
  throw ConfigError("unknown metric '" + name + "'");
}

StudyResult run_study(const StudyConfig& cfg) {
  cfg.validate();
  const std::size_t ns = cfg.scenarios.size();
  const std::size_t nr = static_cast<std::size_t>(cfg.reps);
  const std::size_t nm = cfg.methods.size();
  std::vector<std::vector<std::optional<MetricsRow>>> slots(ns * nr, std::vector<std::optional<MetricsRow>>(nm));
  std::vector<std::vector<std::string>> errors(ns * nr, std::vector<std::string>(nm));

  parallel_for(ns * nr, cfg.threads, [&](std::size_t task) {
    const Scenario& sc = cfg.scenarios[task / nr];
    const int rep = static_cast<int>(task % nr);
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(rep);
    DgpConfig dgp = sc.dgp;
    dgp.seed = seed;
    EstimatorConfig est = cfg.estimator;
    est.cv.seed = seed;
    est.cv.threads = 1;
    DebiasConfig dcfg = cfg.debias;
    dcfg.cv.seed = seed;
    dcfg.cv.threads = 1;
    dcfg.threads = 1;

    std::optional<Generated> gen;
    try {
      gen = generate(dgp);
    } catch (const std::exception& e) {
      for (std::size_t k = 0; k < nm; ++k) errors[task][k] = std::string("generate: ") + e.what();
      return;
    }
    const ClusteredDataset& data = gen->data;
    const Truth& truth = gen->truth;
    RepContext ctx{data, est, std::nullopt, {}, {}};
    const std::string base = data.family() == Family::gaussian ? "shel" : "gshel";

    for (std::size_t k = 0; k < nm; ++k) {
      const std::string& name = cfg.methods[k];
      MetricsRow row;
      row.scenario = sc.name;
      row.method = name;
      row.rep = rep;
      try {
        if (inference_methods().count(name)) {
          const ShelFit& fit = ctx.fit(base);
          const std::vector<Index> targets = active_beta(fit);
          std::vector<InferenceItem> items;
          if (name == "si1" || name == "si2") {
            if (data.family() != Family::gaussian)
              throw ConfigError("selective inference supports the gaussian family only");
            const SelectiveReport rep_ =
                selective_inference(fit, data, name == "si1" ? CovKind::iid : CovKind::clustered, std::nullopt,
                                    std::nullopt, cfg.test_level);
            for (const auto& r : rep_.rows)
              if (r.index < data.n_covariates())
                items.push_back({r.index, r.pvalue, r.lo * r.to_raw, r.hi * r.to_raw});
          } else if (name == "debias") {
            for (const auto& r : debiased_test_suite(fit, data, targets, dcfg).rows)
              items.push_back({r.index, r.pvalue, r.lo, r.hi});
          } else {
            for (const auto& r : naive_refit(data, targets, cfg.test_level))
              items.push_back({r.index, r.pvalue, r.lo, r.hi});
          }
          const InferenceScore s = score_inference(items, truth, cfg.test_level);
          row.fpr = s.fpr;
          row.power = s.power;
          row.median_ci_length = s.median_ci_length;
        } else {
          const ShelFit& fit = ctx.fit(name);
          const SelectionScore sel = score_selection(fit, data, truth);
          row.fp = sel.fp;
          row.tp = sel.tp;
          row.sensitivity = sel.sensitivity;
          row.specificity = sel.specificity;
          if (data.family() == Family::gaussian) {
            const EstimationScore e = score_estimation(fit, data, truth);
            row.rmse = e.rmse;
            row.l1_error = e.l1_error;
            row.residual_icc = e.residual_icc;
          }
        }
        slots[task][k] = row;
      } catch (const std::exception& e) {
        errors[task][k] = e.what();
      }
    }
  });

  StudyResult out;
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t k = 0; k < nm; ++k) {
      SummaryRow sum;
      sum.scenario = cfg.scenarios[s].name;
      sum.method = cfg.methods[k];
      std::vector<const MetricsRow*> ok;
      for (std::size_t r = 0; r < nr; ++r) {
        const std::size_t task = s * nr + r;
        if (slots[task][k]) ok.push_back(&*slots[task][k]);
        if (!errors[task][k].empty()) {
          ++sum.n_failed;
          out.failures.push_back(sum.scenario + " rep " + std::to_string(r) + " " + sum.method + ": " +
                                 errors[task][k]);
        }
      }
      sum.n_ok = static_cast<int>(ok.size());
      for (const auto& name : metric_names()) {
        std::vector<double> v;
        for (const MetricsRow* r : ok) {
          const double x = metric_value(*r, name);
          if (!std::isnan(x)) v.push_back(x);
        }
        MetricSummary ms;
        ms.count = static_cast<int>(v.size());
        if (!v.empty()) {
          double mean = 0.0;
          for (double x : v) mean += x;
          mean /= static_cast<double>(v.size());
          double ss = 0.0;
          for (double x : v) ss += (x - mean) * (x - mean);
          ms.mean = mean;
          ms.median = median_of(v);
          ms.mcse = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))
                                 : kNaN;
        }
        sum.metrics.emplace_back(name, ms);
      }
      out.summary.push_back(std::move(sum));
    }
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t k = 0; k < nm; ++k)
        if (slots[s * nr + r][k]) out.rows.push_back(*slots[s * nr + r][k]);
  }
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "scenario,method,rep";
  for (const auto& n : metric_names()) out << ',' << n;
  out << '\n';
  out.precision(17);
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.method << ',' << r.rep;
    for (const auto& n : metric_names()) {
      const double v = metric_value(r, n);
      out << ',';
      if (std::isnan(v)) out << "NA"; else out << v;
    }
    out << '\n';
  }
}

}  // namespace shel
