#include "shel/serialize.hpp"

#include "shel/errors.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace shel {
namespace {

std::vector<double> to_vec(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

std::vector<Index> one_based(const std::vector<Index>& idx) {
  std::vector<Index> out(idx);
  for (auto& k : out) ++k;
  return out;
}

void check_keys(const Json& j, const std::string& what, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + what);
}

template <class T>
void read(const Json& j, const char* key, T& out, const std::string& what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("key '" + std::string(key) + "' in " + what + " has the wrong type");
  }
}

template <class T>
T need(const Json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError("fit record lacks '" + std::string(key) + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("fit record field '" + std::string(key) + "' has the wrong type");
  }
}

Json cv_result_json(const CvResult& cv) {
  return Json{{"lambdas", cv.lambdas},
              {"cv_mean", cv.cv_mean},
              {"cv_se", cv.cv_se},
              {"index_min", cv.index_min + 1},
              {"index_1se", cv.index_1se + 1},
              {"lambda_min", cv.lambda_min},
              {"lambda_1se", cv.lambda_1se},
              {"refolds", cv.refolds}};
}

CvResult cv_result_from(const Json& j) {
  CvResult cv;
  cv.lambdas = need<std::vector<double>>(j, "lambdas");
  cv.cv_mean = need<std::vector<double>>(j, "cv_mean");
  cv.cv_se = need<std::vector<double>>(j, "cv_se");
  cv.index_min = need<std::size_t>(j, "index_min") - 1;
  cv.index_1se = need<std::size_t>(j, "index_1se") - 1;
  cv.lambda_min = need<double>(j, "lambda_min");
  cv.lambda_1se = need<double>(j, "lambda_1se");
  cv.refolds = need<int>(j, "refolds");
  return cv;
}

Json solver_json(const SolverConfig& s) { return Json{{"tol", s.tol}, {"max_iters", s.max_iters}, {"max_irls", s.max_irls}}; }

SolverConfig solver_from(const Json& j, SolverConfig s) {
  check_keys(j, "solver", {"tol", "max_iters", "max_irls"});
  read(j, "tol", s.tol, "solver");
  read(j, "max_iters", s.max_iters, "solver");
  read(j, "max_irls", s.max_irls, "solver");
  return s;
}

}  // namespace

Json fit_to_json(const ShelFit& f, const ClusteredDataset& data) {
  const PenalizedFit& pf = f.fit;
  Json j;
  j["method"] = to_string(f.method);
  j["family"] = to_string(f.family);
  j["use_1se"] = f.use_1se;
  j["n_obs"] = data.n_obs();
  j["n_covariates"] = data.n_covariates();
  j["n_clusters"] = data.n_clusters();
  j["covariate_names"] = data.covariate_names();
  j["lambda1"] = pf.lambda1;
  j["lambda2"] = pf.lambda2;
  j["penalty_ratio"] = penalty_ratio(data.n_covariates(), f.synthetic.p0());
  j["intercept"] = pf.intercept;
  j["beta"] = to_vec(pf.beta);
  j["gamma"] = to_vec(pf.gamma);
  j["theta"] = to_vec(pf.theta);
  j["theta_scaled"] = to_vec(pf.theta_scaled);
  j["intercept_scaled"] = pf.intercept_scaled;
  j["active_set"] = one_based(pf.active_set);
  j["signs"] = pf.signs;
  j["converged"] = pf.converged;
  j["n_iters"] = pf.n_iters;
  j["synthetic"] = Json{{"source_columns", one_based(f.synthetic.source_column)},
                        {"pvalues", f.synthetic.pvalues},
                        {"alpha", f.synthetic.alpha}};
  Json scr = Json::array();
  for (const auto& e : f.screening.entries)
    scr.push_back(Json{{"covariate", e.covariate + 1}, {"test", e.test}, {"pvalue", e.pvalue}, {"selected", e.selected}});
  j["screening"] = Json{{"alpha", f.screening.alpha}, {"entries", scr}};
  j["cv"] = cv_result_json(f.cv);
  if (f.trace) {
    const IterativeTrace& t = *f.trace;
    const Index carried = data.n_covariates() + f.synthetic.p0();
    j["iterative"] = Json{{"change", t.change},
                          {"carry_coef", t.carry_coef},
                          {"lambdas", t.lambdas},
                          {"e_thr", t.e_thr},
                          {"n_iterations", t.n_iterations},
                          {"converged", t.converged},
                          {"best", t.best + 1},
                          {"offset", to_vec(t.offset)},
                          {"carried_column", to_vec(f.raw.col(carried))}};
  }
  return j;
}

ShelFit fit_from_json(const Json& j, const ClusteredDataset& data) {
  if (!j.is_object()) throw ConfigError("fit record must be a JSON object");
  ShelFit f;
  try {
    f.method = method_from_string(need<std::string>(j, "method"));
    f.family = family_from_string(need<std::string>(j, "family"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("fit record: ") + e.what());
  }
  if (f.family != data.family()) throw ConfigError("fit record family differs from the data family");
  f.use_1se = need<bool>(j, "use_1se");
  if (need<Index>(j, "n_obs") != data.n_obs() || need<Index>(j, "n_covariates") != data.n_covariates() ||
      need<Index>(j, "n_clusters") != data.n_clusters())
    throw DataError("data dimensions differ from the fit record");
  const Index p = data.n_covariates();

  const Json& scr = need<Json>(j, "screening");
  f.screening.alpha = need<double>(scr, "alpha");
  for (const auto& e : need<Json>(scr, "entries")) {
    ScreeningEntry s;
    s.covariate = need<Index>(e, "covariate") - 1;
    s.test = need<std::string>(e, "test");
    s.pvalue = need<double>(e, "pvalue");
    s.selected = need<bool>(e, "selected");
    if (s.covariate < 0 || s.covariate >= p) throw ConfigError("screening entry covariate out of range");
    f.screening.entries.push_back(s);
  }
  ScreeningReport chosen;
  chosen.alpha = need<double>(need<Json>(j, "synthetic"), "alpha");
  const auto src = need<std::vector<Index>>(need<Json>(j, "synthetic"), "source_columns");
  const auto pv = need<std::vector<double>>(need<Json>(j, "synthetic"), "pvalues");
  if (src.size() != pv.size()) throw ConfigError("synthetic source_columns and pvalues differ in length");
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (src[k] < 1 || src[k] > p) throw ConfigError("synthetic source column out of range");
    chosen.entries.push_back({src[k] - 1, "", pv[k], true});
  }
  f.synthetic = synthetic_design_from_report(data, chosen);
  const Index p0 = f.synthetic.p0();
  const double ratio = penalty_ratio(p, p0);

  VectorXd w = stacked_weights(p, p0, ratio);
  f.raw = stacked_columns(data, f.synthetic);
  if (j.contains("iterative")) {
    const Json& it = j.at("iterative");
    IterativeTrace t;
    t.change = need<std::vector<double>>(it, "change");
    t.carry_coef = need<std::vector<double>>(it, "carry_coef");
    t.lambdas = need<std::vector<double>>(it, "lambdas");
    t.e_thr = need<double>(it, "e_thr");
    t.n_iterations = need<int>(it, "n_iterations");
    t.converged = need<bool>(it, "converged");
    t.best = need<std::size_t>(it, "best") - 1;
    t.offset = to_eigen(need<std::vector<double>>(it, "offset"));
    const VectorXd carried = to_eigen(need<std::vector<double>>(it, "carried_column"));
    if (carried.size() != data.n_obs()) throw DataError("carried column length differs from the data");
    f.raw.conservativeResize(Eigen::NoChange, p + p0 + 1);
    f.raw.col(p + p0) = carried;
    w.conservativeResize(p + p0 + 1);
    w[p + p0] = 0.0;
    f.trace = std::move(t);
  }
  f.design = standardize_columns(f.raw, w, p);
  f.cv = cv_result_from(need<Json>(j, "cv"));

  const VectorXd theta = to_eigen(need<std::vector<double>>(j, "theta"));
  const VectorXd theta_scaled = to_eigen(need<std::vector<double>>(j, "theta_scaled"));
  if (theta.size() != f.design.n_cols() || theta_scaled.size() != f.design.n_cols())
    throw ConfigError("fit record coefficients have the wrong length");

  // stored solution, restored exactly so downstream output is reproducible
  PenalizedFit& pf = f.fit;
  pf.family = f.family;
  pf.lambda1 = need<double>(j, "lambda1");
  pf.lambda2 = need<double>(j, "lambda2");
  pf.intercept = need<double>(j, "intercept");
  pf.intercept_scaled = need<double>(j, "intercept_scaled");
  pf.theta = theta;
  pf.theta_scaled = theta_scaled;
  pf.beta = theta.head(p);
  pf.gamma = to_eigen(need<std::vector<double>>(j, "gamma"));
  pf.signs = need<std::vector<int>>(j, "signs");
  pf.converged = need<bool>(j, "converged");
  pf.n_iters = need<int>(j, "n_iters");
  for (Index k : need<std::vector<Index>>(j, "active_set")) {
    if (k < 1 || k > theta.size()) throw ConfigError("fit record active set out of range");
    pf.active_set.push_back(k - 1);
  }
  if (pf.signs.size() != pf.active_set.size()) throw ConfigError("fit record signs and active set differ in length");

  // the data must reproduce it: re-solving from the stored point should not move
  SolverConfig tight;
  tight.tol = 1e-12;
  tight.max_iters = 100000;
  const PenalizedFit check = fit_family(f.design, data.y(), f.family, pf.lambda1, tight, &pf);
  const double scale = std::max(1.0, theta.cwiseAbs().maxCoeff());
  if ((check.theta - theta).cwiseAbs().maxCoeff() > 1e-5 * scale ||
      std::abs(check.intercept - pf.intercept) > 1e-5 * std::max(1.0, std::abs(pf.intercept)))
    throw DataError("the data do not reproduce the stored fit");
  return f;
}

Json summary_to_json(const StudyResult& r) {
  Json rows = Json::array();
  for (const auto& s : r.summary) {
    Json m;
    for (const auto& [name, ms] : s.metrics) {
      auto num = [](double x) { return std::isnan(x) ? Json(nullptr) : Json(x); };
      m[name] = Json{{"mean", num(ms.mean)}, {"median", num(ms.median)}, {"mcse", num(ms.mcse)}, {"count", ms.count}};
    }
    rows.push_back(Json{{"scenario", s.scenario}, {"method", s.method}, {"n_ok", s.n_ok}, {"n_failed", s.n_failed},
                        {"metrics", m}});
  }
  return Json{{"summary", rows}, {"failures", r.failures}};
}

Json to_json(const CvConfig& c) {
  return Json{{"folds", c.n_folds},       {"n_lambda", c.n_lambda},     {"ratio_min", c.ratio_min},
              {"seed", c.seed},           {"solver", solver_json(c.solver)}, {"final_tol", c.final_tol},
              {"early_stop", c.early_stop}};
}

CvConfig cv_config_from_json(const Json& j) {
  const std::string w = "cv";
  check_keys(j, w, {"folds", "n_lambda", "ratio_min", "seed", "solver", "final_tol", "early_stop"});
  CvConfig c;
  read(j, "folds", c.n_folds, w);
  read(j, "n_lambda", c.n_lambda, w);
  read(j, "ratio_min", c.ratio_min, w);
  read(j, "seed", c.seed, w);
  if (j.contains("solver")) c.solver = solver_from(j.at("solver"), c.solver);
  read(j, "final_tol", c.final_tol, w);
  read(j, "early_stop", c.early_stop, w);
  return c;
}

Json to_json(const EstimatorConfig& c) {
  return Json{{"alpha", c.alpha}, {"cv", to_json(c.cv)}, {"e_thr", c.e_thr}, {"max_outer", c.max_outer}};
}

EstimatorConfig estimator_config_from_json(const Json& j) {
  const std::string w = "estimator";
  check_keys(j, w, {"alpha", "cv", "e_thr", "max_outer"});
  EstimatorConfig c;
  read(j, "alpha", c.alpha, w);
  if (j.contains("cv")) c.cv = cv_config_from_json(j.at("cv"));
  read(j, "e_thr", c.e_thr, w);
  read(j, "max_outer", c.max_outer, w);
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("screening alpha must lie in (0, 1)");
  return c;
}

Json to_json(const DebiasConfig& c) {
  return Json{{"cv", to_json(c.cv)},
              {"use_1se", c.use_1se},
              {"level", c.level},
              {"project_synthetic", c.project_synthetic},
              {"cluster_normalization", c.cluster_normalization}};
}

DebiasConfig debias_config_from_json(const Json& j) {
  const std::string w = "debias";
  check_keys(j, w, {"cv", "use_1se", "level", "project_synthetic", "cluster_normalization"});
  DebiasConfig c;
  if (j.contains("cv")) c.cv = cv_config_from_json(j.at("cv"));
  read(j, "use_1se", c.use_1se, w);
  read(j, "level", c.level, w);
  read(j, "project_synthetic", c.project_synthetic, w);
  read(j, "cluster_normalization", c.cluster_normalization, w);
  return c;
}

Json to_json(const DgpConfig& c) {
  return Json{{"m", c.m},
              {"n", c.n},
              {"p", c.p},
              {"p0_true", c.p0_true},
              {"dependence", to_string(c.dependence)},
              {"intercept", to_string(c.intercept)},
              {"family", to_string(c.family)},
              {"beta_support", one_based(c.beta_support)},
              {"beta_values", c.beta_values},
              {"alpha_scale", c.alpha_scale}};
}

DgpConfig dgp_config_from_json(const Json& j) {
  const std::string w = "scenario";
  check_keys(j, w, {"name", "m", "n", "p", "p0_true", "dependence", "intercept", "family", "beta_support",
                    "beta_values", "alpha_scale"});
  DgpConfig c;
  read(j, "m", c.m, w);
  read(j, "n", c.n, w);
  read(j, "p", c.p, w);
  read(j, "p0_true", c.p0_true, w);
  std::string s;
  if (j.contains("dependence")) {
    read(j, "dependence", s, w);
    c.dependence = dependence_from_string(s);
  }
  if (j.contains("intercept")) {
    read(j, "intercept", s, w);
    c.intercept = intercept_from_string(s);
  }
  if (j.contains("family")) {
    read(j, "family", s, w);
    try {
      c.family = family_from_string(s);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("beta_support")) {
    std::vector<Index> sup;
    read(j, "beta_support", sup, w);
    c.beta_support.clear();
    for (Index k : sup) c.beta_support.push_back(k - 1);
  }
  read(j, "beta_values", c.beta_values, w);
  read(j, "alpha_scale", c.alpha_scale, w);
  c.validate();
  return c;
}

Json to_json(const StudyConfig& c) {
  Json sc = Json::array();
  for (const auto& s : c.scenarios) {
    Json d = to_json(s.dgp);
    d["name"] = s.name;
    sc.push_back(d);
  }
  return Json{{"scenarios", sc},           {"methods", c.methods},
              {"reps", c.reps},            {"seed", c.seed},
              {"estimator", to_json(c.estimator)}, {"debias", to_json(c.debias)},
              {"test_level", c.test_level}};
}

StudyConfig study_config_from_json(const Json& j) {
  const std::string w = "study";
  check_keys(j, w, {"scenarios", "methods", "reps", "seed", "estimator", "debias", "test_level"});
  StudyConfig c;
  if (!j.contains("scenarios") || !j.at("scenarios").is_array())
    throw ConfigError("study needs a 'scenarios' array");
  for (const auto& s : j.at("scenarios")) {
    Scenario sc;
    sc.dgp = dgp_config_from_json(s);
    if (!s.contains("name") || !s.at("name").is_string()) throw ConfigError("every scenario needs a 'name'");
    sc.name = s.at("name").get<std::string>();
    c.scenarios.push_back(std::move(sc));
  }
  read(j, "methods", c.methods, w);
  read(j, "reps", c.reps, w);
  read(j, "seed", c.seed, w);
  if (j.contains("estimator")) c.estimator = estimator_config_from_json(j.at("estimator"));
  if (j.contains("debias")) c.debias = debias_config_from_json(j.at("debias"));
  read(j, "test_level", c.test_level, w);
  if (!(c.test_level > 0.0 && c.test_level < 1.0)) throw ConfigError("test_level must lie in (0, 1)");
  c.validate();
  return c;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace shel
