#include "shel/cli.hpp"

#include "shel/csv.hpp"
#include "shel/debias.hpp"
#include "shel/errors.hpp"
#include "shel/lmm.hpp"
#include "shel/parallel.hpp"
#include "shel/selective.hpp"
#include "shel/serialize.hpp"
#include "shel/simulation.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace shel {
namespace {

struct Flags {
  std::string config;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  bool paper_scale = false;
  bool dry_run = false;
  std::string out_dir = ".";
  // infer
  std::string fit_path;
  std::string data_path;
  std::string mode;
};

// What `fit` reads; echoed with defaults filled into fit.json.
struct FitJob {
  std::string data_path;
  std::string response = "y";
  std::string cluster = "cluster";
  Family family = Family::gaussian;
  Method method = Method::shel;
  std::uint64_t seed = 1;
  EstimatorConfig estimator;
  DebiasConfig debias;
  std::vector<std::string> inference;
  double level = 0.05;
  std::optional<double> sigma2, tau2;  // known variance components for SI
};

const std::set<std::string> kInferModes{"si1", "si2", "debias", "naive"};

void check_keys(const Json& j, const std::string& what, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + what);
}

template <class T>
T get(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config key '" + std::string(key) + "' has the wrong type");
  }
}

FitJob parse_fit_job(const Json& j, const fs::path& base) {
  check_keys(j, "fit config",
             {"data", "family", "method", "seed", "estimator", "debias", "inference", "level", "sigma2", "tau2"});
  FitJob job;
  if (!j.contains("data")) throw ConfigError("fit config needs a 'data' section");
  const Json& d = j.at("data");
  check_keys(d, "data", {"path", "response", "cluster"});
  if (!d.contains("path")) throw ConfigError("data section needs 'path'");
  fs::path path = get<std::string>(d, "path", "");
  if (path.is_relative()) path = base / path;
  job.data_path = path.lexically_normal().string();
  job.response = get<std::string>(d, "response", job.response);
  job.cluster = get<std::string>(d, "cluster", job.cluster);
  job.family = family_from_string(get<std::string>(j, "family", "gaussian"));
  job.method = method_from_string(get<std::string>(j, "method", "shel"));
  job.seed = get<std::uint64_t>(j, "seed", job.seed);
  if (j.contains("estimator")) job.estimator = estimator_config_from_json(j.at("estimator"));
  if (j.contains("debias")) job.debias = debias_config_from_json(j.at("debias"));
  job.inference = get<std::vector<std::string>>(j, "inference", {});
  for (const auto& m : job.inference)
    if (!kInferModes.count(m)) throw ConfigError("unknown inference mode '" + m + "'");
  job.level = get<double>(j, "level", job.level);
  if (!(job.level > 0.0 && job.level < 1.0)) throw ConfigError("level must lie in (0, 1)");
  if (j.contains("sigma2")) job.sigma2 = get<double>(j, "sigma2", 0.0);
  if (j.contains("tau2")) job.tau2 = get<double>(j, "tau2", 0.0);
  return job;
}

Json fit_job_json(const FitJob& job) {
  Json j{{"data", Json{{"path", job.data_path}, {"response", job.response}, {"cluster", job.cluster}}},
         {"family", to_string(job.family)},
         {"method", to_string(job.method)},
         {"seed", job.seed},
         {"estimator", to_json(job.estimator)},
         {"debias", to_json(job.debias)},
         {"inference", job.inference},
         {"level", job.level}};
  if (job.sigma2) j["sigma2"] = *job.sigma2;
  if (job.tau2) j["tau2"] = *job.tau2;
  return j;
}

void apply_seed_threads(FitJob& job, int threads) {
  job.estimator.cv.seed = job.seed;
  job.debias.cv.seed = job.seed;
  job.estimator.cv.threads = threads;
  job.debias.threads = threads;
  job.debias.cv.threads = 1;
}

ClusteredDataset load_data(const FitJob& job) {
  return dataset_from_table(read_csv_file(job.data_path), job.response, job.cluster, job.family);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

fs::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

void require_si_family(const std::string& mode, Family family) {
  if ((mode == "si1" || mode == "si2") && family != Family::gaussian)
    throw ConfigError(mode +
                      " needs the gaussian family: the polyhedral selection event and the exact truncated-normal "
                      "pivot rely on a linear model with normal responses; use mode=debias for GLM fits");
}

// Runs one inference mode; returns the CSV text and fills `meta`.
std::string run_inference(const std::string& mode, const ShelFit& fit, const ClusteredDataset& data,
                          const FitJob& job, int threads, Json& meta) {
  require_si_family(mode, data.family());
  std::ostringstream csv;
  const std::vector<Index> targets = active_beta(fit);
  if (mode == "si1" || mode == "si2") {
    const SelectiveReport r = selective_inference(fit, data, mode == "si1" ? CovKind::iid : CovKind::clustered,
                                                  job.sigma2, job.tau2, job.level, threads);
    write_selective_csv(csv, r);
    meta = Json{{"mode", mode},
                {"covariance", to_string(r.cov.kind)},
                {"sigma2", r.cov.sigma2},
                {"tau2", r.cov.tau2},
                {"estimated", r.cov.estimated},
                {"fallback", r.cov.fallback},
                {"errors", r.errors}};
  } else if (mode == "debias") {
    DebiasConfig dc = job.debias;
    dc.level = job.level;
    const DebiasReport r = debiased_test_suite(fit, data, targets, dc);
    write_debias_csv(csv, r);
    meta = Json{{"mode", mode}, {"errors", r.errors}};
  } else {
    write_naive_csv(csv, naive_refit(data, targets, job.level));
    meta = Json{{"mode", mode}};
  }
  return csv.str();
}

int cmd_fit(const Flags& fl, std::ostream& out) {
  if (fl.config.empty()) throw ConfigError("fit needs --config");
  const fs::path cfg_path(fl.config);
  FitJob job = parse_fit_job(read_json_file(fl.config), cfg_path.parent_path());
  if (fl.seed) job.seed = *fl.seed;
  const int threads = resolve_threads(fl.threads.value_or(0));
  apply_seed_threads(job, threads);

  for (const auto& mode : job.inference) require_si_family(mode, job.family);
  const ClusteredDataset data = load_data(job);
  const ShelFit fit = run_method(data, job.method, job.estimator);
  const fs::path dir = prepare_out_dir(fl.out_dir);

  Json record = fit_to_json(fit, data);
  record["config"] = fit_job_json(job);
  std::ostringstream scr;
  write_screening_csv(scr, fit.screening);
  write_file(dir / "screening.csv", scr.str());

  Json infer = Json::array();
  for (const auto& mode : job.inference) {
    Json meta;
    write_file(dir / ("inference_" + mode + ".csv"), run_inference(mode, fit, data, job, threads, meta));
    infer.push_back(meta);
  }
  if (!infer.empty()) record["inference"] = infer;
  write_file(dir / "fit.json", record.dump(2) + "\n");
  out << to_string(fit.method) << ": lambda1 " << fit.fit.lambda1 << ", " << active_beta(fit).size()
      << " covariates selected, B has " << fit.synthetic.p0() << " columns\n";
  return 0;
}

int cmd_infer(const Flags& fl, std::ostream& out) {
  if (fl.fit_path.empty()) throw ConfigError("infer needs --fit");
  if (!kInferModes.count(fl.mode)) throw ConfigError("infer --mode must be si1, si2, debias or naive");
  const Json record = read_json_file(fl.fit_path);
  if (!record.contains("config")) throw ConfigError("fit record has no 'config' section");
  FitJob job = parse_fit_job(record.at("config"), fs::path());
  if (!fl.data_path.empty()) job.data_path = fl.data_path;
  if (fl.seed) job.seed = *fl.seed;
  const int threads = resolve_threads(fl.threads.value_or(0));
  apply_seed_threads(job, threads);

  const ClusteredDataset data = load_data(job);
  require_si_family(fl.mode, data.family());
  const ShelFit fit = fit_from_json(record, data);
  const fs::path dir = prepare_out_dir(fl.out_dir);
  Json meta;
  write_file(dir / ("inference_" + fl.mode + ".csv"), run_inference(fl.mode, fit, data, job, threads, meta));
  write_file(dir / ("inference_" + fl.mode + ".json"), meta.dump(2) + "\n");
  if (meta.contains("sigma2"))
    out << "sigma2 " << meta["sigma2"].get<double>() << ", tau2 " << meta["tau2"].get<double>() << "\n";
  return 0;
}

int cmd_simulate(const Flags& fl, std::ostream& out, std::ostream& err) {
  if (fl.config.empty()) throw ConfigError("simulate needs --config");
  StudyConfig cfg = study_config_from_json(read_json_file(fl.config));
  if (fl.seed) cfg.seed = *fl.seed;
  if (fl.paper_scale) {
    for (auto& s : cfg.scenarios) {
      s.dgp.m = 400;
      s.dgp.p = 1000;
    }
    cfg.reps = 200;
    cfg.validate();
  }
  cfg.threads = resolve_threads(fl.threads.value_or(0));
  const fs::path dir = prepare_out_dir(fl.out_dir);
  if (fl.dry_run) {
    write_file(dir / "summary.json", Json{{"config", to_json(cfg)}}.dump(2) + "\n");
    return 0;
  }
  const StudyResult res = run_study(cfg);
  std::ostringstream csv;
  write_metrics_csv(csv, res.rows);
  write_file(dir / "metrics.csv", csv.str());
  Json summary = summary_to_json(res);
  summary["config"] = to_json(cfg);
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  out << res.rows.size() << " metric rows, " << res.failures.size() << " failed runs\n";
  for (const auto& f : res.failures) err << "failed: " << f << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic heterogeneous-effects lasso for clustered data"};
  app.require_subcommand(1);
  Flags fl;
  auto common = [&fl](CLI::App* sub) {
    sub->add_option("--threads", fl.threads, "worker threads (default: available cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", fl.seed, "overrides the config seed");
    sub->add_option("--out-dir", fl.out_dir, "output directory");
  };
  CLI::App* fit = app.add_subcommand("fit", "screen, fit by CV and optionally run inference");
  fit->add_option("--config", fl.config, "fit config (JSON)")->required();
  common(fit);
  CLI::App* sim = app.add_subcommand("simulate", "run a simulation study");
  sim->add_option("--config", fl.config, "study config (JSON)")->required();
  sim->add_flag("--paper-scale", fl.paper_scale, "m = 400, p = 1000, 200 replications");
  sim->add_flag("--dry-run", fl.dry_run, "write the effective config to summary.json without running");
  common(sim);
  CLI::App* inf = app.add_subcommand("infer", "post-selection inference for a saved fit");
  inf->add_option("--fit", fl.fit_path, "fit.json written by `shel fit`")->required();
  inf->add_option("--mode", fl.mode, "si1, si2, debias or naive")->required();
  inf->add_option("--data", fl.data_path, "data CSV (default: the one recorded in the fit)");
  common(inf);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (fit->parsed()) return cmd_fit(fl, out);
    if (sim->parsed()) return cmd_simulate(fl, out, err);
    return cmd_infer(fl, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    err << "numerical failure in " << e.what() << "\n";
    return 4;
  }
}

}  // namespace shel
