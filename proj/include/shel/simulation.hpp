#pragma once

#include "shel/data.hpp"
#include "shel/debias.hpp"
#include "shel/estimators.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string_view>
#include <utility>
#include <optional>
#include <string>
#include <vector>

namespace shel {

enum class Dependence { independent, endogenous };
enum class InterceptDist { gaussian, gaussian_mixture };

std::string to_string(Dependence d);
std::string to_string(InterceptDist d);
Dependence dependence_from_string(std::string_view s);
InterceptDist intercept_from_string(std::string_view s);

struct DgpConfig {
  int m = 100;
  int n = 4;
  int p = 200;
  int p0_true = 100;
  Dependence dependence = Dependence::endogenous;
  InterceptDist intercept = InterceptDist::gaussian;
  Family family = Family::gaussian;
  std::vector<Index> beta_support{0, 5, 10, 11, 15, 16};
  std::vector<double> beta_values{0.5, 0.5, 1.0, 1.0, 1.5, 1.5};
  double alpha_scale = 1.0;  // multiplies the latent intercepts
  std::uint64_t seed = 1;

  void validate() const;
};

struct Truth {
  std::vector<Index> heterogeneous;  // P0, sorted
  VectorXd alpha;                    // m
  VectorXd beta;                     // p
  MatrixXd mu;                       // m x p cluster means
  VectorXd h;                        // p loadings (endogenous)
};

struct Generated {
  ClusteredDataset data;
  Truth truth;
};

/// Inverse of the 5 x 5 block with unit diagonal and 0.5 off the diagonal.
MatrixXd within_block_covariance(int size = 5);

Generated generate(const DgpConfig& config);

struct SelectionScore {
  int fp = 0, tp = 0;
  double sensitivity = std::numeric_limits<double>::quiet_NaN();
  double specificity = std::numeric_limits<double>::quiet_NaN();
};

struct EstimationScore {
  double rmse = 0.0, l1_error = 0.0, residual_icc = 0.0;
};

/// One tested coefficient: 0-based covariate, p-value and CI.
struct InferenceItem {
  Index index = 0;
  double pvalue = 1.0;
  double lo = 0.0, hi = 0.0;
};

struct InferenceScore {
  double fpr = std::numeric_limits<double>::quiet_NaN();
  double power = std::numeric_limits<double>::quiet_NaN();
  double median_ci_length = std::numeric_limits<double>::quiet_NaN();
};

SelectionScore score_selection(const ShelFit& fit, const ClusteredDataset& data, const Truth& truth);
EstimationScore score_estimation(const ShelFit& fit, const ClusteredDataset& data, const Truth& truth);
InferenceScore score_inference(const std::vector<InferenceItem>& items, const Truth& truth, double alpha = 0.05);

/// tau2 / (tau2 + sigma2) from the moment estimator; 0 when both are 0.
double residual_icc(const VectorXd& residuals, const ClusterIndex& clusters);

struct MetricsRow {
  std::string scenario;
  std::string method;
  int rep = 0;
  double fp = std::numeric_limits<double>::quiet_NaN();
  double tp = std::numeric_limits<double>::quiet_NaN();
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double l1_error = std::numeric_limits<double>::quiet_NaN();
  double residual_icc = std::numeric_limits<double>::quiet_NaN();
  double sensitivity = std::numeric_limits<double>::quiet_NaN();
  double specificity = std::numeric_limits<double>::quiet_NaN();
  double fpr = std::numeric_limits<double>::quiet_NaN();
  double power = std::numeric_limits<double>::quiet_NaN();
  double median_ci_length = std::numeric_limits<double>::quiet_NaN();
};

struct Scenario {
  std::string name;
  DgpConfig dgp;
};

/// Methods: lasso, shel, gshel, ishel1, ishel2, igshel use lambda_1se
/// (ishel2 lambda_min); "lasso_min", "shel_min", "gshel_min" use lambda_min.
/// Inference rows: si1, si2, debias, naive, all for the coefficients
/// selected by SHEL / GSHEL at lambda_1se.
struct StudyConfig {
  std::vector<Scenario> scenarios;
  std::vector<std::string> methods{"lasso", "shel"};
  int reps = 50;
  std::uint64_t seed = 1;
  int threads = 1;
  EstimatorConfig estimator;
  DebiasConfig debias;
  double test_level = 0.05;

  void validate() const;
};

struct MetricSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
  double mcse = std::numeric_limits<double>::quiet_NaN();
  int count = 0;  // non-NaN values
};

struct SummaryRow {
  std::string scenario;
  std::string method;
  int n_ok = 0;
  int n_failed = 0;
  std::vector<std::pair<std::string, MetricSummary>> metrics;
};

struct StudyResult {
  std::vector<MetricsRow> rows;           // scenario, rep, method order
  std::vector<SummaryRow> summary;
  std::vector<std::string> failures;      // "scenario rep method: message"
};

/// Replication r of every scenario uses seed + r for the data and the CV folds.
StudyResult run_study(const StudyConfig& config);

std::vector<std::string> metric_names();
double metric_value(const MetricsRow& row, const std::string& name);

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

}  // namespace shel
