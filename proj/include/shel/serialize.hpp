#pragma once

#include "shel/debias.hpp"
#include "shel/estimators.hpp"
#include "shel/simulation.hpp"

#include "json.hpp"

#include <string>

namespace shel {

using Json = nlohmann::json;

/// Fit record: method, lambdas, coefficients, B source columns, CV curve,
/// screening and (ISHEL) the carried column. Covariate indices are 1-based.
Json fit_to_json(const ShelFit& fit, const ClusteredDataset& data);

/// Rebuilds the stacked design from `data` and re-solves at the stored
/// lambda from the stored coefficients. DataError when the data do not
/// reproduce the stored fit (wrong file, edited rows).
ShelFit fit_from_json(const Json& j, const ClusteredDataset& data);

Json summary_to_json(const StudyResult& result);

// Config sections. Unknown keys are rejected with ConfigError; missing keys
// keep their defaults. to_json writes every field, so the pair round-trips.
Json to_json(const CvConfig& c);
CvConfig cv_config_from_json(const Json& j);
Json to_json(const EstimatorConfig& c);
EstimatorConfig estimator_config_from_json(const Json& j);
Json to_json(const DebiasConfig& c);
DebiasConfig debias_config_from_json(const Json& j);
Json to_json(const DgpConfig& c);
DgpConfig dgp_config_from_json(const Json& j);
Json to_json(const StudyConfig& c);
StudyConfig study_config_from_json(const Json& j);

/// Reads a JSON document; ConfigError on I/O or syntax errors.
Json read_json_file(const std::string& path);

}  // namespace shel
