#pragma once

// JSON documents: model specification, theta, search and study
// configurations, fit output and the run manifest.

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "popbic/estimation.hpp"
#include "popbic/model.hpp"
#include "popbic/selection.hpp"
#include "popbic/simulate.hpp"

namespace popbic {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::ordered_json;

// InputError naming the path on a missing file or malformed JSON.
Json read_json_file(const std::string& path);

// {"structural": "...", "parameters": [{"name", "transform", "random", "covariates"}],
//  "correlations": [["ka", "V"]], "error": {"kind", "a", "b"}, "init": {theta}}
struct ModelDocument {
  ModelSpec spec;
  std::optional<ThetaVector> init;
};

ModelDocument parse_model_document(const Json& doc);
Json model_document_json(const ModelSpec& spec, const ThetaVector* init = nullptr);

// {"typical": {param: natural value}, "coefficients": {param: {covariate: beta}},
//  "omega_sd": {param: sd}, "correlations": [{"pair": [p, q], "rho": r}],
//  "error": {"a": .., "b": ..}}
ThetaVector parse_theta_document(const Json& doc, const ModelSpec& spec);
Json theta_document_json(const ThetaVector& theta, const ModelSpec& spec);

struct SearchConfig {
  std::string structural;
  std::vector<Transform> transforms;
  std::vector<std::string> pool;
  CriterionKind criterion = CriterionKind::BIC_joint;
  bool refine_correlations = false;
  SearchOptions options;
};

SearchConfig parse_search_config(const Json& doc);

void parse_fit_options(const Json& doc, FitOptions& opts);
SimDesign parse_design(const Json& doc);

// {"model": {model document}, "theta": {theta document},
//  "candidates": [{"label", "random": [..], "correlations": [[p, q]]}] or {"mode": "diagonal"},
//  "criterion", "replicates", "seed", "design": {...}, "fit": {...}}
McConfig parse_study_config(const Json& doc);

Json fit_document(const FitResult& fit, CriterionKind highlighted);

// Stable digest of the exact input bytes and effective flags.
std::string config_hash(const std::vector<std::string>& parts);

struct RunManifest {
  std::string command;
  std::vector<std::string> inputs;
  std::string config_hash;
  std::uint64_t seed = 0;
  double wall_time_seconds = 0.0;
  std::vector<std::string> outputs;
};

void write_manifest(const std::string& dir, const RunManifest& manifest);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace popbic
