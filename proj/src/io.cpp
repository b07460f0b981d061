#include "popbic/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "popbic/criteria.hpp"
#include "popbic/errors.hpp"
#include "popbic/rng.hpp"

namespace popbic {

namespace {

const Json& require(const Json& doc, const char* key) {
  if (!doc.is_object() || !doc.contains(key))
    throw InputError(key, std::string("missing required field '") + key + "'");
  return doc.at(key);
}

template <class T>
T as(const Json& v, const std::string& field) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InputError(field, "field '" + field + "' has the wrong type");
  }
}

template <class T>
T value_or(const Json& doc, const char* key, T fallback) {
  if (!doc.is_object() || !doc.contains(key) || doc.at(key).is_null()) return fallback;
  return as<T>(doc.at(key), key);
}

int parameter_position(const std::vector<std::string>& names, const std::string& name,
                       const std::string& field) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InputError(field, "unknown parameter '" + name + "'");
  return static_cast<int>(it - names.begin());
}

Json number_json(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

ErrorModelSpec parse_error(const Json& doc) {
  ErrorModelSpec e;
  e.kind = parse_error_kind(value_or<std::string>(doc, "kind", "additive"));
  e.a = value_or<double>(doc, "a", 0.0);
  e.b = value_or<double>(doc, "b", 0.0);
  return e;
}

struct ParsedParameters {
  std::vector<std::string> names;
  std::vector<Transform> transforms;
  std::vector<bool> random;
  CovariateMap covariates;
};

// Parameters in the structural model's order; every one must be listed once.
ParsedParameters parse_parameters(const std::string& structural, const Json& list) {
  const auto& model = structural_model(structural);
  ParsedParameters out;
  out.names = model.parameters;
  const std::size_t d = model.arity();
  out.transforms.assign(d, Transform::Log);
  out.random.assign(d, false);
  out.covariates = CovariateMap(d);
  if (!list.is_array()) throw InputError("parameters", "'parameters' must be a list");
  std::vector<bool> seen(d, false);
  for (const auto& p : list) {
    const auto name = as<std::string>(require(p, "name"), "parameters.name");
    const int k = parameter_position(out.names, name, "parameters");
    if (seen[k]) throw InputError("parameters", "parameter '" + name + "' listed twice");
    seen[k] = true;
    out.transforms[k] = parse_transform(value_or<std::string>(p, "transform", "log"));
    out.random[k] = value_or<bool>(p, "random", false);
    out.covariates.terms[k] = value_or<std::vector<std::string>>(p, "covariates", {});
  }
  for (std::size_t k = 0; k < d; ++k)
    if (!seen[k])
      throw InputError("parameters", "parameter '" + out.names[k] + "' of '" + structural +
                                         "' is not listed");
  return out;
}

CovariancePattern parse_pattern(const std::vector<std::string>& names, const std::vector<bool>& random,
                                const Json& correlations) {
  CovariancePattern p = CovariancePattern::diagonal(random);
  if (correlations.is_null()) return p;
  if (!correlations.is_array()) throw InputError("correlations", "'correlations' must be a list");
  for (const auto& pair : correlations) {
    if (!pair.is_array() || pair.size() != 2)
      throw InputError("correlations", "each correlation is a pair of parameter names");
    const int k = parameter_position(names, as<std::string>(pair[0], "correlations"), "correlations");
    const int l = parameter_position(names, as<std::string>(pair[1], "correlations"), "correlations");
    p.set_correlated(k, l);
  }
  return p;
}

Json correlations_json(const CovariancePattern& p, const std::vector<std::string>& names) {
  Json out = Json::array();
  for (int k = 1; k < p.d; ++k)
    for (int l = 0; l < k; ++l)
      if (p.correlated(k, l)) out.push_back({names[l], names[k]});
  return out;
}

}  // namespace

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path, "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path, "'" + path + "' is not valid JSON: " + e.what());
  }
}

ModelDocument parse_model_document(const Json& doc) {
  ModelDocument out;
  ModelSpec& spec = out.spec;
  spec.structural = as<std::string>(require(doc, "structural"), "structural");
  const auto params = parse_parameters(spec.structural, require(doc, "parameters"));
  spec.transforms = params.transforms;
  spec.covariates = params.covariates;
  spec.pattern = validate_pattern(
      parse_pattern(params.names, params.random, doc.value("correlations", Json())));
  spec.error = parse_error(doc.value("error", Json::object()));
  validate_model_spec(spec);
  if (doc.contains("init") && !doc.at("init").is_null())
    out.init = parse_theta_document(doc.at("init"), spec);
  return out;
}

Json model_document_json(const ModelSpec& spec, const ThetaVector* init) {
  const auto names = parameter_names(spec);
  Json doc;
  doc["structural"] = spec.structural;
  Json params = Json::array();
  for (std::size_t k = 0; k < spec.d(); ++k)
    params.push_back({{"name", names[k]},
                      {"transform", transform_name(spec.transforms[k])},
                      {"random", static_cast<bool>(spec.pattern.get().diag[k])},
                      {"covariates", spec.covariates.terms[k]}});
  doc["parameters"] = params;
  doc["correlations"] = correlations_json(spec.pattern, names);
  doc["error"] = {{"kind", error_kind_name(spec.error.kind)}};
  if (init) doc["init"] = theta_document_json(*init, spec);
  return doc;
}

ThetaVector parse_theta_document(const Json& doc, const ModelSpec& spec) {
  const auto names = parameter_names(spec);
  const auto layout = beta_layout(spec.covariates);
  const auto& pattern = spec.pattern.get();
  const auto random = pattern.random_indices();
  ThetaVector theta;
  theta.beta = Eigen::VectorXd::Zero(layout.size);

  const Json& typical = require(doc, "typical");
  for (std::size_t k = 0; k < spec.d(); ++k) {
    if (!typical.contains(names[k]))
      throw InputError("typical", "no typical value for parameter '" + names[k] + "'");
    const double v = as<double>(typical.at(names[k]), "typical." + names[k]);
    try {
      theta.beta(layout.offset[k]) = to_transformed(spec.transforms[k], v);
    } catch (const DomainError& e) {
      throw InputError("typical", "typical value of '" + names[k] + "': " + e.what());
    }
  }
  for (const auto& [key, _] : typical.items()) parameter_position(names, key, "typical");

  const Json coefficients = doc.value("coefficients", Json::object());
  for (const auto& [param, covs] : coefficients.items()) {
    const int k = parameter_position(names, param, "coefficients");
    for (const auto& [cov, value] : covs.items()) {
      const auto& terms = spec.covariates.terms[k];
      const auto it = std::find(terms.begin(), terms.end(), cov);
      if (it == terms.end())
        throw InputError(cov, "coefficient for covariate '" + cov + "' on '" + param +
                                  "' which the model does not include");
      theta.beta(layout.offset[k] + 1 + (it - terms.begin())) =
          as<double>(value, "coefficients." + param + "." + cov);
    }
  }

  const auto dR = static_cast<Eigen::Index>(random.size());
  theta.omega = Eigen::MatrixXd::Zero(dR, dR);
  const Json omega_sd = doc.value("omega_sd", Json::object());
  for (Eigen::Index i = 0; i < dR; ++i) {
    const auto& name = names[random[i]];
    if (!omega_sd.contains(name))
      throw InputError("omega_sd", "no random-effect sd for parameter '" + name + "'");
    const double sd = as<double>(omega_sd.at(name), "omega_sd." + name);
    if (!(sd >= 0.0)) throw InputError("omega_sd", "random-effect sd of '" + name + "' is negative");
    theta.omega(i, i) = sd * sd;
  }
  for (const auto& [key, _] : omega_sd.items()) {
    const int k = parameter_position(names, key, "omega_sd");
    if (!pattern.diag[k]) throw InputError("omega_sd", "parameter '" + key + "' is not random");
  }
  const Json corr = doc.value("correlations", Json::array());
  for (const auto& c : corr) {
    const Json& pair = require(c, "pair");
    if (!pair.is_array() || pair.size() != 2)
      throw InputError("correlations", "'pair' must name two parameters");
    const int k = parameter_position(names, as<std::string>(pair[0], "pair"), "correlations");
    const int l = parameter_position(names, as<std::string>(pair[1], "pair"), "correlations");
    if (k == l || !pattern.correlated(k, l))
      throw InputError("correlations", "the model has no correlation between '" + names[k] +
                                           "' and '" + names[l] + "'");
    const double rho = as<double>(require(c, "rho"), "rho");
    if (!(std::abs(rho) < 1.0)) throw InputError("rho", "correlation must lie in (-1, 1)");
    const auto i = std::find(random.begin(), random.end(), k) - random.begin();
    const auto j = std::find(random.begin(), random.end(), l) - random.begin();
    theta.omega(i, j) = theta.omega(j, i) = rho * std::sqrt(theta.omega(i, i) * theta.omega(j, j));
  }

  const Json error = doc.value("error", Json::object());
  theta.a = spec.error.uses_a() ? as<double>(require(error, "a"), "error.a") : 0.0;
  theta.b = spec.error.uses_b() ? as<double>(require(error, "b"), "error.b") : 0.0;
  if (theta.a < 0.0 || theta.b < 0.0) throw InputError("error", "error parameters must be >= 0");
  check_theta(theta, spec);
  return theta;
}

Json theta_document_json(const ThetaVector& theta, const ModelSpec& spec) {
  const auto names = parameter_names(spec);
  const auto layout = beta_layout(spec.covariates);
  const auto& pattern = spec.pattern.get();
  const auto random = pattern.random_indices();
  Json doc;
  Json typical = Json::object(), coefficients = Json::object();
  for (std::size_t k = 0; k < spec.d(); ++k) {
    typical[names[k]] = to_natural(spec.transforms[k], theta.beta(layout.offset[k]));
    const auto& terms = spec.covariates.terms[k];
    if (terms.empty()) continue;
    Json c = Json::object();
    for (std::size_t t = 0; t < terms.size(); ++t) c[terms[t]] = theta.beta(layout.offset[k] + 1 + t);
    coefficients[names[k]] = c;
  }
  doc["typical"] = typical;
  doc["coefficients"] = coefficients;
  Json sd = Json::object(), corr = Json::array();
  for (std::size_t i = 0; i < random.size(); ++i) sd[names[random[i]]] = std::sqrt(theta.omega(i, i));
  for (std::size_t i = 0; i < random.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (pattern.correlated(random[i], random[j]))
        corr.push_back({{"pair", {names[random[j]], names[random[i]]}},
                        {"rho", theta.omega(i, j) / std::sqrt(theta.omega(i, i) * theta.omega(j, j))}});
  doc["omega_sd"] = sd;
  doc["correlations"] = corr;
  Json err = Json::object();
  if (spec.error.uses_a()) err["a"] = theta.a;
  if (spec.error.uses_b()) err["b"] = theta.b;
  doc["error"] = err;
  return doc;
}

void parse_fit_options(const Json& doc, FitOptions& opts) {
  if (doc.is_null()) return;
  opts.nodes = value_or<int>(doc, "nodes", opts.nodes);
  opts.max_iterations = value_or<int>(doc, "max_iterations", opts.max_iterations);
  opts.starts = value_or<int>(doc, "starts", opts.starts);
  opts.retries = value_or<int>(doc, "retries", opts.retries);
  opts.grad_tol = value_or<double>(doc, "grad_tol", opts.grad_tol);
  opts.rel_tol = value_or<double>(doc, "rel_tol", opts.rel_tol);
  if (opts.nodes < 1) throw InputError("nodes", "nodes must be >= 1");
}

SimDesign parse_design(const Json& doc) {
  SimDesign d;
  if (doc.is_null()) return d;
  d.N = value_or<std::size_t>(doc, "N", d.N);
  d.times = value_or<std::vector<double>>(doc, "times", d.times);
  d.dose = value_or<double>(doc, "dose", d.dose);
  d.tinf = value_or<double>(doc, "tinf", d.tinf);
  d.tD = value_or<double>(doc, "tD", d.tD);
  d.seed = value_or<std::uint64_t>(doc, "seed", d.seed);
  for (const auto& g : doc.value("covariates", Json::array()))
    d.covariates.push_back({as<std::string>(require(g, "name"), "covariates.name"),
                            value_or<double>(g, "mean", 0.0), value_or<double>(g, "sd", 1.0)});
  validate_design(d);
  return d;
}

SearchConfig parse_search_config(const Json& doc) {
  SearchConfig cfg;
  cfg.structural = as<std::string>(require(doc, "structural"), "structural");
  const auto params = parse_parameters(cfg.structural, require(doc, "parameters"));
  cfg.transforms = params.transforms;
  cfg.pool = value_or<std::vector<std::string>>(doc, "pool", {});
  cfg.criterion = parse_criterion(value_or<std::string>(doc, "criterion", "bic_joint"));
  cfg.refine_correlations = value_or<bool>(doc, "refine_correlations", false);
  auto& o = cfg.options;
  o.direction = parse_direction(value_or<std::string>(doc, "direction", "forward"));
  o.cov_mode = parse_cov_mode(value_or<std::string>(doc, "cov_mode", "diagonal"));
  o.fixed_active = params.random;
  o.error = parse_error(doc.value("error", Json::object()));
  o.tol = value_or<double>(doc, "tol", o.tol);
  o.max_steps = value_or<int>(doc, "max_steps", o.max_steps);
  o.cap = value_or<int>(doc, "cap", o.cap);
  if (doc.contains("start") && !doc.at("start").is_null()) {
    CovariateMap start(params.names.size());
    for (const auto& [param, covs] : doc.at("start").items()) {
      const int k = parameter_position(params.names, param, "start");
      start.terms[k] = as<std::vector<std::string>>(covs, "start." + param);
    }
    o.start = start;
  }
  parse_fit_options(doc.value("fit", Json()), o.fit);
  return cfg;
}

McConfig parse_study_config(const Json& doc) {
  McConfig cfg;
  const ModelDocument model = parse_model_document(require(doc, "model"));
  cfg.true_spec = model.spec;
  cfg.true_theta = parse_theta_document(require(doc, "theta"), cfg.true_spec);
  cfg.criterion = parse_criterion(value_or<std::string>(doc, "criterion", "bic_v"));
  cfg.replicates = value_or<std::size_t>(doc, "replicates", cfg.replicates);
  cfg.design = parse_design(doc.value("design", Json()));
  if (doc.contains("seed")) cfg.design.seed = as<std::uint64_t>(doc.at("seed"), "seed");
  parse_fit_options(doc.value("fit", Json()), cfg.fit);

  const auto names = parameter_names(cfg.true_spec);
  const int d = static_cast<int>(names.size());
  auto candidate_spec = [&](const CovariancePattern& p) {
    ModelSpec s = cfg.true_spec;
    s.pattern = validate_pattern(p);
    return s;
  };
  const Json& cands = require(doc, "candidates");
  if (cands.is_object()) {
    const CovMode mode = parse_cov_mode(value_or<std::string>(cands, "mode", "diagonal"));
    for (const auto& p : enumerate_cov_structures(d, mode, cfg.true_spec.pattern.get().diag))
      cfg.candidates.push_back({pattern_summary(p, names), candidate_spec(p)});
  } else if (cands.is_array()) {
    for (const auto& c : cands) {
      std::vector<bool> random(d, false);
      for (const auto& r : value_or<std::vector<std::string>>(c, "random", {}))
        random[parameter_position(names, r, "candidates.random")] = true;
      const CovariancePattern p = parse_pattern(names, random, c.value("correlations", Json()));
      const std::string label = value_or<std::string>(c, "label", pattern_summary(p, names));
      cfg.candidates.push_back({label, candidate_spec(p)});
    }
  } else {
    throw InputError("candidates", "'candidates' must be a list or {\"mode\": ...}");
  }
  if (cfg.candidates.empty()) throw InputError("candidates", "candidate list is empty");
  return cfg;
}

Json fit_document(const FitResult& fit, CriterionKind highlighted) {
  Json doc;
  doc["model"] = model_summary(fit.spec);
  doc["spec"] = model_document_json(fit.spec);
  doc["loglik"] = number_json(fit.loglik);
  doc["converged"] = fit.converged;
  doc["status"] = fit.status;
  doc["iterations"] = fit.iterations;
  doc["evaluations"] = fit.evaluations;
  doc["attempts"] = fit.attempts;
  doc["gradient_inf_norm"] = number_json(fit.grad_norm);
  doc["nodes"] = fit.nodes;
  doc["N"] = fit.N;
  doc["n_total"] = fit.n_total;
  doc["dims"] = {{"beta_R", fit.dims.beta_R},
                 {"beta_F", fit.dims.beta_F},
                 {"vec_omega", fit.dims.vec_omega},
                 {"error", fit.dims.error},
                 {"theta_R", fit.dims.theta_R()},
                 {"theta_F", fit.dims.theta_F()}};
  Json crit = Json::object();
  for (auto k : kAllCriteria) crit[criterion_name(k)] = number_json(criterion(fit, k).value);
  doc["criteria"] = crit;
  doc["criterion"] = criterion_name(highlighted);
  Json est = Json::array();
  for (const auto& e : fit.estimates)
    est.push_back({{"name", e.name},
                   {"estimate", number_json(e.value)},
                   {"se", number_json(e.se)},
                   {"rse_percent", number_json(e.rse_percent)},
                   {"p_value", number_json(e.wald_p)}});
  doc["estimates"] = est;
  doc["se_available"] = fit.se_available;
  doc["theta"] = theta_document_json(fit.theta_hat, fit.spec);
  Json scaling = Json::array();
  for (std::size_t c = 0; c < fit.scaling.names.size(); ++c)
    scaling.push_back({{"covariate", fit.scaling.names[c]},
                       {"center", fit.scaling.center[c]},
                       {"scale", fit.scaling.scale[c]}});
  doc["covariate_scaling"] = scaling;
  return doc;
}

std::string config_hash(const std::vector<std::string>& parts) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : parts) {
    h = fnv1a(p, h);
    h = fnv1a(std::string_view("\x1f", 1), h);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void write_manifest(const std::string& dir, const RunManifest& m) {
  Json doc;
  doc["command"] = m.command;
  doc["inputs"] = m.inputs;
  doc["config_hash"] = m.config_hash;
  doc["seed"] = m.seed;
  doc["version"] = kVersion;
  doc["wall_time_seconds"] = m.wall_time_seconds;
  doc["outputs"] = m.outputs;
  write_text_file((std::filesystem::path(dir) / "manifest.json").string(), doc.dump(2) + "\n");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path, "cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path, "cannot write '" + path + "'");
  out << content;
}

}  // namespace popbic
