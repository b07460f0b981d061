#include "popbic/model.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "popbic/errors.hpp"

namespace popbic {

double to_transformed(Transform tr, double natural) {
  switch (tr) {
    case Transform::Identity:
      return natural;
    case Transform::Log:
      if (!(natural > 0.0)) throw DomainError("log transform needs a positive value");
      return std::log(natural);
    case Transform::Logit:
      if (!(natural > 0.0 && natural < 1.0))
        throw DomainError("logit transform needs a value in (0, 1)");
      return std::log(natural / (1.0 - natural));
  }
  return natural;
}

const char* transform_name(Transform tr) {
  switch (tr) {
    case Transform::Identity:
      return "identity";
    case Transform::Log:
      return "log";
    case Transform::Logit:
      return "logit";
  }
  return "identity";
}

Transform parse_transform(const std::string& name) {
  if (name == "identity") return Transform::Identity;
  if (name == "log") return Transform::Log;
  if (name == "logit") return Transform::Logit;
  throw InputError("transform", "unknown transform '" + name + "'");
}

std::size_t pair_index(int k, int l) {
  if (k < l) std::swap(k, l);
  return static_cast<std::size_t>(k) * (k - 1) / 2 + l;
}

CovariancePattern::CovariancePattern(int dim)
    : d(dim), diag(dim, false), offdiag(dim > 1 ? dim * (dim - 1) / 2 : 0, false) {}

CovariancePattern CovariancePattern::diagonal(std::vector<bool> random) {
  CovariancePattern p(static_cast<int>(random.size()));
  p.diag = std::move(random);
  return p;
}

bool CovariancePattern::correlated(int k, int l) const {
  if (k == l) return false;
  return offdiag.at(pair_index(k, l));
}

void CovariancePattern::set_correlated(int k, int l, bool on) {
  if (k == l) throw InputError("correlations", "a parameter cannot be correlated with itself");
  offdiag.at(pair_index(k, l)) = on;
}

std::vector<int> CovariancePattern::random_indices() const {
  std::vector<int> out;
  for (int k = 0; k < d; ++k)
    if (diag[k]) out.push_back(k);
  return out;
}

int CovariancePattern::random_count() const {
  return static_cast<int>(std::count(diag.begin(), diag.end(), true));
}

ValidatedPattern validate_pattern(CovariancePattern pattern) {
  if (pattern.d < 1) throw InputError("pattern", "covariance pattern needs d >= 1");
  if (pattern.diag.size() != static_cast<std::size_t>(pattern.d) ||
      pattern.offdiag.size() != static_cast<std::size_t>(pattern.d * (pattern.d - 1) / 2))
    throw InputError("pattern", "covariance pattern masks do not match d");
  for (int k = 1; k < pattern.d; ++k)
    for (int l = 0; l < k; ++l)
      if (pattern.correlated(k, l) && !(pattern.diag[k] && pattern.diag[l]))
        throw OffdiagWithoutDiag(l, k);
  return ValidatedPattern(std::move(pattern));
}

std::size_t count_vec_omega(const CovariancePattern& pattern) {
  return static_cast<std::size_t>(std::count(pattern.diag.begin(), pattern.diag.end(), true) +
                                  std::count(pattern.offdiag.begin(), pattern.offdiag.end(), true));
}

std::size_t CovariateMap::covariate_count() const {
  std::size_t n = 0;
  for (const auto& t : terms) n += t.size();
  return n;
}

bool CovariateMap::contains(std::size_t k, const std::string& name) const {
  const auto& t = terms.at(k);
  return std::find(t.begin(), t.end(), name) != t.end();
}

void validate_model_spec(const ModelSpec& spec) {
  const auto& model = structural_model(spec.structural);
  const std::size_t d = model.arity();
  if (spec.transforms.size() != d)
    throw InputError("parameters", "model '" + spec.structural + "' has " + std::to_string(d) +
                                       " parameters but " + std::to_string(spec.transforms.size()) +
                                       " transforms were given");
  if (spec.covariates.size() != d)
    throw InputError("covariates", "covariate map length does not match model arity");
  if (spec.pattern.d() != static_cast<int>(d))
    throw InputError("pattern", "covariance pattern dimension does not match model arity");
  for (std::size_t k = 0; k < d; ++k) {
    std::set<std::string> seen;
    for (const auto& c : spec.covariates.terms[k])
      if (!seen.insert(c).second)
        throw InputError(c, "covariate '" + c + "' listed twice for parameter '" +
                                model.parameters[k] + "'");
  }
  if (spec.pattern.get().random_count() > kJetVars)
    throw InputError("pattern", "at most 4 random parameters are supported");
}

void validate_against_dataset(const ModelSpec& spec, const Dataset& data) {
  validate_model_spec(spec);
  const auto& model = structural_model(spec.structural);
  for (const auto& r : model.regressors)
    if (data.regressor_index(r) < 0)
      throw InputError(r, "dataset lacks regressor column '" + r + "' required by '" +
                              spec.structural + "'");
  for (const auto& terms : spec.covariates.terms)
    for (const auto& c : terms)
      if (data.covariate_index(c) < 0)
        throw InputError(c, "covariate '" + c + "' is not a column of the dataset");
}

std::vector<std::string> parameter_names(const ModelSpec& spec) {
  return structural_model(spec.structural).parameters;
}

ThetaDims theta_dims(const ModelSpec& spec) {
  ThetaDims dims;
  const auto& pattern = spec.pattern.get();
  for (std::size_t k = 0; k < spec.d(); ++k) {
    const std::size_t terms = 1 + spec.covariates.terms.at(k).size();
    if (pattern.diag.at(k))
      dims.beta_R += terms;
    else
      dims.beta_F += terms;
  }
  dims.vec_omega = count_vec_omega(pattern);
  dims.error = static_cast<std::size_t>(spec.error.free_count());
  return dims;
}

std::string pattern_summary(const CovariancePattern& pattern, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << '{';
  bool first = true;
  for (int k = 0; k < pattern.d; ++k)
    if (pattern.diag[k]) {
      os << (first ? "" : ",") << names.at(k);
      first = false;
    }
  bool any = false;
  for (int k = 1; k < pattern.d; ++k)
    for (int l = 0; l < k; ++l)
      if (pattern.correlated(k, l)) {
        os << (any ? "," : "|") << names.at(l) << '~' << names.at(k);
        any = true;
      }
  os << '}';
  return os.str();
}

std::string covariate_summary(const CovariateMap& map, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << '{';
  for (std::size_t k = 0; k < map.size(); ++k) {
    os << (k ? " " : "") << names.at(k) << '(';
    for (std::size_t c = 0; c < map.terms[k].size(); ++c) os << (c ? "," : "") << map.terms[k][c];
    os << ')';
  }
  os << '}';
  return os.str();
}

std::string model_summary(const ModelSpec& spec) {
  const auto names = parameter_names(spec);
  return "Omega" + pattern_summary(spec.pattern, names) + " C" +
         covariate_summary(spec.covariates, names);
}

}  // namespace popbic
