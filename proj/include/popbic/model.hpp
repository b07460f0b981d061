#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "popbic/dataset.hpp"
#include "popbic/jet.hpp"
#include "popbic/structural.hpp"

namespace popbic {

// Map from the Gaussian (transformed) scale psi to the natural scale.
enum class Transform { Identity, Log, Logit };

template <class T>
T to_natural(Transform tr, const T& psi) {
  using std::exp;
  switch (tr) {
    case Transform::Identity:
      return psi;
    case Transform::Log:
      return exp(psi);
    case Transform::Logit:
      return T(1.0) / (T(1.0) + exp(-psi));
  }
  return psi;
}

double to_transformed(Transform tr, double natural);
const char* transform_name(Transform tr);
Transform parse_transform(const std::string& name);

// Zero/non-zero structure of Omega. `offdiag` holds the strict lower
// triangle, pair (k, l) with l < k at index k(k-1)/2 + l.
struct CovariancePattern {
  int d = 0;
  std::vector<bool> diag;
  std::vector<bool> offdiag;

  CovariancePattern() = default;
  explicit CovariancePattern(int dim);
  static CovariancePattern diagonal(std::vector<bool> random);

  bool correlated(int k, int l) const;
  void set_correlated(int k, int l, bool on = true);
  std::vector<int> random_indices() const;
  int random_count() const;

  bool operator==(const CovariancePattern&) const = default;
};

std::size_t pair_index(int k, int l);

// A pattern whose correlations only involve random parameters.
class ValidatedPattern {
 public:
  ValidatedPattern() = default;
  const CovariancePattern& get() const noexcept { return pattern_; }
  operator const CovariancePattern&() const noexcept { return pattern_; }  // NOLINT
  int d() const noexcept { return pattern_.d; }

  bool operator==(const ValidatedPattern&) const = default;

 private:
  friend ValidatedPattern validate_pattern(CovariancePattern pattern);
  explicit ValidatedPattern(CovariancePattern p) : pattern_(std::move(p)) {}
  CovariancePattern pattern_;
};

// Throws OffdiagWithoutDiag for a correlation touching a non-random parameter.
ValidatedPattern validate_pattern(CovariancePattern pattern);

// Free covariance parameters: active variances plus active pairs, each once.
std::size_t count_vec_omega(const CovariancePattern& pattern);

// Covariates entering C_i beta for each parameter; an intercept is implicit.
struct CovariateMap {
  std::vector<std::vector<std::string>> terms;

  CovariateMap() = default;
  explicit CovariateMap(std::size_t d) : terms(d) {}

  std::size_t size() const { return terms.size(); }
  std::size_t covariate_count() const;
  bool contains(std::size_t k, const std::string& name) const;

  bool operator==(const CovariateMap&) const = default;
};

struct ModelSpec {
  std::string structural;
  std::vector<Transform> transforms;
  CovariateMap covariates;
  ValidatedPattern pattern;
  ErrorModelSpec error;

  std::size_t d() const { return transforms.size(); }
};

// Arity and duplicate checks against the registry; throws InputError.
void validate_model_spec(const ModelSpec& spec);
// Every covariate in the map exists in the dataset, every regressor the
// structural model reads is present; throws InputError naming the column.
void validate_against_dataset(const ModelSpec& spec, const Dataset& data);

std::vector<std::string> parameter_names(const ModelSpec& spec);

struct ThetaDims {
  std::size_t beta_R = 0;
  std::size_t beta_F = 0;
  std::size_t vec_omega = 0;
  std::size_t error = 0;

  std::size_t theta_R() const { return beta_R + vec_omega; }
  std::size_t theta_F() const { return beta_F + error; }
  std::size_t total() const { return theta_R() + theta_F(); }

  bool operator==(const ThetaDims&) const = default;
};

// Residual-error parameters are counted in theta_F.
ThetaDims theta_dims(const ModelSpec& spec);

// Human-readable summaries used in traces and tie-breaking.
std::string pattern_summary(const CovariancePattern& pattern, const std::vector<std::string>& names);
std::string covariate_summary(const CovariateMap& map, const std::vector<std::string>& names);
std::string model_summary(const ModelSpec& spec);

}  // namespace popbic
