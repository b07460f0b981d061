#pragma once

// Maximum-likelihood fitting in the packed coordinates of theta.

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "popbic/dataset.hpp"
#include "popbic/likelihood.hpp"
#include "popbic/model.hpp"
#include "popbic/optimize.hpp"
#include "popbic/theta.hpp"

namespace popbic {

struct FitOptions {
  int nodes = 1;  // 1 = Laplace, > 1 = adaptive Gauss-Hermite
  int max_iterations = 500;
  double grad_tol = 1e-6;
  double rel_tol = 1e-10;
  int starts = 1;   // additional starts are jittered copies of the first
  int retries = 3;  // jittered restarts after a failed start
  double jitter_sd = 0.3;
  std::uint64_t seed = 0;
  bool standard_errors = true;
  Exec exec = Exec::Parallel;
};

// One reported quantity on its natural scale.
struct Estimate {
  std::string name;
  double value = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  double rse_percent = std::numeric_limits<double>::quiet_NaN();
  double wald_p = std::numeric_limits<double>::quiet_NaN();  // covariate coefficients only
};

struct FitResult {
  ModelSpec spec;
  ThetaVector theta_hat;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
  int attempts = 0;  // starts plus retries actually run
  std::string status;
  double grad_norm = 0.0;
  int nodes = 1;
  ThetaDims dims;
  std::size_t N = 0;
  std::size_t n_total = 0;
  CovariateScaling scaling;
  std::vector<Estimate> estimates;
  bool se_available = false;
};

// Pooled-curve starting values on the psi scale, one per parameter:
// grid search over natural magnitudes with all subjects sharing parameters,
// then a local refinement of the pooled sum of squares.
struct PooledStart {
  Eigen::VectorXd psi;
  double residual_sd = 1.0;
  double relative_sd = 0.1;
};

PooledStart pooled_start(const Dataset& data, const ModelSpec& spec);
ThetaVector default_init(const ModelSpec& spec, const PooledStart& pooled);
ThetaVector default_init(const Dataset& data, const ModelSpec& spec);

// Throws NonFiniteObjective when no start gives a finite objective.
FitResult fit_ml(const Dataset& data, const ModelSpec& spec, const ThetaVector& init,
                 const FitOptions& opts = {});
FitResult fit_ml(const Dataset& data, const ModelSpec& spec, const FitOptions& opts = {});

// Observed information by finite differences in packed space, mapped to the
// reported quantities by the delta method. Marks se_available = false when
// the information matrix is singular.
void standard_errors(FitResult& fit, const Dataset& data, const FitOptions& opts = {});

// Names and values of the reported quantities: typical values, covariate
// coefficients, random-effect sds, correlations, error parameters.
std::vector<Estimate> natural_estimates(const ThetaVector& theta, const ModelSpec& spec);

// 100 se / |value|; NaN at value 0.
double rse_percent(double value, double se);

// Two-sided Wald p-value for z.
double wald_p_value(double z);

}  // namespace popbic
