#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "popbic/dataset.hpp"
#include "popbic/model.hpp"

namespace popbic {

// Population parameter theta = (beta, Omega_R, error parameters).
//
// beta is stored per parameter as [intercept, coefficient of each covariate
// in CovariateMap order] on the psi scale and the original covariate scale.
// omega is the covariance of the random components only, indexed in the
// order of CovariancePattern::random_indices().
struct ThetaVector {
  Eigen::VectorXd beta;
  Eigen::MatrixXd omega;
  double a = 0.0;
  double b = 0.0;
};

struct BetaLayout {
  std::vector<int> offset;  // first beta index of each parameter
  int size = 0;

  int terms(std::size_t k) const {
    return (k + 1 < offset.size() ? offset[k + 1] : size) - offset[k];
  }
};

BetaLayout beta_layout(const CovariateMap& map);

// Centering and scaling applied to covariates inside the optimizer.
struct CovariateScaling {
  std::vector<std::string> names;
  std::vector<double> center;
  std::vector<double> scale;

  static CovariateScaling from_dataset(const Dataset& data);
  // (0, 1) for names that are not present
  std::pair<double, double> lookup(const std::string& name) const;
};

// Length of the unconstrained vector: dim(theta_R) + dim(theta_F).
std::size_t packed_size(const ModelSpec& spec);

// Unconstrained coordinates: standardized beta, log-Cholesky factor of
// Omega_R restricted to the pattern, log error parameters.
// Throws NonPositiveVariance when Omega_R or an error parameter is on the boundary.
Eigen::VectorXd pack(const ThetaVector& theta, const ModelSpec& spec,
                     const CovariateScaling& scaling = {});
ThetaVector unpack(const Eigen::VectorXd& x, const ModelSpec& spec,
                   const CovariateScaling& scaling = {});

// Checks sizes and that Omega_R respects the pattern; throws InputError.
void check_theta(const ThetaVector& theta, const ModelSpec& spec);

}  // namespace popbic
