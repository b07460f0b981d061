#pragma once

// Conditional and marginal log-likelihoods of a nonlinear mixed-effects model.
//
// The marginal density of subject i integrates the random effects eta_R out of
//   p(y_i | psi_i) N(eta_R; 0, Omega_R),   psi_i = C_i beta + eta_i.
// Each subject is handled by an empirical-Bayes (EB) Newton search for the
// mode of the joint log-density, followed by either the Laplace approximation
// or adaptive Gauss-Hermite quadrature centred and scaled at that mode.
// Subjects are independent, so the per-subject kernel runs under OpenMP; the
// serial kernel is kept as the reference and both reduce in subject order.

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "popbic/dataset.hpp"
#include "popbic/model.hpp"
#include "popbic/theta.hpp"

namespace popbic {

enum class Exec { Serial, Parallel };

// A ModelSpec resolved against a dataset's columns.
struct BoundModel {
  ModelSpec spec;
  const StructuralModel* model = nullptr;
  std::vector<int> regressor_columns;               // per structural regressor
  std::vector<std::vector<int>> covariate_columns;  // per parameter, CovariateMap order
  std::vector<int> random;                          // random parameter indices
  BetaLayout layout;
  CovariateScaling scaling;

  int d() const { return static_cast<int>(spec.d()); }
  int d_random() const { return static_cast<int>(random.size()); }
};

BoundModel bind_model(const ModelSpec& spec, const Dataset& data);

// C_i beta on the psi scale.
Eigen::VectorXd psi_mean(const BoundModel& bm, const Subject& subject, const Eigen::VectorXd& beta);
Eigen::VectorXd to_natural(const BoundModel& bm, const Eigen::VectorXd& psi);

std::vector<double> predictions(const BoundModel& bm, const Subject& subject,
                                std::span<const double> phi);

// sum_j log N(y_ij; C_ij, error_sd(C_ij)^2) at natural-scale parameters phi.
// Throws NonFiniteLikelihood naming the subject and observation index.
double conditional_loglik(const BoundModel& bm, const Subject& subject,
                          std::span<const double> phi, const ErrorModelSpec& error);

ErrorModelSpec error_at(const BoundModel& bm, const ThetaVector& theta);

struct PriorTerms {
  Eigen::MatrixXd precision;  // Omega_R^{-1}
  double log_det = 0.0;       // log det Omega_R
};

// Throws NonPositiveVariance when Omega_R is not positive definite.
PriorTerms prior_terms(const ThetaVector& theta);

struct EbOptions {
  int max_inner = 100;
  double grad_tol = 1e-8;
  double step_tol = 1e-8;
};

struct EBResult {
  Eigen::VectorXd eta_hat;      // mode over the random components
  Eigen::VectorXd psi_hat;      // C_i beta + eta at the mode, all d components
  Eigen::MatrixXd neg_hessian;  // -d^2/d eta^2 of the joint log-density at the mode
  double joint_logdensity = 0.0;
  bool converged = false;
  int inner_iterations = 0;
  double grad_norm = 0.0;
};

// Damped Newton search for the mode of
//   log p(y_i | psi(eta)) + log N(eta; 0, Omega_R).
// Starts at `start` when given, else at zero. Throws InnerNonConvergence.
EBResult eb_mode(const BoundModel& bm, const Subject& subject, const ThetaVector& theta,
                 const PriorTerms& prior, const Eigen::VectorXd* start = nullptr,
                 const EbOptions& opts = {});
EBResult eb_mode(const BoundModel& bm, const Subject& subject, const ThetaVector& theta);

struct GaussHermiteRule {
  std::vector<double> nodes;    // for weight function exp(-x^2)
  std::vector<double> weights;
};

GaussHermiteRule gauss_hermite(int n);

// Warm-start points for the EB search, one per subject (empty = start at 0).
struct ModeCache {
  std::vector<Eigen::VectorXd> eta;
};

struct LikelihoodOptions {
  int nodes = 1;  // 1 = Laplace
  Exec exec = Exec::Parallel;
  std::size_t grid_cap = 100000;
  EbOptions eb;
  const ModeCache* warm = nullptr;  // read-only starting points
  ModeCache* modes_out = nullptr;   // receives the modes found
};

// Sum over subjects of the Laplace (nodes == 1) or AGQ contribution.
double marginal_loglik(const BoundModel& bm, const Dataset& data, const ThetaVector& theta,
                       const LikelihoodOptions& opts = {});

double marginal_loglik_laplace(const Dataset& data, const ThetaVector& theta, const ModelSpec& spec);
// Throws GridTooLarge when nodes^d_R exceeds `grid_cap`.
double marginal_loglik_agq(const Dataset& data, const ThetaVector& theta, const ModelSpec& spec,
                           int nodes, std::size_t grid_cap = 100000);

// Central-difference gradient of the marginal log-likelihood in the packed
// coordinates, step 1e-5 (1 + |x_k|).
Eigen::VectorXd marginal_gradient(const BoundModel& bm, const Dataset& data,
                                  const Eigen::VectorXd& packed, const LikelihoodOptions& opts = {});
Eigen::VectorXd marginal_gradient(const Dataset& data, const ThetaVector& theta,
                                  const ModelSpec& spec);

namespace kernels {

// Per-subject marginal contributions written to out[i] (out.size() == data.size()).
void subject_contributions_serial(const BoundModel& bm, const Dataset& data,
                                  const ThetaVector& theta, const LikelihoodOptions& opts,
                                  std::span<double> out);
void subject_contributions_omp(const BoundModel& bm, const Dataset& data,
                               const ThetaVector& theta, const LikelihoodOptions& opts,
                               std::span<double> out);

}  // namespace kernels

}  // namespace popbic
