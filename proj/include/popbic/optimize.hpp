#pragma once

#include <Eigen/Dense>

namespace popbic {

// Minimization problem seen by the quasi-Newton driver. value() returns
// +inf where the objective is undefined; the line search backs off from it.
class Problem {
 public:
  virtual ~Problem() = default;
  virtual double value(const Eigen::VectorXd& x) = 0;
  virtual Eigen::VectorXd gradient(const Eigen::VectorXd& x, double fx) = 0;
  // Called once per accepted iterate, after value(x) was the last evaluation.
  virtual void accepted(const Eigen::VectorXd& /*x*/) {}
};

struct BfgsOptions {
  int max_iterations = 500;
  double grad_tol = 1e-6;    // on the infinity norm
  double rel_tol = 1e-10;    // |f_k - f_{k+1}| < rel_tol * max(1, |f_k|)
  double max_step = 2.0;     // infinity-norm cap on the search direction
  double armijo = 1e-4;
  int max_backtracks = 40;
};

enum class BfgsStatus { GradientTolerance, RelativeChange, LineSearchFailed, MaxIterations };

const char* bfgs_status_name(BfgsStatus s);

struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  int evaluations = 0;
  BfgsStatus status = BfgsStatus::MaxIterations;
};

// BFGS on the inverse Hessian with a backtracking Armijo line search.
// Requires a finite objective at x0.
BfgsResult bfgs_minimize(Problem& problem, const Eigen::VectorXd& x0, const BfgsOptions& opts = {});

}  // namespace popbic
