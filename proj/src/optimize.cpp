#include "popbic/optimize.hpp"

#include <cmath>
#include <limits>

#include "popbic/errors.hpp"

namespace popbic {

const char* bfgs_status_name(BfgsStatus s) {
  switch (s) {
    case BfgsStatus::GradientTolerance:
      return "gradient_tolerance";
    case BfgsStatus::RelativeChange:
      return "relative_change";
    case BfgsStatus::LineSearchFailed:
      return "line_search_failed";
    case BfgsStatus::MaxIterations:
      return "max_iterations";
  }
  return "unknown";
}

BfgsResult bfgs_minimize(Problem& problem, const Eigen::VectorXd& x0, const BfgsOptions& opts) {
  const auto n = x0.size();
  BfgsResult res;
  res.x = x0;
  res.f = problem.value(x0);
  res.evaluations = 1;
  if (!std::isfinite(res.f)) throw NonFiniteObjective("objective is not finite at the starting point");
  problem.accepted(res.x);
  res.grad = problem.gradient(res.x, res.f);

  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;  // Hinv is a multiple of the identity

  for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
    if (n == 0 || res.grad.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
      res.status = BfgsStatus::GradientTolerance;
      return res;
    }
    Eigen::VectorXd p = -Hinv * res.grad;
    double slope = p.dot(res.grad);
    if (!(slope < 0.0)) {
      Hinv.setIdentity();
      fresh = true;
      p = -res.grad;
      slope = p.dot(res.grad);
    }
    const double pmax = p.lpNorm<Eigen::Infinity>();
    if (pmax > opts.max_step) {
      p *= opts.max_step / pmax;
      slope *= opts.max_step / pmax;
    }

    double t = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool ok = false;
    for (int k = 0; k <= opts.max_backtracks; ++k, t *= 0.5) {
      x_new = res.x + t * p;
      f_new = problem.value(x_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new <= res.f + opts.armijo * t * slope) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      if (!fresh) {
        // curvature model is stale; retry from steepest descent
        Hinv.setIdentity();
        fresh = true;
        continue;
      }
      res.status = BfgsStatus::LineSearchFailed;
      return res;
    }

    problem.accepted(x_new);
    const Eigen::VectorXd g_new = problem.gradient(x_new, f_new);
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - res.grad;
    const double f_old = res.f;
    res.x = x_new;
    res.f = f_new;
    res.grad = g_new;

    if (std::abs(f_old - f_new) < opts.rel_tol * std::max(1.0, std::abs(f_old))) {
      ++res.iterations;
      res.status = res.grad.lpNorm<Eigen::Infinity>() < opts.grad_tol
                       ? BfgsStatus::GradientTolerance
                       : BfgsStatus::RelativeChange;
      return res;
    }

    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      if (fresh) {
        Hinv *= sy / y.squaredNorm();
        fresh = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = Hinv * y;
      Hinv += (rho * rho * y.dot(Hy) + rho) * (s * s.transpose()) -
              rho * (Hy * s.transpose() + s * Hy.transpose());
    }
  }
  res.status = BfgsStatus::MaxIterations;
  return res;
}

}  // namespace popbic
