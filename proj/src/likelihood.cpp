#include "popbic/likelihood.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>

#include "popbic/errors.hpp"

namespace popbic {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

std::vector<double> regressor_values(const BoundModel& bm, const Observation& obs) {
  std::vector<double> reg(bm.regressor_columns.size());
  for (std::size_t r = 0; r < reg.size(); ++r) reg[r] = obs.regressors[bm.regressor_columns[r]];
  return reg;
}

double gaussian_logpdf(double y, double mean, double sd) {
  const double z = (y - mean) / sd;
  return -0.5 * kLog2Pi - std::log(sd) - 0.5 * z * z;
}

// Conditional log-likelihood without throwing; NaN when any term is not finite.
double conditional_or_nan(const BoundModel& bm, const Subject& subject,
                          std::span<const double> phi, const ErrorModelSpec& error,
                          std::size_t* bad_index = nullptr) {
  double total = 0.0;
  std::vector<double> reg(bm.regressor_columns.size());
  for (std::size_t j = 0; j < subject.observations.size(); ++j) {
    const auto& obs = subject.observations[j];
    for (std::size_t r = 0; r < reg.size(); ++r) reg[r] = obs.regressors[bm.regressor_columns[r]];
    double c;
    try {
      c = bm.model->eval(obs.time, reg, phi);
    } catch (const DomainError&) {
      c = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(c)) {
      if (bad_index) *bad_index = j;
      return std::numeric_limits<double>::quiet_NaN();
    }
    total += gaussian_logpdf(obs.y, c, error_sd(error, c));
  }
  return total;
}

// Everything the EB search needs for one subject at fixed theta.
class SubjectObjective {
 public:
  SubjectObjective(const BoundModel& bm, const Subject& subject, const ThetaVector& theta,
                   const PriorTerms& prior)
      : bm_(bm),
        subject_(subject),
        prior_(prior),
        error_(error_at(bm, theta)),
        mean_(psi_mean(bm, subject, theta.beta)),
        phi_(bm.d()) {}

  int dim() const { return bm_.d_random(); }
  const Eigen::VectorXd& mean() const { return mean_; }

  Eigen::VectorXd psi(const Eigen::VectorXd& eta) const {
    Eigen::VectorXd p = mean_;
    for (int r = 0; r < dim(); ++r) p(bm_.random[r]) += eta(r);
    return p;
  }

  // log p(y | psi(eta)) - 0.5 eta' P eta; NaN outside the model's domain.
  double value(const Eigen::VectorXd& eta) {
    const Eigen::VectorXd p = psi(eta);
    for (int k = 0; k < bm_.d(); ++k) phi_[k] = to_natural(bm_.spec.transforms[k], p(k));
    const double data = conditional_or_nan(bm_, subject_, phi_, error_);
    return data - 0.5 * eta.dot(prior_.precision * eta);
  }

  // Value, gradient and negative Hessian of the same objective.
  bool derivatives(const Eigen::VectorXd& eta, double& val, Eigen::VectorXd& grad,
                   Eigen::MatrixXd& neg_hess) {
    const int dR = dim();
    std::vector<Jet> phi(bm_.d());
    for (int k = 0; k < bm_.d(); ++k) {
      const auto it = std::find(bm_.random.begin(), bm_.random.end(), k);
      Jet psi_k = it == bm_.random.end()
                      ? Jet(mean_(k))
                      : Jet::variable(mean_(k) + eta(it - bm_.random.begin()),
                                      static_cast<int>(it - bm_.random.begin()));
      phi[k] = to_natural(bm_.spec.transforms[k], psi_k);
    }
    Jet total(0.0);
    std::vector<double> reg(bm_.regressor_columns.size());
    for (const auto& obs : subject_.observations) {
      for (std::size_t r = 0; r < reg.size(); ++r)
        reg[r] = obs.regressors[bm_.regressor_columns[r]];
      Jet c;
      try {
        c = bm_.model->evaluate(obs.time, reg, phi);
      } catch (const DomainError&) {
        return false;
      }
      if (!std::isfinite(c.v)) return false;
      const Jet sd = error_sd(error_, c);
      const Jet z = (Jet(obs.y) - c) / sd;
      total += Jet(-0.5 * kLog2Pi) - log(sd) - Jet(0.5) * z * z;
    }
    const Eigen::VectorXd p_eta = prior_.precision * eta;
    val = total.v - 0.5 * eta.dot(p_eta);
    grad.resize(dR);
    neg_hess.resize(dR, dR);
    for (int i = 0; i < dR; ++i) {
      grad(i) = total.g[i] - p_eta(i);
      for (int j = 0; j < dR; ++j) neg_hess(i, j) = -total.hess(i, j) + prior_.precision(i, j);
    }
    neg_hess = 0.5 * (neg_hess + neg_hess.transpose()).eval();
    return std::isfinite(val) && grad.allFinite() && neg_hess.allFinite();
  }

 private:
  const BoundModel& bm_;
  const Subject& subject_;
  const PriorTerms& prior_;
  ErrorModelSpec error_;
  Eigen::VectorXd mean_;
  std::vector<double> phi_;
};

// Newton direction with an escalating ridge when the Hessian is not positive definite.
Eigen::VectorXd newton_direction(const Eigen::MatrixXd& H, const Eigen::VectorXd& g) {
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() == Eigen::Success) return llt.solve(g);
  const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
  for (double lambda = 1e-8; lambda < 1e12; lambda *= 10.0) {
    Eigen::MatrixXd R = H;
    R.diagonal().array() += lambda * scale;
    llt.compute(R);
    if (llt.info() == Eigen::Success) return llt.solve(g);
  }
  return g / scale;
}

double log_det_spd(const Eigen::MatrixXd& H, bool& ok) {
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  ok = llt.info() == Eigen::Success;
  if (!ok) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::MatrixXd L = llt.matrixL();
  return 2.0 * L.diagonal().array().log().sum();
}

double laplace_term(const EBResult& eb, int dR) {
  bool ok = true;
  const double logdet = log_det_spd(eb.neg_hessian, ok);
  if (!ok) return std::numeric_limits<double>::quiet_NaN();
  return eb.joint_logdensity + 0.5 * dR * kLog2Pi - 0.5 * logdet;
}

double agq_term(SubjectObjective& obj, const EBResult& eb, const PriorTerms& prior,
                const GaussHermiteRule& rule) {
  const int dR = obj.dim();
  Eigen::LLT<Eigen::MatrixXd> llt(eb.neg_hessian);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::MatrixXd L = llt.matrixL();
  const double logdet_h = 2.0 * L.diagonal().array().log().sum();
  const double norm = -0.5 * (dR * kLog2Pi + prior.log_det);

  const int n = static_cast<int>(rule.nodes.size());
  std::size_t total = 1;
  for (int r = 0; r < dR; ++r) total *= static_cast<std::size_t>(n);

  std::vector<double> terms;
  terms.reserve(total);
  std::vector<int> idx(dR, 0);
  Eigen::VectorXd z(dR);
  for (std::size_t m = 0; m < total; ++m) {
    double log_w = 0.0;
    for (int r = 0; r < dR; ++r) {
      z(r) = rule.nodes[idx[r]];
      log_w += std::log(rule.weights[idx[r]]);
    }
    // eta = eta_hat + sqrt(2) L^{-T} z
    const Eigen::VectorXd shift = L.transpose().triangularView<Eigen::Upper>().solve(z);
    const Eigen::VectorXd eta = eb.eta_hat + std::numbers::sqrt2 * shift;
    const double joint = obj.value(eta) + norm;
    terms.push_back(std::isfinite(joint) ? log_w + joint + z.squaredNorm()
                                         : -std::numeric_limits<double>::infinity());
    for (int r = dR - 1; r >= 0; --r) {
      if (++idx[r] < n) break;
      idx[r] = 0;
    }
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(top)) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - top);
  return top + std::log(acc) + 0.5 * dR * std::numbers::ln2 - 0.5 * logdet_h;
}

struct Prepared {
  PriorTerms prior;
  GaussHermiteRule rule;
};

Prepared prepare(const BoundModel& bm, const ThetaVector& theta, const LikelihoodOptions& opts) {
  Prepared p;
  if (opts.nodes < 1) throw InputError("nodes", "quadrature needs at least one node");
  if (bm.d_random() > 0) {
    p.prior = prior_terms(theta);
    if (opts.nodes > 1) {
      double grid = 1.0;
      for (int r = 0; r < bm.d_random(); ++r) grid *= opts.nodes;
      if (grid > static_cast<double>(opts.grid_cap))
        throw GridTooLarge("quadrature grid of " + std::to_string(static_cast<long long>(grid)) +
                           " points exceeds the cap of " + std::to_string(opts.grid_cap));
      p.rule = gauss_hermite(opts.nodes);
    }
  }
  return p;
}

double subject_contribution(const BoundModel& bm, const Dataset& data, std::size_t i,
                            const ThetaVector& theta, const Prepared& prep,
                            const LikelihoodOptions& opts) {
  const Subject& subject = data.subject(i);
  if (bm.d_random() == 0) {
    const Eigen::VectorXd phi = to_natural(bm, psi_mean(bm, subject, theta.beta));
    return conditional_loglik(bm, subject, std::span<const double>(phi.data(), phi.size()),
                              error_at(bm, theta));
  }
  const Eigen::VectorXd* start = nullptr;
  if (opts.warm && i < opts.warm->eta.size() && opts.warm->eta[i].size() == bm.d_random())
    start = &opts.warm->eta[i];
  const EBResult eb = eb_mode(bm, subject, theta, prep.prior, start, opts.eb);
  if (opts.modes_out) opts.modes_out->eta[i] = eb.eta_hat;

  double value;
  if (opts.nodes == 1) {
    value = laplace_term(eb, bm.d_random());
  } else {
    SubjectObjective obj(bm, subject, theta, prep.prior);
    value = agq_term(obj, eb, prep.prior, prep.rule);
  }
  if (!std::isfinite(value)) throw InnerNonConvergence(subject.id, eb.grad_norm);
  return value;
}

}  // namespace

BoundModel bind_model(const ModelSpec& spec, const Dataset& data) {
  validate_against_dataset(spec, data);
  BoundModel bm;
  bm.spec = spec;
  bm.model = &structural_model(spec.structural);
  for (const auto& r : bm.model->regressors) bm.regressor_columns.push_back(data.regressor_index(r));
  for (const auto& terms : spec.covariates.terms) {
    std::vector<int> cols;
    for (const auto& c : terms) cols.push_back(data.covariate_index(c));
    bm.covariate_columns.push_back(std::move(cols));
  }
  bm.random = spec.pattern.get().random_indices();
  bm.layout = beta_layout(spec.covariates);
  bm.scaling = CovariateScaling::from_dataset(data);
  return bm;
}

Eigen::VectorXd psi_mean(const BoundModel& bm, const Subject& subject,
                         const Eigen::VectorXd& beta) {
  Eigen::VectorXd mu(bm.d());
  for (int k = 0; k < bm.d(); ++k) {
    const int off = bm.layout.offset[k];
    double v = beta(off);
    const auto& cols = bm.covariate_columns[k];
    for (std::size_t c = 0; c < cols.size(); ++c) v += beta(off + 1 + c) * subject.covariates[cols[c]];
    mu(k) = v;
  }
  return mu;
}

Eigen::VectorXd to_natural(const BoundModel& bm, const Eigen::VectorXd& psi) {
  Eigen::VectorXd phi(psi.size());
  for (Eigen::Index k = 0; k < psi.size(); ++k) phi(k) = to_natural(bm.spec.transforms[k], psi(k));
  return phi;
}

std::vector<double> predictions(const BoundModel& bm, const Subject& subject,
                                std::span<const double> phi) {
  std::vector<double> out;
  out.reserve(subject.observations.size());
  for (const auto& obs : subject.observations) {
    const auto reg = regressor_values(bm, obs);
    out.push_back(bm.model->eval(obs.time, reg, phi));
  }
  return out;
}

double conditional_loglik(const BoundModel& bm, const Subject& subject,
                          std::span<const double> phi, const ErrorModelSpec& error) {
  std::size_t bad = 0;
  const double v = conditional_or_nan(bm, subject, phi, error, &bad);
  if (!std::isfinite(v)) throw NonFiniteLikelihood(subject.id, bad);
  return v;
}

ErrorModelSpec error_at(const BoundModel& bm, const ThetaVector& theta) {
  ErrorModelSpec e = bm.spec.error;
  e.a = e.uses_a() ? theta.a : 0.0;
  e.b = e.uses_b() ? theta.b : 0.0;
  return e;
}

PriorTerms prior_terms(const ThetaVector& theta) {
  PriorTerms p;
  const auto n = theta.omega.rows();
  if (n == 0) return p;
  Eigen::LLT<Eigen::MatrixXd> llt(theta.omega);
  if (llt.info() != Eigen::Success) throw NonPositiveVariance("omega is not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  p.log_det = 2.0 * L.diagonal().array().log().sum();
  p.precision = llt.solve(Eigen::MatrixXd::Identity(n, n));
  p.precision = 0.5 * (p.precision + p.precision.transpose()).eval();
  return p;
}

EBResult eb_mode(const BoundModel& bm, const Subject& subject, const ThetaVector& theta,
                 const PriorTerms& prior, const Eigen::VectorXd* start, const EbOptions& opts) {
  SubjectObjective obj(bm, subject, theta, prior);
  const int dR = obj.dim();
  if (dR == 0) throw InputError("pattern", "eb_mode needs at least one random parameter");

  Eigen::VectorXd eta = start ? *start : Eigen::VectorXd::Zero(dR);
  double val = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd H;
  if (!obj.derivatives(eta, val, grad, H)) {
    if (start) {
      eta.setZero();
      if (!obj.derivatives(eta, val, grad, H)) throw NonFiniteLikelihood(subject.id, 0);
    } else {
      // locate the offending observation
      const Eigen::VectorXd phi = to_natural(bm, obj.mean());
      conditional_loglik(bm, subject, std::span<const double>(phi.data(), phi.size()),
                         error_at(bm, theta));
      throw NonFiniteLikelihood(subject.id, 0);
    }
  }

  EBResult res;
  bool converged = false;
  int iter = 0;
  for (; iter < opts.max_inner; ++iter) {
    if (grad.cwiseAbs().maxCoeff() < 1e-14) {
      converged = true;
      break;
    }
    const Eigen::VectorXd delta = newton_direction(H, grad);
    if (delta.cwiseAbs().maxCoeff() < opts.step_tol) {
      // Newton is quadratically convergent here: one full step reaches the
      // mode to rounding, then derivatives are taken at that point.
      Eigen::VectorXd next = eta + delta;
      double v2;
      Eigen::VectorXd g2;
      Eigen::MatrixXd H2;
      if (obj.derivatives(next, v2, g2, H2)) {
        eta = std::move(next);
        val = v2;
        grad = std::move(g2);
        H = std::move(H2);
      }
      converged = true;
      ++iter;
      break;
    }
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls, t *= 0.5) {
      const Eigen::VectorXd cand = eta + t * delta;
      const double f = obj.value(cand);
      if (std::isfinite(f) && f >= val - 1e-12 * (1.0 + std::abs(val))) {
        double v2;
        Eigen::VectorXd g2;
        Eigen::MatrixXd H2;
        if (!obj.derivatives(cand, v2, g2, H2)) continue;
        eta = cand;
        val = v2;
        grad = std::move(g2);
        H = std::move(H2);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }

  res.grad_norm = grad.cwiseAbs().maxCoeff();
  if (!converged && res.grad_norm <= opts.grad_tol) converged = true;
  bool pd = true;
  log_det_spd(H, pd);
  if (!converged || !pd) throw InnerNonConvergence(subject.id, res.grad_norm);

  res.eta_hat = eta;
  res.psi_hat = obj.psi(eta);
  res.neg_hessian = H;
  res.joint_logdensity = val - 0.5 * (dR * kLog2Pi + prior.log_det);
  res.converged = true;
  res.inner_iterations = iter;
  return res;
}

EBResult eb_mode(const BoundModel& bm, const Subject& subject, const ThetaVector& theta) {
  const PriorTerms prior = prior_terms(theta);
  return eb_mode(bm, subject, theta, prior);
}

GaussHermiteRule gauss_hermite(int n) {
  if (n < 1) throw InputError("nodes", "quadrature needs at least one node");
  GaussHermiteRule rule;
  if (n == 1) {
    rule.nodes = {0.0};
    rule.weights = {std::sqrt(std::numbers::pi)};
    return rule;
  }
  // Golub-Welsch: eigen-decomposition of the Hermite Jacobi matrix.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(0.5 * i);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  for (int i = 0; i < n; ++i) {
    rule.nodes.push_back(es.eigenvalues()(i));
    const double v0 = es.eigenvectors()(0, i);
    rule.weights.push_back(std::sqrt(std::numbers::pi) * v0 * v0);
  }
  return rule;
}

namespace kernels {

void subject_contributions_serial(const BoundModel& bm, const Dataset& data,
                                  const ThetaVector& theta, const LikelihoodOptions& opts,
                                  std::span<double> out) {
  const Prepared prep = prepare(bm, theta, opts);
  for (std::size_t i = 0; i < data.size(); ++i)
    out[i] = subject_contribution(bm, data, i, theta, prep, opts);
}

void subject_contributions_omp(const BoundModel& bm, const Dataset& data,
                               const ThetaVector& theta, const LikelihoodOptions& opts,
                               std::span<double> out) {
  const Prepared prep = prepare(bm, theta, opts);
  const auto n = static_cast<long>(data.size());
  std::vector<std::exception_ptr> errors(data.size());
#pragma omp parallel for schedule(dynamic) if (n > 1 && !omp_in_parallel())
  for (long i = 0; i < n; ++i) {
    try {
      out[i] = subject_contribution(bm, data, static_cast<std::size_t>(i), theta, prep, opts);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace kernels

double marginal_loglik(const BoundModel& bm, const Dataset& data, const ThetaVector& theta,
                       const LikelihoodOptions& opts) {
  if (opts.modes_out) opts.modes_out->eta.assign(data.size(), Eigen::VectorXd());
  std::vector<double> contrib(data.size());
  if (opts.exec == Exec::Parallel)
    kernels::subject_contributions_omp(bm, data, theta, opts, contrib);
  else
    kernels::subject_contributions_serial(bm, data, theta, opts, contrib);
  double total = 0.0;
  for (double c : contrib) total += c;
  return total;
}

double marginal_loglik_laplace(const Dataset& data, const ThetaVector& theta,
                               const ModelSpec& spec) {
  const BoundModel bm = bind_model(spec, data);
  check_theta(theta, spec);
  return marginal_loglik(bm, data, theta);
}

double marginal_loglik_agq(const Dataset& data, const ThetaVector& theta, const ModelSpec& spec,
                           int nodes, std::size_t grid_cap) {
  const BoundModel bm = bind_model(spec, data);
  check_theta(theta, spec);
  LikelihoodOptions opts;
  opts.nodes = nodes;
  opts.grid_cap = grid_cap;
  return marginal_loglik(bm, data, theta, opts);
}

Eigen::VectorXd marginal_gradient(const BoundModel& bm, const Dataset& data,
                                  const Eigen::VectorXd& packed, const LikelihoodOptions& opts) {
  Eigen::VectorXd grad(packed.size());
  for (Eigen::Index k = 0; k < packed.size(); ++k) {
    const double h = 1e-5 * (1.0 + std::abs(packed(k)));
    Eigen::VectorXd xp = packed, xm = packed;
    xp(k) += h;
    xm(k) -= h;
    const double fp = marginal_loglik(bm, data, unpack(xp, bm.spec, bm.scaling), opts);
    const double fm = marginal_loglik(bm, data, unpack(xm, bm.spec, bm.scaling), opts);
    grad(k) = (fp - fm) / (xp(k) - xm(k));
  }
  return grad;
}

Eigen::VectorXd marginal_gradient(const Dataset& data, const ThetaVector& theta,
                                  const ModelSpec& spec) {
  const BoundModel bm = bind_model(spec, data);
  return marginal_gradient(bm, data, pack(theta, spec, bm.scaling));
}

}  // namespace popbic
