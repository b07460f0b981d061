#include "popbic/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "popbic/errors.hpp"
#include "popbic/rng.hpp"

namespace popbic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> grid_for(Transform tr, double ybar) {
  switch (tr) {
    case Transform::Log: {
      std::vector<double> g;
      for (int e = -6; e <= 6; ++e) g.push_back(std::log(std::pow(10.0, 0.5 * e)));
      return g;
    }
    case Transform::Logit: {
      std::vector<double> g;
      for (double p : {0.05, 0.25, 0.5, 0.75, 0.95}) g.push_back(std::log(p / (1.0 - p)));
      return g;
    }
    case Transform::Identity:
      break;
  }
  return {-10.0, -1.0, -0.1, 0.0, 0.1, 1.0, 10.0, ybar};
}

// Sum of squares of y - C(phi) with every subject sharing psi.
class PooledSse {
 public:
  PooledSse(const BoundModel& bm, const Dataset& data) : bm_(bm), data_(data), phi_(bm.d()) {}

  double operator()(const Eigen::VectorXd& psi) {
    for (int k = 0; k < bm_.d(); ++k) phi_[k] = to_natural(bm_.spec.transforms[k], psi(k));
    double sse = 0.0;
    std::vector<double> reg(bm_.regressor_columns.size());
    for (const auto& s : data_.subjects())
      for (const auto& obs : s.observations) {
        for (std::size_t r = 0; r < reg.size(); ++r)
          reg[r] = obs.regressors[bm_.regressor_columns[r]];
        double c;
        try {
          c = bm_.model->eval(obs.time, reg, phi_);
        } catch (const DomainError&) {
          return kInf;
        }
        if (!std::isfinite(c)) return kInf;
        sse += (obs.y - c) * (obs.y - c);
      }
    return sse;
  }

 private:
  const BoundModel& bm_;
  const Dataset& data_;
  std::vector<double> phi_;
};

class PooledProblem : public Problem {
 public:
  explicit PooledProblem(PooledSse& sse) : sse_(sse) {}
  double value(const Eigen::VectorXd& x) override {
    const double v = sse_(x);
    return std::isfinite(v) ? v : kInf;
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd& x, double fx) override {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const double h = 1e-6 * (1.0 + std::abs(x(k)));
      Eigen::VectorXd xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      const double fp = value(xp), fm = value(xm);
      if (std::isfinite(fp) && std::isfinite(fm))
        g(k) = (fp - fm) / (2.0 * h);
      else if (std::isfinite(fp))
        g(k) = (fp - fx) / h;
      else if (std::isfinite(fm))
        g(k) = (fx - fm) / h;
      else
        g(k) = 0.0;
    }
    return g;
  }

 private:
  PooledSse& sse_;
};

// Negative marginal log-likelihood in packed coordinates. EB modes found at
// the last accepted iterate seed the inner searches of later evaluations.
class MarginalProblem : public Problem {
 public:
  MarginalProblem(const BoundModel& bm, const Dataset& data, LikelihoodOptions base)
      : bm_(bm), data_(data), base_(base) {}

  double value(const Eigen::VectorXd& x) override {
    LikelihoodOptions o = base_;
    o.warm = have_warm_ ? &warm_ : nullptr;
    o.modes_out = &trial_;
    try {
      const double ll = marginal_loglik(bm_, data_, unpack(x, bm_.spec, bm_.scaling), o);
      trial_x_ = x;
      return std::isfinite(ll) ? -ll : kInf;
    } catch (const Error&) {
      trial_x_.resize(0);
      return kInf;
    }
  }

  double value_at_warm(const Eigen::VectorXd& x) const {
    LikelihoodOptions o = base_;
    o.warm = have_warm_ ? &warm_ : nullptr;
    try {
      const double ll = marginal_loglik(bm_, data_, unpack(x, bm_.spec, bm_.scaling), o);
      return std::isfinite(ll) ? -ll : kInf;
    } catch (const Error&) {
      return kInf;
    }
  }

  void accepted(const Eigen::VectorXd& x) override {
    if (trial_x_.size() == x.size() && trial_x_ == x) {
      std::swap(warm_, trial_);
      have_warm_ = true;
    }
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x, double fx) override {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const double h = 1e-5 * (1.0 + std::abs(x(k)));
      Eigen::VectorXd xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      const double fp = value_at_warm(xp), fm = value_at_warm(xm);
      if (std::isfinite(fp) && std::isfinite(fm))
        g(k) = (fp - fm) / (xp(k) - xm(k));
      else if (std::isfinite(fp))
        g(k) = (fp - fx) / (xp(k) - x(k));
      else if (std::isfinite(fm))
        g(k) = (fx - fm) / (x(k) - xm(k));
      else
        g(k) = 0.0;
    }
    return g;
  }

 private:
  const BoundModel& bm_;
  const Dataset& data_;
  LikelihoodOptions base_;
  ModeCache warm_, trial_;
  Eigen::VectorXd trial_x_;
  bool have_warm_ = false;
};

bool counts_as_converged(const BfgsResult& r) {
  switch (r.status) {
    case BfgsStatus::GradientTolerance:
    case BfgsStatus::RelativeChange:
      return true;
    case BfgsStatus::LineSearchFailed:
      // no descent left at finite-difference resolution
      return r.grad.size() == 0 || r.grad.lpNorm<Eigen::Infinity>() < 1e-3;
    case BfgsStatus::MaxIterations:
      return false;
  }
  return false;
}

LikelihoodOptions likelihood_options(const FitOptions& opts) {
  LikelihoodOptions lo;
  lo.nodes = opts.nodes;
  lo.exec = opts.exec;
  return lo;
}

}  // namespace

PooledStart pooled_start(const Dataset& data, const ModelSpec& spec) {
  const BoundModel bm = bind_model(spec, data);
  const int d = bm.d();
  double ybar = 0.0;
  for (const auto& s : data.subjects())
    for (const auto& o : s.observations) ybar += o.y;
  ybar /= static_cast<double>(std::max<std::size_t>(1, data.n_total()));

  std::vector<std::vector<double>> grids;
  for (int k = 0; k < d; ++k) grids.push_back(grid_for(spec.transforms[k], ybar));

  PooledSse sse(bm, data);
  Eigen::VectorXd psi(d), best_psi(d);
  double best = kInf;
  std::vector<std::size_t> idx(d, 0);
  for (;;) {
    for (int k = 0; k < d; ++k) psi(k) = grids[k][idx[k]];
    const double v = sse(psi);
    if (v < best) {
      best = v;
      best_psi = psi;
    }
    int k = d - 1;
    for (; k >= 0; --k) {
      if (++idx[k] < grids[k].size()) break;
      idx[k] = 0;
    }
    if (k < 0) break;
  }
  if (!std::isfinite(best))
    throw NonFiniteObjective("no grid point gives finite predictions for '" + spec.structural + "'");

  PooledProblem problem(sse);
  BfgsOptions bo;
  bo.max_iterations = 200;
  bo.grad_tol = 1e-10;
  const BfgsResult r = bfgs_minimize(problem, best_psi, bo);

  PooledStart out;
  out.psi = r.x;
  const double n = static_cast<double>(std::max<std::size_t>(1, data.n_total()));
  out.residual_sd = std::sqrt(r.f / n);

  std::vector<double> phi(d);
  for (int k = 0; k < d; ++k) phi[k] = to_natural(spec.transforms[k], out.psi(k));
  double rel = 0.0, count = 0.0, ysq = 0.0;
  for (const auto& s : data.subjects()) {
    const auto pred = predictions(bm, s, phi);
    for (std::size_t j = 0; j < pred.size(); ++j) {
      ysq += s.observations[j].y * s.observations[j].y;
      if (std::abs(pred[j]) > 0.0) {
        const double e = (s.observations[j].y - pred[j]) / pred[j];
        rel += e * e;
        count += 1.0;
      }
    }
  }
  const double floor = 1e-4 * std::max(1.0, std::sqrt(ysq / n));
  out.residual_sd = std::max(out.residual_sd, floor);
  out.relative_sd = count > 0.0 ? std::max(std::sqrt(rel / count), 1e-4) : 0.1;
  return out;
}

ThetaVector default_init(const ModelSpec& spec, const PooledStart& pooled) {
  ThetaVector theta;
  const auto layout = beta_layout(spec.covariates);
  theta.beta = Eigen::VectorXd::Zero(layout.size);
  for (std::size_t k = 0; k < spec.d(); ++k) theta.beta(layout.offset[k]) = pooled.psi(k);
  const int dR = spec.pattern.get().random_count();
  theta.omega = 0.1 * Eigen::MatrixXd::Identity(dR, dR);
  switch (spec.error.kind) {
    case ErrorKind::Additive:
      theta.a = pooled.residual_sd;
      break;
    case ErrorKind::Proportional:
      theta.b = pooled.relative_sd;
      break;
    case ErrorKind::Combined:
      theta.a = pooled.residual_sd;
      theta.b = 0.1;
      break;
  }
  return theta;
}

ThetaVector default_init(const Dataset& data, const ModelSpec& spec) {
  return default_init(spec, pooled_start(data, spec));
}

std::vector<Estimate> natural_estimates(const ThetaVector& theta, const ModelSpec& spec) {
  std::vector<Estimate> out;
  const auto names = parameter_names(spec);
  const auto layout = beta_layout(spec.covariates);
  for (std::size_t k = 0; k < spec.d(); ++k) {
    out.push_back({names[k], to_natural(spec.transforms[k], theta.beta(layout.offset[k]))});
    const auto& terms = spec.covariates.terms[k];
    for (std::size_t c = 0; c < terms.size(); ++c)
      out.push_back({"beta_" + names[k] + "_" + terms[c], theta.beta(layout.offset[k] + 1 + c)});
  }
  const auto& pattern = spec.pattern.get();
  const auto random = pattern.random_indices();
  for (std::size_t i = 0; i < random.size(); ++i)
    out.push_back({"omega_" + names[random[i]], std::sqrt(theta.omega(i, i))});
  for (std::size_t i = 0; i < random.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (pattern.correlated(random[i], random[j]))
        out.push_back({"corr_" + names[random[j]] + "_" + names[random[i]],
                       theta.omega(i, j) / std::sqrt(theta.omega(i, i) * theta.omega(j, j))});
  if (spec.error.uses_a()) out.push_back({"a", theta.a});
  if (spec.error.uses_b()) out.push_back({"b", theta.b});
  return out;
}

double rse_percent(double value, double se) {
  return value != 0.0 ? 100.0 * se / std::abs(value) : std::numeric_limits<double>::quiet_NaN();
}

double wald_p_value(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

FitResult fit_ml(const Dataset& data, const ModelSpec& spec, const ThetaVector& init,
                 const FitOptions& opts) {
  const BoundModel bm = bind_model(spec, data);
  check_theta(init, spec);
  const Eigen::VectorXd x0 = pack(init, spec, bm.scaling);

  BfgsOptions bo;
  bo.max_iterations = opts.max_iterations;
  bo.grad_tol = opts.grad_tol;
  bo.rel_tol = opts.rel_tol;

  std::optional<BfgsResult> best;
  bool best_converged = false;
  int attempts = 0;
  const int starts = std::max(1, opts.starts);
  for (int s = 0; s < starts; ++s) {
    for (int attempt = 0; attempt <= opts.retries; ++attempt) {
      Eigen::VectorXd x = x0;
      if (s > 0 || attempt > 0) {
        std::mt19937_64 rng(derive_seed(opts.seed, static_cast<std::uint64_t>(s),
                                        static_cast<std::uint64_t>(attempt)));
        std::normal_distribution<double> jitter(0.0, opts.jitter_sd);
        for (Eigen::Index k = 0; k < x.size(); ++k) x(k) += jitter(rng);
      }
      ++attempts;
      MarginalProblem problem(bm, data, likelihood_options(opts));
      BfgsResult r;
      try {
        r = bfgs_minimize(problem, x, bo);
      } catch (const NonFiniteObjective&) {
        continue;
      }
      const bool conv = counts_as_converged(r);
      if (!best || (conv && !best_converged) || (conv == best_converged && r.f < best->f)) {
        best = r;
        best_converged = conv;
      }
      if (conv) break;
    }
  }
  if (!best) throw NonFiniteObjective("marginal log-likelihood is not finite at any start");

  FitResult fit;
  fit.spec = spec;
  fit.theta_hat = unpack(best->x, spec, bm.scaling);
  LikelihoodOptions cold = likelihood_options(opts);
  fit.loglik = marginal_loglik(bm, data, fit.theta_hat, cold);
  fit.converged = best_converged && std::isfinite(fit.loglik);
  fit.iterations = best->iterations;
  fit.evaluations = best->evaluations;
  fit.attempts = attempts;
  fit.status = bfgs_status_name(best->status);
  fit.grad_norm = best->grad.size() ? best->grad.lpNorm<Eigen::Infinity>() : 0.0;
  fit.nodes = opts.nodes;
  fit.dims = theta_dims(spec);
  fit.N = data.size();
  fit.n_total = data.n_total();
  fit.scaling = bm.scaling;
  fit.estimates = natural_estimates(fit.theta_hat, spec);
  if (opts.standard_errors && fit.converged) standard_errors(fit, data, opts);
  return fit;
}

FitResult fit_ml(const Dataset& data, const ModelSpec& spec, const FitOptions& opts) {
  return fit_ml(data, spec, default_init(data, spec), opts);
}

void standard_errors(FitResult& fit, const Dataset& data, const FitOptions& opts) {
  const ModelSpec& spec = fit.spec;
  const BoundModel bm = bind_model(spec, data);
  const Eigen::VectorXd x = pack(fit.theta_hat, spec, bm.scaling);
  const auto p = x.size();
  fit.estimates = natural_estimates(fit.theta_hat, spec);
  fit.se_available = false;

  ModeCache modes;
  LikelihoodOptions lo = likelihood_options(opts);
  lo.modes_out = &modes;
  const double f0 = -marginal_loglik(bm, data, fit.theta_hat, lo);
  lo.modes_out = nullptr;
  lo.warm = &modes;
  auto f = [&](const Eigen::VectorXd& z) {
    try {
      return -marginal_loglik(bm, data, unpack(z, spec, bm.scaling), lo);
    } catch (const Error&) {
      return kInf;
    }
  };

  Eigen::VectorXd h(p);
  for (Eigen::Index i = 0; i < p; ++i) h(i) = 1e-4 * (1.0 + std::abs(x(i)));
  Eigen::MatrixXd H(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += h(i);
    xm(i) -= h(i);
    H(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (h(i) * h(i));
    for (Eigen::Index j = 0; j < i; ++j) {
      Eigen::VectorXd a = x, b = x, c = x, e = x;
      a(i) += h(i), a(j) += h(j);
      b(i) += h(i), b(j) -= h(j);
      c(i) -= h(i), c(j) += h(j);
      e(i) -= h(i), e(j) -= h(j);
      H(i, j) = H(j, i) = (f(a) - f(b) - f(c) + f(e)) / (4.0 * h(i) * h(j));
    }
  }
  if (!H.allFinite()) return;
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) return;
  const Eigen::MatrixXd cov_x = llt.solve(Eigen::MatrixXd::Identity(p, p));
  if (!cov_x.allFinite()) return;

  const auto m = static_cast<Eigen::Index>(fit.estimates.size());
  Eigen::MatrixXd J(m, p);
  for (Eigen::Index k = 0; k < p; ++k) {
    const double step = 1e-6 * (1.0 + std::abs(x(k)));
    Eigen::VectorXd xp = x, xm = x;
    xp(k) += step;
    xm(k) -= step;
    const auto ep = natural_estimates(unpack(xp, spec, bm.scaling), spec);
    const auto em = natural_estimates(unpack(xm, spec, bm.scaling), spec);
    for (Eigen::Index r = 0; r < m; ++r) J(r, k) = (ep[r].value - em[r].value) / (2.0 * step);
  }
  const Eigen::MatrixXd cov = J * cov_x * J.transpose();
  for (Eigen::Index r = 0; r < m; ++r) {
    auto& e = fit.estimates[r];
    e.se = std::sqrt(std::max(cov(r, r), 0.0));
    e.rse_percent = rse_percent(e.value, e.se);
    if (e.name.rfind("beta_", 0) == 0 && e.se > 0.0) e.wald_p = wald_p_value(e.value / e.se);
  }
  fit.se_available = true;
}

}  // namespace popbic
