#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "popbic/dataset.hpp"
#include "popbic/model.hpp"
#include "popbic/simulate.hpp"
#include "popbic/theta.hpp"

namespace testsupport {

using namespace popbic;

inline ModelSpec make_spec(const std::string& structural, std::vector<Transform> transforms,
                           std::vector<bool> random, ErrorKind error = ErrorKind::Additive,
                           CovariateMap map = {}) {
  ModelSpec s;
  s.structural = structural;
  s.transforms = std::move(transforms);
  s.covariates = map.size() ? std::move(map) : CovariateMap(s.transforms.size());
  s.pattern = validate_pattern(CovariancePattern::diagonal(std::move(random)));
  s.error.kind = error;
  return s;
}

inline ModelSpec with_pattern(ModelSpec s, const CovariancePattern& p) {
  s.pattern = validate_pattern(p);
  return s;
}

// Oral one-compartment model of the simulation study: (ka, k, V) log-normal.
inline ModelSpec oral_spec(std::vector<bool> random) {
  return make_spec("onecpt_oral", {Transform::Log, Transform::Log, Transform::Log},
                   std::move(random));
}

// Generating values of the simulation study, restricted to `random`.
inline ThetaVector oral_theta(const std::vector<bool>& random, double sigma = 0.3) {
  const double sds[3] = {0.2, 0.1, 0.3};
  ThetaVector t;
  t.beta = Eigen::Vector3d(std::log(1.0), std::log(0.1), std::log(20.0));
  std::vector<double> var;
  for (int k = 0; k < 3; ++k)
    if (random[k]) var.push_back(sds[k] * sds[k]);
  t.omega = Eigen::MatrixXd::Zero(var.size(), var.size());
  for (std::size_t i = 0; i < var.size(); ++i) t.omega(i, i) = var[i];
  t.a = sigma;
  return t;
}

// y_ij = sum_k psi_ik t_ij^k + a eps, psi_i = beta + eta_i, identity transforms.
inline ModelSpec poly_spec(int degree_plus_one, const CovariancePattern& pattern) {
  const std::string name = "poly" + std::to_string(degree_plus_one);
  ModelSpec s;
  s.structural = name;
  s.transforms.assign(degree_plus_one, Transform::Identity);
  s.covariates = CovariateMap(degree_plus_one);
  s.pattern = validate_pattern(pattern);
  return s;
}

inline Eigen::MatrixXd random_spd(int d, std::mt19937_64& rng, bool correlated) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    L(i, i) = u(rng);
    if (correlated)
      for (int j = 0; j < i; ++j) L(i, j) = 0.5 * n(rng);
  }
  return L * L.transpose();
}

// Closed-form Gaussian marginal log-density of a linear mixed model
// y_i ~ N(X_i beta, Z_i Omega Z_i' + a^2 I) where X_i holds powers of t and
// Z_i the columns of the random coefficients.
inline double linear_marginal_oracle(const Dataset& data, const ModelSpec& spec,
                                     const ThetaVector& theta) {
  const auto random = spec.pattern.get().random_indices();
  const int p = static_cast<int>(spec.d());
  const auto layout = beta_layout(spec.covariates);
  double total = 0.0;
  for (const auto& s : data.subjects()) {
    const auto n = static_cast<Eigen::Index>(s.observations.size());
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      y(j) = s.observations[j].y;
      for (int k = 0; k < p; ++k) X(j, k) = std::pow(s.observations[j].time, k);
    }
    Eigen::VectorXd mean_coef(p);
    for (int k = 0; k < p; ++k) {
      double v = theta.beta(layout.offset[k]);
      const auto& terms = spec.covariates.terms[k];
      for (std::size_t c = 0; c < terms.size(); ++c)
        v += theta.beta(layout.offset[k] + 1 + c) * s.covariates[data.covariate_index(terms[c])];
      mean_coef(k) = v;
    }
    Eigen::MatrixXd Z(n, static_cast<Eigen::Index>(random.size()));
    for (std::size_t r = 0; r < random.size(); ++r) Z.col(r) = X.col(random[r]);
    Eigen::MatrixXd V = Z * theta.omega * Z.transpose();
    V.diagonal().array() += theta.a * theta.a;
    const Eigen::VectorXd resid = y - X * mean_coef;
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    const Eigen::MatrixXd L = llt.matrixL();
    const double logdet = 2.0 * L.diagonal().array().log().sum();
    total += -0.5 * (n * std::log(2.0 * std::numbers::pi) + logdet + resid.dot(llt.solve(resid)));
  }
  return total;
}

// Balanced random-intercept model y_ij = mu + b_i + beta1 t_j + e_ij: ML
// estimates in closed form from the between/within decomposition.
struct LmmEstimates {
  double mu, beta1, sd_b, sigma;
};

inline LmmEstimates random_intercept_ml(const Dataset& data) {
  const double N = static_cast<double>(data.size());
  const auto& first = data.subject(0).observations;
  const double n = static_cast<double>(first.size());
  double tbar = 0.0;
  for (const auto& o : first) tbar += o.time;
  tbar /= n;
  double stt = 0.0;
  for (const auto& o : first) stt += (o.time - tbar) * (o.time - tbar);

  std::vector<double> ybar_i;
  double sty = 0.0;
  for (const auto& s : data.subjects()) {
    double m = 0.0;
    for (const auto& o : s.observations) m += o.y;
    m /= n;
    ybar_i.push_back(m);
    for (const auto& o : s.observations) sty += (o.time - tbar) * (o.y - m);
  }
  const double beta1 = sty / (N * stt);
  double rss = 0.0;
  std::size_t i = 0;
  for (const auto& s : data.subjects()) {
    for (const auto& o : s.observations) {
      const double r = o.y - ybar_i[i] - beta1 * (o.time - tbar);
      rss += r * r;
    }
    ++i;
  }
  const double sigma2 = rss / (N * (n - 1.0));
  double ybar = 0.0;
  for (double m : ybar_i) ybar += m;
  ybar /= N;
  double between = 0.0;
  for (double m : ybar_i) between += (m - ybar) * (m - ybar);
  const double sd_b2 = between / N - sigma2 / n;
  return {ybar - beta1 * tbar, beta1, std::sqrt(sd_b2), std::sqrt(sigma2)};
}

// Dataset of `N` subjects on the times given, from the poly models.
inline Dataset simulate_poly(const ModelSpec& spec, const ThetaVector& theta, std::size_t N,
                             std::vector<double> times, std::uint64_t seed) {
  SimDesign d;
  d.N = N;
  d.times = std::move(times);
  d.seed = seed;
  return simulate_dataset(spec, theta, d);
}

}  // namespace testsupport
