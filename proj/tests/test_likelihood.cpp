#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "popbic/errors.hpp"
#include "popbic/likelihood.hpp"
#include "popbic/simulate.hpp"
#include "support.hpp"

using namespace popbic;
using namespace testsupport;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Dataset poly1_data(const std::vector<double>& ys) {
  Subject s;
  s.id = "1";
  for (std::size_t j = 0; j < ys.size(); ++j) s.observations.push_back({double(j + 1), {}, ys[j]});
  return Dataset({}, {}, {s});
}

CovariancePattern full_pattern(int d, const std::vector<bool>& random, bool correlated) {
  auto p = CovariancePattern::diagonal(random);
  if (correlated)
    for (int k = 1; k < d; ++k)
      for (int l = 0; l < k; ++l)
        if (random[k] && random[l]) p.set_correlated(k, l);
  return p;
}

ThetaVector poly_theta(int p, const Eigen::MatrixXd& omega, double a) {
  ThetaVector t;
  t.beta = Eigen::VectorXd::LinSpaced(p, 1.0, 0.2);
  t.omega = omega;
  t.a = a;
  return t;
}

Dataset oral_data(const std::vector<bool>& random, std::size_t N, std::uint64_t seed) {
  SimDesign d;
  d.N = N;
  d.seed = seed;
  return simulate_dataset(oral_spec(random), oral_theta(random), d);
}

}  // namespace

TEST_CASE("conditional log-likelihood at the mode of one observation") {
  const auto spec = poly_spec(1, CovariancePattern::diagonal({false}));
  const Dataset data = poly1_data({2.5});
  const BoundModel bm = bind_model(spec, data);
  ErrorModelSpec e;
  e.a = 0.7;
  const std::vector<double> phi{2.5};
  CHECK(conditional_loglik(bm, data.subject(0), phi, e) ==
        doctest::Approx(-0.5 * kLog2Pi - std::log(0.7)).epsilon(1e-15));
  const Dataset two = poly1_data({2.5, 2.5});
  CHECK(conditional_loglik(bind_model(spec, two), two.subject(0), phi, e) ==
        2.0 * conditional_loglik(bm, data.subject(0), phi, e));
}

TEST_CASE("conditional log-likelihood equals the naive per-point sum") {
  const std::vector<bool> random{true, true, true};
  const Dataset data = oral_data(random, 1, 11);
  ModelSpec spec = oral_spec(random);
  spec.error.kind = ErrorKind::Combined;
  const BoundModel bm = bind_model(spec, data);
  ErrorModelSpec e = spec.error;
  e.a = 0.2;
  e.b = 0.05;
  const std::vector<double> phi{1.3, 0.12, 18.0};
  const auto& s = data.subject(0);
  REQUIRE(s.observations.size() == 9);
  double naive = 0.0;
  for (const auto& o : s.observations) {
    const double c = onecpt_oral<double>(100.0, o.time, phi[0], phi[1], phi[2]);
    const double sd = 0.2 + 0.05 * c;
    naive += -0.5 * kLog2Pi - std::log(sd) - 0.5 * (o.y - c) * (o.y - c) / (sd * sd);
  }
  CHECK(conditional_loglik(bm, s, phi, e) == doctest::Approx(naive).epsilon(1e-13));
}

TEST_CASE("non-finite predictions name the subject and observation") {
  StructuralModel m;
  m.name = "test_blowup";
  m.parameters = {"c"};
  m.eval = [](double t, std::span<const double>, std::span<const double> phi) {
    return t > 1.5 ? std::numeric_limits<double>::quiet_NaN() : phi[0];
  };
  register_structural_model(m);
  ModelSpec spec = make_spec("test_blowup", {Transform::Identity}, {false});
  const Dataset data = poly1_data({1.0, 1.0});
  const BoundModel bm = bind_model(spec, data);
  ErrorModelSpec e;
  e.a = 1.0;
  try {
    conditional_loglik(bm, data.subject(0), std::vector<double>{1.0}, e);
    FAIL("expected NonFiniteLikelihood");
  } catch (const NonFiniteLikelihood& err) {
    CHECK(err.subject() == "1");
    CHECK(err.index() == 1);
  }
}

TEST_CASE("EB mode of noiseless data generated at eta = 0 is zero") {
  const std::vector<bool> random{true, true, true};
  const auto spec = oral_spec(random);
  ThetaVector theta = oral_theta(random, 1e-3);
  Subject s;
  s.id = "A";
  for (double t : {1.0, 2.0, 4.0, 7.0, 10.0, 15.0, 20.0, 30.0, 40.0})
    s.observations.push_back({t, {100.0}, onecpt_oral<double>(100.0, t, 1.0, 0.1, 20.0)});
  const Dataset data({"dose"}, {}, {s});
  const BoundModel bm = bind_model(spec, data);
  const EBResult r = eb_mode(bm, data.subject(0), theta);
  CHECK(r.converged);
  CHECK(r.eta_hat.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("EB mode of a linear model equals the GLS posterior mode") {
  std::mt19937_64 rng(5);
  const auto pattern = full_pattern(3, {true, true, false}, true);
  const auto spec = poly_spec(3, pattern);
  const ThetaVector theta = poly_theta(3, random_spd(2, rng, true), 0.4);
  const Dataset data = simulate_poly(spec, theta, 3, {0.5, 1, 1.5, 2, 3, 4}, 17);
  const BoundModel bm = bind_model(spec, data);
  for (const auto& s : data.subjects()) {
    const EBResult r = eb_mode(bm, s, theta);
    const auto n = static_cast<Eigen::Index>(s.observations.size());
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      y(j) = s.observations[j].y;
      for (int k = 0; k < 3; ++k) X(j, k) = std::pow(s.observations[j].time, k);
    }
    const Eigen::MatrixXd Z = X.leftCols(2);
    const double a2 = theta.a * theta.a;
    const Eigen::MatrixXd A = Z.transpose() * Z / a2 + theta.omega.inverse();
    const Eigen::VectorXd gls = A.ldlt().solve(Z.transpose() * (y - X * theta.beta) / a2);
    CHECK((r.eta_hat - gls).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((r.neg_hessian - A).cwiseAbs().maxCoeff() < 1e-6 * A.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("EB mode shrinks to the population mean when Omega vanishes") {
  const std::vector<bool> random{true, true, true};
  const Dataset data = oral_data(random, 4, 3);
  const auto spec = oral_spec(random);
  ThetaVector theta = oral_theta(random);
  theta.omega = Eigen::Matrix3d::Identity() * 1e-12;
  const BoundModel bm = bind_model(spec, data);
  for (const auto& s : data.subjects()) {
    const EBResult r = eb_mode(bm, s, theta);
    CHECK((r.psi_hat - psi_mean(bm, s, theta.beta)).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("EB mode does not depend on the starting point") {
  const std::vector<bool> random{true, true, true};
  const Dataset data = oral_data(random, 5, 21);
  const auto spec = oral_spec(random);
  const ThetaVector theta = oral_theta(random);
  const BoundModel bm = bind_model(spec, data);
  const PriorTerms prior = prior_terms(theta);
  for (const auto& s : data.subjects()) {
    const EBResult cold = eb_mode(bm, s, theta, prior);
    const Eigen::VectorXd far = Eigen::Vector3d(0.3, -0.2, 0.4);
    const EBResult warm = eb_mode(bm, s, theta, prior, &far);
    CHECK((cold.eta_hat - warm.eta_hat).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("Laplace without random effects is the exact conditional likelihood") {
  const std::vector<bool> random{false, false, false};
  const Dataset data = oral_data({true, true, true}, 6, 8);
  const auto spec = oral_spec(random);
  const ThetaVector theta = oral_theta(random);
  const BoundModel bm = bind_model(spec, data);
  double expected = 0.0;
  for (const auto& s : data.subjects()) {
    const Eigen::VectorXd phi = to_natural(bm, psi_mean(bm, s, theta.beta));
    expected += conditional_loglik(bm, s, std::vector<double>(phi.data(), phi.data() + 3),
                                   error_at(bm, theta));
  }
  CHECK(marginal_loglik_laplace(data, theta, spec) == expected);
}

TEST_CASE("Laplace is exact on linear Gaussian models for every covariance pattern") {
  std::mt19937_64 rng(101);
  const std::vector<std::vector<bool>> randoms{
      {true, false, false}, {false, true, true}, {true, true, false}, {true, true, true}};
  for (const auto& random : randoms)
    for (bool corr : {false, true}) {
      const auto pattern = full_pattern(3, random, corr);
      const auto spec = poly_spec(3, pattern);
      const int dr = pattern.random_count();
      const ThetaVector theta = poly_theta(3, random_spd(dr, rng, corr) * 0.3, 0.5);
      const Dataset data = simulate_poly(spec, theta, 10, {0.2, 0.6, 1.1, 1.7, 2.4, 3.0}, rng());
      const double oracle = linear_marginal_oracle(data, spec, theta);
      CHECK(marginal_loglik_laplace(data, theta, spec) == doctest::Approx(oracle).epsilon(1e-12));
      CHECK(std::abs(marginal_loglik_laplace(data, theta, spec) - oracle) < 1e-8);
      for (int nodes : {2, 3, 5})
        CHECK(std::abs(marginal_loglik_agq(data, theta, spec, nodes) - oracle) < 1e-8);
    }
}

TEST_CASE("Laplace value decreases when y moves away from the model") {
  const std::vector<bool> random{true, true, true};
  const Dataset data = oral_data(random, 10, 4);
  const auto spec = oral_spec(random);
  const ThetaVector theta = oral_theta(random);
  std::vector<Subject> moved = data.subjects();
  for (auto& s : moved)
    for (auto& o : s.observations) o.y += 1.5;
  const Dataset shifted(data.regressor_names(), data.covariate_names(), moved);
  CHECK(marginal_loglik_laplace(shifted, theta, spec) < marginal_loglik_laplace(data, theta, spec));
}

TEST_CASE("quadrature ladder on the oral model") {
  const std::vector<bool> random{true, true, true};
  const Dataset data = oral_data(random, 20, 2024);
  const auto spec = oral_spec(random);
  const ThetaVector theta = oral_theta(random);
  const double laplace = marginal_loglik_laplace(data, theta, spec);
  CHECK(marginal_loglik_agq(data, theta, spec, 1) == laplace);
  const double q9 = marginal_loglik_agq(data, theta, spec, 9);
  const double q15 = marginal_loglik_agq(data, theta, spec, 15);
  CHECK(std::abs(q9 - q15) < 1e-4);
  CHECK_THROWS_AS(marginal_loglik_agq(data, theta, spec, 50), GridTooLarge);
}

TEST_CASE("Gauss-Hermite rule integrates polynomials exactly") {
  for (int n : {1, 2, 5, 9, 15}) {
    const auto rule = gauss_hermite(n);
    REQUIRE(rule.nodes.size() == std::size_t(n));
    for (int p = 0; p < 2 * n; p += 2) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i) sum += rule.weights[i] * std::pow(rule.nodes[i], p);
      // int x^p e^{-x^2} = Gamma((p+1)/2)
      CHECK(sum == doctest::Approx(std::tgamma((p + 1) / 2.0)).epsilon(1e-11));
    }
  }
}

TEST_CASE("marginal log-likelihood is additive over subjects and order-free") {
  const std::vector<bool> random{true, false, true};
  const Dataset data = oral_data(random, 7, 99);
  const auto spec = oral_spec(random);
  const ThetaVector theta = oral_theta(random);
  double parts = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    parts += marginal_loglik_laplace(data.subset({i}), theta, spec);
  const double whole = marginal_loglik_laplace(data, theta, spec);
  CHECK(whole == doctest::Approx(parts).epsilon(1e-13));

  std::vector<Subject> shuffled = data.subjects();
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (auto& s : shuffled) std::shuffle(s.observations.begin(), s.observations.end(), rng);
  const Dataset permuted(data.regressor_names(), data.covariate_names(), shuffled);
  CHECK(marginal_loglik_laplace(permuted, theta, spec) == whole);
  CHECK(marginal_loglik_agq(permuted, theta, spec, 4) == marginal_loglik_agq(data, theta, spec, 4));
}

TEST_CASE("serial and OpenMP kernels agree to the last bit") {
  const std::vector<bool> random{true, true, true};
  const Dataset data = oral_data(random, 30, 5);
  const auto spec = oral_spec(random);
  const ThetaVector theta = oral_theta(random);
  const BoundModel bm = bind_model(spec, data);
  for (int nodes : {1, 3}) {
    LikelihoodOptions opts;
    opts.nodes = nodes;
    std::vector<double> a(data.size()), b(data.size());
    kernels::subject_contributions_serial(bm, data, theta, opts, a);
    kernels::subject_contributions_omp(bm, data, theta, opts, b);
    CHECK(a == b);
    opts.exec = Exec::Serial;
    const double s = marginal_loglik(bm, data, theta, opts);
    opts.exec = Exec::Parallel;
    CHECK(marginal_loglik(bm, data, theta, opts) == s);
  }
}

TEST_CASE("warm-started modes reproduce the cold likelihood") {
  const std::vector<bool> random{true, true, true};
  const Dataset data = oral_data(random, 8, 13);
  const auto spec = oral_spec(random);
  ThetaVector theta = oral_theta(random);
  const BoundModel bm = bind_model(spec, data);
  ModeCache cache;
  LikelihoodOptions opts;
  opts.modes_out = &cache;
  marginal_loglik(bm, data, theta, opts);
  theta.beta(2) += 0.05;
  const double cold = marginal_loglik(bm, data, theta);
  LikelihoodOptions warm;
  warm.warm = &cache;
  CHECK(marginal_loglik(bm, data, theta, warm) == doctest::Approx(cold).epsilon(1e-12));
}

TEST_CASE("marginal gradient matches a Richardson-extrapolated difference") {
  const std::vector<bool> random{true, true, true};
  const Dataset data = oral_data(random, 10, 31);
  const auto spec = oral_spec(random);
  ThetaVector theta = oral_theta(random);
  theta.beta(0) += 0.2;
  theta.omega(2, 2) = 0.2;
  theta.a = 0.4;
  const BoundModel bm = bind_model(spec, data);
  const Eigen::VectorXd x = pack(theta, spec, bm.scaling);
  const Eigen::VectorXd g = marginal_gradient(data, theta, spec);
  auto f = [&](const Eigen::VectorXd& y) { return marginal_loglik(bm, data, unpack(y, spec, bm.scaling)); };
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    auto central = [&](double h) {
      Eigen::VectorXd p = x, m = x;
      p(k) += h;
      m(k) -= h;
      return (f(p) - f(m)) / (2 * h);
    };
    const double h = 1e-3 * (1 + std::abs(x(k)));
    const double rich = (4 * central(h / 2) - central(h)) / 3;
    CHECK(g(k) == doctest::Approx(rich).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("gradient along a parameter multiplied by a zero covariate is zero") {
  const std::vector<bool> random{true, false, true};
  const Dataset base = oral_data(random, 6, 2);
  std::vector<Subject> subjects = base.subjects();
  for (auto& s : subjects) s.covariates = {0.0};
  const Dataset data(base.regressor_names(), {"zero"}, subjects);
  ModelSpec spec = oral_spec(random);
  spec.covariates.terms[2] = {"zero"};
  ThetaVector theta = oral_theta(random);
  theta.beta = Eigen::Vector4d(theta.beta(0), theta.beta(1), theta.beta(2), 0.0);
  const Eigen::VectorXd g = marginal_gradient(data, theta, spec);
  CHECK(g(3) == 0.0);
}

TEST_CASE("gradient at the generating value is small against the curvature") {
  const std::vector<bool> random{true, true, true};
  const Dataset data = oral_data(random, 200, 77);
  const auto spec = oral_spec(random);
  const ThetaVector theta = oral_theta(random);
  const BoundModel bm = bind_model(spec, data);
  const Eigen::VectorXd x = pack(theta, spec, bm.scaling);
  const Eigen::VectorXd g = marginal_gradient(data, theta, spec);
  auto f = [&](const Eigen::VectorXd& y) { return marginal_loglik(bm, data, unpack(y, spec, bm.scaling)); };
  const double f0 = f(x);
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = 1e-3;
    Eigen::VectorXd p = x, m = x;
    p(k) += h;
    m(k) -= h;
    const double info = -(f(p) - 2 * f0 + f(m)) / (h * h);
    REQUIRE(info > 0.0);
    // score / sqrt(information) is approximately standard normal
    CHECK(std::abs(g(k)) < 5.0 * std::sqrt(info));
  }
}
