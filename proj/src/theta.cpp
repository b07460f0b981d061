#include "popbic/theta.hpp"

#include <cmath>

#include "popbic/errors.hpp"

namespace popbic {

BetaLayout beta_layout(const CovariateMap& map) {
  BetaLayout layout;
  for (const auto& terms : map.terms) {
    layout.offset.push_back(layout.size);
    layout.size += 1 + static_cast<int>(terms.size());
  }
  return layout;
}

CovariateScaling CovariateScaling::from_dataset(const Dataset& data) {
  CovariateScaling s;
  s.names = data.covariate_names();
  const double n = static_cast<double>(data.size());
  for (std::size_t c = 0; c < s.names.size(); ++c) {
    double mean = 0.0;
    for (const auto& subj : data.subjects()) mean += subj.covariates[c];
    mean /= n;
    double var = 0.0;
    for (const auto& subj : data.subjects()) {
      const double dev = subj.covariates[c] - mean;
      var += dev * dev;
    }
    const double sd = std::sqrt(var / n);
    s.center.push_back(mean);
    s.scale.push_back(sd > 0.0 && std::isfinite(sd) ? sd : 1.0);
  }
  return s;
}

std::pair<double, double> CovariateScaling::lookup(const std::string& name) const {
  for (std::size_t c = 0; c < names.size(); ++c)
    if (names[c] == name) return {center[c], scale[c]};
  return {0.0, 1.0};
}

std::size_t packed_size(const ModelSpec& spec) { return theta_dims(spec).total(); }

void check_theta(const ThetaVector& theta, const ModelSpec& spec) {
  const auto layout = beta_layout(spec.covariates);
  if (theta.beta.size() != layout.size)
    throw InputError("beta", "beta has " + std::to_string(theta.beta.size()) +
                                 " entries, model needs " + std::to_string(layout.size));
  const auto& pattern = spec.pattern.get();
  const auto random = pattern.random_indices();
  const auto dR = static_cast<Eigen::Index>(random.size());
  if (theta.omega.rows() != dR || theta.omega.cols() != dR)
    throw InputError("omega", "omega must be " + std::to_string(dR) + "x" + std::to_string(dR));
  for (Eigen::Index i = 0; i < dR; ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      const double scale = std::sqrt(std::abs(theta.omega(i, i) * theta.omega(j, j)));
      if (!pattern.correlated(random[i], random[j]) &&
          std::abs(theta.omega(i, j)) > 1e-12 * std::max(scale, 1e-300))
        throw InputError("omega", "omega has a covariance the pattern does not allow");
    }
}

namespace {

double to_log(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw NonPositiveVariance(std::string(what) + " must be strictly positive");
  return std::log(v);
}

}  // namespace

Eigen::VectorXd pack(const ThetaVector& theta, const ModelSpec& spec,
                     const CovariateScaling& scaling) {
  check_theta(theta, spec);
  Eigen::VectorXd x(static_cast<Eigen::Index>(packed_size(spec)));
  Eigen::Index pos = 0;

  const auto layout = beta_layout(spec.covariates);
  for (std::size_t k = 0; k < spec.d(); ++k) {
    const auto& terms = spec.covariates.terms[k];
    const int off = layout.offset[k];
    double intercept = theta.beta(off);
    for (std::size_t c = 0; c < terms.size(); ++c) {
      const auto [center, scale] = scaling.lookup(terms[c]);
      intercept += theta.beta(off + 1 + c) * center;
    }
    x(pos++) = intercept;
    for (std::size_t c = 0; c < terms.size(); ++c) {
      const auto [center, scale] = scaling.lookup(terms[c]);
      x(pos++) = theta.beta(off + 1 + c) * scale;
    }
  }

  const auto& pattern = spec.pattern.get();
  const auto random = pattern.random_indices();
  const auto dR = static_cast<Eigen::Index>(random.size());
  if (dR > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(theta.omega);
    if (llt.info() != Eigen::Success)
      throw NonPositiveVariance("omega is not positive definite");
    const Eigen::MatrixXd L = llt.matrixL();
    for (Eigen::Index i = 0; i < dR; ++i) {
      for (Eigen::Index j = 0; j < i; ++j)
        if (pattern.correlated(random[i], random[j])) x(pos++) = L(i, j);
      x(pos++) = to_log(L(i, i), "omega variance");
    }
  }

  if (spec.error.uses_a()) x(pos++) = to_log(theta.a, "error parameter a");
  if (spec.error.uses_b()) x(pos++) = to_log(theta.b, "error parameter b");
  return x;
}

ThetaVector unpack(const Eigen::VectorXd& x, const ModelSpec& spec,
                   const CovariateScaling& scaling) {
  if (static_cast<std::size_t>(x.size()) != packed_size(spec))
    throw InputError("theta", "packed vector has the wrong length");
  ThetaVector theta;
  Eigen::Index pos = 0;

  const auto layout = beta_layout(spec.covariates);
  theta.beta.resize(layout.size);
  for (std::size_t k = 0; k < spec.d(); ++k) {
    const auto& terms = spec.covariates.terms[k];
    const int off = layout.offset[k];
    double intercept = x(pos++);
    for (std::size_t c = 0; c < terms.size(); ++c) {
      const auto [center, scale] = scaling.lookup(terms[c]);
      const double coef = x(pos++) / scale;
      theta.beta(off + 1 + c) = coef;
      intercept -= coef * center;
    }
    theta.beta(off) = intercept;
  }

  const auto& pattern = spec.pattern.get();
  const auto random = pattern.random_indices();
  const auto dR = static_cast<Eigen::Index>(random.size());
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(dR, dR);
  for (Eigen::Index i = 0; i < dR; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      if (pattern.correlated(random[i], random[j])) {
        L(i, j) = x(pos++);
      } else {
        // forces (L L')(i, j) = 0
        double acc = 0.0;
        for (Eigen::Index m = 0; m < j; ++m) acc += L(i, m) * L(j, m);
        L(i, j) = -acc / L(j, j);
      }
    }
    L(i, i) = std::exp(x(pos++));
  }
  theta.omega = L * L.transpose();
  for (Eigen::Index i = 0; i < dR; ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      if (!pattern.correlated(random[i], random[j])) {
        theta.omega(i, j) = theta.omega(j, i) = 0.0;
      } else {
        theta.omega(j, i) = theta.omega(i, j);
      }
    }

  if (spec.error.uses_a()) theta.a = std::exp(x(pos++));
  if (spec.error.uses_b()) theta.b = std::exp(x(pos++));
  return theta;
}

}  // namespace popbic
