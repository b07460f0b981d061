#include "popbic/criteria.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "popbic/errors.hpp"
#include "popbic/estimation.hpp"

namespace popbic {

double criterion_penalty(CriterionKind kind, const ThetaDims& dims, std::size_t N,
                         std::size_t n_total) {
  const double logN = std::log(static_cast<double>(N));
  const double logn = std::log(static_cast<double>(n_total));
  const auto total = static_cast<double>(dims.total());
  switch (kind) {
    case CriterionKind::BIC_h:
      return static_cast<double>(dims.beta_R) * logN +
             static_cast<double>(dims.beta_F + dims.error) * logn;
    case CriterionKind::BIC_V:
      return static_cast<double>(dims.vec_omega) * logN;
    case CriterionKind::BIC_joint:
      return static_cast<double>(dims.theta_R()) * logN +
             static_cast<double>(dims.theta_F()) * logn;
    case CriterionKind::AIC:
      return 2.0 * total;
    case CriterionKind::BIC_N:
      return total * logN;
    case CriterionKind::BIC_ntot:
      return total * logn;
  }
  return 0.0;
}

CriterionValue criterion(double loglik, const ThetaDims& dims, std::size_t N, std::size_t n_total,
                         CriterionKind kind) {
  CriterionValue v;
  v.kind = kind;
  v.penalty = criterion_penalty(kind, dims, N, n_total);
  v.value = -2.0 * loglik + v.penalty;
  v.dims_used = dims;
  return v;
}

CriterionValue criterion(const FitResult& fit, CriterionKind kind) {
  return criterion(fit.loglik, fit.dims, fit.N, fit.n_total, kind);
}

const char* criterion_name(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::BIC_h:
      return "bic_h";
    case CriterionKind::BIC_V:
      return "bic_v";
    case CriterionKind::BIC_joint:
      return "bic_joint";
    case CriterionKind::AIC:
      return "aic";
    case CriterionKind::BIC_N:
      return "bic_n";
    case CriterionKind::BIC_ntot:
      return "bic_ntot";
  }
  return "bic_joint";
}

CriterionKind parse_criterion(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (auto k : kAllCriteria)
    if (lower == criterion_name(k)) return k;
  throw InputError("criterion", "unknown criterion '" + name +
                                    "' (expected bic_h, bic_v, bic_joint, aic, bic_n or bic_ntot)");
}

}  // namespace popbic
