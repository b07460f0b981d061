#pragma once

// Penalized likelihood criteria. BIC_h, BIC_V and BIC_joint split the penalty
// between log N (parameters tied to random components) and log n_tot.

#include <array>
#include <cstddef>
#include <string>

#include "popbic/model.hpp"

namespace popbic {

struct FitResult;

enum class CriterionKind { BIC_h, BIC_V, BIC_joint, AIC, BIC_N, BIC_ntot };

inline constexpr std::array<CriterionKind, 6> kAllCriteria = {
    CriterionKind::BIC_h, CriterionKind::BIC_V, CriterionKind::BIC_joint,
    CriterionKind::AIC,   CriterionKind::BIC_N, CriterionKind::BIC_ntot};

struct CriterionValue {
  CriterionKind kind = CriterionKind::BIC_joint;
  double value = 0.0;  // -2 loglik + penalty
  double penalty = 0.0;
  ThetaDims dims_used;
};

// Natural logarithms throughout.
double criterion_penalty(CriterionKind kind, const ThetaDims& dims, std::size_t N,
                         std::size_t n_total);
CriterionValue criterion(double loglik, const ThetaDims& dims, std::size_t N, std::size_t n_total,
                         CriterionKind kind);
CriterionValue criterion(const FitResult& fit, CriterionKind kind);

// bic_h, bic_v, bic_joint, aic, bic_n, bic_ntot
const char* criterion_name(CriterionKind kind);
CriterionKind parse_criterion(const std::string& name);

}  // namespace popbic
