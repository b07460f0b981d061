#pragma once

// Closed-form structural models (mean functions) and the residual error model.
//
// Every built-in model is written once as a template over the scalar type so
// the same code yields plain values and exact second-order derivatives (Jet).

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "popbic/errors.hpp"
#include "popbic/jet.hpp"

namespace popbic {

// ---------------------------------------------------------------------------
// One-compartment model, zero-order infusion of `dose` over `tinf` from `tD`.

template <class T>
T onecpt_infusion(double dose, double t, double tD, double tinf, const T& k, const T& V) {
  using std::exp;
  using std::expm1;
  if (!(tinf > 0.0) || !(value_of(k) > 0.0) || !(value_of(V) > 0.0) || !(t >= tD))
    throw DomainError("onecpt_infusion: requires tinf > 0, k > 0, V > 0, t >= tD");
  const double tau = t - tD;
  const T scale = T(dose / tinf) / (k * V);
  if (tau <= tinf) return scale * (-expm1(-(k * T(tau))));
  return scale * (-expm1(-(k * T(tinf)))) * exp(-(k * T(tau - tinf)));
}

// ---------------------------------------------------------------------------
// Two-compartment model with the same infusion input.

template <class T>
struct TwoCptRates {
  T alpha, beta, A, B;
};

template <class T>
TwoCptRates<T> twocpt_rates(const T& Q, const T& Cl, const T& V1, const T& V2) {
  using std::sqrt;
  if (!(value_of(Q) > 0.0) || !(value_of(Cl) > 0.0) || !(value_of(V1) > 0.0) ||
      !(value_of(V2) > 0.0))
    throw DomainError("twocpt: requires Q, Cl, V1, V2 > 0");
  const T q1 = Q / V1;
  const T q2 = Q / V2;
  const T c1 = Cl / V1;
  const T sum = q1 + q2 + c1;
  const T disc = sum * sum - T(4.0) * q2 * c1;
  if (!(value_of(disc) > 1e-12 * value_of(sum) * value_of(sum)))
    throw DegenerateEigenvalues("twocpt: distribution and elimination phases are not distinct");
  TwoCptRates<T> r;
  r.beta = T(0.5) * (sum - sqrt(disc));
  r.alpha = (Q * Cl) / (V1 * V2 * r.beta);
  r.A = (r.alpha - q2) / (V1 * (r.alpha - r.beta));
  r.B = (r.beta - q2) / (V1 * (r.beta - r.alpha));
  return r;
}

template <class T>
T twocpt_infusion(double dose, double t, double tD, double tinf, const T& Q, const T& Cl,
                  const T& V1, const T& V2) {
  using std::exp;
  using std::expm1;
  if (!(tinf > 0.0) || !(t >= tD))
    throw DomainError("twocpt_infusion: requires tinf > 0 and t >= tD");
  const auto r = twocpt_rates(Q, Cl, V1, V2);
  const double tau = t - tD;
  const T rate = T(dose / tinf);
  if (tau <= tinf) {
    return rate * (r.A / r.alpha * (-expm1(-(r.alpha * T(tau)))) +
                   r.B / r.beta * (-expm1(-(r.beta * T(tau)))));
  }
  const T post = T(tau - tinf);
  return rate * (r.A / r.alpha * (-expm1(-(r.alpha * T(tinf)))) * exp(-(r.alpha * post)) +
                 r.B / r.beta * (-expm1(-(r.beta * T(tinf)))) * exp(-(r.beta * post)));
}

// ---------------------------------------------------------------------------
// One-compartment model with first-order absorption of a single oral dose.

inline constexpr double kOralLimitThreshold = 1e-8;

template <class T>
T onecpt_oral(double dose, double t, const T& ka, const T& k, const T& V) {
  using std::exp;
  using std::fabs;
  if (!(value_of(ka) > 0.0) || !(value_of(k) > 0.0) || !(value_of(V) > 0.0) || !(t >= 0.0))
    throw DomainError("onecpt_oral: requires ka, k, V > 0 and t >= 0");
  const T diff = ka - k;
  const double scale = std::max(value_of(ka), value_of(k));
  if (std::fabs(value_of(diff)) < kOralLimitThreshold * scale) {
    // (e^{-kt} - e^{-ka t}) / (ka - k) expanded to second order in ka - k;
    // at ka == k this is the limit t e^{-kt}.
    const T dt = diff * T(t);
    return T(dose) * ka / V * exp(-(k * T(t))) * T(t) *
           (T(1.0) - dt * T(0.5) + dt * dt * T(1.0 / 6.0));
  }
  return T(dose) * ka / (V * diff) * (exp(-(k * T(t))) - exp(-(ka * T(t))));
}

// ---------------------------------------------------------------------------
// Residual error model: y = C + sd(C) * eps.

enum class ErrorKind { Additive, Proportional, Combined };

struct ErrorModelSpec {
  ErrorKind kind = ErrorKind::Additive;
  double a = 0.0;
  double b = 0.0;

  int free_count() const { return kind == ErrorKind::Combined ? 2 : 1; }
  bool uses_a() const { return kind != ErrorKind::Proportional; }
  bool uses_b() const { return kind != ErrorKind::Additive; }
};

inline constexpr double kErrorSdFloor = 1e-10;

// Unfloored standard deviation; the simulator uses this directly.
template <class T>
T raw_error_sd(const ErrorModelSpec& e, const T& c) {
  using std::abs;
  switch (e.kind) {
    case ErrorKind::Additive:
      return T(e.a);
    case ErrorKind::Proportional:
      return T(e.b) * abs(c);
    case ErrorKind::Combined:
      return T(e.a) + T(e.b) * c;
  }
  return T(e.a);
}

template <class T>
T error_sd(const ErrorModelSpec& e, const T& c) {
  T sd = raw_error_sd(e, c);
  if (!(value_of(sd) > kErrorSdFloor)) return T(kErrorSdFloor);
  return sd;
}

const char* error_kind_name(ErrorKind kind);
ErrorKind parse_error_kind(const std::string& name);

// ---------------------------------------------------------------------------
// Registry.

using ModelEval =
    std::function<double(double t, std::span<const double> regressors, std::span<const double> phi)>;
using ModelEvalJet =
    std::function<Jet(double t, std::span<const double> regressors, std::span<const Jet> phi)>;

struct StructuralModel {
  std::string name;
  std::vector<std::string> parameters;  // natural-scale parameter names, arity = size()
  std::vector<std::string> regressors;  // dataset columns the model reads, in order
  ModelEval eval;
  // Optional. When absent, derivatives are taken by central differences of `eval`.
  ModelEvalJet eval_jet;

  std::size_t arity() const { return parameters.size(); }
  Jet evaluate(double t, std::span<const double> regressors, std::span<const Jet> phi) const;
};

// Wraps a functor with a templated call operator
//   template <class T> T operator()(double t, std::span<const double> reg, std::span<const T> phi)
// into a StructuralModel with exact derivatives.
template <class F>
StructuralModel make_structural_model(std::string name, std::vector<std::string> parameters,
                                      std::vector<std::string> regressors, F f) {
  StructuralModel m;
  m.name = std::move(name);
  m.parameters = std::move(parameters);
  m.regressors = std::move(regressors);
  m.eval = [f](double t, std::span<const double> reg, std::span<const double> phi) {
    return f.template operator()<double>(t, reg, phi);
  };
  m.eval_jet = [f](double t, std::span<const double> reg, std::span<const Jet> phi) {
    return f.template operator()<Jet>(t, reg, phi);
  };
  return m;
}

void register_structural_model(StructuralModel model);
// Throws InputError naming `structural` for unknown identifiers.
const StructuralModel& structural_model(const std::string& name);
std::vector<std::string> structural_model_names();

}  // namespace popbic
