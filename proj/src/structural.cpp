#include "popbic/structural.hpp"

#include <algorithm>
#include <map>
#include <mutex>

namespace popbic {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Additive:
      return "additive";
    case ErrorKind::Proportional:
      return "proportional";
    case ErrorKind::Combined:
      return "combined";
  }
  return "additive";
}

ErrorKind parse_error_kind(const std::string& name) {
  if (name == "additive") return ErrorKind::Additive;
  if (name == "proportional") return ErrorKind::Proportional;
  if (name == "combined") return ErrorKind::Combined;
  throw InputError("error.kind", "unknown error model kind '" + name + "'");
}

namespace {

// Value, gradient and Hessian of `eval` in phi by central differences,
// then composed with the jets of phi.
Jet finite_difference_jet(const ModelEval& eval, double t, std::span<const double> reg,
                          std::span<const Jet> phi) {
  const std::size_t p = phi.size();
  std::vector<double> x(p);
  for (std::size_t k = 0; k < p; ++k) x[k] = phi[k].v;
  const double f0 = eval(t, reg, x);
  std::vector<double> grad(p), hess(p * p), step(p);
  for (std::size_t k = 0; k < p; ++k) step[k] = 1e-4 * std::max(1.0, std::fabs(x[k]));

  auto at = [&](std::size_t i, double di, std::size_t j, double dj) {
    auto y = x;
    y[i] += di;
    y[j] += dj;
    return eval(t, reg, y);
  };
  for (std::size_t k = 0; k < p; ++k) {
    const double h = step[k];
    const double fp = at(k, h, k, 0.0), fm = at(k, -h, k, 0.0);
    grad[k] = (fp - fm) / (2.0 * h);
    hess[k * p + k] = (fp - 2.0 * f0 + fm) / (h * h);
    for (std::size_t l = 0; l < k; ++l) {
      const double hl = step[l];
      const double v = (at(k, h, l, hl) - at(k, h, l, -hl) - at(k, -h, l, hl) + at(k, -h, l, -hl)) /
                       (4.0 * h * hl);
      hess[k * p + l] = hess[l * p + k] = v;
    }
  }

  Jet r(f0);
  for (std::size_t k = 0; k < p; ++k) {
    for (int i = 0; i < kJetVars; ++i) r.g[i] += grad[k] * phi[k].g[i];
    for (int i = 0; i < kJetVars * kJetVars; ++i) r.h[i] += grad[k] * phi[k].h[i];
    for (std::size_t l = 0; l < p; ++l) {
      const double c = hess[k * p + l];
      if (c == 0.0) continue;
      for (int i = 0; i < kJetVars; ++i)
        for (int j = 0; j < kJetVars; ++j) r.h[i * kJetVars + j] += c * phi[k].g[i] * phi[l].g[j];
    }
  }
  return r;
}

struct OneCptInfusion {
  template <class T>
  T operator()(double t, std::span<const double> reg, std::span<const T> phi) const {
    return onecpt_infusion<T>(reg[0], t, reg[2], reg[1], phi[0], phi[1]);
  }
};

struct TwoCptInfusion {
  template <class T>
  T operator()(double t, std::span<const double> reg, std::span<const T> phi) const {
    return twocpt_infusion<T>(reg[0], t, reg[2], reg[1], phi[0], phi[1], phi[2], phi[3]);
  }
};

struct OneCptOral {
  template <class T>
  T operator()(double t, std::span<const double> reg, std::span<const T> phi) const {
    return onecpt_oral<T>(reg[0], t, phi[0], phi[1], phi[2]);
  }
};

// Polynomial in time whose coefficients are the parameters; linear in phi.
struct TimePolynomial {
  template <class T>
  T operator()(double t, std::span<const double>, std::span<const T> phi) const {
    T acc = phi[phi.size() - 1];
    for (std::size_t k = phi.size() - 1; k-- > 0;) acc = acc * T(t) + phi[k];
    return acc;
  }
};

struct Registry {
  std::mutex mutex;
  std::map<std::string, StructuralModel> models;

  Registry() {
    add(make_structural_model("onecpt_infusion", {"k", "V"}, {"dose", "tinf", "tD"},
                              OneCptInfusion{}));
    add(make_structural_model("twocpt_infusion", {"Q", "Cl", "V1", "V2"}, {"dose", "tinf", "tD"},
                              TwoCptInfusion{}));
    add(make_structural_model("onecpt_oral", {"ka", "k", "V"}, {"dose"}, OneCptOral{}));
    add(make_structural_model("poly1", {"b0"}, {}, TimePolynomial{}));
    add(make_structural_model("poly2", {"b0", "b1"}, {}, TimePolynomial{}));
    add(make_structural_model("poly3", {"b0", "b1", "b2"}, {}, TimePolynomial{}));
  }

  void add(StructuralModel m) {
    const auto name = m.name;
    models.insert_or_assign(name, std::move(m));
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

Jet StructuralModel::evaluate(double t, std::span<const double> reg,
                              std::span<const Jet> phi) const {
  if (eval_jet) return eval_jet(t, reg, phi);
  return finite_difference_jet(eval, t, reg, phi);
}

void register_structural_model(StructuralModel model) {
  if (model.name.empty() || !model.eval)
    throw InputError("structural", "structural model needs a name and an evaluator");
  if (model.parameters.empty() || model.parameters.size() > static_cast<std::size_t>(kJetVars))
    throw InputError("structural", "structural model arity must be between 1 and 4");
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.add(std::move(model));
}

const StructuralModel& structural_model(const std::string& name) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  auto it = r.models.find(name);
  if (it == r.models.end())
    throw InputError("structural", "unknown structural model '" + name + "'");
  return it->second;
}

std::vector<std::string> structural_model_names() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [name, _] : r.models) names.push_back(name);
  return names;
}

}  // namespace popbic
