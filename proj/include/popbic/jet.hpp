#pragma once

// Second-order forward-mode derivatives over at most kJetVars variables.
// A Jet carries a value together with its gradient and Hessian with respect
// to the seeded variables; arithmetic propagates all three exactly.

#include <array>
#include <cmath>

namespace popbic {

inline constexpr int kJetVars = 4;

struct Jet {
  double v = 0.0;
  std::array<double, kJetVars> g{};
  std::array<double, kJetVars * kJetVars> h{};

  Jet() = default;
  Jet(double value) : v(value) {}  // NOLINT: constants promote implicitly

  static Jet variable(double value, int index) {
    Jet j(value);
    j.g[index] = 1.0;
    return j;
  }

  double hess(int r, int c) const { return h[r * kJetVars + c]; }
};

inline double value_of(double x) { return x; }
inline double value_of(const Jet& x) { return x.v; }

// f(a) given f, f', f'' at a.v
inline Jet chain(const Jet& a, double f, double f1, double f2) {
  Jet r(f);
  for (int i = 0; i < kJetVars; ++i) r.g[i] = f1 * a.g[i];
  for (int i = 0; i < kJetVars; ++i)
    for (int j = 0; j < kJetVars; ++j)
      r.h[i * kJetVars + j] = f1 * a.h[i * kJetVars + j] + f2 * a.g[i] * a.g[j];
  return r;
}

inline Jet operator-(const Jet& a) {
  Jet r(-a.v);
  for (int i = 0; i < kJetVars; ++i) r.g[i] = -a.g[i];
  for (int i = 0; i < kJetVars * kJetVars; ++i) r.h[i] = -a.h[i];
  return r;
}

inline Jet operator+(const Jet& a, const Jet& b) {
  Jet r(a.v + b.v);
  for (int i = 0; i < kJetVars; ++i) r.g[i] = a.g[i] + b.g[i];
  for (int i = 0; i < kJetVars * kJetVars; ++i) r.h[i] = a.h[i] + b.h[i];
  return r;
}

inline Jet operator-(const Jet& a, const Jet& b) {
  Jet r(a.v - b.v);
  for (int i = 0; i < kJetVars; ++i) r.g[i] = a.g[i] - b.g[i];
  for (int i = 0; i < kJetVars * kJetVars; ++i) r.h[i] = a.h[i] - b.h[i];
  return r;
}

inline Jet operator*(const Jet& a, const Jet& b) {
  Jet r(a.v * b.v);
  for (int i = 0; i < kJetVars; ++i) r.g[i] = a.v * b.g[i] + b.v * a.g[i];
  for (int i = 0; i < kJetVars; ++i)
    for (int j = 0; j < kJetVars; ++j) {
      const int ij = i * kJetVars + j;
      r.h[ij] = a.v * b.h[ij] + b.v * a.h[ij] + a.g[i] * b.g[j] + b.g[i] * a.g[j];
    }
  return r;
}

inline Jet reciprocal(const Jet& a) {
  const double inv = 1.0 / a.v;
  return chain(a, inv, -inv * inv, 2.0 * inv * inv * inv);
}

inline Jet operator/(const Jet& a, const Jet& b) {
  return a * reciprocal(b);
}

inline Jet& operator+=(Jet& a, const Jet& b) { return a = a + b; }
inline Jet& operator-=(Jet& a, const Jet& b) { return a = a - b; }
inline Jet& operator*=(Jet& a, const Jet& b) { return a = a * b; }

inline Jet exp(const Jet& a) {
  const double e = std::exp(a.v);
  return chain(a, e, e, e);
}

inline Jet expm1(const Jet& a) {
  const double e = std::exp(a.v);
  return chain(a, std::expm1(a.v), e, e);
}

inline Jet log(const Jet& a) {
  return chain(a, std::log(a.v), 1.0 / a.v, -1.0 / (a.v * a.v));
}

inline Jet sqrt(const Jet& a) {
  const double s = std::sqrt(a.v);
  return chain(a, s, 0.5 / s, -0.25 / (s * a.v));
}

inline Jet abs(const Jet& a) {
  return a.v < 0.0 ? -a : a;
}

}  // namespace popbic
