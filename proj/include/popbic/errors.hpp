#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace popbic {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent user input; field() names the offending
// column or document key.
class InputError : public Error {
 public:
  InputError(std::string field, const std::string& what)
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class OffdiagWithoutDiag : public Error {
 public:
  OffdiagWithoutDiag(int k, int l)
      : Error("correlation requested between parameters " + std::to_string(k) + " and " +
              std::to_string(l) + " but at least one of them is not random"),
        k_(k),
        l_(l) {}
  int k() const noexcept { return k_; }
  int l() const noexcept { return l_; }

 private:
  int k_, l_;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class DegenerateEigenvalues : public DomainError {
 public:
  using DomainError::DomainError;
};

class NonFiniteLikelihood : public Error {
 public:
  NonFiniteLikelihood(std::string subject, std::size_t index)
      : Error("non-finite prediction for subject '" + subject + "' at observation " +
              std::to_string(index)),
        subject_(std::move(subject)),
        index_(index) {}
  const std::string& subject() const noexcept { return subject_; }
  std::size_t index() const noexcept { return index_; }

 private:
  std::string subject_;
  std::size_t index_;
};

class InnerNonConvergence : public Error {
 public:
  InnerNonConvergence(std::string subject, double grad_norm)
      : Error("empirical Bayes mode did not converge for subject '" + subject +
              "' (gradient norm " + std::to_string(grad_norm) + ")"),
        subject_(std::move(subject)) {}
  const std::string& subject() const noexcept { return subject_; }

 private:
  std::string subject_;
};

class GridTooLarge : public Error {
 public:
  using Error::Error;
};

class NonPositiveVariance : public Error {
 public:
  using Error::Error;
};

class TooManyStructures : public Error {
 public:
  using Error::Error;
};

class NonFiniteObjective : public Error {
 public:
  using Error::Error;
};

}  // namespace popbic
