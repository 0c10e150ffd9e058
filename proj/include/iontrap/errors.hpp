#pragma once

#include <stdexcept>
#include <string>

namespace iontrap {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed geometry/config/CSV document.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a domain invariant. Carries the name of the
/// offending entity (electrode, parameter) when there is one.
class ValidationError : public Error {
 public:
  ValidationError(std::string subject, const std::string& what)
      : Error(subject.empty() ? what : subject + ": " + what), subject_(std::move(subject)) {}
  const std::string& subject() const noexcept { return subject_; }

 private:
  std::string subject_;
};

/// Field evaluation outside the region where the basis is defined.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: singular system, non-convergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// The configuration does not produce a confining well.
class NotConfiningError : public Error {
 public:
  using Error::Error;
};

/// An inverse problem has no acceptable solution.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace iontrap
