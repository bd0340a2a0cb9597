#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace mrbm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// A point is stored as its chart coordinate vector; a tangent vector uses the
/// same storage length as the point it is based at (ambient coordinates for
/// spheres, chart coordinates for flat factors).
using Point = Vector;
using Tangent = Vector;

/// Caller broke a documented precondition (bad dimension, non-unit normal, ...).
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

/// Invalid configuration value or malformed config/schema input.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Operation not defined for the given manifold/constraint combination.
class UnsupportedOperation : public std::runtime_error {
 public:
  explicit UnsupportedOperation(const std::string& what) : std::runtime_error(what) {}
};

/// A sampler exceeded its retry budget without making progress.
class StuckChainError : public std::runtime_error {
 public:
  StuckChainError(const std::string& what, long tries)
      : std::runtime_error(what + " (tries=" + std::to_string(tries) + ")"), tries_(tries) {}
  long tries() const { return tries_; }

 private:
  long tries_;
};

/// The reflected step exceeded its reflection budget within one step.
class ReflectionBudgetError : public std::runtime_error {
 public:
  ReflectionBudgetError(const std::string& what, long count)
      : std::runtime_error(what + " (reflections=" + std::to_string(count) + ")"), count_(count) {}
  long count() const { return count_; }

 private:
  long count_;
};

/// A numerical routine diverged or failed to meet its target.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Membership query landed within tolerance of a constraint boundary where the
/// inside/outside decision is not well defined.
class BoundaryAmbiguous : public std::runtime_error {
 public:
  explicit BoundaryAmbiguous(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mrbm
