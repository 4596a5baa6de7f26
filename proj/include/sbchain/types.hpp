#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sbchain {

using cplx = std::complex<double>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

inline constexpr double pi = 3.14159265358979323846;

// Error hierarchy. The CLI maps ConfigError -> 2, ConvergenceError (and
// subclasses) -> 3, ResourceError -> 4.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the domain of a function, or mismatched dimensions.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure did not reach its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double achieved)
        : Error(what + " (achieved " + std::to_string(achieved) + ")"), achieved_(achieved) {}
    double achieved() const noexcept { return achieved_; }

private:
    double achieved_;
};

/// Local Krylov exponential did not converge within the subspace budget.
class IntegratorError : public ConvergenceError {
public:
    using ConvergenceError::ConvergenceError;
};

/// Phase-space grid too small or too coarse for the reconstructed state.
class GridConvergenceError : public ConvergenceError {
public:
    using ConvergenceError::ConvergenceError;
};

/// Postselection onto a branch with vanishing probability.
class NullBranchError : public Error {
public:
    using Error::Error;
};

/// Leading natural orbital requested for a (numerically) zero one-body matrix.
class DegenerateOrbitalError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Pre-flight memory estimate exceeds the configured ceiling.
class ResourceError : public Error {
public:
    using Error::Error;
};

}  // namespace sbchain
