#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nclt {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input: shape mismatch, broken invariant, malformed config.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Matrix is singular (or too close to it) for the requested operation.
class SingularError : public Error {
public:
    SingularError(const std::string& what, double offending_eigenvalue)
        : Error(what), eigenvalue(offending_eigenvalue) {}
    double eigenvalue;
};

// Operation not supported for this input class (e.g. exact probability
// of a body family that has no closed form).
class CapabilityError : public Error {
public:
    using Error::Error;
};

// Iterative solver failed to reach its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> last_iterate,
                     double residual_norm, int iterations)
        : Error(what), iterate(std::move(last_iterate)), residual(residual_norm),
          iters(iterations) {}
    std::vector<double> iterate;
    double residual;
    int iters;
};

// A simulated trajectory produced a non-finite value.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long step_index)
        : Error(what), step(step_index) {}
    long step;
};

}  // namespace nclt
