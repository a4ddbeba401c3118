#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace epsolver {

struct PreconditionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct GridMismatch : std::invalid_argument {
    GridMismatch() : std::invalid_argument("field grids do not match") {}
};

struct InvertibilityLost : std::runtime_error {
    std::size_t node;
    double jacobian;
    InvertibilityLost(std::size_t n, double j)
        : std::runtime_error("flow map lost invertibility at node " + std::to_string(n) +
                             " (J = " + std::to_string(j) + ")"),
          node(n), jacobian(j) {}
};

struct OracleDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CompatibilityDefect : std::runtime_error {
    double shift;
    CompatibilityDefect(double c, const std::string& what) : std::runtime_error(what), shift(c) {}
};

struct SmoothingBrokeVacuum : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CoercivityViolation : std::runtime_error {
    std::size_t node;
    double eigenvalue;
    CoercivityViolation(std::size_t n, double e)
        : std::runtime_error("coefficient matrix below coercivity floor at node " + std::to_string(n) +
                             " (min eigenvalue " + std::to_string(e) + ")"),
          node(n), eigenvalue(e) {}
};

struct MassMatrixDegenerate : std::runtime_error {
    std::size_t mode;
    double diagonal;
    MassMatrixDegenerate(std::size_t m, double d)
        : std::runtime_error("mass matrix degenerate at mode " + std::to_string(m) +
                             " (diagonal " + std::to_string(d) + ")"),
          mode(m), diagonal(d) {}
};

// Wraps a sub-solver failure with the stage where it happened.
struct StageError : std::runtime_error {
    std::string stage;
    StageError(const std::string& s, const std::string& what)
        : std::runtime_error(s + ": " + what), stage(s) {}
};

}  // namespace epsolver
