#pragma once

#include <vector>

namespace epsolver {

struct GaussRule {
    std::vector<double> nodes;    // on [-1, 1]
    std::vector<double> weights;
};

// Gauss-Legendre rule with n points (cached).
const GaussRule& gauss_legendre(int n);

}  // namespace epsolver
