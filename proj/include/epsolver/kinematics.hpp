#pragma once

#include <array>
#include <cstdint>

#include "epsolver/grid.hpp"

namespace epsolver {

using Mat3 = std::array<double, 9>;  // row-major
constexpr Mat3 identity3{1, 0, 0, 0, 1, 0, 0, 0, 1};

// eta(x) = linear * x + displacement(x); the displacement is periodic in
// directions 1,2 so it can be differentiated spectrally.
struct FlowMap {
    Mat3 linear = identity3;
    VectorField displacement;

    FlowMap() = default;
    explicit FlowMap(const SlabGrid& g) : displacement(g) {}
    FlowMap(const Mat3& a, VectorField d) : linear(a), displacement(std::move(d)) {}

    const SlabGrid& grid() const { return displacement.grid; }
    std::array<double, 3> at(std::size_t node) const;
    VectorField positions() const;
    std::uint64_t checksum() const;
};

FlowMap identity_map(const SlabGrid& g);
// Splits absolute positions into linear part and periodic displacement.
FlowMap flow_from_positions(const VectorField& positions, const Mat3& linear = identity3);

// F(i,k) = d eta^i / d x_k stored as 3*i+k.
// Finv(k,i) and Fstar(k,i) = J Finv(k,i) stored as 3*k+i (ordinary matrix layout).
struct DeformationPack {
    TensorField F;
    ScalarField J;
    TensorField Finv;
    TensorField Fstar;
    std::uint64_t source_checksum = 0;
};

DeformationPack build_deformation(const FlowMap& eta);

// d_k Fstar(k,i) for each i.
VectorField piola_residual(const DeformationPack& pack);

// (k,j) entry = D_{eta^j} U^k.
TensorField eulerian_gradient(const VectorField& u, const DeformationPack& pack);
ScalarField div_eta(const VectorField& u, const DeformationPack& pack);
VectorField curl_eta(const VectorField& u, const DeformationPack& pack);
// (i,j) entry = D_{eta^j} U^i - D_{eta^i} U^j.
TensorField curlmat_eta(const VectorField& u, const DeformationPack& pack);

// dJ/dt = Fstar(s,r) v^r_,s
ScalarField jacobian_rate(const VectorField& v, const DeformationPack& pack);
// d Finv(k,i)/dt = -Finv(k,r) v^r_,s Finv(s,i), stored as 3*k+i.
TensorField finv_rate(const VectorField& v, const DeformationPack& pack);
// d Fstar(k,i)/dt.
TensorField fstar_rate(const VectorField& v, const DeformationPack& pack);

// d/dt (Finv(k,i) / J), assembled directly from the rates of J and Finv.
TensorField ddt_finv_over_j(const VectorField& v, const DeformationPack& pack);

struct FinvRateParts {
    TensorField grad_part;
    TensorField div_part;
    TensorField curl_part;
    TensorField total() const { return grad_part + div_part + curl_part; }
};
FinvRateParts ddt_identity_decompose(const VectorField& v, const DeformationPack& pack);

}  // namespace epsolver
