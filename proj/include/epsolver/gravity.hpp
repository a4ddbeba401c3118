#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "epsolver/grid.hpp"
#include "epsolver/kinematics.hpp"

namespace epsolver {

enum class SelfCellRule { polar_subgrid, analytic_cell };

SelfCellRule parse_selfcell_rule(const std::string& s);
std::string to_string(SelfCellRule r);

struct GravityConfig {
    double kernel_constant = 0.07957747154594767;  // 1/(4 pi)
    int image_layers = 8;
    SelfCellRule selfcell_rule = SelfCellRule::polar_subgrid;
    bool enabled = true;
    bool tail_correction = true;
};

struct ForceReport {
    // Vertical extent of the body divided by the half-width of the image square.
    double extent_ratio = 0.0;
    bool layers_warning = false;
    bool plane_symmetric = false;
};

// Integral of 1/sqrt(y1^2 + y2^2 + d^2) over [ax,bx] x [ay,by].
double rect_potential(double ax, double bx, double ay, double by, double d);
// Integral of 1/|r| over an axis-aligned box.
double box_potential(const std::array<double, 3>& lo, const std::array<double, 3>& hi);
// Integral of 1/|F r| over the box [lo, hi] (which contains the origin) by the selected rule.
double selfcell_integral(const Mat3& F, const std::array<double, 3>& lo, const std::array<double, 3>& hi,
                         SelfCellRule rule);
// Integral of (F r).(A r) / |F r|^3 over the box.
double selfcell_rate_integral(const Mat3& F, const Mat3& A, const std::array<double, 3>& lo,
                              const std::array<double, 3>& hi);

// Periodised kernel on the unit tangential lattice. With the tail on:
//   K(D) = sum_{|j| <= M} 1/|D + j| - Q_A(D) - 2 pi |d|,
// Q_A the integral of 1/r over the image square of half-width M + 1/2 centred at D.
// With the tail off the constant Q_A(0) is subtracted instead.
// Tangential separations are reduced to [-1/2, 1/2] first.
class PeriodicKernel {
public:
    PeriodicKernel(int layers, bool tail, double max_vertical);
    double value(const std::array<double, 3>& d) const;
    // Kernel minus the direct 1/|D| term.
    double regular_value(const std::array<double, 3>& d) const;
    // Gradient of the full kernel with respect to the separation.
    std::array<double, 3> gradient(const std::array<double, 3>& d) const;
    std::array<double, 3> regular_gradient(const std::array<double, 3>& d) const;
    // Direct evaluation, no tables.
    static double exact(const std::array<double, 3>& d, int layers, bool tail);
    int layers() const { return layers_; }

private:
    double smooth_direct(double x, double y, double z) const;
    bool in_table(double z) const;
    double table_eval(double x, double y, double z, double* grad) const;
    int layers_;
    bool tail_;
    double monopole_;
    double step_;
    int nh_, nv_;
    double zmax_;
    std::vector<double> table_;
};

// Plane average of the periodised kernel over one tangential cell, as a function of
// the vertical separation; the exact tangential integral used for n1 = n2 = 1.
class PlaneKernel {
public:
    PlaneKernel(int layers, bool tail, double max_vertical);
    double value(double d) const;
    double derivative(double d) const;

private:
    double smooth_direct(double d) const;
    int layers_;
    bool tail_;
    double monopole_;
    double step_;
    double zmax_;
    std::vector<double> table_;
};

// F*^k_i d_k(rho0 / J)
VectorField gravity_source(const ScalarField& rho0, const DeformationPack& pack);
VectorField gravity_source_rate(const ScalarField& rho0, const VectorField& v, const DeformationPack& pack);

VectorField force(const ScalarField& rho0, const FlowMap& eta, const DeformationPack& pack, const GravityConfig& cfg,
                  ForceReport* report = nullptr);
VectorField force_time_derivative(const ScalarField& rho0, const FlowMap& eta, const VectorField& v,
                                  const DeformationPack& pack, const GravityConfig& cfg);
// F*^j_i G^i_,j + rho0: vanishes for the attractive force.
ScalarField poisson_identity_residual(const VectorField& G, const ScalarField& rho0, const DeformationPack& pack);

using PointMap = std::function<std::array<double, 3>(const std::array<double, 3>&)>;

struct OracleOptions {
    double rel_tol = 1e-6;
    int max_rounds = 8;
    int max_depth = 12;
    double initial_tol = 1e-4;
};

// Adaptive cubature of the force integral for a few Lagrangian target points.
// source(z) is F*^k_i d_k(rho0/J) at z and eta(z) the flow map.
std::vector<std::array<double, 3>> brute_force_oracle(const PointMap& source, const PointMap& eta, double length3,
                                                      const std::vector<std::array<double, 3>>& points,
                                                      const GravityConfig& cfg, const OracleOptions& opt = {});

}  // namespace epsolver
