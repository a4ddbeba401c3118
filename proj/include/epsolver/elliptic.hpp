#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "epsolver/dynamics.hpp"
#include "epsolver/grid.hpp"

namespace epsolver {

// ---- slab Poisson ----------------------------------------------------------

enum class BoundaryKind { dirichlet, neumann };

// Solves Laplacian(phi) = rhs, Fourier in 1,2 and second-order differences in 3.
// Dirichlet data are face values; Neumann data are outward normal derivatives and
// must satisfy integral(rhs) = integral over both faces of the data. The Neumann
// solution has zero mean.
ScalarField slab_poisson(const ScalarField& rhs, BoundaryKind kind, const FaceField& data,
                         double solvability_tol = 1e-8);

// ---- Hodge reconstruction --------------------------------------------------

struct HodgeData {
    ScalarField div;
    VectorField curl;
    FaceField normal_trace;  // w^3 on both faces
    double mean1 = 0.0;
    double mean2 = 0.0;
};

struct HodgeResult {
    VectorField w;
    double shift = 0.0;  // constant added to w^3 on the top face and subtracted on the bottom
};

// Builds w = D phi + curl A + constant with the prescribed data. A compatibility defect
// larger than compat_tol relative to the data scale raises CompatibilityDefect.
HodgeResult hodge_reconstruct(const HodgeData& d, double compat_tol = 1e-8);

// ||w||_1 / (||w||_0 + ||curl w||_0 + ||Div w||_0 + |w^3|_{1/2}) for a measured Hodge constant.
double hodge_bound_ratio(const VectorField& w);

// ---- Galerkin X solver -----------------------------------------------------

// Tangential factor: 0 = constant, 1 = sqrt2 cos(2 pi k x), 2 = sqrt2 sin(2 pi k x).
struct GalerkinMode {
    int kind1 = 0, k1 = 0;
    int kind2 = 0, k2 = 0;
    int m = 1;
    double lambda = 0.0;
};

class GalerkinBasis {
public:
    GalerkinBasis(const SlabGrid& g, int kmax_tangential, int mmax_normal);
    const SlabGrid& grid() const { return grid_; }
    const std::vector<GalerkinMode>& modes() const { return modes_; }
    std::size_t size() const { return modes_.size(); }
    // Values and gradients at the nodes: entry [node * size() + mode].
    const std::vector<double>& values() const { return values_; }
    const std::vector<double>& gradients(int dir) const { return grads_[dir]; }
    ScalarField field(const Eigen::VectorXd& coeffs) const;
    double evaluate(std::size_t mode, const std::array<double, 3>& x) const;

private:
    SlabGrid grid_;
    std::vector<GalerkinMode> modes_;
    std::vector<double> values_;
    std::vector<double> grads_[3];
};

struct XProblem {
    ScalarField jbar;
    TensorField b;       // B(j,k) = Fstar(j,i) Finv(k,i), entry 3j+k
    ScalarField weight;  // omega0, or a positive test weight
    double kappa = 0.0;
    double gamma = 2.0;
    ScalarField reaction;                        // empty: jbar^(gamma-1)
    std::function<ScalarField(double)> forcing;  // empty: zero
    ScalarField x0;                              // empty: zero
};

// The X problem built from the coefficients of a state: jbar = J, B from the pack,
// weight omega0, reaction (rho0/omega0) J^(gamma-1).
XProblem x_problem_from_state(const FlowState& s, const DensityProfile& p);

struct GalerkinSystem {
    Eigen::MatrixXd mass;       // (jbar^gamma / weight) e_l e_m
    Eigen::MatrixXd stiffness;  // gamma kappa (B grad e_l, grad e_m)
    Eigen::MatrixXd reaction;   // kappa (reaction e_l, e_m)
    Eigen::MatrixXd gram_l2;
    Eigen::MatrixXd gram_grad;
    double beta_min = 0.0;      // sampled coercivity floor
    double lambda_poincare = 0.0;
};
GalerkinSystem assemble_galerkin(const XProblem& pr, const GalerkinBasis& basis);
Eigen::VectorXd load_vector(const GalerkinBasis& basis, const ScalarField& f);

struct LedgerRow {
    double t = 0.0;
    double state_term = 0.0;        // min jbar^gamma ||X / sqrt(weight)||^2
    double dissipation_term = 0.0;  // C_p kappa sum dt ||X||_1^2
    double initial_term = 0.0;      // max jbar^gamma ||X0 / sqrt(weight)||^2
    double forcing_term = 0.0;      // C_kappa sum dt ||W||_*^2
    double lhs() const { return state_term + dissipation_term; }
    double rhs() const { return initial_term + forcing_term; }
};

struct XSolution {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> coeffs;
    std::vector<LedgerRow> ledger;
    double c_p = 0.0;
    double c_kappa = 0.0;
    double beta_min = 0.0;
    double lambda_poincare = 0.0;
    ScalarField field(const GalerkinBasis& basis, std::size_t k) const { return basis.field(coeffs[k]); }
};

// Implicit Euler in the mode coefficients with frozen coefficients.
XSolution solve_x(const XProblem& pr, const GalerkinBasis& basis, double T, double dt, int output_every = 1);

std::string ledger_csv(const XSolution& s);

// ---- fixed-point defect ----------------------------------------------------

// Integrating-factor memory of the forcing gradient: F + kappa F_t = -v_t.
struct ForcingMemory {
    double t = 0.0;
    VectorField value;
    VectorField last_accel;
};
ForcingMemory start_forcing_memory(const FlowState& s);
void advance_forcing_memory(ForcingMemory& m, const FlowState& s);

struct FixedPointOptions {
    int kmax_tangential = 2;
    int mmax_normal = 12;
    double dt = 1e-3;
};

struct FixedPointReport {
    double defect = 0.0;          // ||v_t reconstructed - v_t||_0
    double accel_norm = 0.0;      // ||v_t||_0
    double shift = 0.0;           // compatibility constant c(t)
    double forcing_residual = 0.0;  // ||F - w||_0 (0 when no memory supplied)
    VectorField reconstructed;
};

VectorField acceleration(const FlowState& s);
FixedPointReport fixed_point_defect(const FlowState& s, const DensityProfile& p, const GravityConfig& gravity,
                                    const FixedPointOptions& opt = {}, const ForcingMemory* memory = nullptr);

}  // namespace epsolver
