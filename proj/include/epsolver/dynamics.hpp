#pragma once

#include <deque>
#include <string>
#include <utility>

#include "epsolver/gravity.hpp"
#include "epsolver/initial_data.hpp"
#include "epsolver/kinematics.hpp"

namespace epsolver {

inline double enthalpy_coefficient(double gamma) { return gamma / (gamma - 1.0); }

// w^i = Finv(k,i) d_k(c_gamma omega0 J^(1-gamma)) - G^i
VectorField enthalpy_gradient(const DensityProfile& p, const FlowMap& eta, const DeformationPack& pack,
                              const GravityConfig& gravity, ForceReport* report = nullptr);

// Both assemblies of w; the weighted one rho0^-1 Fstar(k,i) d_k(rho0^gamma J^-gamma) - G^i is
// compared only where rho0 exceeds threshold * max rho0.
struct EnthalpyForms {
    VectorField w;
    VectorField weighted;
    double max_interior_diff = 0.0;
};
EnthalpyForms enthalpy_gradient_forms(const DensityProfile& p, const FlowMap& eta, const DeformationPack& pack,
                                      const GravityConfig& gravity, double threshold = 0.05);

// Exact time derivative of w along the velocity v.
VectorField enthalpy_gradient_rate(const DensityProfile& p, const FlowMap& eta, const DeformationPack& pack,
                                   const VectorField& v, const GravityConfig& gravity);

enum class StepStatus { ok, j_window_exit, invertibility_lost };
std::string to_string(StepStatus s);

constexpr double j_window_min = 7.0 / 8.0;
constexpr double j_window_max = 9.0 / 8.0;

struct HistoryLevel {
    double t = 0.0;
    FlowMap eta;
    VectorField v;
};

struct FlowState {
    double t = 0.0;
    long step = 0;
    double kappa = 0.0;
    FlowMap eta;
    VectorField v;
    VectorField w;
    VectorField w_rate;
    VectorField w_prev;  // w at the previous level (empty before the first step)
    double dt_prev = 0.0;
    DeformationPack pack;
    StepStatus status = StepStatus::ok;
    int history_depth = 5;
    std::deque<HistoryLevel> history;  // newest first, includes the current level
};

struct StepReport {
    long step = 0;
    double t = 0.0;
    double dt = 0.0;
    double cfl = 0.0;
    double j_min = 1.0;
    double j_max = 1.0;
    double piola_max = 0.0;
    long energy_index = 0;
    StepStatus status = StepStatus::ok;
    std::string message;
};

FlowState initial_state(const DensityProfile& p, const VectorField& u0, double kappa, const GravityConfig& gravity,
                        int history_depth = 5);

// Kick-drift-kick update with acceleration -(w + kappa dw/dt); dw/dt from the stored
// levels by variable-step backward differentiation.
std::pair<FlowState, StepReport> step(const FlowState& s, double dt, const DensityProfile& p,
                                      const GravityConfig& gravity);

// Largest sound or flow speed and the resulting step.
double max_signal_speed(const FlowState& s, const DensityProfile& p);
double cfl_dt(const FlowState& s, const DensityProfile& p, double safety);
// Largest eigenvalue bound of the discrete second derivative summed over active directions.
double discrete_laplacian_bound(const SlabGrid& g);

struct XForms {
    ScalarField divergence_form;  // omega0 J^(1-gamma) Div_eta v
    ScalarField rate_form;        // omega0 J^(-gamma) J_t
    double max_rel_diff = 0.0;
};
XForms compute_X_forms(const FlowState& s, const DeformationPack& pack, const DensityProfile& p);
ScalarField compute_X(const FlowState& s, const DeformationPack& pack, const DensityProfile& p);

// Q^k = -kappa eps_kji (D_eta^j v^r)(D_eta^i w_r)
VectorField vorticity_rhs(const FlowState& s, const DeformationPack& pack, const DensityProfile& p);
VectorField vorticity_rhs(const VectorField& v, const VectorField& w, const DeformationPack& pack, double kappa);
// B^k = eps_kji (d_t Finv(s,j)) v^i_,s
VectorField vorticity_stretching(const VectorField& v, const DeformationPack& pack);

// v_t^3 on both faces from the boundary form of the momentum equation.
FaceField boundary_normal_acceleration(const FlowState& s, const DensityProfile& p, const GravityConfig& gravity);

}  // namespace epsolver
