#pragma once

#include <string>
#include <vector>

#include "epsolver/gravity.hpp"
#include "epsolver/grid.hpp"

namespace epsolver {

enum class ProfileKind { sine, parabolic, lane_emden_slab, custom_table };
ProfileKind parse_profile_kind(const std::string& s);
std::string to_string(ProfileKind k);

// Outward normal derivatives of omega0 on the two faces.
struct DensityProfile {
    double gamma = 2.0;
    ScalarField rho0;
    ScalarField omega0;
    FaceField slope;
};

struct ProfileParams {
    double amplitude = 1.0;
    std::string table_path;
};

// Builds rho0 and slopes from omega0 = rho0^(gamma - 1).
DensityProfile profile_from_omega(double gamma, const ScalarField& omega0);
DensityProfile profile_from_density(double gamma, const ScalarField& rho0);

// sine: omega0 = A sin(pi x3 / L3); parabolic: omega0 = A x3 (L3 - x3);
// lane_emden_slab (gamma = 2, L3 = sqrt(2) pi): rho0 = A sin(x3 / sqrt 2);
// custom_table: rho0 read from a two-column (x3, rho0) file, linear interpolation.
DensityProfile make_profile(ProfileKind kind, double gamma, const SlabGrid& grid, const ProfileParams& params = {});

struct VacuumReport {
    double slope_bottom = 0.0;  // largest outward slope on the face (must be < 0)
    double slope_top = 0.0;
    double c_dist = 0.0;        // min omega0 / dist over the band
    double c_slope = 0.0;       // min |d omega0 / d x3| over the band
    double c_alpha = 0.0;       // min omega0 where dist >= band
    double face_max = 0.0;      // max |rho0| on the faces
    bool pass = false;
    std::string reason;
};

VacuumReport vacuum_check(const DensityProfile& p, double band = 0.1);

// Separable bump mollifier with support radius eps; reflection f(-x) = 2 f(0) - f(x)
// across the faces. Appends a message to warnings when eps is below the grid spacing.
ScalarField mollify_interior(const ScalarField& f, double eps, std::vector<std::string>* warnings = nullptr);
// Fourier factor of the 1D bump of half-width a at wavenumber k (unit period).
double bump_fourier_factor(double a, int k);
// 2D periodic mollification of each face with radius theta.
FaceField boundary_convolution(const FaceField& f, double theta);

// Biharmonic smoothing with eps = 1 / |ln kappa|, applied to omega0.
DensityProfile smooth_density(const DensityProfile& p, double kappa);

// u1 = -(w + kappa dw/dt) at t = 0 with eta = e, v = u0. gravity_included reports
// whether kernel terms entered.
VectorField first_time_derivative(const VectorField& u0, const DensityProfile& p, double kappa,
                                  const GravityConfig& gravity, bool* gravity_included = nullptr);

}  // namespace epsolver
