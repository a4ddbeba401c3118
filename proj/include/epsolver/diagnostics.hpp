#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "epsolver/dynamics.hpp"

namespace epsolver {

// ---- time derivatives from stored levels ----------------------------------

// Weights w_j with d^order f/dt^order (t0) ~ sum_j w_j f(t_j) on arbitrary nodes.
std::vector<double> finite_difference_weights(const std::vector<double>& nodes, double t0, int order);

// d^order v / dt^order at the newest level using order + 1 stored levels; empty when
// the history is too short.
std::optional<VectorField> history_time_derivative(const FlowState& s, int order);

// ---- higher-order energy ----------------------------------------------------

struct EnergyTerm {
    std::string name;
    int s = 0;  // time-derivative index; -1 for the vorticity terms
    bool present = false;
    double value = 0.0;
};

struct EnergyReport {
    double t = 0.0;
    int s_max = 0;
    int s_computed = -1;  // largest s with every term present
    std::vector<EnergyTerm> terms;
    double total = 0.0;   // sum of present terms
    bool complete() const { return s_computed == s_max; }
    const EnergyTerm* find(const std::string& name) const;
};

// Term names in report order for a given s_max.
std::vector<std::string> energy_term_names(int s_max);

// Single-level evaluation. Dissipation integrals are taken from accumulated (one per s)
// when given, otherwise marked absent.
EnergyReport energy(const FlowState& s, const DensityProfile& p, int s_max,
                    const std::vector<std::optional<double>>* accumulated = nullptr);

// Follows a run: integrates the dissipation in time and fixes the reference value at
// the first complete report.
class EnergyTracker {
public:
    EnergyTracker(const DensityProfile& p, int s_max);
    EnergyReport observe(const FlowState& s);
    bool has_reference() const { return reference_.has_value(); }
    double reference() const { return reference_.value_or(0.0); }

private:
    DensityProfile profile_;
    int s_max_;
    double last_t_ = 0.0;
    bool started_ = false;
    std::vector<std::optional<double>> last_integrand_;
    std::vector<std::optional<double>> integral_;
    std::optional<double> reference_;
};

// kappa-free integrand of the dissipation term of index s, absent without history.
std::optional<double> dissipation_integrand(const FlowState& s, const DensityProfile& p, int index);

std::string energy_csv_header(int s_max);
std::string energy_csv_row(const EnergyReport& r);

// ---- curl transport ---------------------------------------------------------

// r(t) = curl_eta v(t) - curl_eta v(0) - int_0^t (B + Q), trapezoid in time over observed levels.
class CurlTransport {
public:
    explicit CurlTransport(const FlowState& s0);
    double observe(const FlowState& s);  // returns ||r||_0
    const VectorField& residual() const { return residual_; }

private:
    static VectorField integrand(const FlowState& s);
    VectorField curl0_;
    VectorField integral_;
    VectorField last_integrand_;
    VectorField residual_;
    double last_t_ = 0.0;
};

// ---- a-priori window ---------------------------------------------------------

struct AprioriRecord {
    double t = 0.0;
    double j_min = 1.0, j_max = 1.0;
    double coercivity_min = 1.0;  // smallest eigenvalue of Fstar Finv^T over nodes
    double lipschitz_min = 1.0, lipschitz_max = 1.0;
    bool j_pass = true, coercivity_pass = true, lipschitz_pass = true;
    bool pass() const { return j_pass && coercivity_pass && lipschitz_pass; }
};

AprioriRecord apriori_window(const FlowState& s, std::uint64_t seed = 1, int pairs = 256);
AprioriRecord apriori_window(double t, const FlowMap& eta, const DeformationPack& pack, std::uint64_t seed = 1,
                             int pairs = 256);

class AprioriTracker {
public:
    void observe(const AprioriRecord& r);
    std::optional<double> first_j_violation, first_coercivity_violation, first_lipschitz_violation;
    bool flicker = false;  // some check went pass -> fail -> pass
    int records = 0;

private:
    bool failed_[3] = {false, false, false};
};

// ---- inequality verifiers ---------------------------------------------------

// Smoothed distance to the faces: equals min(x3, L3 - x3) within L3/4 of a face,
// polynomial blend in the middle half.
double smoothed_distance(double x3, double length3);
ScalarField smoothed_distance(const SlabGrid& g);

// ||u / d||_{s-1} / ||u||_s for s in {1, 2}; u must vanish on both faces.
double hardy_verifier(const ScalarField& u, int s, double face_tol = 1e-12);

// ||f||^2_{1-p/2} / int d^p (|f|^2 + |Df|^2) for p in {1, 2}, d the exact distance.
// The order-1/2 norm is the interpolation proxy ||f||_0 ||f||_1.
double embedding_verifier(const ScalarField& f, int p);

struct FamilyBounds {
    double hardy_s1 = 0.0;
    double hardy_s2 = 0.0;
    double embedding_p1 = 0.0;
    double embedding_p2 = 0.0;
    bool finite = true;
};

// Seeded randomized family used by the verifiers, versioned by family_version.
constexpr int family_version = 1;
constexpr std::uint64_t family_seed = 20240601;
ScalarField family_member(const SlabGrid& g, std::uint64_t seed, int index);
FamilyBounds family_sweep(const SlabGrid& g, std::uint64_t seed, int count);
// Bounds recorded from 100 members with family_seed on the reference 8x8x64 unit slab.
FamilyBounds recorded_family_bounds();

// ---- vacuum persistence ------------------------------------------------------

struct VacuumPersistence {
    double t = 0.0;
    FaceField slope;          // outward normal derivative of omega0 J^(1-gamma)
    double worst_slope = 0.0; // largest (least negative) value over both faces
    double min_ratio = 1.0;   // min over face nodes of slope / initial slope
    bool negative = true;
};

VacuumPersistence vacuum_persistence(const FlowState& s, const DensityProfile& p);

// ---- monitor CSV -------------------------------------------------------------

struct MonitorRow {
    double t = 0.0;
    std::string name;
    double value = 0.0;
    bool pass = true;
};
std::string monitor_csv_header();
std::string monitor_csv_row(const MonitorRow& r);

}  // namespace epsolver
