#include "epsolver/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace epsolver {

namespace {

ScalarField pressure_like(const DensityProfile& p, const DeformationPack& pack) {
    const double cg = enthalpy_coefficient(p.gamma);
    ScalarField q(p.omega0.grid);
    for (std::size_t n = 0; n < q.nodes(); ++n) q(n) = cg * p.omega0(n) * std::pow(pack.J(n), 1.0 - p.gamma);
    return q;
}

// Finv(k,i) d_k q
VectorField eulerian_gradient_of(const ScalarField& q, const DeformationPack& pack) {
    VectorField dq = gradient(q);
    VectorField r(q.grid);
    for (std::size_t n = 0; n < q.nodes(); ++n)
        for (int i = 0; i < 3; ++i)
            r(n, i) = pack.Finv(n, i) * dq(n, 0) + pack.Finv(n, 3 + i) * dq(n, 1) + pack.Finv(n, 6 + i) * dq(n, 2);
    return r;
}

// M(j,i) = sum_r A(r,j) B(r,i); returns eps_kji M(j,i).
VectorField antisymmetric_contraction(const TensorField& A, const TensorField& B) {
    VectorField r(A.grid);
    for (std::size_t n = 0; n < A.nodes(); ++n) {
        double M[3][3];
        for (int j = 0; j < 3; ++j)
            for (int i = 0; i < 3; ++i) {
                double s = 0.0;
                for (int q = 0; q < 3; ++q) s += A(n, 3 * q + j) * B(n, 3 * q + i);
                M[j][i] = s;
            }
        for (int k = 0; k < 3; ++k) {
            int a = (k + 1) % 3, b = (k + 2) % 3;
            r(n, k) = M[a][b] - M[b][a];
        }
    }
    return r;
}

}  // namespace

VectorField enthalpy_gradient(const DensityProfile& p, const FlowMap& eta, const DeformationPack& pack,
                              const GravityConfig& gravity, ForceReport* report) {
    VectorField w = eulerian_gradient_of(pressure_like(p, pack), pack);
    if (gravity.enabled) w -= force(p.rho0, eta, pack, gravity, report);
    return w;
}

EnthalpyForms enthalpy_gradient_forms(const DensityProfile& p, const FlowMap& eta, const DeformationPack& pack,
                                      const GravityConfig& gravity, double threshold) {
    EnthalpyForms f;
    const SlabGrid& g = p.rho0.grid;
    VectorField G = gravity.enabled ? force(p.rho0, eta, pack, gravity) : VectorField(g);
    f.w = eulerian_gradient_of(pressure_like(p, pack), pack) - G;
    ScalarField q(g);
    for (std::size_t n = 0; n < g.size(); ++n) q(n) = std::pow(p.rho0(n) / pack.J(n), p.gamma);
    VectorField dq = gradient(q);
    f.weighted = VectorField(g);
    double rmax = max_abs(p.rho0);
    for (std::size_t n = 0; n < g.size(); ++n) {
        if (p.rho0(n) <= threshold * rmax) continue;
        for (int i = 0; i < 3; ++i) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += pack.Fstar(n, 3 * k + i) * dq(n, k);
            f.weighted(n, i) = s / p.rho0(n) - G(n, i);
            f.max_interior_diff = std::max(f.max_interior_diff, std::abs(f.weighted(n, i) - f.w(n, i)));
        }
    }
    return f;
}

VectorField enthalpy_gradient_rate(const DensityProfile& p, const FlowMap& eta, const DeformationPack& pack,
                                   const VectorField& v, const GravityConfig& gravity) {
    const SlabGrid& g = p.rho0.grid;
    const double cg = enthalpy_coefficient(p.gamma);
    ScalarField q = pressure_like(p, pack);
    ScalarField Jt = jacobian_rate(v, pack);
    ScalarField qt(g);
    for (std::size_t n = 0; n < g.size(); ++n)
        qt(n) = cg * (1.0 - p.gamma) * p.omega0(n) * std::pow(pack.J(n), -p.gamma) * Jt(n);
    VectorField dq = gradient(q);
    TensorField dFinv = finv_rate(v, pack);
    VectorField r = eulerian_gradient_of(qt, pack);
    for (std::size_t n = 0; n < g.size(); ++n)
        for (int i = 0; i < 3; ++i)
            r(n, i) += dFinv(n, i) * dq(n, 0) + dFinv(n, 3 + i) * dq(n, 1) + dFinv(n, 6 + i) * dq(n, 2);
    if (gravity.enabled) r -= force_time_derivative(p.rho0, eta, v, pack, gravity);
    return r;
}

std::string to_string(StepStatus s) {
    switch (s) {
        case StepStatus::ok: return "ok";
        case StepStatus::j_window_exit: return "j-window-exit";
        case StepStatus::invertibility_lost: return "invertibility-lost";
    }
    return "?";
}

FlowState initial_state(const DensityProfile& p, const VectorField& u0, double kappa, const GravityConfig& gravity,
                        int history_depth) {
    if (u0.grid != p.rho0.grid) throw GridMismatch();
    if (kappa < 0.0) throw PreconditionError("kappa must be nonnegative");
    if (history_depth < 1) throw PreconditionError("history depth must be at least 1");
    FlowState s;
    s.kappa = kappa;
    s.eta = identity_map(u0.grid);
    s.v = u0;
    s.pack = build_deformation(s.eta);
    s.w = enthalpy_gradient(p, s.eta, s.pack, gravity);
    s.w_rate = kappa != 0.0 ? enthalpy_gradient_rate(p, s.eta, s.pack, u0, gravity) : VectorField(u0.grid);
    s.history_depth = history_depth;
    s.history.push_front({0.0, s.eta, s.v});
    return s;
}

std::pair<FlowState, StepReport> step(const FlowState& s, double dt, const DensityProfile& p,
                                      const GravityConfig& gravity) {
    if (s.status != StepStatus::ok) throw PreconditionError("state is terminal (" + to_string(s.status) + ")");
    if (!(dt > 0.0)) throw PreconditionError("time step must be positive");
    StepReport rep;
    rep.step = s.step + 1;
    rep.dt = dt;
    rep.cfl = dt * max_signal_speed(s, p) / s.v.grid.min_active_spacing();

    VectorField v_half = s.v - (0.5 * dt) * (s.w + s.kappa * s.w_rate);
    FlowState n;
    n.kappa = s.kappa;
    n.history_depth = s.history_depth;
    n.eta = s.eta;
    n.eta.displacement += dt * v_half;
    try {
        n.pack = build_deformation(n.eta);
    } catch (const InvertibilityLost& e) {
        FlowState dead = s;
        dead.status = StepStatus::invertibility_lost;
        rep.t = s.t;
        rep.status = dead.status;
        rep.message = e.what();
        return {std::move(dead), rep};
    }
    n.w = enthalpy_gradient(p, n.eta, n.pack, gravity);
    if (s.kappa != 0.0) {
        if (s.w_prev.data.empty()) {
            n.w_rate = (2.0 / dt) * (n.w - s.w) - s.w_rate;
        } else {
            double h1 = dt, h0 = s.dt_prev;
            n.w_rate = ((2 * h1 + h0) / (h1 * (h1 + h0))) * n.w - ((h1 + h0) / (h1 * h0)) * s.w +
                       (h1 / (h0 * (h1 + h0))) * s.w_prev;
        }
    } else {
        n.w_rate = VectorField(s.v.grid);
    }
    n.v = v_half - (0.5 * dt) * (n.w + s.kappa * n.w_rate);
    n.w_prev = s.w;
    n.dt_prev = dt;
    n.t = s.t + dt;
    n.step = s.step + 1;
    n.history = s.history;
    n.history.push_front({n.t, n.eta, n.v});
    while (static_cast<int>(n.history.size()) > n.history_depth) n.history.pop_back();

    auto [jmin, jmax] = std::minmax_element(n.pack.J.data.begin(), n.pack.J.data.end());
    rep.j_min = *jmin;
    rep.j_max = *jmax;
    rep.piola_max = max_abs(piola_residual(n.pack));
    rep.t = n.t;
    rep.energy_index = n.step;
    if (rep.j_min < j_window_min || rep.j_max > j_window_max) {
        n.status = StepStatus::j_window_exit;
        rep.message = "Jacobian left [7/8, 9/8]";
    }
    rep.status = n.status;
    return {std::move(n), rep};
}

double max_signal_speed(const FlowState& s, const DensityProfile& p) {
    double c = 0.0;
    for (std::size_t n = 0; n < s.v.nodes(); ++n) {
        double rho = p.rho0(n) / s.pack.J(n);
        double snd = std::sqrt(p.gamma * std::pow(std::max(rho, 0.0), p.gamma - 1.0));
        double speed = std::sqrt(s.v(n, 0) * s.v(n, 0) + s.v(n, 1) * s.v(n, 1) + s.v(n, 2) * s.v(n, 2));
        c = std::max({c, snd, speed});
    }
    return c;
}

double discrete_laplacian_bound(const SlabGrid& g) {
    // FD4 first derivative has symbol magnitude at most 1.3722 / h; spectral at most pi / h.
    double lam = std::pow(1.3722 / g.h3(), 2);
    if (g.n1 > 1) lam += std::pow(std::numbers::pi / g.h1(), 2);
    if (g.n2 > 1) lam += std::pow(std::numbers::pi / g.h2(), 2);
    return lam;
}

double cfl_dt(const FlowState& s, const DensityProfile& p, double safety) {
    if (!(safety > 0.0 && safety <= 1.0)) throw PreconditionError("CFL safety must lie in (0, 1]");
    const SlabGrid& g = s.v.grid;
    double cmax = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n) {
        double rho = p.rho0(n) / s.pack.J(n);
        cmax = std::max(cmax, p.gamma * std::pow(std::max(rho, 0.0), p.gamma - 1.0));
    }
    double speed = max_signal_speed(s, p);
    double dt = speed > 0.0 ? safety * g.min_active_spacing() / speed : 1e300;
    if (s.kappa > 0.0 && cmax > 0.0) dt = std::min(dt, safety * 2.0 / (s.kappa * cmax * discrete_laplacian_bound(g)));
    return dt;
}

XForms compute_X_forms(const FlowState& s, const DeformationPack& pack, const DensityProfile& p) {
    XForms x;
    const SlabGrid& g = s.v.grid;
    ScalarField div = div_eta(s.v, pack);
    ScalarField Jt = jacobian_rate(s.v, pack);
    x.divergence_form = ScalarField(g);
    x.rate_form = ScalarField(g);
    double scale = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n) {
        double J = pack.J(n);
        x.divergence_form(n) = p.omega0(n) * std::pow(J, 1.0 - p.gamma) * div(n);
        x.rate_form(n) = p.omega0(n) * std::pow(J, -p.gamma) * Jt(n);
        scale = std::max(scale, std::abs(x.divergence_form(n)));
    }
    double d = max_abs(x.divergence_form - x.rate_form);
    x.max_rel_diff = scale > 0.0 ? d / scale : d;
    return x;
}

ScalarField compute_X(const FlowState& s, const DeformationPack& pack, const DensityProfile& p) {
    XForms x = compute_X_forms(s, pack, p);
    if (x.max_rel_diff > 1e-10) throw PreconditionError("X assemblies disagree");
    return x.divergence_form;
}

VectorField vorticity_rhs(const VectorField& v, const VectorField& w, const DeformationPack& pack, double kappa) {
    if (kappa == 0.0) return VectorField(v.grid);
    VectorField r = antisymmetric_contraction(eulerian_gradient(v, pack), eulerian_gradient(w, pack));
    r *= -kappa;
    return r;
}

VectorField vorticity_rhs(const FlowState& s, const DeformationPack& pack, const DensityProfile&) {
    return vorticity_rhs(s.v, s.w, pack, s.kappa);
}

VectorField vorticity_stretching(const VectorField& v, const DeformationPack& pack) {
    // N(j,i) = sum_s dFinv(s,j) v^i_,s, i.e. A = dFinv and B = Dv transposed.
    TensorField dFinv = finv_rate(v, pack);
    TensorField D = jacobian_matrix(v);
    TensorField Dt(v.grid);
    for (std::size_t n = 0; n < v.nodes(); ++n)
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) Dt(n, 3 * a + b) = D(n, 3 * b + a);
    return antisymmetric_contraction(dFinv, Dt);
}

FaceField boundary_normal_acceleration(const FlowState& s, const DensityProfile& p, const GravityConfig& gravity) {
    const SlabGrid& g = s.v.grid;
    const double cg = enthalpy_coefficient(p.gamma), gm = p.gamma;
    ScalarField dw = partial(p.omega0, 2);
    ScalarField Jt = jacobian_rate(s.v, s.pack);
    TensorField dFs = fstar_rate(s.v, s.pack);
    VectorField G(g), dG(g);
    if (gravity.enabled) {
        G = force(p.rho0, s.eta, s.pack, gravity);
        if (s.kappa != 0.0) dG = force_time_derivative(p.rho0, s.eta, s.v, s.pack, gravity);
    }
    FaceField out(g);
    std::size_t fs = g.face_size();
    for (int side = 0; side < 2; ++side) {
        int i3 = side == 0 ? 0 : g.n3 - 1;
        auto& face = side == 0 ? out.bottom : out.top;
        for (std::size_t m = 0; m < fs; ++m) {
            std::size_t n = i3 * fs + m;
            double J = s.pack.J(n), f33 = s.pack.Fstar(n, 8);
            double a = -cg * std::pow(J, -gm) * f33 * dw(n) + G(n, 2);
            double rate = -gm * std::pow(J, -gm - 1.0) * Jt(n) * f33 + std::pow(J, -gm) * dFs(n, 8);
            a += s.kappa * (-cg * rate * dw(n) + dG(n, 2));
            face[m] = a;
        }
    }
    return out;
}

}  // namespace epsolver
