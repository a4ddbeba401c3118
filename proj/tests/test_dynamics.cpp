#include "doctest.h"
#include "epsolver/dynamics.hpp"
#include "test_util.hpp"

using namespace epsolver;
using testutil::pi;

namespace {

GravityConfig gravity_off() {
    GravityConfig g;
    g.enabled = false;
    return g;
}

DensityProfile lane_emden(int n3) {
    SlabGrid g(1, 1, n3, std::sqrt(2.0) * pi);
    return make_profile(ProfileKind::lane_emden_slab, 2.0, g);
}

VectorField tangential_mode(const SlabGrid& g, double a) {
    return sample_vector(g, [&](double x1, double x2, double z) {
        return std::array<double, 3>{a * std::sin(2 * pi * x2) * std::sin(pi * z), a * std::cos(2 * pi * x1),
                                     a * std::cos(2 * pi * x1) * std::sin(pi * z)};
    });
}

}  // namespace

TEST_CASE("enthalpy gradient at the identity") {
    SlabGrid g(1, 1, 65);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    FlowMap eta = identity_map(g);
    DeformationPack pack = build_deformation(eta);
    VectorField w = enthalpy_gradient(p, eta, pack, gravity_off());
    CHECK(max_abs(w - 2.0 * gradient(p.rho0)) < 1e-12);

    // gamma = 3/2: omega0 = sqrt(rho0), c = 3, w = 3 D sqrt(rho0)
    DensityProfile q = profile_from_density(1.5, p.rho0);
    CHECK(enthalpy_coefficient(1.5) == 3.0);
    ScalarField root = p.rho0;
    for (double& x : root.data) x = std::sqrt(x);
    CHECK(max_abs(enthalpy_gradient(q, eta, pack, gravity_off()) - 3.0 * gradient(root)) < 1e-12);
}

TEST_CASE("Lane-Emden slab is an equilibrium of the enthalpy gradient") {
    GravityConfig cfg;
    double prev = 1e300;
    for (int n3 : {64, 128}) {
        cfg.image_layers = n3 / 16;
        DensityProfile p = lane_emden(n3);
        FlowMap eta = identity_map(p.rho0.grid);
        double r = max_abs(enthalpy_gradient(p, eta, build_deformation(eta), cfg));
        CHECK(r < prev);
        prev = r;
    }
    CHECK(prev <= 1e-2);
}

TEST_CASE("enthalpy assemblies converge together in the interior") {
    std::vector<double> diff;
    for (int n3 : {33, 65}) {
        SlabGrid g(8, 8, n3);
        DensityProfile p = make_profile(ProfileKind::sine, 1.7, g);
        FlowMap eta(identity3, tangential_mode(g, 0.01));
        EnthalpyForms f = enthalpy_gradient_forms(p, eta, build_deformation(eta), gravity_off());
        diff.push_back(f.max_interior_diff / max_abs(f.w));
    }
    CHECK(diff[1] < 1e-3);
    CHECK(testutil::slope(diff[0], diff[1]) > 2.5);
}

TEST_CASE("enthalpy rate matches a difference quotient") {
    SlabGrid g(4, 4, 33);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    VectorField v = tangential_mode(g, 0.2);
    GravityConfig cfg;
    auto w_at = [&](double t) {
        FlowMap e(identity3, t * v);
        return enthalpy_gradient(p, e, build_deformation(e), cfg);
    };
    FlowMap e(identity3, 0.05 * v);
    VectorField exact = enthalpy_gradient_rate(p, e, build_deformation(e), v, cfg);
    double e1 = max_abs((1.0 / 0.02) * (w_at(0.06) - w_at(0.04)) - exact);
    double e2 = max_abs((1.0 / 0.01) * (w_at(0.055) - w_at(0.045)) - exact);
    CHECK(testutil::slope(e1, e2) > 1.9);
}

TEST_CASE("equilibrium produces no spurious acceleration") {
    DensityProfile p = lane_emden(128);
    GravityConfig cfg;
    FlowState s = initial_state(p, VectorField(p.rho0.grid), 0.0, cfg);
    double dt = cfl_dt(s, p, 0.5);
    auto [n, rep] = step(s, dt, p, cfg);
    CHECK(rep.status == StepStatus::ok);
    CHECK(l2_norm(n.v) <= 1.01 * dt * l2_norm(s.w));
    CHECK(l2_norm(s.w) <= 1e-2);
}

TEST_CASE("one step is consistent with the initial time derivative") {
    SlabGrid g(1, 1, 65);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    VectorField u0 = sample_vector(g, [](double, double, double z) {
        return std::array<double, 3>{0, 0, 0.1 * std::sin(pi * z)};
    });
    for (double kappa : {0.0, 1e-3}) {
        GravityConfig cfg;
        FlowState s = initial_state(p, u0, kappa, cfg);
        VectorField u1 = first_time_derivative(u0, p, kappa, cfg);
        std::vector<double> err;
        for (double dt : {1e-2, 5e-3, 2.5e-3}) {
            auto [n, rep] = step(s, dt, p, cfg);
            err.push_back(max_abs(n.v - u0 - dt * u1));
        }
        CHECK(testutil::slope(err[0], err[1]) > 1.8);
        CHECK(testutil::slope(err[1], err[2]) > 1.8);
    }
}

TEST_CASE("kappa damps a velocity mode") {
    SlabGrid g(1, 1, 33);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    VectorField u0 = sample_vector(g, [](double, double, double z) {
        return std::array<double, 3>{0, 0, 0.05 * std::sin(2 * pi * z)};
    });
    GravityConfig off = gravity_off();
    double prev = 1e300;
    for (double kappa : {0.0, 1e-3, 1e-2}) {
        FlowState s = initial_state(p, u0, kappa, off);
        const double dt = 1e-3;
        for (int k = 0; k < 100; ++k) s = step(s, dt, p, off).first;
        double ke = 0.0;
        for (std::size_t n = 0; n < g.size(); ++n)
            ke += 0.5 * g.weight(n) * p.rho0(n) * s.v(n, 2) * s.v(n, 2);
        CHECK(ke <= prev);
        prev = ke;
    }
}

TEST_CASE("CFL step") {
    SlabGrid g(1, 1, 65);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    GravityConfig off = gravity_off();
    FlowState s = initial_state(p, VectorField(g), 0.0, off);
    CHECK(max_signal_speed(s, p) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    double dt = cfl_dt(s, p, 0.5);
    CHECK(dt == doctest::Approx(0.5 * g.h3() / std::sqrt(2.0)).epsilon(1e-12));

    SlabGrid fine(1, 1, 129);
    DensityProfile pf = make_profile(ProfileKind::sine, 2.0, fine);
    FlowState sf = initial_state(pf, VectorField(fine), 0.0, off);
    CHECK(cfl_dt(sf, pf, 0.5) == doctest::Approx(0.5 * dt).epsilon(1e-12));
    CHECK_THROWS_AS(cfl_dt(s, p, 0.0), PreconditionError);
    CHECK_THROWS_AS(cfl_dt(s, p, 1.5), PreconditionError);

    // the explicit kappa term tightens the step once kappa is large
    FlowState sk = initial_state(p, VectorField(g), 0.1, off);
    CHECK(cfl_dt(sk, p, 0.5) < dt);
}

TEST_CASE("J window exit is a terminal status") {
    SlabGrid g(1, 1, 33);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    VectorField u0 = sample_vector(g, [](double, double, double z) {
        return std::array<double, 3>{0, 0, 3.0 * std::sin(pi * z)};
    });
    GravityConfig off = gravity_off();
    FlowState s = initial_state(p, u0, 0.0, off);
    StepReport rep;
    for (int k = 0; k < 200 && s.status == StepStatus::ok; ++k) std::tie(s, rep) = step(s, 5e-3, p, off);
    CHECK(rep.status == StepStatus::j_window_exit);
    CHECK((rep.j_min < j_window_min || rep.j_max > j_window_max));
    CHECK_THROWS_AS(step(s, 5e-3, p, off), PreconditionError);
    CHECK(to_string(StepStatus::j_window_exit) != to_string(StepStatus::ok));
}

TEST_CASE("steps are deterministic and keep the mass law") {
    SlabGrid g(4, 4, 17);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    VectorField u0 = tangential_mode(g, 0.05);
    GravityConfig cfg;
    FlowState s = initial_state(p, u0, 1e-3, cfg);
    auto [a, ra] = step(s, 2e-3, p, cfg);
    auto [b, rb] = step(s, 2e-3, p, cfg);
    CHECK(a.v.data == b.v.data);
    CHECK(a.eta.checksum() == b.eta.checksum());
    CHECK(ra.j_min == rb.j_min);
    CHECK(ra.piola_max == rb.piola_max);

    // Eulerian mass: integral of (rho0 / J) J = integral of rho0, and rho0 / J > 0 inside
    double m0 = integrate(p.rho0);
    ScalarField mass(g);
    for (std::size_t n = 0; n < g.size(); ++n) {
        double f = p.rho0(n) / a.pack.J(n);
        mass(n) = f * a.pack.J(n);
        int i1, i2, i3;
        g.coords(n, i1, i2, i3);
        if (i3 > 0 && i3 < g.n3 - 1) CHECK(f > 0.0);
    }
    CHECK(integrate(mass) == doctest::Approx(m0).epsilon(1e-14));
}

TEST_CASE("Jacobian rate identity along a run") {
    SlabGrid g(4, 4, 33);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    GravityConfig cfg;
    FlowState s = initial_state(p, tangential_mode(g, 0.05), 0.0, cfg);
    std::vector<double> err;
    for (double dt : {4e-3, 2e-3}) {
        auto [n, rep] = step(s, dt, p, cfg);
        ScalarField quotient = (1.0 / dt) * (n.pack.J - s.pack.J);
        ScalarField rate = jacobian_rate(n.v, n.pack);
        err.push_back(max_abs(quotient - rate));
    }
    CHECK(testutil::slope(err[0], err[1]) > 0.9);
}

TEST_CASE("X assemblies") {
    SlabGrid g(1, 1, 65);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    GravityConfig off = gravity_off();
    FlowState s = initial_state(p, VectorField(g), 0.0, off);
    CHECK(max_abs(compute_X(s, s.pack, p)) == 0.0);

    // v = D psi with psi = sin(pi z): X = rho0 Laplacian psi
    ScalarField psi = sample_scalar(g, [](double, double, double z) { return std::sin(pi * z); });
    FlowState t = initial_state(p, gradient(psi), 0.0, off);
    ScalarField lap = divergence(gradient(psi));
    CHECK(testutil::max_diff(compute_X(t, t.pack, p), pointwise_product(p.rho0, lap)) < 1e-12);

    SlabGrid g3(8, 8, 33);
    DensityProfile p3 = make_profile(ProfileKind::sine, 2.3, g3);
    FlowState r = initial_state(p3, tangential_mode(g3, 0.1), 0.0, off);
    r.eta = FlowMap(identity3, tangential_mode(g3, 0.02));
    r.pack = build_deformation(r.eta);
    CHECK(compute_X_forms(r, r.pack, p3).max_rel_diff < 1e-12);
}

TEST_CASE("vorticity forcing") {
    SlabGrid g(8, 8, 33);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    GravityConfig cfg;
    VectorField v = tangential_mode(g, 0.2);
    FlowState s = initial_state(p, v, 0.0, cfg);
    CHECK(max_abs(vorticity_rhs(s, s.pack, p)) == 0.0);
    FlowState z = initial_state(p, VectorField(g), 0.1, cfg);
    CHECK(max_abs(vorticity_rhs(z, z.pack, p)) == 0.0);

    // prescribed motion eta(t) = x + t v: the forcing is -kappa curl_eta(dw/dt)
    const double kappa = 0.1, t = 0.05;
    auto w_at = [&](double tt) {
        FlowMap e(identity3, tt * v);
        return enthalpy_gradient(p, e, build_deformation(e), cfg);
    };
    FlowMap e(identity3, t * v);
    DeformationPack pack = build_deformation(e);
    VectorField q = vorticity_rhs(v, w_at(t), pack, kappa);
    std::vector<double> err;
    for (double d : {1e-2, 5e-3}) {
        VectorField wt = (0.5 / d) * (w_at(t + d) - w_at(t - d));
        err.push_back(max_abs(q + kappa * curl_eta(wt, pack)));
    }
    CHECK(err[1] < 1e-2 * max_abs(q));
    CHECK(err[1] <= err[0]);
}

TEST_CASE("boundary normal acceleration") {
    SlabGrid g(1, 1, 65);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    GravityConfig off = gravity_off();
    FlowState s = initial_state(p, VectorField(g), 0.0, off);
    FaceField a = boundary_normal_acceleration(s, p, off);
    ScalarField d3 = partial(p.rho0, 2);
    CHECK(a.bottom[0] == doctest::Approx(-2 * d3(0)).epsilon(1e-12));
    CHECK(a.top[0] == doctest::Approx(-2 * d3(g.n3 - 1)).epsilon(1e-12));
    CHECK(a.top[0] > 0.0);

    // face trace of the interior acceleration, to discretization accuracy
    std::vector<double> err;
    for (int n3 : {33, 65}) {
        SlabGrid g3(4, 4, n3);
        DensityProfile p3 = make_profile(ProfileKind::sine, 2.0, g3);
        GravityConfig cfg;
        FlowState r = initial_state(p3, tangential_mode(g3, 0.1), 1e-2, cfg);
        FaceField b = boundary_normal_acceleration(r, p3, cfg);
        VectorField interior = -(r.w + r.kappa * r.w_rate);
        std::size_t fs = g3.face_size();
        double e = 0.0;
        for (std::size_t m = 0; m < fs; ++m) {
            e = std::max(e, std::abs(b.bottom[m] - interior(m, 2)));
            e = std::max(e, std::abs(b.top[m] - interior((g3.n3 - 1) * fs + m, 2)));
        }
        err.push_back(e / max_abs(interior));
    }
    CHECK(err[1] < 1e-7);
    CHECK(testutil::slope(err[0], err[1]) > 3.0);
}
