#include <functional>

#include "doctest.h"
#include "epsolver/diagnostics.hpp"
#include "test_util.hpp"

using namespace epsolver;
using testutil::pi;

namespace {

GravityConfig gravity_off() {
    GravityConfig g;
    g.enabled = false;
    return g;
}

double simpson(const std::function<double(double)>& f, double a, double b, int n = 2000) {
    double h = (b - a) / n, s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(a + i * h);
    return s * h / 3;
}

VectorField rotational(const SlabGrid& g, double a) {
    return sample_vector(g, [&](double x1, double x2, double z) {
        return std::array<double, 3>{a * std::sin(2 * pi * x2) * std::sin(pi * z), a * std::cos(2 * pi * x1) * z,
                                     a * std::cos(2 * pi * x1) * std::sin(pi * z)};
    });
}

}  // namespace

TEST_CASE("finite difference weights") {
    auto w = finite_difference_weights({0.0, -1.0, -2.0}, 0.0, 1);
    CHECK(w[0] == doctest::Approx(1.5));
    CHECK(w[1] == doctest::Approx(-2.0));
    CHECK(w[2] == doctest::Approx(0.5));
    CHECK_THROWS_AS(finite_difference_weights({0.0, 1.0}, 0.0, 2), PreconditionError);
}

TEST_CASE("energy at rest equals an independent evaluation") {
    SlabGrid g(1, 1, 129);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    FlowState s = initial_state(p, VectorField(g), 0.0, gravity_off());
    std::vector<std::optional<double>> acc{0.0};
    EnergyReport r = energy(s, p, 0, &acc);
    CHECK(r.complete());

    // eta = e: ||x||_0^2 plus the H3 norm of the identity gradient (three unit entries)
    double positions = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n) positions += g.weight(n) * std::pow(g.position(n)[2], 2);
    CHECK(r.find("eta_s0")->value == doctest::Approx(positions + 3.0).epsilon(1e-12));
    CHECK(r.find("rho_deta_s0")->value == 0.0);
    CHECK(r.find("rho_v_s0")->value == 0.0);
    CHECK(r.find("diss_s0")->value == 0.0);
    CHECK(r.find("jinv_s0")->value == doctest::Approx(sobolev_norm_squared(p.rho0, 4)).epsilon(1e-12));
    // the H4 norm of sin(pi z) is (1 + pi^2 + pi^4 + pi^6 + pi^8) / 2
    double closed = 0.0;
    for (int j = 0; j <= 4; ++j) closed += std::pow(pi, 2 * j) / 2;
    CHECK(r.find("jinv_s0")->value == doctest::Approx(closed).epsilon(5e-2));
    CHECK(r.find("curl_h3")->value == 0.0);
    double sum = 0.0;
    for (const auto& t : r.terms) {
        CHECK(t.value >= 0.0);
        sum += t.value;
    }
    CHECK(r.total == sum);
}

TEST_CASE("energy velocity terms are quadratic") {
    SlabGrid g(4, 4, 33);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    VectorField v = rotational(g, 0.1);
    FlowState a = initial_state(p, v, 0.0, gravity_off());
    FlowState b = initial_state(p, 2.0 * v, 0.0, gravity_off());
    EnergyReport ra = energy(a, p, 0), rb = energy(b, p, 0);
    for (const char* name : {"rho_v_s0", "curl_h3", "rho_curl_t4"}) {
        CHECK(ra.find(name)->value > 0.0);
        CHECK(rb.find(name)->value == doctest::Approx(4 * ra.find(name)->value).epsilon(1e-12));
    }
    for (const char* name : {"eta_s0", "rho_deta_s0", "jinv_s0"})
        CHECK(rb.find(name)->value == ra.find(name)->value);
    // no accumulated dissipation and no history: absent, never zero-filled
    CHECK_FALSE(ra.find("diss_s0")->present);
    EnergyReport r1 = energy(a, p, 1);
    CHECK_FALSE(r1.find("rho_v_s1")->present);
    CHECK(r1.s_computed == -1);
}

TEST_CASE("energy along a run") {
    SlabGrid g(4, 4, 33);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    GravityConfig cfg;
    FlowState s = initial_state(p, rotational(g, 0.05), 1e-3, cfg);
    EnergyTracker tr(p, 1);
    EnergyReport r = tr.observe(s);
    CHECK_FALSE(r.complete());
    for (int k = 0; k < 3; ++k) {
        s = step(s, 2e-3, p, cfg).first;
        r = tr.observe(s);
        for (const auto& t : r.terms)
            if (t.present) CHECK(std::isfinite(t.value));
    }
    CHECK(r.complete());
    CHECK(tr.has_reference());
    std::string header = energy_csv_header(1);
    CHECK(header.rfind("t,eta_s0,", 0) == 0);
    CHECK(header.find(",total\n") != std::string::npos);
    auto commas = [](const std::string& x) { return std::count(x.begin(), x.end(), ','); };
    CHECK(commas(energy_csv_row(r)) == commas(header));
}

TEST_CASE("curl transport of a resting state") {
    SlabGrid g(4, 4, 17);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    FlowState s = initial_state(p, VectorField(g), 0.0, gravity_off());
    CurlTransport ct(s);
    for (int k = 1; k <= 3; ++k) {
        s.t = 1e-3 * k;
        CHECK(ct.observe(s) == 0.0);
    }
}

TEST_CASE("irrotational start keeps a second order small curl") {
    SlabGrid g(8, 8, 33);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    GravityConfig off = gravity_off();
    ScalarField psi = sample_scalar(g, [](double x1, double x2, double z) {
        return 0.05 * std::cos(2 * pi * x1) * std::sin(2 * pi * x2) * std::cos(pi * z);
    });
    VectorField u0 = gradient(psi);
    std::vector<double> c;
    for (double dt : {2e-3, 1e-3}) {
        FlowState s = initial_state(p, u0, 0.0, off);
        s = step(s, dt, p, off).first;
        c.push_back(l2_norm(curl_eta(s.v, s.pack)));
    }
    CHECK(c[1] <= 1e-6);
    CHECK(testutil::slope(c[0], c[1]) > 1.8);
}

TEST_CASE("curl transport residual is second order in time") {
    SlabGrid g(8, 8, 128);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    GravityConfig off = gravity_off();
    VectorField u0 = sample_vector(g, [](double x1, double x2, double z) {
        return std::array<double, 3>{0.05 * std::sin(2 * pi * x2) * std::sin(pi * z), 0.05 * std::cos(2 * pi * x1),
                                     0.05 * std::cos(2 * pi * x1) * std::sin(pi * z)};
    });
    std::vector<double> res;
    for (double dt : {2e-3, 1e-3, 5e-4}) {
        FlowState s = initial_state(p, u0, 0.0, off);
        CurlTransport ct(s);
        double r = 0.0;
        int n = static_cast<int>(std::lround(0.02 / dt));
        for (int k = 0; k < n; ++k) {
            s = step(s, dt, p, off).first;
            r = ct.observe(s);
        }
        res.push_back(r);
    }
    CHECK(testutil::slope(res[0], res[1]) > 1.8);
    CHECK(testutil::slope(res[1], res[2]) > 1.8);
}

TEST_CASE("a-priori window") {
    SlabGrid g(4, 4, 17);
    FlowMap e = identity_map(g);
    AprioriRecord r = apriori_window(0.0, e, build_deformation(e));
    CHECK(r.pass());
    CHECK(r.j_min == doctest::Approx(1.0));
    CHECK(r.coercivity_min == doctest::Approx(1.0));
    CHECK(r.lipschitz_min == doctest::Approx(1.0));
    CHECK(r.lipschitz_max == doctest::Approx(1.0));

    FlowMap big({1.2, 0, 0, 0, 1.2, 0, 0, 0, 1.2}, VectorField(g));
    AprioriRecord b = apriori_window(0.5, big, build_deformation(big));
    CHECK(b.j_max == doctest::Approx(1.728));
    CHECK_FALSE(b.j_pass);
    CHECK_FALSE(b.pass());

    AprioriTracker tr;
    tr.observe(r);
    tr.observe(b);
    AprioriRecord back = r;
    back.t = 1.0;
    tr.observe(back);
    CHECK(tr.first_j_violation.value() == 0.5);
    CHECK(tr.flicker);
    CHECK(tr.records == 3);
}

TEST_CASE("a-priori monitors do not touch the state") {
    SlabGrid g(4, 4, 17);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    GravityConfig cfg;
    FlowState s = initial_state(p, rotational(g, 0.05), 1e-3, cfg);
    s = step(s, 2e-3, p, cfg).first;
    auto before = std::make_pair(s.eta.checksum(), checksum(s.v));
    apriori_window(s);
    energy(s, p, 1);
    vacuum_persistence(s, p);
    CurlTransport ct(s);
    CHECK(before == std::make_pair(s.eta.checksum(), checksum(s.v)));
}

TEST_CASE("Hardy verifier") {
    SlabGrid g(4, 4, 129);
    ScalarField d = smoothed_distance(g);
    ScalarField poly = sample_scalar(g, [](double x1, double, double z) { return 1.0 + z + 0.3 * std::cos(2 * pi * x1); });
    ScalarField u = pointwise_product(d, poly);
    for (int s : {1, 2}) {
        double expect = std::sqrt(sobolev_norm_squared(poly, s - 1) / sobolev_norm_squared(u, s));
        CHECK(hardy_verifier(u, s) == doctest::Approx(expect).epsilon(1e-10));
        CHECK(hardy_verifier(2.5 * u, s) == doctest::Approx(hardy_verifier(u, s)).epsilon(1e-12));
    }
    ScalarField sine = sample_scalar(g, [](double, double, double z) { return std::sin(pi * z); });
    CHECK(hardy_verifier(sine, 1) <= 4.0);
    ScalarField lifted = sample_scalar(g, [](double, double, double z) { return std::cos(pi * z); });
    CHECK_THROWS_AS(hardy_verifier(lifted, 1), PreconditionError);
    CHECK(smoothed_distance(0.1, 1.0) == doctest::Approx(0.1));
    CHECK(smoothed_distance(0.9, 1.0) == doctest::Approx(0.1));
}

TEST_CASE("embedding verifier") {
    SlabGrid g(1, 1, 401);
    CHECK(embedding_verifier(ScalarField(g, 1.0), 2) == doctest::Approx(12.0).epsilon(1e-2));
    ScalarField sine = sample_scalar(g, [](double, double, double z) { return std::sin(pi * z); });
    // p = 2: ||f||_0^2 / int d^2 (f^2 + f'^2) in closed form
    double den = 2 * simpson([](double x) {
                     return x * x * (std::pow(std::sin(pi * x), 2) + pi * pi * std::pow(std::cos(pi * x), 2));
                 }, 0.0, 0.5);
    double r = embedding_verifier(sine, 2);
    CHECK(r == doctest::Approx(0.5 / den).epsilon(1e-2));
    CHECK(r < 12.0);
    CHECK(embedding_verifier(2.0 * sine, 1) == doctest::Approx(embedding_verifier(sine, 1)).epsilon(1e-12));
}

TEST_CASE("verifier family stays under the recorded bounds") {
    SlabGrid g(8, 8, 64);
    FamilyBounds f = family_sweep(g, family_seed, 10);
    FamilyBounds rec = recorded_family_bounds();
    CHECK(f.finite);
    CHECK(f.hardy_s1 <= rec.hardy_s1);
    CHECK(f.hardy_s2 <= rec.hardy_s2);
    CHECK(f.embedding_p1 <= rec.embedding_p1);
    CHECK(f.embedding_p2 <= rec.embedding_p2);
    CHECK(family_member(g, family_seed, 3).data == family_member(g, family_seed, 3).data);
}

TEST_CASE("vacuum persistence") {
    SlabGrid g(2, 2, 65);
    DensityProfile p = make_profile(ProfileKind::sine, 1.5, g);
    FlowState s = initial_state(p, VectorField(g), 0.0, gravity_off());
    VacuumPersistence v0 = vacuum_persistence(s, p);
    for (std::size_t m = 0; m < g.face_size(); ++m) {
        CHECK(v0.slope.bottom[m] == doctest::Approx(p.slope.bottom[m]).epsilon(1e-12));
        CHECK(v0.slope.top[m] == doctest::Approx(p.slope.top[m]).epsilon(1e-12));
    }
    CHECK(v0.negative);
    CHECK(v0.min_ratio == doctest::Approx(1.0));

    // uniform tangential stretch: J = 1.1, slope scaled by J^(1 - gamma)
    s.eta = FlowMap({1.1, 0, 0, 0, 1, 0, 0, 0, 1}, VectorField(g));
    s.pack = build_deformation(s.eta);
    VacuumPersistence v1 = vacuum_persistence(s, p);
    CHECK(v1.negative);
    CHECK(v1.min_ratio == doctest::Approx(std::pow(1.1, -0.5)).epsilon(1e-12));
}

TEST_CASE("vacuum slopes stay put on the equilibrium") {
    SlabGrid g(1, 1, 129, std::sqrt(2.0) * pi);
    DensityProfile p = make_profile(ProfileKind::lane_emden_slab, 2.0, g);
    GravityConfig cfg;
    FlowState s = initial_state(p, VectorField(g), 0.0, cfg);
    for (int k = 0; k < 10; ++k) s = step(s, cfl_dt(s, p, 0.5), p, cfg).first;
    VacuumPersistence v = vacuum_persistence(s, p);
    CHECK(v.min_ratio == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("monitor CSV") {
    CHECK(monitor_csv_header() == "t,name,value,pass\n");
    std::string row = monitor_csv_row({0.5, "j_min", 0.99, true});
    CHECK(row.rfind("0.5,j_min,", 0) == 0);
}
