#include <functional>

#include "doctest.h"
#include "epsolver/gravity.hpp"
#include "test_util.hpp"

using namespace epsolver;
using testutil::pi;

namespace {

// Independent adaptive Simpson for the potential integrals.
double simpson(const std::function<double(double)>& f, double a, double b, double tol, int depth = 0) {
    double m = 0.5 * (a + b);
    double fa = f(a), fb = f(b), fm = f(m);
    double whole = (b - a) / 6 * (fa + 4 * fm + fb);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double left = (m - a) / 6 * (fa + 4 * f(lm) + fm), right = (b - m) / 6 * (fm + 4 * f(rm) + fb);
    if (depth > 40 || std::abs(left + right - whole) < 15 * tol) return left + right + (left + right - whole) / 15;
    return simpson(f, a, m, tol / 2, depth + 1) + simpson(f, m, b, tol / 2, depth + 1);
}

VectorField plane_force(int n3, int layers, ScalarField* rho_out = nullptr, DeformationPack* pack_out = nullptr) {
    SlabGrid g(1, 1, n3);
    ScalarField rho = sample_scalar(g, [](double, double, double x) { return std::sin(pi * x); });
    FlowMap eta = identity_map(g);
    DeformationPack pack = build_deformation(eta);
    GravityConfig cfg;
    cfg.image_layers = layers;
    VectorField G = force(rho, eta, pack, cfg);
    if (rho_out) *rho_out = rho;
    if (pack_out) *pack_out = pack;
    return G;
}

ScalarField tilted_density(const SlabGrid& g) {
    return sample_scalar(g, [](double x1, double x2, double x3) {
        return std::sin(pi * x3) * (1 + 0.3 * std::cos(2 * pi * x1) + 0.2 * std::sin(2 * pi * x2));
    });
}

}  // namespace

TEST_CASE("rectangle potential against quadrature") {
    const double d = 0.37;
    double ref = simpson(
        [&](double y1) {
            return simpson([&](double y2) { return 1.0 / std::sqrt(y1 * y1 + y2 * y2 + d * d); }, -0.2, 0.5, 1e-13);
        },
        -0.3, 0.4, 1e-12);
    CHECK(rect_potential(-0.3, 0.4, -0.2, 0.5, d) == doctest::Approx(ref).epsilon(1e-9));
}

TEST_CASE("box potential of a cube around its centre") {
    // integral of 1/r over [-1,1]^3 = 24 * int over [0,1]^3; reference value by nested quadrature
    double ref = 8 * simpson(
                         [&](double z) {
                             return rect_potential(0, 1, 0, 1, z);
                         },
                         0, 1, 1e-12);
    CHECK(box_potential({-1, -1, -1}, {1, 1, 1}) == doctest::Approx(ref).epsilon(1e-8));
}

TEST_CASE("periodic kernel symmetries") {
    PeriodicKernel k(8, true, 2.0);
    std::array<double, 3> d{0.13, -0.31, 0.27};
    CHECK(k.value(d) == doctest::Approx(k.value({-d[0], -d[1], -d[2]})).epsilon(1e-12));
    CHECK(k.value(d) == doctest::Approx(k.value({d[0] + 1.0, d[1] - 2.0, d[2]})).epsilon(1e-12));
    double direct = PeriodicKernel::exact(d, 8, true);
    CHECK(k.value(d) == doctest::Approx(direct).epsilon(1e-7));
}

TEST_CASE("plane kernel approaches the slab Green function as image layers grow") {
    // with the tail correction the plane average tends to -2 pi |d| plus a constant
    double prev = 1e300;
    for (int layers : {4, 8, 16, 32}) {
        PlaneKernel k(layers, true, 2.0);
        double c = k.value(0.0), e = 0.0;
        for (double d : {0.1, 0.4, 0.9, 1.5}) {
            e = std::max(e, std::abs(k.value(d) - c + 2 * pi * d));
            CHECK(k.derivative(d) == doctest::Approx(-2 * pi).epsilon(2e-3));
        }
        CHECK(e < 0.25 * prev);
        prev = e;
    }
    CHECK(prev < 1e-5 * 2 * pi * 1.5);
}

TEST_CASE("zero density gives zero force") {
    SlabGrid g(4, 4, 9);
    FlowMap eta = identity_map(g);
    DeformationPack pack = build_deformation(eta);
    GravityConfig cfg;
    CHECK(max_abs(force(ScalarField(g), eta, pack, cfg)) == 0.0);
    auto out = brute_force_oracle([](const std::array<double, 3>&) { return std::array<double, 3>{0, 0, 0}; },
                                  [](const std::array<double, 3>& x) { return x; }, 1.0, {{0.2, 0.3, 0.4}}, cfg);
    CHECK(out[0][0] == 0.0);
    CHECK(out[0][1] == 0.0);
    CHECK(out[0][2] == 0.0);
}

TEST_CASE("force is invariant under translation of the flow map") {
    SlabGrid g(8, 8, 9);
    ScalarField rho = tilted_density(g);
    VectorField d = sample_vector(g, [](double x1, double, double x3) {
        return std::array<double, 3>{0, 0, 0.02 * std::sin(2 * pi * x1) * std::sin(pi * x3)};
    });
    FlowMap a(identity3, d);
    VectorField shifted = d;
    for (std::size_t n = 0; n < g.size(); ++n) {
        shifted(n, 0) += 0.25;
        shifted(n, 1) -= 0.125;
        shifted(n, 2) += 0.3;
    }
    FlowMap b(identity3, shifted);
    GravityConfig cfg;
    VectorField ga = force(rho, a, build_deformation(a), cfg), gb = force(rho, b, build_deformation(b), cfg);
    CHECK(max_abs(ga - gb) <= 1e-10 * max_abs(ga));
}

TEST_CASE("plane sine profile converges to the one-dimensional Poisson solution") {
    double prev = 0.0;
    for (int n3 : {32, 64, 128}) {
        VectorField G = plane_force(n3, 8);
        SlabGrid g = G.grid;
        ScalarField ex = sample_scalar(g, [](double, double, double x) { return std::cos(pi * x) / pi; });
        double e = testutil::max_diff(component(G, 2), ex);
        CHECK(max_abs(component(G, 0)) == 0.0);
        CHECK(max_abs(component(G, 1)) == 0.0);
        if (prev > 0.0) CHECK(e < prev);
        prev = e;
    }
    CHECK(prev < 1e-3);
}

TEST_CASE("Poisson identity residual") {
    SlabGrid g(1, 1, 32);
    FlowMap eta = identity_map(g);
    DeformationPack pack = build_deformation(eta);
    CHECK(max_abs(poisson_identity_residual(VectorField(g), ScalarField(g), pack)) == 0.0);
    ScalarField rho;
    DeformationPack p;
    VectorField G = plane_force(128, 8, &rho, &p);
    double r128 = max_abs(poisson_identity_residual(G, rho, p));
    CHECK(r128 <= 2e-2);
    double prev = 1e300;
    int layers = 2;
    for (int n3 : {32, 64, 128}) {
        VectorField Gn = plane_force(n3, layers, &rho, &p);
        double r = max_abs(poisson_identity_residual(Gn, rho, p));
        CHECK(r < prev);
        prev = r;
        layers *= 2;
    }
}

TEST_CASE("lattice force agrees with the plane force for tangentially uniform density") {
    SlabGrid g3(8, 8, 33), gp(1, 1, 33);
    auto rho = [](double, double, double x) { return std::sin(pi * x); };
    ScalarField r3 = sample_scalar(g3, rho), rp = sample_scalar(gp, rho);
    FlowMap e3 = identity_map(g3), ep = identity_map(gp);
    GravityConfig cfg;
    ForceReport rep;
    VectorField G3 = force(r3, e3, build_deformation(e3), cfg, &rep);
    CHECK_FALSE(rep.plane_symmetric);
    CHECK_FALSE(rep.layers_warning);
    VectorField Gp = force(rp, ep, build_deformation(ep), cfg);
    double err = 0.0, mom1 = 0.0, mom2 = 0.0;
    for (std::size_t n = 0; n < g3.size(); ++n) {
        int i1, i2, i3;
        g3.coords(n, i1, i2, i3);
        err = std::max(err, std::abs(G3(n, 2) - Gp(static_cast<std::size_t>(i3), 2)));
        mom1 += g3.weight(n) * r3(n) * G3(n, 0);
        mom2 += g3.weight(n) * r3(n) * G3(n, 1);
    }
    CHECK(err <= 5e-3 * max_abs(component(Gp, 2)));
    CHECK(std::abs(mom1) < 1e-12);
    CHECK(std::abs(mom2) < 1e-12);
}

TEST_CASE("image layer warning for tall bodies") {
    SlabGrid g(1, 1, 16, 4.0);
    ScalarField rho = sample_scalar(g, [](double, double, double x) { return std::sin(pi * x / 4.0); });
    FlowMap eta = identity_map(g);
    GravityConfig cfg;
    cfg.image_layers = 2;
    ForceReport rep;
    force(rho, eta, build_deformation(eta), cfg, &rep);
    CHECK(rep.layers_warning);
}

TEST_CASE("force time derivative") {
    SlabGrid g(8, 8, 16);
    ScalarField rho = tilted_density(g);
    VectorField v0 = sample_vector(g, [](double x1, double x2, double x3) {
        return std::array<double, 3>{0.1 * std::sin(2 * pi * x2) * x3, 0.1 * std::cos(2 * pi * x1),
                                     0.2 * std::sin(pi * x3) * std::cos(2 * pi * x1)};
    });
    GravityConfig cfg;
    FlowMap eta0 = identity_map(g);
    DeformationPack p0 = build_deformation(eta0);
    CHECK(max_abs(force_time_derivative(rho, eta0, VectorField(g), p0, cfg)) == 0.0);
    VectorField rigid(g);
    for (std::size_t n = 0; n < g.size(); ++n) {
        rigid(n, 0) = 0.3;
        rigid(n, 2) = -0.7;
    }
    CHECK(max_abs(force_time_derivative(rho, eta0, rigid, p0, cfg)) < 1e-12);

    // prescribed motion eta(t) = x + t v0: central differences of force converge at second order
    const double t = 0.1;
    auto at = [&](double s) {
        FlowMap e(identity3, s * v0);
        return force(rho, e, build_deformation(e), cfg);
    };
    FlowMap e(identity3, t * v0);
    VectorField dG = force_time_derivative(rho, e, v0, build_deformation(e), cfg);
    double e1 = max_abs((1.0 / 0.02) * (at(t + 0.01) - at(t - 0.01)) - dG);
    double e2 = max_abs((1.0 / 0.01) * (at(t + 0.005) - at(t - 0.005)) - dG);
    CHECK(testutil::slope(e1, e2) > 1.9);
    CHECK(e2 < 1e-5 * max_abs(dG));
}

TEST_CASE("oracle respects the midplane symmetry") {
    GravityConfig cfg;
    OracleOptions opt;
    opt.rel_tol = 1e-5;
    auto src = [](const std::array<double, 3>& z) { return std::array<double, 3>{0, 0, pi * std::cos(pi * z[2])}; };
    auto id = [](const std::array<double, 3>& x) { return x; };
    auto out = brute_force_oracle(src, id, 1.0, {{0.0, 0.0, 0.5}, {0.25, 0.5, 0.25}}, cfg, opt);
    CHECK(std::abs(out[0][2]) < 1e-8);
    // plane-symmetric source: G3 = cos(pi x3) / pi
    CHECK(out[1][2] == doctest::Approx(std::cos(pi * 0.25) / pi).epsilon(1e-4));
}

TEST_CASE("configuration errors") {
    CHECK_THROWS_AS(parse_selfcell_rule("nearest"), PreconditionError);
    CHECK(parse_selfcell_rule(to_string(SelfCellRule::analytic_cell)) == SelfCellRule::analytic_cell);
    SlabGrid g(4, 1, 8);
    FlowMap eta = identity_map(g);
    GravityConfig cfg;
    CHECK_THROWS_AS(force(ScalarField(g, 1.0), eta, build_deformation(eta), cfg), PreconditionError);
}
