#include <cstdio>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "epsolver/dynamics.hpp"
#include "epsolver/initial_data.hpp"
#include "test_util.hpp"

using namespace epsolver;
using testutil::pi;

namespace {

double bump(double t) { return std::abs(t) < 1.0 ? std::exp(-1.0 / (1.0 - t * t)) : 0.0; }

// Composite Simpson on [-1, 1] with many panels; the bump is smooth so this is plenty.
double bump_moment(const std::function<double(double)>& w) {
    const int n = 4000;
    double h = 2.0 / n, s = 0.0;
    for (int i = 0; i <= n; ++i) {
        double t = -1.0 + i * h;
        double c = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
        s += c * bump(t) * w(t);
    }
    return s * h / 3;
}

VectorField hydrostatic_residual(int n3, int layers) {
    SlabGrid g(1, 1, n3, std::sqrt(2.0) * pi);
    DensityProfile p = make_profile(ProfileKind::lane_emden_slab, 2.0, g);
    FlowMap eta = identity_map(g);
    GravityConfig cfg;
    cfg.image_layers = layers;
    return 2.0 * gradient(p.rho0) - force(p.rho0, eta, build_deformation(eta), cfg);
}

}  // namespace

TEST_CASE("sine profile") {
    SlabGrid g(1, 1, 65);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    CHECK(testutil::max_diff(p.omega0, p.rho0) == 0.0);
    CHECK(p.slope.bottom[0] == doctest::Approx(-pi).epsilon(1e-5));
    CHECK(p.slope.top[0] == doctest::Approx(-pi).epsilon(1e-5));
    VacuumReport r = vacuum_check(p, 0.1);
    CHECK(r.pass);
    // min of sin(pi z) / z over the band, at the outermost node inside it
    const double z = 6.0 / 64.0;
    CHECK(r.c_dist >= 2.0);
    CHECK(r.c_dist == doctest::Approx(std::sin(pi * z) / z).epsilon(1e-12));
}

TEST_CASE("parabolic profile") {
    SlabGrid g(2, 2, 41);
    DensityProfile p = make_profile(ProfileKind::parabolic, 2.0, g);
    for (double s : p.slope.bottom) CHECK(s == doctest::Approx(-1.0).epsilon(1e-10));
    for (double s : p.slope.top) CHECK(s == doctest::Approx(-1.0).epsilon(1e-10));
    VacuumReport r = vacuum_check(p, 0.1);
    CHECK(r.pass);
    CHECK(r.c_dist >= 0.5);
}

TEST_CASE("profile errors") {
    SlabGrid g(1, 1, 33);
    CHECK_THROWS_AS(make_profile(ProfileKind::sine, 1.0, g), PreconditionError);
    CHECK_THROWS_AS(make_profile(ProfileKind::sine, 3.0, g), PreconditionError);
    SlabGrid le(1, 1, 33, std::sqrt(2.0) * pi);
    CHECK_THROWS_AS(make_profile(ProfileKind::lane_emden_slab, 1.5, le), PreconditionError);
    CHECK_THROWS_AS(make_profile(ProfileKind::lane_emden_slab, 2.0, g), PreconditionError);
    CHECK_THROWS_AS(parse_profile_kind("gaussian"), PreconditionError);
    CHECK(parse_profile_kind(to_string(ProfileKind::custom_table)) == ProfileKind::custom_table);
}

TEST_CASE("Lane-Emden slab is hydrostatic") {
    double r64 = max_abs(hydrostatic_residual(64, 4));
    double r128 = max_abs(hydrostatic_residual(128, 8));
    CHECK(r128 <= 1e-2);
    CHECK(r128 < r64);
}

TEST_CASE("vacuum check failures") {
    SlabGrid g(1, 1, 65);
    auto degenerate = profile_from_density(
        2.0, sample_scalar(g, [](double, double, double z) { return z * z * (1 - z) * (1 - z); }));
    VacuumReport a = vacuum_check(degenerate, 0.1);
    CHECK_FALSE(a.pass);
    CHECK(a.reason.find("slope") != std::string::npos);
    auto constant = profile_from_density(2.0, ScalarField(g, 0.5));
    VacuumReport b = vacuum_check(constant, 0.1);
    CHECK_FALSE(b.pass);
    CHECK(b.reason.find("faces") != std::string::npos);
}

TEST_CASE("custom table profile") {
    std::string path = "test_initial_data_table.txt";
    {
        std::ofstream out(path);
        out << "# x3 rho0\n";
        for (int i = 0; i <= 200; ++i) {
            double z = i / 200.0;
            out << z << " " << z * (1 - z) << "\n";
        }
    }
    SlabGrid g(1, 1, 41);
    ProfileParams prm;
    prm.table_path = path;
    DensityProfile p = make_profile(ProfileKind::custom_table, 2.0, g, prm);
    ScalarField ex = sample_scalar(g, [](double, double, double z) { return z * (1 - z); });
    CHECK(testutil::max_diff(p.rho0, ex) < 1e-5);
    {
        std::ofstream out(path);
        out << "0 0\n0.5 1\n1 1\n";
    }
    CHECK_THROWS_AS(make_profile(ProfileKind::custom_table, 2.0, g, prm), PreconditionError);
    std::remove(path.c_str());
}

TEST_CASE("omega round trip for gamma in (1,3)") {
    SlabGrid g(1, 1, 33);
    ScalarField rho = sample_scalar(g, [](double, double, double z) { return 0.7 * std::sin(pi * z) + 0.01; });
    for (double gamma : {1.2, 1.5, 2.0, 2.5, 2.9}) {
        DensityProfile p = profile_from_density(gamma, rho);
        DensityProfile q = profile_from_omega(gamma, p.omega0);
        CHECK(testutil::max_diff(q.rho0, rho) < 1e-14);
    }
}

TEST_CASE("interior mollifier") {
    SlabGrid g(8, 8, 65);
    ScalarField c(g, 2.5);
    CHECK(testutil::max_diff(mollify_interior(c, 0.1), c) < 1e-13);

    std::vector<std::string> warnings;
    mollify_interior(c, 0.001, &warnings);
    CHECK(warnings.size() == 1);
    CHECK_THROWS_AS(mollify_interior(c, 0.0), PreconditionError);

    // single tangential mode is multiplied by the bump factor
    ScalarField mode = sample_scalar(g, [](double x1, double, double) { return std::sin(2 * pi * x1); });
    double prev = 0.0;
    for (double eps : {0.4, 0.2, 0.1}) {
        ScalarField m = mollify_interior(mode, eps);
        double ratio = max_abs(m) / max_abs(mode);
        CHECK(ratio < 1.0);
        CHECK(ratio > prev);
        prev = ratio;
    }

    // smooth field: error O(eps^2)
    SlabGrid gf(4, 4, 257);
    ScalarField f = sample_scalar(gf, [](double x1, double, double z) {
        return std::cos(2 * pi * x1) * std::exp(z) + z * z;
    });
    double e1 = l2_norm(f - mollify_interior(f, 0.08));
    double e2 = l2_norm(f - mollify_interior(f, 0.04));
    CHECK(testutil::slope(e1, e2) > 1.8);
}

TEST_CASE("mollifier keeps densities nonnegative with unit mass") {
    SlabGrid g(1, 1, 129);
    ScalarField rho = sample_scalar(g, [](double, double, double z) { return 0.5 * pi * std::sin(pi * z); });
    CHECK(integrate(rho) == doctest::Approx(1.0).epsilon(1e-4));
    for (double eps : {0.05, 0.02}) {
        ScalarField m = mollify_interior(rho, eps);
        double mn = 1e300;
        for (std::size_t n = 1; n + 1 < g.size(); ++n) mn = std::min(mn, m(n));
        CHECK(mn >= 0.0);
        CHECK(integrate(m) == doctest::Approx(1.0).epsilon(1e-2));
    }
}

TEST_CASE("boundary convolution") {
    SlabGrid g(16, 16, 5);
    FaceField c(g, 1.75);
    FaceField cc = boundary_convolution(c, 0.1);
    for (double v : cc.bottom) CHECK(v == doctest::Approx(1.75).epsilon(1e-13));
    CHECK_THROWS_AS(boundary_convolution(c, 0.0), PreconditionError);

    // band-limited step-like data: theta |grad Lambda f| / |f| stays bounded
    FaceField f(g);
    for (int i2 = 0; i2 < 16; ++i2)
        for (int i1 = 0; i1 < 16; ++i1) {
            double x = i1 / 16.0, s = 0.0;
            for (int k = 1; k <= 7; k += 2) s += std::sin(2 * pi * k * x) / k;
            f.bottom[i1 + 16 * i2] = s;
            f.top[i1 + 16 * i2] = -s;
        }
    double f0 = std::sqrt(face_norm_squared(f, 0));
    std::vector<double> ratios;
    for (double theta : {0.2, 0.1, 0.05}) {
        FaceField l = boundary_convolution(f, theta);
        CHECK(face_norm_squared(l, 0) <= face_norm_squared(f, 0) * (1 + 1e-12));
        double d = 0.0;
        for (auto* face : {&l.bottom, &l.top})
            for (int dir : {0, 1}) {
                auto p = face_partial(g, *face, dir);
                for (std::size_t m = 0; m < p.size(); ++m) d += p[m] * p[m] / g.face_size();
            }
        ratios.push_back(theta * std::sqrt(d) / f0);
    }
    for (double r : ratios) CHECK(r < 2.0);

    // translation by one node commutes with the convolution
    FaceField shifted(g);
    for (int i2 = 0; i2 < 16; ++i2)
        for (int i1 = 0; i1 < 16; ++i1) {
            shifted.bottom[i1 + 16 * i2] = f.bottom[(i1 + 1) % 16 + 16 * i2];
            shifted.top[i1 + 16 * i2] = f.top[(i1 + 1) % 16 + 16 * i2];
        }
    FaceField a = boundary_convolution(f, 0.1), b = boundary_convolution(shifted, 0.1);
    for (int i2 = 0; i2 < 16; ++i2)
        for (int i1 = 0; i1 < 16; ++i1)
            CHECK(b.bottom[i1 + 16 * i2] == doctest::Approx(a.bottom[(i1 + 1) % 16 + 16 * i2]).epsilon(1e-12));
}

TEST_CASE("smoothed sine profile has a closed form") {
    // the mollifier damps sin(pi z) by a factor c and the boundary correction restores the
    // slopes with a quadratic: rho_k = c sin(pi z) + (1 - c) pi z (1 - z)
    SlabGrid g(1, 1, 129);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    const double kappa = 1e-3;
    const double a = (1.0 / std::abs(std::log(kappa))) / std::sqrt(3.0);
    const double c = bump_moment([&](double t) { return std::cos(pi * a * t); }) / bump_moment([](double) { return 1.0; });
    DensityProfile s = smooth_density(p, kappa);
    ScalarField ex = sample_scalar(g, [&](double, double, double z) {
        return c * std::sin(pi * z) + (1 - c) * pi * z * (1 - z);
    });
    CHECK(testutil::max_diff(s.rho0, ex) < 1e-6);
    CHECK(s.rho0.data.front() == 0.0);
    CHECK(s.rho0.data.back() == 0.0);
    CHECK(s.slope.bottom[0] < 0.0);
    CHECK(s.slope.top[0] < 0.0);
}

TEST_CASE("smoothing converges as kappa decreases") {
    SlabGrid g(4, 4, 65);
    DensityProfile p = profile_from_omega(2.0, sample_scalar(g, [](double x1, double x2, double z) {
        return z * (1 - z) * (1 + 0.2 * std::cos(2 * pi * x1) + 0.1 * std::sin(2 * pi * x2));
    }));
    double prev = 1e300;
    for (double kappa : {1e-1, 1e-2, 1e-3}) {
        DensityProfile s = smooth_density(p, kappa);
        double d = l2_norm(s.rho0 - p.rho0);
        CHECK(d < prev);
        prev = d;
        std::size_t fs = g.face_size();
        for (std::size_t m = 0; m < fs; ++m) {
            CHECK(s.rho0.data[m] == 0.0);
            CHECK(s.rho0.data[(g.n3 - 1) * fs + m] == 0.0);
        }
        CHECK(vacuum_check(s, 0.1).pass);
    }
    CHECK_THROWS_AS(smooth_density(p, 0.0), PreconditionError);
}

TEST_CASE("first time derivative") {
    SlabGrid g(1, 1, 65);
    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    FlowMap eta = identity_map(g);
    GravityConfig on;
    VectorField G = force(p.rho0, eta, build_deformation(eta), on);
    VectorField zero(g);
    bool included = false;
    VectorField u1 = first_time_derivative(zero, p, 0.0, on, &included);
    CHECK(included);
    CHECK(max_abs(u1 - (G - 2.0 * gradient(p.rho0))) < 1e-12);

    GravityConfig off;
    off.enabled = false;
    u1 = first_time_derivative(zero, p, 0.0, off, &included);
    CHECK_FALSE(included);
    CHECK(max_abs(u1 + 2.0 * gradient(p.rho0)) < 1e-12);

    SlabGrid g3(4, 4, 17);
    DensityProfile p3 = make_profile(ProfileKind::sine, 2.0, g3);
    VectorField u0 = sample_vector(g3, [](double x1, double, double z) {
        return std::array<double, 3>{0.1 * std::sin(2 * pi * x1), 0.0, 0.2 * std::sin(pi * z)};
    });
    VectorField base = first_time_derivative(u0, p3, 0.0, on);
    VectorField one = first_time_derivative(u0, p3, 1e-2, on) - base;
    VectorField two = first_time_derivative(u0, p3, 2e-2, on) - base;
    CHECK(max_abs(one) > 0.0);
    CHECK(max_abs(two - 2.0 * one) < 1e-12 * max_abs(two));
}
