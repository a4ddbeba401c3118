#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "epsolver/grid.hpp"
#include "test_util.hpp"

using namespace epsolver;
using testutil::pi;

TEST_CASE("grid indexing wraps tangentially and includes both faces") {
    SlabGrid g(4, 3, 9, 2.0);
    CHECK(g.index(1, 2, 5) == g.index(1 + 4, 2 - 3, 5));
    CHECK(g.x3(0) == 0.0);
    CHECK(g.x3(8) == 2.0);
    int i1, i2, i3;
    g.coords(g.index(3, 1, 7), i1, i2, i3);
    CHECK(i1 == 3);
    CHECK(i2 == 1);
    CHECK(i3 == 7);
    CHECK(SlabGrid(1, 1, 16).plane_symmetric());
}

TEST_CASE("grid rejects too few normal nodes") { CHECK_THROWS(SlabGrid(4, 4, 3)); }

TEST_CASE("field arithmetic requires matching grids") {
    ScalarField a(SlabGrid(4, 4, 8)), b(SlabGrid(4, 4, 9));
    CHECK_THROWS_AS(a += b, GridMismatch);
    CHECK_THROWS_AS(divergence(VectorField(SlabGrid(4, 4, 8))) + ScalarField(SlabGrid(2, 4, 8)), GridMismatch);
}

TEST_CASE("gradient of a constant vanishes") {
    SlabGrid g(8, 6, 16, 1.3);
    VectorField d = gradient(ScalarField(g, 3.7));
    CHECK(max_abs(d) < 1e-12);
}

TEST_CASE("gradient of a single tangential mode is spectrally exact") {
    SlabGrid g(8, 8, 16);
    VectorField d = gradient(sample_scalar(g, [](double x1, double, double) { return std::sin(2 * pi * x1); }));
    ScalarField ex = sample_scalar(g, [](double x1, double, double) { return 2 * pi * std::cos(2 * pi * x1); });
    CHECK(testutil::max_diff(component(d, 0), ex) < 1e-12);
    CHECK(max_abs(component(d, 1)) < 1e-12);
    CHECK(max_abs(component(d, 2)) < 1e-12);
}

TEST_CASE("normal derivative is fourth order") {
    // Error constants from three refinements; x3^5 exercises the one-sided closures.
    double err[3];
    int k = 0;
    for (int n3 : {32, 64, 128}) {
        SlabGrid g(1, 1, n3);
        ScalarField d = partial(sample_scalar(g, [](double, double, double x) { return std::pow(x, 5); }), 2);
        ScalarField ex = sample_scalar(g, [](double, double, double x) { return 5 * std::pow(x, 4); });
        err[k++] = testutil::max_diff(d, ex);
    }
    CHECK(testutil::slope(err[0], err[1]) > 3.7);
    CHECK(testutil::slope(err[1], err[2]) > 3.7);
    // x3^2 is reproduced exactly by a fourth-order stencil.
    SlabGrid g(1, 1, 32);
    ScalarField d = partial(sample_scalar(g, [](double, double, double x) { return x * x; }), 2);
    CHECK(testutil::max_diff(d, sample_scalar(g, [](double, double, double x) { return 2 * x; })) < 1e-11);
}

TEST_CASE("tangential gradient") {
    SlabGrid g(8, 8, 16);
    CHECK(max_abs(tangential_gradient(sample_scalar(g, [](double, double, double x) { return x; }))) < 1e-13);
    VectorField t = tangential_gradient(sample_scalar(g, [](double, double x2, double) { return std::cos(2 * pi * x2); }));
    CHECK(max_abs(component(t, 0)) < 1e-12);
    CHECK(testutil::max_diff(component(t, 1), sample_scalar(g, [](double, double x2, double) {
              return -2 * pi * std::sin(2 * pi * x2);
          })) < 1e-12);
    // band-limited field: agrees with the full gradient in directions 1, 2
    ScalarField f = sample_scalar(g, [](double x1, double x2, double x3) {
        return std::sin(2 * pi * x1 + 0.3) * std::cos(4 * pi * x2) * std::exp(x3) + std::cos(2 * pi * x2) * x3;
    });
    VectorField full = gradient(f), tang = tangential_gradient(f);
    CHECK(testutil::max_diff(component(full, 0), component(tang, 0)) == 0.0);
    CHECK(testutil::max_diff(component(full, 1), component(tang, 1)) == 0.0);
}

TEST_CASE("divergence and curl examples") {
    SlabGrid g(8, 8, 32);
    VectorField sol = sample_vector(g, [](double x1, double x2, double) {
        return std::array<double, 3>{-std::sin(2 * pi * x2), std::sin(2 * pi * x1), 0.0};
    });
    CHECK(max_abs(divergence(sol)) < 1e-12);
    VectorField lin = sample_vector(g, [](double, double, double x3) { return std::array<double, 3>{0, 0, x3}; });
    CHECK(testutil::max_diff(divergence(lin), ScalarField(g, 1.0)) < 1e-12);
    ScalarField f = sample_scalar(g, [](double x1, double x2, double x3) {
        return std::sin(2 * pi * x1) * std::cos(2 * pi * x2) * std::sin(pi * x3);
    });
    CHECK(max_abs(curl(gradient(f))) < 1e-3);
    // permutation convention: curl(0, 0, sin 2 pi x1)^2 = -d1 v^3
    VectorField v = sample_vector(g, [](double x1, double, double) { return std::array<double, 3>{0, 0, std::sin(2 * pi * x1)}; });
    ScalarField c2 = component(curl(v), 1);
    CHECK(testutil::max_diff(c2, sample_scalar(g, [](double x1, double, double) { return -2 * pi * std::cos(2 * pi * x1); })) <
          1e-12);
}

TEST_CASE("norms on the unit slab") {
    SlabGrid g(8, 8, 65);
    CHECK(l2_norm_squared(ScalarField(g, 1.0)) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(l2_norm_squared(sample_scalar(g, [](double x1, double, double) { return std::sin(2 * pi * x1); })) ==
          doctest::Approx(0.5).epsilon(1e-13));
    // closed form 1/2 + pi^2/2, trapezoid error O(h^2)
    double prev = 0.0;
    for (int n3 : {33, 65, 129}) {
        SlabGrid gg(1, 1, n3);
        double s1 = sobolev_norm_squared(sample_scalar(gg, [](double, double, double x) { return std::sin(pi * x); }), 1);
        double e = std::abs(s1 - (0.5 + pi * pi / 2));
        if (prev > 0.0) CHECK(testutil::slope(prev, e) > 1.8);
        prev = e;
    }
    CHECK(prev < 1e-3);
    ScalarField neg(g, -1.0);
    CHECK_THROWS_AS(l2_norm_squared(ScalarField(g, 1.0), &neg), PreconditionError);
    CHECK_THROWS_AS(sobolev_norm_squared(ScalarField(g, 1.0), 5), PreconditionError);
}

TEST_CASE("snapshot round trip is bit exact") {
    SlabGrid g(4, 2, 7, 1.7);
    VectorField v = sample_vector(g, [](double a, double b, double c) { return std::array<double, 3>{a, b * 1e-300, c / 3}; });
    auto path = (std::filesystem::temp_directory_path() / "epsolver_snapshot_test.epfs").string();
    write_snapshot(path, v);
    VectorField r = read_field<3>(path);
    CHECK(r.grid == g);
    CHECK(r.data == v.data);
    CHECK_THROWS_AS(read_field<1>(path), PreconditionError);
    std::filesystem::remove(path);
}
