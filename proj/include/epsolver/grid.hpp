#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "epsolver/errors.hpp"

namespace epsolver {

// Node set on T^2 x [0, L3]. Directions 1,2 have period 1 and n1, n2 nodes;
// direction 3 has n3 nodes including both faces.
struct SlabGrid {
    int n1 = 1, n2 = 1, n3 = 4;
    double length3 = 1.0;

    SlabGrid() = default;
    SlabGrid(int n1_, int n2_, int n3_, double length3_ = 1.0);

    double h1() const { return 1.0 / n1; }
    double h2() const { return 1.0 / n2; }
    double h3() const { return length3 / (n3 - 1); }
    double x1(int i1) const { return i1 * h1(); }
    double x2(int i2) const { return i2 * h2(); }
    double x3(int i3) const { return i3 == n3 - 1 ? length3 : i3 * h3(); }

    std::size_t size() const { return static_cast<std::size_t>(n1) * n2 * n3; }
    std::size_t face_size() const { return static_cast<std::size_t>(n1) * n2; }
    // Tangential indices wrap; i1 runs fastest.
    std::size_t index(int i1, int i2, int i3) const;
    void coords(std::size_t node, int& i1, int& i2, int& i3) const;
    std::array<double, 3> position(std::size_t node) const;

    bool plane_symmetric() const { return n1 == 1 && n2 == 1; }
    // Smallest spacing among directions that actually vary.
    double min_active_spacing() const;
    // Trapezoid weight of a node (half weight on the two faces).
    double weight(std::size_t node) const;

    bool operator==(const SlabGrid& o) const {
        return n1 == o.n1 && n2 == o.n2 && n3 == o.n3 && length3 == o.length3;
    }
    bool operator!=(const SlabGrid& o) const { return !(*this == o); }
};

// Node-collocated field with C components per node, component innermost.
template <int C>
struct Field {
    SlabGrid grid;
    std::vector<double> data;

    Field() = default;
    explicit Field(const SlabGrid& g, double fill = 0.0) : grid(g), data(g.size() * C, fill) {}

    static constexpr int components = C;
    std::size_t nodes() const { return grid.size(); }
    double& operator()(std::size_t node, int c = 0) { return data[node * C + c]; }
    double operator()(std::size_t node, int c = 0) const { return data[node * C + c]; }

    Field& operator+=(const Field& o) {
        if (grid != o.grid) throw GridMismatch();
        for (std::size_t k = 0; k < data.size(); ++k) data[k] += o.data[k];
        return *this;
    }
    Field& operator-=(const Field& o) {
        if (grid != o.grid) throw GridMismatch();
        for (std::size_t k = 0; k < data.size(); ++k) data[k] -= o.data[k];
        return *this;
    }
    Field& operator*=(double s) {
        for (double& x : data) x *= s;
        return *this;
    }
    friend Field operator+(Field a, const Field& b) { return a += b; }
    friend Field operator-(Field a, const Field& b) { return a -= b; }
    friend Field operator*(Field a, double s) { return a *= s; }
    friend Field operator*(double s, Field a) { return a *= s; }
    Field operator-() const { return (*this) * -1.0; }
};

using ScalarField = Field<1>;
using VectorField = Field<3>;
// Row i (component), column k (derivative direction): entry 3*i + k.
using TensorField = Field<9>;

// Values on the two faces x3 = 0 ("bottom") and x3 = L3 ("top").
struct FaceField {
    SlabGrid grid;
    std::vector<double> bottom, top;
    FaceField() = default;
    explicit FaceField(const SlabGrid& g, double fill = 0.0)
        : grid(g), bottom(g.face_size(), fill), top(g.face_size(), fill) {}
};

template <class Fn>
ScalarField sample_scalar(const SlabGrid& g, Fn&& fn) {
    ScalarField f(g);
    for (std::size_t n = 0; n < g.size(); ++n) {
        auto x = g.position(n);
        f(n) = fn(x[0], x[1], x[2]);
    }
    return f;
}

template <class Fn>
VectorField sample_vector(const SlabGrid& g, Fn&& fn) {
    VectorField f(g);
    for (std::size_t n = 0; n < g.size(); ++n) {
        auto x = g.position(n);
        std::array<double, 3> v = fn(x[0], x[1], x[2]);
        for (int c = 0; c < 3; ++c) f(n, c) = v[c];
    }
    return f;
}

ScalarField component(const VectorField& v, int c);
void set_component(VectorField& v, int c, const ScalarField& s);
ScalarField pointwise_product(const ScalarField& a, const ScalarField& b);
FaceField trace(const ScalarField& f);

// Partial derivative along direction dir (0,1,2). Spectral in 0,1;
// fourth-order differences in 2 with one-sided closures.
ScalarField partial(const ScalarField& f, int dir);
VectorField gradient(const ScalarField& f);
VectorField tangential_gradient(const ScalarField& f);
ScalarField divergence(const VectorField& v);
VectorField curl(const VectorField& v);
// Row i holds the gradient of component i.
TensorField jacobian_matrix(const VectorField& v);
// Derivative along a face (dir 0 or 1).
std::vector<double> face_partial(const SlabGrid& g, const std::vector<double>& face, int dir);

// Dense differentiation matrix for n equispaced nodes on a unit period.
const std::vector<double>& spectral_diff_matrix(int n);

double integrate(const ScalarField& f);
double face_integral(const SlabGrid& g, const std::vector<double>& face);

template <int C>
double l2_norm_squared(const Field<C>& f, const ScalarField* weight = nullptr);
template <int C>
double l2_norm(const Field<C>& f, const ScalarField* weight = nullptr);
// Sum over multi-indices |alpha| <= s of ||D^alpha f||^2.
double sobolev_norm_squared(const ScalarField& f, int s);
double sobolev_norm_squared(const VectorField& f, int s);
// Sum over a+b = k of ||d1^a d2^b f||^2, optionally weighted.
double tangential_norm_squared(const ScalarField& f, int k, const ScalarField* weight = nullptr);
// Boundary norm |f|_k^2 over both faces.
double face_norm_squared(const FaceField& f, int k);

template <int C>
double max_abs(const Field<C>& f);

std::uint64_t checksum(const std::vector<double>& data);
template <int C>
std::uint64_t checksum(const Field<C>& f) {
    return checksum(f.data);
}

// Binary snapshot: "EPFS", version, n1, n2, n3, L3, component count, values.
struct Snapshot {
    SlabGrid grid;
    std::uint32_t components = 0;
    std::vector<double> values;
};
constexpr std::uint32_t snapshot_version = 1;
void write_snapshot(const std::string& path, const SlabGrid& g, std::uint32_t components,
                    const std::vector<double>& values);
template <int C>
void write_snapshot(const std::string& path, const Field<C>& f) {
    write_snapshot(path, f.grid, C, f.data);
}
Snapshot read_snapshot(const std::string& path);
template <int C>
Field<C> read_field(const std::string& path) {
    Snapshot s = read_snapshot(path);
    if (s.components != static_cast<std::uint32_t>(C))
        throw PreconditionError("snapshot has " + std::to_string(s.components) + " components, expected " +
                                std::to_string(C));
    Field<C> f(s.grid);
    f.data = std::move(s.values);
    return f;
}

}  // namespace epsolver
