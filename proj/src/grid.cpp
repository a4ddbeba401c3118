#include "epsolver/grid.hpp"

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace epsolver {

SlabGrid::SlabGrid(int n1_, int n2_, int n3_, double length3_) : n1(n1_), n2(n2_), n3(n3_), length3(length3_) {
    if (n1 < 1 || n2 < 1) throw PreconditionError("tangential node counts must be >= 1");
    if (n3 < 4) throw PreconditionError("normal node count must be >= 4");
    if (!(length3 > 0.0) || !std::isfinite(length3)) throw PreconditionError("slab height must be positive");
}

std::size_t SlabGrid::index(int i1, int i2, int i3) const {
    i1 %= n1;
    if (i1 < 0) i1 += n1;
    i2 %= n2;
    if (i2 < 0) i2 += n2;
    return static_cast<std::size_t>(i1) + static_cast<std::size_t>(n1) * (i2 + static_cast<std::size_t>(n2) * i3);
}

void SlabGrid::coords(std::size_t node, int& i1, int& i2, int& i3) const {
    i1 = static_cast<int>(node % n1);
    std::size_t r = node / n1;
    i2 = static_cast<int>(r % n2);
    i3 = static_cast<int>(r / n2);
}

std::array<double, 3> SlabGrid::position(std::size_t node) const {
    int i1, i2, i3;
    coords(node, i1, i2, i3);
    return {x1(i1), x2(i2), x3(i3)};
}

double SlabGrid::min_active_spacing() const {
    double h = h3();
    if (n1 > 1) h = std::min(h, h1());
    if (n2 > 1) h = std::min(h, h2());
    return h;
}

double SlabGrid::weight(std::size_t node) const {
    int i3 = static_cast<int>(node / face_size());
    double w = h1() * h2() * h3();
    return (i3 == 0 || i3 == n3 - 1) ? 0.5 * w : w;
}

ScalarField component(const VectorField& v, int c) {
    ScalarField s(v.grid);
    for (std::size_t n = 0; n < v.nodes(); ++n) s(n) = v(n, c);
    return s;
}

void set_component(VectorField& v, int c, const ScalarField& s) {
    if (v.grid != s.grid) throw GridMismatch();
    for (std::size_t n = 0; n < v.nodes(); ++n) v(n, c) = s(n);
}

ScalarField pointwise_product(const ScalarField& a, const ScalarField& b) {
    if (a.grid != b.grid) throw GridMismatch();
    ScalarField r(a.grid);
    for (std::size_t n = 0; n < a.nodes(); ++n) r(n) = a(n) * b(n);
    return r;
}

FaceField trace(const ScalarField& f) {
    FaceField t(f.grid);
    std::size_t fs = f.grid.face_size();
    std::size_t top0 = fs * (f.grid.n3 - 1);
    for (std::size_t k = 0; k < fs; ++k) {
        t.bottom[k] = f(k);
        t.top[k] = f(top0 + k);
    }
    return t;
}

const std::vector<double>& spectral_diff_matrix(int n) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<std::vector<double>>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return *it->second;
    auto m = std::make_unique<std::vector<double>>(static_cast<std::size_t>(n) * n, 0.0);
    // Row j, column l: sum over retained wavenumbers of (2 pi i k) e^{2 pi i k (j-l)/n} / n.
    // The Nyquist mode of an even n is dropped.
    int kmax = (n - 1) / 2;
    for (int j = 0; j < n; ++j)
        for (int l = 0; l < n; ++l) {
            double s = 0.0;
            for (int k = 1; k <= kmax; ++k) {
                double arg = 2.0 * std::numbers::pi * k * (j - l) / n;
                s += -2.0 * (2.0 * std::numbers::pi * k) * std::sin(arg);
            }
            (*m)[static_cast<std::size_t>(j) * n + l] = s / n;
        }
    auto& ref = *m;
    cache.emplace(n, std::move(m));
    return ref;
}

namespace {

void fd4_line(const double* f, std::ptrdiff_t stride, int n, double h, double* out, std::ptrdiff_t ostride) {
    const double c = 1.0 / (12.0 * h);
    auto F = [&](int i) { return f[i * stride]; };
    out[0] = c * (-25 * F(0) + 48 * F(1) - 36 * F(2) + 16 * F(3) - 3 * F(4));
    out[ostride] = c * (-3 * F(0) - 10 * F(1) + 18 * F(2) - 6 * F(3) + F(4));
    for (int i = 2; i < n - 2; ++i) out[i * ostride] = c * (F(i - 2) - 8 * F(i - 1) + 8 * F(i + 1) - F(i + 2));
    int a = n - 1;
    out[(a - 1) * ostride] = c * (3 * F(a) + 10 * F(a - 1) - 18 * F(a - 2) + 6 * F(a - 3) - F(a - 4));
    out[a * ostride] = c * (25 * F(a) - 48 * F(a - 1) + 36 * F(a - 2) - 16 * F(a - 3) + 3 * F(a - 4));
}

}  // namespace

ScalarField partial(const ScalarField& f, int dir) {
    const SlabGrid& g = f.grid;
    ScalarField r(g);
    if (dir == 2) {
        if (g.n3 < 5) throw PreconditionError("normal derivative needs at least 5 nodes in direction 3");
        std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(g.face_size());
        for (std::size_t k = 0; k < g.face_size(); ++k)
            fd4_line(f.data.data() + k, stride, g.n3, g.h3(), r.data.data() + k, stride);
        return r;
    }
    int n = dir == 0 ? g.n1 : g.n2;
    if (n == 1) return r;
    const std::vector<double>& D = spectral_diff_matrix(n);
    std::size_t stride = dir == 0 ? 1 : static_cast<std::size_t>(g.n1);
    for (std::size_t node = 0; node < g.size(); ++node) {
        int i1, i2, i3;
        g.coords(node, i1, i2, i3);
        int j = dir == 0 ? i1 : i2;
        std::size_t base = node - static_cast<std::size_t>(j) * stride;
        const double* row = D.data() + static_cast<std::size_t>(j) * n;
        double s = 0.0;
        for (int l = 0; l < n; ++l) s += row[l] * f.data[base + l * stride];
        r(node) = s;
    }
    return r;
}

std::vector<double> face_partial(const SlabGrid& g, const std::vector<double>& face, int dir) {
    std::vector<double> r(face.size(), 0.0);
    int n = dir == 0 ? g.n1 : g.n2;
    if (n == 1) return r;
    const std::vector<double>& D = spectral_diff_matrix(n);
    for (int i2 = 0; i2 < g.n2; ++i2)
        for (int i1 = 0; i1 < g.n1; ++i1) {
            double s = 0.0;
            int j = dir == 0 ? i1 : i2;
            for (int l = 0; l < n; ++l) {
                int a = dir == 0 ? l : i1, b = dir == 0 ? i2 : l;
                s += D[static_cast<std::size_t>(j) * n + l] * face[a + static_cast<std::size_t>(g.n1) * b];
            }
            r[i1 + static_cast<std::size_t>(g.n1) * i2] = s;
        }
    return r;
}

VectorField gradient(const ScalarField& f) {
    VectorField v(f.grid);
    for (int d = 0; d < 3; ++d) set_component(v, d, partial(f, d));
    return v;
}

VectorField tangential_gradient(const ScalarField& f) {
    VectorField v(f.grid);
    for (int d = 0; d < 2; ++d) set_component(v, d, partial(f, d));
    return v;
}

TensorField jacobian_matrix(const VectorField& v) {
    TensorField t(v.grid);
    for (int i = 0; i < 3; ++i) {
        ScalarField c = component(v, i);
        for (int k = 0; k < 3; ++k) {
            ScalarField d = partial(c, k);
            for (std::size_t n = 0; n < v.nodes(); ++n) t(n, 3 * i + k) = d(n);
        }
    }
    return t;
}

ScalarField divergence(const VectorField& v) {
    ScalarField r(v.grid);
    for (int k = 0; k < 3; ++k) r += partial(component(v, k), k);
    return r;
}

VectorField curl(const VectorField& v) {
    TensorField D = jacobian_matrix(v);
    VectorField r(v.grid);
    for (std::size_t n = 0; n < v.nodes(); ++n) {
        auto d = [&](int i, int k) { return D(n, 3 * i + k); };
        r(n, 0) = d(2, 1) - d(1, 2);
        r(n, 1) = d(0, 2) - d(2, 0);
        r(n, 2) = d(1, 0) - d(0, 1);
    }
    return r;
}

double integrate(const ScalarField& f) {
    const SlabGrid& g = f.grid;
    double s = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n) s += g.weight(n) * f(n);
    return s;
}

double face_integral(const SlabGrid& g, const std::vector<double>& face) {
    double s = 0.0;
    for (double x : face) s += x;
    return s * g.h1() * g.h2();
}

template <int C>
double l2_norm_squared(const Field<C>& f, const ScalarField* weight) {
    if (weight && weight->grid != f.grid) throw GridMismatch();
    const SlabGrid& g = f.grid;
    double s = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n) {
        double w = g.weight(n);
        if (weight) {
            if ((*weight)(n) < 0.0) throw PreconditionError("negative weight in l2 norm");
            w *= (*weight)(n);
        }
        double a = 0.0;
        for (int c = 0; c < C; ++c) a += f(n, c) * f(n, c);
        s += w * a;
    }
    return s;
}

template <int C>
double l2_norm(const Field<C>& f, const ScalarField* weight) {
    return std::sqrt(l2_norm_squared(f, weight));
}

template double l2_norm_squared<1>(const Field<1>&, const ScalarField*);
template double l2_norm_squared<3>(const Field<3>&, const ScalarField*);
template double l2_norm_squared<9>(const Field<9>&, const ScalarField*);
template double l2_norm<1>(const Field<1>&, const ScalarField*);
template double l2_norm<3>(const Field<3>&, const ScalarField*);
template double l2_norm<9>(const Field<9>&, const ScalarField*);

template <int C>
double max_abs(const Field<C>& f) {
    double m = 0.0;
    for (double x : f.data) m = std::max(m, std::abs(x));
    return m;
}
template double max_abs<1>(const Field<1>&);
template double max_abs<3>(const Field<3>&);
template double max_abs<9>(const Field<9>&);

double sobolev_norm_squared(const ScalarField& f, int s) {
    if (s < 0 || s > 4) throw PreconditionError("sobolev order must be in 0..4");
    double total = 0.0;
    ScalarField d3 = f;
    for (int c = 0; c <= s; ++c) {
        ScalarField d2 = d3;
        for (int b = 0; b + c <= s; ++b) {
            ScalarField d1 = d2;
            for (int a = 0; a + b + c <= s; ++a) {
                total += l2_norm_squared(d1);
                if (a + b + c < s) d1 = partial(d1, 0);
            }
            if (b + c < s) d2 = partial(d2, 1);
        }
        if (c < s) d3 = partial(d3, 2);
    }
    return total;
}

double sobolev_norm_squared(const VectorField& f, int s) {
    double t = 0.0;
    for (int c = 0; c < 3; ++c) t += sobolev_norm_squared(component(f, c), s);
    return t;
}

double tangential_norm_squared(const ScalarField& f, int k, const ScalarField* weight) {
    double total = 0.0;
    ScalarField d2 = f;
    for (int b = 0; b <= k; ++b) {
        ScalarField d1 = d2;
        for (int a = 0; a < k - b; ++a) d1 = partial(d1, 0);
        total += l2_norm_squared(d1, weight);
        if (b < k) d2 = partial(d2, 1);
    }
    return total;
}

double face_norm_squared(const FaceField& f, int k) {
    const SlabGrid& g = f.grid;
    double total = 0.0;
    for (const std::vector<double>* face : {&f.bottom, &f.top}) {
        std::vector<double> d2 = *face;
        for (int b = 0; b <= k; ++b) {
            std::vector<double> d1 = d2;
            for (int a = 0; a + b <= k; ++a) {
                double s = 0.0;
                for (double x : d1) s += x * x;
                total += s * g.h1() * g.h2();
                d1 = face_partial(g, d1, 0);
            }
            d2 = face_partial(g, d2, 1);
        }
    }
    return total;
}

std::uint64_t checksum(const std::vector<double>& data) {
    std::uint64_t h = 1469598103934665603ull;
    for (double x : data) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double x) {
    std::uint64_t v;
    std::memcpy(&v, &x, 8);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("snapshot truncated");
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b[k]) << (8 * k);
    return v;
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("snapshot truncated");
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    double x;
    std::memcpy(&x, &v, 8);
    return x;
}

}  // namespace

void write_snapshot(const std::string& path, const SlabGrid& g, std::uint32_t components,
                    const std::vector<double>& values) {
    if (values.size() != g.size() * components) throw PreconditionError("snapshot value count mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write("EPFS", 4);
    put_u32(os, snapshot_version);
    put_u32(os, static_cast<std::uint32_t>(g.n1));
    put_u32(os, static_cast<std::uint32_t>(g.n2));
    put_u32(os, static_cast<std::uint32_t>(g.n3));
    put_f64(os, g.length3);
    put_u32(os, components);
    for (double x : values) put_f64(os, x);
    if (!os) throw std::runtime_error("write failed for " + path);
}

Snapshot read_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "EPFS", 4) != 0) throw std::runtime_error("bad snapshot magic");
    std::uint32_t version = get_u32(is);
    if (version != snapshot_version) throw std::runtime_error("unsupported snapshot version");
    int n1 = static_cast<int>(get_u32(is)), n2 = static_cast<int>(get_u32(is)), n3 = static_cast<int>(get_u32(is));
    double L3 = get_f64(is);
    Snapshot s;
    s.grid = SlabGrid(n1, n2, n3, L3);
    s.components = get_u32(is);
    s.values.resize(s.grid.size() * s.components);
    for (double& x : s.values) x = get_f64(is);
    return s;
}

}  // namespace epsolver
