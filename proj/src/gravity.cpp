#include "epsolver/gravity.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

#include "epsolver/parallel.hpp"
#include "epsolver/quadrature.hpp"

namespace epsolver {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

double corner_phi(double x, double y, double d) {
    double r = std::sqrt(x * x + y * y + d * d);
    double t = 0.0;
    if (x != 0.0) t += x * std::asinh(y / std::sqrt(x * x + d * d));
    if (y != 0.0) t += y * std::asinh(x / std::sqrt(y * y + d * d));
    if (d != 0.0 && x != 0.0 && y != 0.0) t -= d * std::atan(x * y / (d * r));
    return t;
}

double corner_solid_angle(double x, double y, double d) {
    if (x == 0.0 || y == 0.0) return 0.0;
    double r = std::sqrt(x * x + y * y + d * d);
    return std::atan(x * y / (d * r));
}

double corner_psi(double x, double y, double z) {
    double r = std::sqrt(x * x + y * y + z * z);
    double s = 0.0;
    if (y != 0.0 && z != 0.0) s += y * z * std::asinh(x / std::sqrt(y * y + z * z));
    if (x != 0.0 && z != 0.0) s += x * z * std::asinh(y / std::sqrt(x * x + z * z));
    if (x != 0.0 && y != 0.0) s += x * y * std::asinh(z / std::sqrt(x * x + y * y));
    if (x != 0.0) s -= 0.5 * x * x * std::atan(y * z / (x * r));
    if (y != 0.0) s -= 0.5 * y * y * std::atan(x * z / (y * r));
    if (z != 0.0) s -= 0.5 * z * z * std::atan(x * y / (z * r));
    return s;
}

// d/dd of rect_potential for d != 0.
double rect_potential_dd(double ax, double bx, double ay, double by, double d) {
    if (d == 0.0) return 0.0;
    double ad = std::abs(d);
    double s = corner_solid_angle(bx, by, ad) - corner_solid_angle(ax, by, ad) - corner_solid_angle(bx, ay, ad) +
               corner_solid_angle(ax, ay, ad);
    return d > 0 ? -s : s;
}

void lagrange4(double t, double* w, double* dw) {
    w[0] = -t * (t - 1) * (t - 2) / 6.0;
    w[1] = (t + 1) * (t - 1) * (t - 2) / 2.0;
    w[2] = -(t + 1) * t * (t - 2) / 2.0;
    w[3] = (t + 1) * t * (t - 1) / 6.0;
    if (dw) {
        dw[0] = -(3 * t * t - 6 * t + 2) / 6.0;
        dw[1] = (3 * t * t - 4 * t - 1) / 2.0;
        dw[2] = -(3 * t * t - 2 * t - 2) / 2.0;
        dw[3] = (3 * t * t - 1) / 6.0;
    }
}

double reduce(double x) { return x - std::nearbyint(x); }

std::array<double, 3> apply(const Mat3& F, const std::array<double, 3>& r) {
    return {F[0] * r[0] + F[1] * r[1] + F[2] * r[2], F[3] * r[0] + F[4] * r[1] + F[5] * r[2],
            F[6] * r[0] + F[7] * r[1] + F[8] * r[2]};
}

double dot(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

// Integral over the box of a kernel homogeneous of degree -1, by splitting the box
// into pyramids with apex at the origin.
template <class Kernel>
double pyramid_integral(const std::array<double, 3>& lo, const std::array<double, 3>& hi, Kernel&& k, int order) {
    const GaussRule& g = gauss_legendre(order);
    double total = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
        int a = (axis + 1) % 3, b = (axis + 2) % 3;
        for (double c : {lo[axis], hi[axis]}) {
            if (c == 0.0) continue;
            double ha = 0.5 * (hi[a] - lo[a]), ma = 0.5 * (hi[a] + lo[a]);
            double hb = 0.5 * (hi[b] - lo[b]), mb = 0.5 * (hi[b] + lo[b]);
            double face = 0.0;
            for (int i = 0; i < order; ++i)
                for (int j = 0; j < order; ++j) {
                    std::array<double, 3> p{};
                    p[axis] = c;
                    p[a] = ma + ha * g.nodes[i];
                    p[b] = mb + hb * g.nodes[j];
                    face += g.weights[i] * g.weights[j] * k(p);
                }
            total += 0.5 * std::abs(c) * face * ha * hb;
        }
    }
    return total;
}

}  // namespace

SelfCellRule parse_selfcell_rule(const std::string& s) {
    if (s == "polar-subgrid") return SelfCellRule::polar_subgrid;
    if (s == "analytic-cell") return SelfCellRule::analytic_cell;
    throw PreconditionError("unknown self-cell rule '" + s + "'");
}

std::string to_string(SelfCellRule r) {
    return r == SelfCellRule::polar_subgrid ? "polar-subgrid" : "analytic-cell";
}

double rect_potential(double ax, double bx, double ay, double by, double d) {
    d = std::abs(d);
    return corner_phi(bx, by, d) - corner_phi(ax, by, d) - corner_phi(bx, ay, d) + corner_phi(ax, ay, d);
}

double box_potential(const std::array<double, 3>& lo, const std::array<double, 3>& hi) {
    double s = 0.0;
    for (int m = 0; m < 8; ++m) {
        double x = (m & 1) ? hi[0] : lo[0];
        double y = (m & 2) ? hi[1] : lo[1];
        double z = (m & 4) ? hi[2] : lo[2];
        int lows = !(m & 1) + !(m & 2) + !(m & 4);
        s += (lows % 2 ? -1.0 : 1.0) * corner_psi(x, y, z);
    }
    return s;
}

double selfcell_integral(const Mat3& F, const std::array<double, 3>& lo, const std::array<double, 3>& hi,
                         SelfCellRule rule) {
    if (rule == SelfCellRule::analytic_cell) {
        double s[3];
        for (int k = 0; k < 3; ++k) s[k] = std::sqrt(F[k] * F[k] + F[3 + k] * F[3 + k] + F[6 + k] * F[6 + k]);
        std::array<double, 3> l{}, h{};
        for (int k = 0; k < 3; ++k) {
            l[k] = s[k] * lo[k];
            h[k] = s[k] * hi[k];
        }
        return box_potential(l, h) / (s[0] * s[1] * s[2]);
    }
    return pyramid_integral(
        lo, hi,
        [&](const std::array<double, 3>& p) {
            auto q = apply(F, p);
            return 1.0 / std::sqrt(dot(q, q));
        },
        16);
}

double selfcell_rate_integral(const Mat3& F, const Mat3& A, const std::array<double, 3>& lo,
                              const std::array<double, 3>& hi) {
    return pyramid_integral(
        lo, hi,
        [&](const std::array<double, 3>& p) {
            auto q = apply(F, p);
            auto a = apply(A, p);
            double r2 = dot(q, q);
            return dot(q, a) / (r2 * std::sqrt(r2));
        },
        16);
}

// ---------------------------------------------------------------------------

PeriodicKernel::PeriodicKernel(int layers, bool tail, double max_vertical)
    : layers_(layers), tail_(tail), step_(1.0 / 32.0) {
    if (layers < 0) throw PreconditionError("image layers must be >= 0");
    double A = layers + 0.5;
    monopole_ = rect_potential(-A, A, -A, A, 0.0);
    nh_ = static_cast<int>(std::lround(1.0 / step_)) + 4;
    nv_ = static_cast<int>(std::ceil(max_vertical / step_)) + 4;
    zmax_ = (nv_ - 3) * step_ - 1e-12;
    table_.resize(static_cast<std::size_t>(nh_) * nh_ * nv_);
    for (int c = 0; c < nv_; ++c)
        for (int b = 0; b < nh_; ++b)
            for (int a = 0; a < nh_; ++a) {
                double x = -0.5 - step_ + a * step_, y = -0.5 - step_ + b * step_, z = -step_ + c * step_;
                table_[(static_cast<std::size_t>(c) * nh_ + b) * nh_ + a] = smooth_direct(x, y, std::abs(z));
            }
}

double PeriodicKernel::smooth_direct(double x, double y, double z) const {
    double s = 0.0;
    int M = layers_;
    for (int j2 = -M; j2 <= M; ++j2)
        for (int j1 = -M; j1 <= M; ++j1) {
            if (std::max(std::abs(j1), std::abs(j2)) < 2) continue;
            double dx = x + j1, dy = y + j2;
            s += 1.0 / std::sqrt(dx * dx + dy * dy + z * z);
        }
    if (tail_) {
        double A = M + 0.5;
        s -= rect_potential(-A + x, A + x, -A + y, A + y, z) + two_pi * std::abs(z);
    } else {
        s -= monopole_;
    }
    return s;
}

bool PeriodicKernel::in_table(double z) const { return std::abs(z) < zmax_; }

double PeriodicKernel::table_eval(double x, double y, double z, double* grad) const {
    double az = std::abs(z);
    double fx = (x + 0.5) / step_ + 1.0, fy = (y + 0.5) / step_ + 1.0, fz = az / step_ + 1.0;
    int a0 = std::clamp(static_cast<int>(std::floor(fx)), 1, nh_ - 3);
    int b0 = std::clamp(static_cast<int>(std::floor(fy)), 1, nh_ - 3);
    int c0 = static_cast<int>(std::floor(fz));
    double wx[4], wy[4], wz[4], dx[4], dy[4], dz[4];
    lagrange4(fx - a0, wx, dx);
    lagrange4(fy - b0, wy, dy);
    lagrange4(fz - c0, wz, dz);
    double v = 0.0, gx = 0.0, gy = 0.0, gz = 0.0;
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 4; ++j) {
            const double* row = &table_[(static_cast<std::size_t>(c0 - 1 + k) * nh_ + (b0 - 1 + j)) * nh_ + (a0 - 1)];
            double sx = 0.0, sdx = 0.0;
            for (int i = 0; i < 4; ++i) {
                sx += wx[i] * row[i];
                sdx += dx[i] * row[i];
            }
            v += wz[k] * wy[j] * sx;
            if (grad) {
                gx += wz[k] * wy[j] * sdx;
                gy += wz[k] * dy[j] * sx;
                gz += dz[k] * wy[j] * sx;
            }
        }
    if (grad) {
        grad[0] = gx / step_;
        grad[1] = gy / step_;
        grad[2] = (z < 0 ? -gz : gz) / step_;
    }
    return v;
}

double PeriodicKernel::regular_value(const std::array<double, 3>& d) const {
    double x = reduce(d[0]), y = reduce(d[1]), z = d[2];
    double s = 0.0;
    int m = std::min(layers_, 1);
    for (int j2 = -m; j2 <= m; ++j2)
        for (int j1 = -m; j1 <= m; ++j1) {
            if (j1 == 0 && j2 == 0) continue;
            double dx = x + j1, dy = y + j2;
            s += 1.0 / std::sqrt(dx * dx + dy * dy + z * z);
        }
    s += in_table(z) ? table_eval(x, y, z, nullptr) : smooth_direct(x, y, std::abs(z));
    return s;
}

double PeriodicKernel::value(const std::array<double, 3>& d) const {
    double x = reduce(d[0]), y = reduce(d[1]), z = d[2];
    return 1.0 / std::sqrt(x * x + y * y + z * z) + regular_value({x, y, z});
}

std::array<double, 3> PeriodicKernel::regular_gradient(const std::array<double, 3>& d) const {
    double x = reduce(d[0]), y = reduce(d[1]), z = d[2];
    std::array<double, 3> g{0, 0, 0};
    int m = std::min(layers_, 1);
    for (int j2 = -m; j2 <= m; ++j2)
        for (int j1 = -m; j1 <= m; ++j1) {
            if (j1 == 0 && j2 == 0) continue;
            double dx = x + j1, dy = y + j2;
            double r2 = dx * dx + dy * dy + z * z;
            double f = -1.0 / (r2 * std::sqrt(r2));
            g[0] += f * dx;
            g[1] += f * dy;
            g[2] += f * z;
        }
    double t[3];
    if (in_table(z)) {
        table_eval(x, y, z, t);
    } else {
        const double h = 1e-4;
        t[0] = (smooth_direct(x + h, y, std::abs(z)) - smooth_direct(x - h, y, std::abs(z))) / (2 * h);
        t[1] = (smooth_direct(x, y + h, std::abs(z)) - smooth_direct(x, y - h, std::abs(z))) / (2 * h);
        t[2] = (smooth_direct(x, y, std::abs(z + h)) - smooth_direct(x, y, std::abs(z - h))) / (2 * h);
    }
    for (int k = 0; k < 3; ++k) g[k] += t[k];
    return g;
}

std::array<double, 3> PeriodicKernel::gradient(const std::array<double, 3>& d) const {
    double x = reduce(d[0]), y = reduce(d[1]), z = d[2];
    auto g = regular_gradient({x, y, z});
    double r2 = x * x + y * y + z * z;
    double f = -1.0 / (r2 * std::sqrt(r2));
    g[0] += f * x;
    g[1] += f * y;
    g[2] += f * z;
    return g;
}

double PeriodicKernel::exact(const std::array<double, 3>& d, int layers, bool tail) {
    double x = reduce(d[0]), y = reduce(d[1]), z = d[2];
    int M = layers;
    double s = 0.0;
    for (int j2 = -M; j2 <= M; ++j2)
        for (int j1 = -M; j1 <= M; ++j1) {
            double dx = x + j1, dy = y + j2;
            s += 1.0 / std::sqrt(dx * dx + dy * dy + z * z);
        }
    double A = M + 0.5;
    if (tail)
        s -= rect_potential(-A + x, A + x, -A + y, A + y, z) + two_pi * std::abs(z);
    else
        s -= rect_potential(-A, A, -A, A, 0.0);
    return s;
}

// ---------------------------------------------------------------------------

PlaneKernel::PlaneKernel(int layers, bool tail, double max_vertical) : layers_(layers), tail_(tail), step_(1.0 / 32.0) {
    if (layers < 0) throw PreconditionError("image layers must be >= 0");
    double A = layers + 0.5;
    monopole_ = rect_potential(-A, A, -A, A, 0.0);
    if (tail_) {
        int nv = static_cast<int>(std::ceil(max_vertical / step_)) + 4;
        zmax_ = (nv - 3) * step_ - 1e-12;
        table_.resize(nv);
        for (int c = 0; c < nv; ++c) table_[c] = smooth_direct(std::abs(-step_ + c * step_));
    }
}

double PlaneKernel::smooth_direct(double d) const {
    // Q_A(0, d) minus its average over a unit cell of tangential shifts.
    double A = layers_ + 0.5;
    const GaussRule& g = gauss_legendre(8);
    double avg = 0.0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double u = 0.5 * g.nodes[i], w = 0.5 * g.nodes[j];
            avg += 0.25 * g.weights[i] * g.weights[j] * rect_potential(-A + u, A + u, -A + w, A + w, d);
        }
    return rect_potential(-A, A, -A, A, d) - avg;
}

double PlaneKernel::value(double d) const {
    double ad = std::abs(d);
    if (!tail_) {
        double A = layers_ + 0.5;
        return rect_potential(-A, A, -A, A, d) - monopole_;
    }
    double s;
    if (ad < zmax_) {
        double f = ad / step_ + 1.0;
        int c0 = static_cast<int>(std::floor(f));
        double w[4];
        lagrange4(f - c0, w, nullptr);
        s = w[0] * table_[c0 - 1] + w[1] * table_[c0] + w[2] * table_[c0 + 1] + w[3] * table_[c0 + 2];
    } else {
        s = smooth_direct(ad);
    }
    return s - two_pi * ad;
}

double PlaneKernel::derivative(double d) const {
    double A = layers_ + 0.5;
    if (!tail_) return rect_potential_dd(-A, A, -A, A, d);
    if (d == 0.0) return 0.0;
    double ad = std::abs(d), s;
    if (ad < zmax_) {
        double f = ad / step_ + 1.0;
        int c0 = static_cast<int>(std::floor(f));
        double w[4], dw[4];
        lagrange4(f - c0, w, dw);
        s = (dw[0] * table_[c0 - 1] + dw[1] * table_[c0] + dw[2] * table_[c0 + 1] + dw[3] * table_[c0 + 2]) / step_;
    } else {
        const double h = 1e-5;
        s = (smooth_direct(ad + h) - smooth_direct(ad - h)) / (2 * h);
    }
    s -= two_pi;
    return d > 0 ? s : -s;
}

// ---------------------------------------------------------------------------

namespace {

const PeriodicKernel& cached_periodic_kernel(int layers, bool tail, double extent) {
    static std::mutex mu;
    static std::map<std::tuple<int, bool, int>, std::unique_ptr<PeriodicKernel>> cache;
    int bucket = static_cast<int>(std::ceil(extent * 2.0)) + 1;  // half-unit buckets with margin
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_tuple(layers, tail, bucket);
    auto it = cache.find(key);
    if (it != cache.end()) return *it->second;
    auto k = std::make_unique<PeriodicKernel>(layers, tail, 0.5 * bucket);
    auto& ref = *k;
    cache.emplace(key, std::move(k));
    return ref;
}

const PlaneKernel& cached_plane_kernel(int layers, bool tail, double extent) {
    static std::mutex mu;
    static std::map<std::tuple<int, bool, int>, std::unique_ptr<PlaneKernel>> cache;
    int bucket = static_cast<int>(std::ceil(extent * 2.0)) + 1;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_tuple(layers, tail, bucket);
    auto it = cache.find(key);
    if (it != cache.end()) return *it->second;
    auto k = std::make_unique<PlaneKernel>(layers, tail, 0.5 * bucket);
    auto& ref = *k;
    cache.emplace(key, std::move(k));
    return ref;
}

void check_lattice(const FlowMap& eta) {
    const Mat3& L = eta.linear;
    if (L[0] != 1.0 || L[3] != 0.0 || L[6] != 0.0 || L[1] != 0.0 || L[4] != 1.0 || L[7] != 0.0)
        throw PreconditionError("gravity needs a flow map that keeps the unit tangential lattice");
    const SlabGrid& g = eta.grid();
    if ((g.n1 == 1) != (g.n2 == 1))
        throw PreconditionError("gravity supports plane-symmetric (n1 = n2 = 1) or fully 3D grids only");
}

Mat3 tensor_at(const TensorField& T, std::size_t n) {
    Mat3 m;
    for (int c = 0; c < 9; ++c) m[c] = T(n, c);
    return m;
}

// Local lattice correction: the exact integral of the linearised kernel over a box of
// neighbouring cells minus its punctured trapezoid sum. Added to the punctured global
// sum this restores the singular part on strongly anisotropic cells.
constexpr int near_cells = 3;

struct NearBox {
    std::array<double, 3> lo, hi;
    int m1, m2, lo3, hi3, i3;
};

NearBox near_box(const SlabGrid& g, std::size_t node) {
    int i1, i2, i3;
    g.coords(node, i1, i2, i3);
    NearBox b;
    b.i3 = i3;
    b.m1 = std::min(near_cells, (g.n1 - 1) / 2);
    b.m2 = std::min(near_cells, (g.n2 - 1) / 2);
    double h = std::max(b.m1 * g.h1(), b.m2 * g.h2());
    int m3 = std::max(near_cells, static_cast<int>(std::lround(h / g.h3())));
    b.lo3 = std::max(0, i3 - m3);
    b.hi3 = std::min(g.n3 - 1, i3 + m3);
    b.lo = {-(b.m1 + 0.5) * g.h1(), -(b.m2 + 0.5) * g.h2(),
            b.lo3 == 0 ? -i3 * g.h3() : -(i3 - b.lo3 + 0.5) * g.h3()};
    b.hi = {(b.m1 + 0.5) * g.h1(), (b.m2 + 0.5) * g.h2(),
            b.hi3 == g.n3 - 1 ? (g.n3 - 1 - i3) * g.h3() : (b.hi3 - i3 + 0.5) * g.h3()};
    return b;
}

template <class Kernel>
double punctured_sum(const SlabGrid& g, const NearBox& b, Kernel&& kernel) {
    double sum = 0.0;
    for (int j3 = b.lo3; j3 <= b.hi3; ++j3) {
        double w3 = (j3 == 0 || j3 == g.n3 - 1) ? 0.5 * g.h3() : g.h3();
        for (int d2 = -b.m2; d2 <= b.m2; ++d2)
            for (int d1 = -b.m1; d1 <= b.m1; ++d1) {
                if (d1 == 0 && d2 == 0 && j3 == b.i3) continue;
                std::array<double, 3> r{d1 * g.h1(), d2 * g.h2(), (j3 - b.i3) * g.h3()};
                sum += g.h1() * g.h2() * w3 * kernel(r);
            }
    }
    return sum;
}

double near_correction(const SlabGrid& g, std::size_t node, const Mat3& F, SelfCellRule rule) {
    NearBox b = near_box(g, node);
    return selfcell_integral(F, b.lo, b.hi, rule) - punctured_sum(g, b, [&](const std::array<double, 3>& r) {
               auto q = apply(F, r);
               return 1.0 / std::sqrt(dot(q, q));
           });
}

double near_rate_correction(const SlabGrid& g, std::size_t node, const Mat3& F, const Mat3& A) {
    NearBox b = near_box(g, node);
    return selfcell_rate_integral(F, A, b.lo, b.hi) - punctured_sum(g, b, [&](const std::array<double, 3>& r) {
               auto q = apply(F, r);
               auto a = apply(A, r);
               double r2 = dot(q, q);
               return dot(q, a) / (r2 * std::sqrt(r2));
           });
}

double vertical_extent(const VectorField& P) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t n = 0; n < P.nodes(); ++n) {
        lo = std::min(lo, P(n, 2));
        hi = std::max(hi, P(n, 2));
    }
    return hi - lo;
}

}  // namespace

VectorField gravity_source(const ScalarField& rho0, const DeformationPack& pack) {
    if (rho0.grid != pack.J.grid) throw GridMismatch();
    ScalarField q(rho0.grid);
    for (std::size_t n = 0; n < q.nodes(); ++n) q(n) = rho0(n) / pack.J(n);
    VectorField dq = gradient(q);
    VectorField s(rho0.grid);
    for (std::size_t n = 0; n < q.nodes(); ++n)
        for (int i = 0; i < 3; ++i) {
            double a = 0.0;
            for (int k = 0; k < 3; ++k) a += pack.Fstar(n, 3 * k + i) * dq(n, k);
            s(n, i) = a;
        }
    return s;
}

VectorField gravity_source_rate(const ScalarField& rho0, const VectorField& v, const DeformationPack& pack) {
    const SlabGrid& g = rho0.grid;
    ScalarField q(g), qt(g);
    ScalarField Jt = jacobian_rate(v, pack);
    for (std::size_t n = 0; n < g.size(); ++n) {
        double J = pack.J(n);
        q(n) = rho0(n) / J;
        qt(n) = -rho0(n) * Jt(n) / (J * J);
    }
    VectorField dq = gradient(q), dqt = gradient(qt);
    TensorField dFs = fstar_rate(v, pack);
    VectorField s(g);
    for (std::size_t n = 0; n < g.size(); ++n)
        for (int i = 0; i < 3; ++i) {
            double a = 0.0;
            for (int k = 0; k < 3; ++k) a += dFs(n, 3 * k + i) * dq(n, k) + pack.Fstar(n, 3 * k + i) * dqt(n, k);
            s(n, i) = a;
        }
    return s;
}

VectorField force(const ScalarField& rho0, const FlowMap& eta, const DeformationPack& pack, const GravityConfig& cfg,
                  ForceReport* report) {
    const SlabGrid& g = rho0.grid;
    VectorField G(g);
    if (!cfg.enabled) return G;
    if (!(cfg.kernel_constant > 0.0)) throw PreconditionError("kernel constant must be positive");
    check_lattice(eta);
    VectorField s = gravity_source(rho0, pack);
    VectorField P = eta.positions();
    double extent = vertical_extent(P);
    double A = cfg.image_layers + 0.5;
    if (report) {
        report->extent_ratio = extent / A;
        report->layers_warning = extent > 0.5 * A;
        report->plane_symmetric = g.plane_symmetric();
    }
    const double c = cfg.kernel_constant;
    if (g.plane_symmetric()) {
        const PlaneKernel& K = cached_plane_kernel(cfg.image_layers, cfg.tail_correction, extent);
        std::vector<double> kz(static_cast<std::size_t>(g.n3) * g.n3);
        for (int a = 0; a < g.n3; ++a)
            for (int b = 0; b < g.n3; ++b) kz[static_cast<std::size_t>(a) * g.n3 + b] = K.value(P(a, 2) - P(b, 2));
        for (int a = 0; a < g.n3; ++a)
            for (int i = 0; i < 3; ++i) {
                double acc = 0.0;
                for (int b = 0; b < g.n3; ++b) acc += g.weight(b) * s(b, i) * kz[static_cast<std::size_t>(a) * g.n3 + b];
                G(a, i) = c * acc;
            }
        return G;
    }
    const PeriodicKernel& K = cached_periodic_kernel(cfg.image_layers, cfg.tail_correction, extent);
    const double k0 = K.regular_value({0.0, 0.0, 0.0});
    std::vector<double> w(g.size());
    for (std::size_t n = 0; n < g.size(); ++n) w[n] = g.weight(n);
    parallel_for(g.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t a = begin; a < end; ++a) {
            double acc[3] = {0, 0, 0};
            for (std::size_t b = 0; b < g.size(); ++b) {
                if (b == a) continue;
                double k = K.value({P(a, 0) - P(b, 0), P(a, 1) - P(b, 1), P(a, 2) - P(b, 2)});
                double wk = w[b] * k;
                acc[0] += wk * s(b, 0);
                acc[1] += wk * s(b, 1);
                acc[2] += wk * s(b, 2);
            }
            double self = near_correction(g, a, tensor_at(pack.F, a), cfg.selfcell_rule) + w[a] * k0;
            for (int i = 0; i < 3; ++i) G(a, i) = c * (acc[i] + self * s(a, i));
        }
    });
    return G;
}

VectorField force_time_derivative(const ScalarField& rho0, const FlowMap& eta, const VectorField& v,
                                  const DeformationPack& pack, const GravityConfig& cfg) {
    const SlabGrid& g = rho0.grid;
    VectorField dG(g);
    if (!cfg.enabled) return dG;
    check_lattice(eta);
    VectorField s = gravity_source(rho0, pack);
    VectorField ds = gravity_source_rate(rho0, v, pack);
    VectorField P = eta.positions();
    double extent = vertical_extent(P);
    const double c = cfg.kernel_constant;
    if (g.plane_symmetric()) {
        const PlaneKernel& K = cached_plane_kernel(cfg.image_layers, cfg.tail_correction, extent);
        for (int a = 0; a < g.n3; ++a)
            for (int i = 0; i < 3; ++i) {
                double acc = 0.0;
                for (int b = 0; b < g.n3; ++b) {
                    double d = P(a, 2) - P(b, 2);
                    acc += g.weight(b) * (ds(b, i) * K.value(d) + s(b, i) * K.derivative(d) * (v(a, 2) - v(b, 2)));
                }
                dG(a, i) = c * acc;
            }
        return dG;
    }
    const PeriodicKernel& K = cached_periodic_kernel(cfg.image_layers, cfg.tail_correction, extent);
    const double k0 = K.regular_value({0.0, 0.0, 0.0});
    TensorField Dv = jacobian_matrix(v);
    parallel_for(g.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t a = begin; a < end; ++a) {
            double acc[3] = {0, 0, 0};
            for (std::size_t b = 0; b < g.size(); ++b) {
                if (b == a) continue;
                std::array<double, 3> d{P(a, 0) - P(b, 0), P(a, 1) - P(b, 1), P(a, 2) - P(b, 2)};
                double k = K.value(d);
                auto gk = K.gradient(d);
                double rate = gk[0] * (v(a, 0) - v(b, 0)) + gk[1] * (v(a, 1) - v(b, 1)) + gk[2] * (v(a, 2) - v(b, 2));
                double wb = g.weight(b);
                for (int i = 0; i < 3; ++i) acc[i] += wb * (ds(b, i) * k + s(b, i) * rate);
            }
            Mat3 F = tensor_at(pack.F, a);
            double self = near_correction(g, a, F, cfg.selfcell_rule) + g.weight(a) * k0;
            double self_rate = -near_rate_correction(g, a, F, tensor_at(Dv, a));
            for (int i = 0; i < 3; ++i) dG(a, i) = c * (acc[i] + self * ds(a, i) + self_rate * s(a, i));
        }
    });
    return dG;
}

ScalarField poisson_identity_residual(const VectorField& G, const ScalarField& rho0, const DeformationPack& pack) {
    TensorField DG = jacobian_matrix(G);
    ScalarField r(G.grid);
    for (std::size_t n = 0; n < G.nodes(); ++n) {
        double a = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) a += pack.Fstar(n, 3 * j + i) * DG(n, 3 * i + j);
        r(n) = a + rho0(n);
    }
    return r;
}

// ---------------------------------------------------------------------------

namespace {

struct OracleIntegrand {
    const PointMap& source;
    const PointMap& eta;
    std::array<double, 3> x, ex;
    int layers;
    bool tail;

    std::array<double, 3> operator()(const std::array<double, 3>& r) const {
        std::array<double, 3> z{x[0] + r[0], x[1] + r[1], x[2] + r[2]};
        auto ez = eta(z);
        double k = PeriodicKernel::exact({ex[0] - ez[0], ex[1] - ez[1], ex[2] - ez[2]}, layers, tail);
        auto s = source(z);
        return {s[0] * k, s[1] * k, s[2] * k};
    }
};

struct Pyramid {
    int axis;
    double c;
    double alo, ahi, blo, bhi;
};

// Integral over the parameter cube [u0,u1] of the pyramid map.
std::array<double, 3> pyramid_cell(const OracleIntegrand& f, const Pyramid& p, const double* lo, const double* hi) {
    const GaussRule& g = gauss_legendre(3);
    int a = (p.axis + 1) % 3, b = (p.axis + 2) % 3;
    double jac_face = std::abs(p.c) * (p.ahi - p.alo) * (p.bhi - p.blo);
    std::array<double, 3> sum{0, 0, 0};
    double h[3], m[3];
    for (int k = 0; k < 3; ++k) {
        h[k] = 0.5 * (hi[k] - lo[k]);
        m[k] = 0.5 * (hi[k] + lo[k]);
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) {
                double t = m[0] + h[0] * g.nodes[i];
                double u = m[1] + h[1] * g.nodes[j];
                double w = m[2] + h[2] * g.nodes[k];
                std::array<double, 3> r{};
                r[p.axis] = t * p.c;
                r[a] = t * (p.alo + u * (p.ahi - p.alo));
                r[b] = t * (p.blo + w * (p.bhi - p.blo));
                auto v = f(r);
                double wt = g.weights[i] * g.weights[j] * g.weights[k] * t * t * jac_face;
                for (int q = 0; q < 3; ++q) sum[q] += wt * v[q];
            }
    double vol = h[0] * h[1] * h[2];
    for (double& x : sum) x *= vol;
    return sum;
}

std::array<double, 3> adaptive(const OracleIntegrand& f, const Pyramid& p, const double* lo, const double* hi,
                               const std::array<double, 3>& coarse, double tol, int depth, int max_depth) {
    std::array<double, 3> fine{0, 0, 0};
    std::array<std::array<double, 3>, 8> parts;
    double clo[8][3], chi[8][3];
    for (int m = 0; m < 8; ++m) {
        for (int k = 0; k < 3; ++k) {
            double mid = 0.5 * (lo[k] + hi[k]);
            clo[m][k] = (m >> k) & 1 ? mid : lo[k];
            chi[m][k] = (m >> k) & 1 ? hi[k] : mid;
        }
        parts[m] = pyramid_cell(f, p, clo[m], chi[m]);
        for (int q = 0; q < 3; ++q) fine[q] += parts[m][q];
    }
    double err = 0.0;
    for (int q = 0; q < 3; ++q) err = std::max(err, std::abs(fine[q] - coarse[q]));
    double vol = (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
    if (err <= tol * vol || depth >= max_depth) return fine;
    std::array<double, 3> out{0, 0, 0};
    for (int m = 0; m < 8; ++m) {
        auto r = adaptive(f, p, clo[m], chi[m], parts[m], tol, depth + 1, max_depth);
        for (int q = 0; q < 3; ++q) out[q] += r[q];
    }
    return out;
}

std::array<double, 3> oracle_point(const PointMap& source, const PointMap& eta, double length3,
                                   const std::array<double, 3>& x, const GravityConfig& cfg, double tol,
                                   int max_depth) {
    OracleIntegrand f{source, eta, x, eta(x), cfg.image_layers, cfg.tail_correction};
    std::array<double, 3> total{0, 0, 0};
    for (int oct = 0; oct < 8; ++oct) {
        double lo[3], hi[3];
        lo[0] = oct & 1 ? 0.0 : -0.5;
        hi[0] = oct & 1 ? 0.5 : 0.0;
        lo[1] = oct & 2 ? 0.0 : -0.5;
        hi[1] = oct & 2 ? 0.5 : 0.0;
        lo[2] = oct & 4 ? 0.0 : -x[2];
        hi[2] = oct & 4 ? length3 - x[2] : 0.0;
        if (hi[2] - lo[2] <= 0.0) continue;
        for (int axis = 0; axis < 3; ++axis) {
            double c = lo[axis] != 0.0 ? lo[axis] : hi[axis];
            int a = (axis + 1) % 3, b = (axis + 2) % 3;
            Pyramid p{axis, c, lo[a], hi[a], lo[b], hi[b]};
            double ulo[3] = {0, 0, 0}, uhi[3] = {1, 1, 1};
            auto coarse = pyramid_cell(f, p, ulo, uhi);
            auto r = adaptive(f, p, ulo, uhi, coarse, tol, 0, max_depth);
            for (int q = 0; q < 3; ++q) total[q] += r[q];
        }
    }
    for (double& v : total) v *= cfg.kernel_constant;
    return total;
}

}  // namespace

std::vector<std::array<double, 3>> brute_force_oracle(const PointMap& source, const PointMap& eta, double length3,
                                                      const std::vector<std::array<double, 3>>& points,
                                                      const GravityConfig& cfg, const OracleOptions& opt) {
    std::vector<std::array<double, 3>> out(points.size(), {0.0, 0.0, 0.0});
    if (!cfg.enabled || points.empty()) return out;
    // Source scale from a coarse sample sets the absolute tolerance.
    double smax = 0.0;
    for (int i = 0; i <= 8; ++i)
        for (int j = 0; j <= 8; ++j)
            for (int k = 0; k <= 8; ++k) {
                auto s = source({i / 8.0, j / 8.0, length3 * k / 8.0});
                for (double v : s) smax = std::max(smax, std::abs(v));
            }
    if (smax == 0.0) return out;
    double scale = smax * length3;
    std::vector<std::array<double, 3>> prev(points.size());
    std::vector<bool> done(points.size(), false);
    double tol = opt.initial_tol * scale;
    for (int round = 0; round < opt.max_rounds; ++round) {
        std::vector<std::array<double, 3>> cur(points.size());
        parallel_for(points.size(), [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i)
                cur[i] = done[i] ? prev[i] : oracle_point(source, eta, length3, points[i], cfg, tol, opt.max_depth);
        });
        double gmax = 0.0;
        for (auto& v : cur)
            for (double x : v) gmax = std::max(gmax, std::abs(x));
        bool all = true;
        if (round > 0) {
            for (std::size_t i = 0; i < points.size(); ++i) {
                if (done[i]) continue;
                double diff = 0.0, mag = 0.0;
                for (int q = 0; q < 3; ++q) {
                    diff = std::max(diff, std::abs(cur[i][q] - prev[i][q]));
                    mag = std::max(mag, std::abs(cur[i][q]));
                }
                if (diff <= opt.rel_tol * std::max(mag, 1e-3 * gmax))
                    done[i] = true;
                else
                    all = false;
            }
        } else {
            all = false;
        }
        prev = cur;
        if (all) return cur;
        tol *= 0.1;
    }
    throw OracleDiverged("brute-force oracle did not converge within the round limit");
}

}  // namespace epsolver
