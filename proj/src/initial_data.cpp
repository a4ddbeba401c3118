#include "epsolver/initial_data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "epsolver/dynamics.hpp"
#include "epsolver/quadrature.hpp"
#include "epsolver/spectral.hpp"

namespace epsolver {

namespace {

constexpr double pi = std::numbers::pi;

void check_gamma(double gamma) {
    if (!(gamma > 1.0 && gamma < 3.0)) throw PreconditionError("gamma must lie in (1, 3)");
}

double bump(double t) { return std::abs(t) < 1.0 ? std::exp(-1.0 / (1.0 - t * t)) : 0.0; }

const GaussRule& bump_rule() { return gauss_legendre(48); }

double bump_mass() {
    static const double m = [] {
        const GaussRule& g = bump_rule();
        double s = 0.0;
        for (std::size_t i = 0; i < g.nodes.size(); ++i) s += g.weights[i] * bump(g.nodes[i]);
        return s;
    }();
    return m;
}

// Value of f at height s along a column, extended by point reflection and
// interpolated with a cubic through the nearest nodes.
double column_value(const double* col, std::size_t stride, int n, double h, double length, double s) {
    if (s < -length || s > 2.0 * length) throw PreconditionError("mollifier radius exceeds the slab height");
    if (s < 0.0) return 2.0 * col[0] - column_value(col, stride, n, h, length, -s);
    if (s > length) return 2.0 * col[(n - 1) * stride] - column_value(col, stride, n, h, length, 2.0 * length - s);
    double u = s / h;
    int i0 = std::clamp(static_cast<int>(std::floor(u)) - 1, 0, n - 4);
    double v = 0.0;
    for (int a = 0; a < 4; ++a) {
        double w = 1.0;
        for (int b = 0; b < 4; ++b)
            if (b != a) w *= (u - (i0 + b)) / static_cast<double>(a - b);
        v += w * col[(i0 + a) * stride];
    }
    return v;
}

Multiplier bump_multiplier(double a) {
    return [a](int k1, int k2) { return bump_fourier_factor(a, k1) * bump_fourier_factor(a, k2); };
}

std::vector<double> face_slope(const ScalarField& omega, bool top) {
    const SlabGrid& g = omega.grid;
    ScalarField d = partial(omega, 2);
    std::vector<double> s(g.face_size());
    int i3 = top ? g.n3 - 1 : 0;
    for (std::size_t m = 0; m < g.face_size(); ++m) {
        double v = d.data[i3 * g.face_size() + m];
        s[m] = top ? v : -v;
    }
    return s;
}

}  // namespace

ProfileKind parse_profile_kind(const std::string& s) {
    if (s == "sine") return ProfileKind::sine;
    if (s == "parabolic") return ProfileKind::parabolic;
    if (s == "lane_emden_slab") return ProfileKind::lane_emden_slab;
    if (s == "custom-table" || s == "custom_table") return ProfileKind::custom_table;
    throw PreconditionError("unknown profile kind '" + s + "'");
}

std::string to_string(ProfileKind k) {
    switch (k) {
        case ProfileKind::sine: return "sine";
        case ProfileKind::parabolic: return "parabolic";
        case ProfileKind::lane_emden_slab: return "lane_emden_slab";
        case ProfileKind::custom_table: return "custom-table";
    }
    return "?";
}

DensityProfile profile_from_omega(double gamma, const ScalarField& omega0) {
    check_gamma(gamma);
    DensityProfile p;
    p.gamma = gamma;
    p.omega0 = omega0;
    p.rho0 = ScalarField(omega0.grid);
    for (std::size_t n = 0; n < omega0.nodes(); ++n)
        p.rho0(n) = omega0(n) > 0.0 ? std::pow(omega0(n), 1.0 / (gamma - 1.0)) : 0.0;
    p.slope = FaceField(omega0.grid);
    p.slope.bottom = face_slope(omega0, false);
    p.slope.top = face_slope(omega0, true);
    return p;
}

DensityProfile profile_from_density(double gamma, const ScalarField& rho0) {
    check_gamma(gamma);
    ScalarField omega(rho0.grid);
    for (std::size_t n = 0; n < rho0.nodes(); ++n) {
        if (rho0(n) < 0.0) throw PreconditionError("density must be nonnegative");
        omega(n) = std::pow(rho0(n), gamma - 1.0);
    }
    DensityProfile p = profile_from_omega(gamma, omega);
    p.rho0 = rho0;
    return p;
}

DensityProfile make_profile(ProfileKind kind, double gamma, const SlabGrid& g, const ProfileParams& params) {
    check_gamma(gamma);
    const double A = params.amplitude;
    if (!(A > 0.0)) throw PreconditionError("profile amplitude must be positive");
    const double L = g.length3;
    auto finish = [](DensityProfile p) {
        // Faces are vacuum by construction.
        const SlabGrid& gr = p.rho0.grid;
        for (std::size_t m = 0; m < gr.face_size(); ++m)
            for (std::size_t i3 : {std::size_t{0}, static_cast<std::size_t>(gr.n3 - 1)}) {
                p.rho0.data[i3 * gr.face_size() + m] = 0.0;
                p.omega0.data[i3 * gr.face_size() + m] = 0.0;
            }
        return p;
    };
    switch (kind) {
        case ProfileKind::sine:
            return finish(profile_from_omega(
                gamma, sample_scalar(g, [&](double, double, double z) { return A * std::sin(pi * z / L); })));
        case ProfileKind::parabolic:
            return finish(
                profile_from_omega(gamma, sample_scalar(g, [&](double, double, double z) { return A * z * (L - z); })));
        case ProfileKind::lane_emden_slab: {
            if (gamma != 2.0) throw PreconditionError("lane_emden_slab requires gamma = 2");
            if (std::abs(L - std::sqrt(2.0) * pi) > 1e-9)
                throw PreconditionError("lane_emden_slab requires slab height sqrt(2) pi");
            return finish(profile_from_omega(
                gamma, sample_scalar(g, [&](double, double, double z) { return A * std::sin(z / std::sqrt(2.0)); })));
        }
        case ProfileKind::custom_table: {
            std::ifstream in(params.table_path);
            if (!in) throw PreconditionError("cannot open profile table '" + params.table_path + "'");
            std::vector<std::pair<double, double>> rows;
            std::string line;
            int lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                auto hash = line.find('#');
                if (hash != std::string::npos) line.resize(hash);
                std::istringstream ls(line);
                double x, r;
                if (!(ls >> x)) continue;
                if (!(ls >> r))
                    throw PreconditionError("profile table line " + std::to_string(lineno) + ": expected two columns");
                rows.emplace_back(x, r);
            }
            if (rows.size() < 2) throw PreconditionError("profile table needs at least two rows");
            std::sort(rows.begin(), rows.end());
            if (rows.front().first > 1e-12 || rows.back().first < L - 1e-12)
                throw PreconditionError("profile table does not cover [0, L3]");
            ScalarField rho = sample_scalar(g, [&](double, double, double z) {
                auto it = std::lower_bound(rows.begin(), rows.end(), std::make_pair(z, -1e300));
                if (it == rows.begin()) return it->second;
                auto prev = it - 1;
                if (it == rows.end()) return prev->second;
                double t = (z - prev->first) / (it->first - prev->first);
                return (1 - t) * prev->second + t * it->second;
            });
            DensityProfile p = profile_from_density(gamma, rho);
            VacuumReport rep = vacuum_check(p, 0.1 * L);
            if (!rep.pass) throw PreconditionError("profile table fails the vacuum check: " + rep.reason);
            return p;
        }
    }
    throw PreconditionError("unknown profile kind");
}

VacuumReport vacuum_check(const DensityProfile& p, double band) {
    const SlabGrid& g = p.rho0.grid;
    VacuumReport r;
    std::size_t fs = g.face_size();
    double wmax = max_abs(p.omega0), rmax = max_abs(p.rho0);
    r.slope_bottom = *std::max_element(p.slope.bottom.begin(), p.slope.bottom.end());
    r.slope_top = *std::max_element(p.slope.top.begin(), p.slope.top.end());
    for (std::size_t m = 0; m < fs; ++m)
        r.face_max = std::max({r.face_max, std::abs(p.rho0.data[m]), std::abs(p.rho0.data[(g.n3 - 1) * fs + m])});
    ScalarField d3 = partial(p.omega0, 2);
    r.c_dist = r.c_slope = r.c_alpha = 1e300;
    bool interior_positive = true;
    double eff_band = std::max(band, g.h3());
    for (std::size_t n = 0; n < g.size(); ++n) {
        int i1, i2, i3;
        g.coords(n, i1, i2, i3);
        if (i3 == 0 || i3 == g.n3 - 1) continue;
        double z = g.x3(i3);
        double dist = std::min(z, g.length3 - z);
        if (!(p.rho0(n) > 0.0)) interior_positive = false;
        if (dist <= eff_band + 1e-12) {
            r.c_dist = std::min(r.c_dist, p.omega0(n) / dist);
            r.c_slope = std::min(r.c_slope, std::abs(d3(n)));
        }
        if (dist >= band - 1e-12) r.c_alpha = std::min(r.c_alpha, p.omega0(n));
    }
    if (r.c_alpha == 1e300) r.c_alpha = 0.0;
    double tol = 1e-6 * std::max(wmax, 1e-300) / g.length3;
    std::string why;
    if (r.face_max > 1e-12 * std::max(rmax, 1.0)) why = "density does not vanish on the faces";
    else if (!(r.slope_bottom < -tol) || !(r.slope_top < -tol)) why = "normal slope of omega0 is not strictly negative";
    else if (!interior_positive) why = "density is not positive in the interior";
    else if (!(r.c_dist > 0.0) || !(r.c_slope > tol)) why = "omega0 does not grow linearly off the faces";
    else if (!(r.c_alpha > 0.0)) why = "interior floor is not positive";
    r.pass = why.empty();
    r.reason = why;
    return r;
}

double bump_fourier_factor(double a, int k) {
    if (k == 0) return 1.0;
    const GaussRule& g = bump_rule();
    double s = 0.0;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        s += g.weights[i] * bump(g.nodes[i]) * std::cos(2.0 * pi * k * a * g.nodes[i]);
    return s / bump_mass();
}

ScalarField mollify_interior(const ScalarField& f, double eps, std::vector<std::string>* warnings) {
    if (!(eps > 0.0)) throw PreconditionError("mollifier radius must be positive");
    const SlabGrid& g = f.grid;
    if (warnings && eps < g.min_active_spacing())
        warnings->push_back("mollifier radius " + std::to_string(eps) + " is below the grid spacing");
    const double a = eps / std::sqrt(3.0);
    const GaussRule& q = bump_rule();
    const double mass = bump_mass();
    ScalarField r(g);
    std::size_t fs = g.face_size();
    for (std::size_t m = 0; m < fs; ++m) {
        const double* col = f.data.data() + m;
        for (int i3 = 0; i3 < g.n3; ++i3) {
            double z = g.x3(i3), s = 0.0;
            for (std::size_t i = 0; i < q.nodes.size(); ++i)
                s += q.weights[i] * bump(q.nodes[i]) * column_value(col, fs, g.n3, g.h3(), g.length3, z - a * q.nodes[i]);
            r.data[i3 * fs + m] = s / mass;
        }
    }
    if (g.plane_symmetric()) return r;
    return apply_tangential_multiplier(r, bump_multiplier(a));
}

FaceField boundary_convolution(const FaceField& f, double theta) {
    if (!(theta > 0.0)) throw PreconditionError("boundary mollifier radius must be positive");
    FaceField r(f.grid);
    auto m = bump_multiplier(theta / std::sqrt(2.0));
    r.bottom = apply_face_multiplier(f.grid, f.bottom, m);
    r.top = apply_face_multiplier(f.grid, f.top, m);
    return r;
}

DensityProfile smooth_density(const DensityProfile& p, double kappa) {
    if (!(kappa > 0.0 && kappa < 1.0)) throw PreconditionError("smoothing needs 0 < kappa < 1");
    const SlabGrid& g = p.omega0.grid;
    const double eps = 1.0 / std::abs(std::log(kappa));
    const double L = g.length3;
    ScalarField m = mollify_interior(p.omega0, eps);
    FaceField target = boundary_convolution(p.slope, eps);
    ScalarField dm = partial(m, 2);
    std::size_t fs = g.face_size();
    auto face_of = [&](const ScalarField& s, int i3) {
        return std::vector<double>(s.data.begin() + i3 * fs, s.data.begin() + (i3 + 1) * fs);
    };
    auto m0 = face_dft(g, face_of(m, 0)), mL = face_dft(g, face_of(m, g.n3 - 1));
    auto d0 = face_dft(g, face_of(dm, 0)), dL = face_dft(g, face_of(dm, g.n3 - 1));
    auto gb = face_dft(g, target.bottom), gt = face_dft(g, target.top);

    // m already solves the biharmonic equation with the mollified right-hand side;
    // add the biharmonic correction that restores the boundary data.
    std::vector<cplx> corr(g.size());
    for (int i2 = 0; i2 < g.n2; ++i2)
        for (int i1 = 0; i1 < g.n1; ++i1) {
            std::size_t mode = i1 + static_cast<std::size_t>(g.n1) * i2;
            double k1 = wavenumber(i1, g.n1), k2 = wavenumber(i2, g.n2);
            double K = 2.0 * pi * std::sqrt(k1 * k1 + k2 * k2);
            auto basis = [&](double x, double* val, double* der) {
                if (K == 0.0) {
                    double u = x / L;
                    val[0] = 1; val[1] = u; val[2] = u * u; val[3] = u * u * u;
                    der[0] = 0; der[1] = 1 / L; der[2] = 2 * u / L; der[3] = 3 * u * u / L;
                } else {
                    double e0 = std::exp(-K * x), e1 = std::exp(-K * (L - x));
                    val[0] = e0; der[0] = -K * e0;
                    val[1] = e1; der[1] = K * e1;
                    val[2] = x * e0; der[2] = (1 - K * x) * e0;
                    val[3] = (L - x) * e1; der[3] = (-1 + K * (L - x)) * e1;
                }
            };
            Eigen::Matrix4cd A;
            Eigen::Vector4cd rhs;
            double v0[4], dv0[4], vL[4], dvL[4];
            basis(0.0, v0, dv0);
            basis(L, vL, dvL);
            for (int j = 0; j < 4; ++j) {
                A(0, j) = v0[j];
                A(1, j) = vL[j];
                A(2, j) = dv0[j];
                A(3, j) = dvL[j];
            }
            rhs << -m0[mode], -mL[mode], -gb[mode] - d0[mode], gt[mode] - dL[mode];
            Eigen::Vector4cd c = A.fullPivLu().solve(rhs);
            for (int i3 = 0; i3 < g.n3; ++i3) {
                double v[4], dv[4];
                basis(g.x3(i3), v, dv);
                corr[i3 * fs + mode] = c(0) * v[0] + c(1) * v[1] + c(2) * v[2] + c(3) * v[3];
            }
        }
    ScalarField omega = m + field_idft(g, corr);
    for (std::size_t k = 0; k < fs; ++k) {
        omega.data[k] = 0.0;
        omega.data[(g.n3 - 1) * fs + k] = 0.0;
    }
    DensityProfile out = profile_from_omega(p.gamma, omega);
    VacuumReport rep = vacuum_check(out, 0.1 * L);
    if (!rep.pass) throw SmoothingBrokeVacuum("smoothed density fails the vacuum check: " + rep.reason);
    return out;
}

VectorField first_time_derivative(const VectorField& u0, const DensityProfile& p, double kappa,
                                  const GravityConfig& gravity, bool* gravity_included) {
    if (u0.grid != p.rho0.grid) throw GridMismatch();
    FlowMap eta = identity_map(u0.grid);
    DeformationPack pack = build_deformation(eta);
    VectorField w = enthalpy_gradient(p, eta, pack, gravity);
    VectorField u1 = -w;
    if (kappa != 0.0) u1 -= kappa * enthalpy_gradient_rate(p, eta, pack, u0, gravity);
    if (gravity_included) *gravity_included = gravity.enabled;
    return u1;
}

}  // namespace epsolver
