#include "epsolver/elliptic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "epsolver/spectral.hpp"

namespace epsolver {

namespace {

constexpr double pi = std::numbers::pi;

void thomas(std::vector<cplx>& a, std::vector<cplx>& b, std::vector<cplx>& c, std::vector<cplx>& r) {
    std::size_t n = b.size();
    for (std::size_t i = 1; i < n; ++i) {
        cplx m = a[i] / b[i - 1];
        b[i] -= m * c[i - 1];
        r[i] -= m * r[i - 1];
    }
    r[n - 1] /= b[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) r[i] = (r[i] - c[i] * r[i + 1]) / b[i];
}

std::vector<double> face_abs(const std::vector<double>& f) {
    std::vector<double> r(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) r[i] = std::abs(f[i]);
    return r;
}

}  // namespace

ScalarField slab_poisson(const ScalarField& rhs, BoundaryKind kind, const FaceField& data, double solvability_tol) {
    const SlabGrid& g = rhs.grid;
    if (data.grid != g) throw GridMismatch();
    if (g.n3 < 3) throw PreconditionError("slab_poisson needs at least 3 nodes in direction 3");
    const std::size_t fs = g.face_size();
    const int n = g.n3;
    const double h = g.h3();
    std::vector<cplx> r = field_dft(rhs);
    std::vector<cplx> lo = face_dft(g, data.bottom), hi = face_dft(g, data.top);
    std::vector<cplx> out(g.size(), cplx(0.0, 0.0));
    std::vector<cplx> a(n), b(n), c(n), x(n);
    for (int i2 = 0; i2 < g.n2; ++i2)
        for (int i1 = 0; i1 < g.n1; ++i1) {
            if (is_nyquist(i1, g.n1) || is_nyquist(i2, g.n2)) continue;
            std::size_t mode = i1 + static_cast<std::size_t>(g.n1) * i2;
            double k1 = 2 * pi * wavenumber(i1, g.n1), k2 = 2 * pi * wavenumber(i2, g.n2);
            double K2 = k1 * k1 + k2 * k2;
            for (int i = 0; i < n; ++i) {
                a[i] = 1.0 / (h * h);
                b[i] = -2.0 / (h * h) - K2;
                c[i] = 1.0 / (h * h);
                x[i] = r[i * fs + mode];
            }
            a[0] = 0.0;
            c[n - 1] = 0.0;
            bool pin = false;
            if (kind == BoundaryKind::dirichlet) {
                b[0] = 1.0;
                c[0] = 0.0;
                x[0] = lo[mode];
                a[n - 1] = 0.0;
                b[n - 1] = 1.0;
                x[n - 1] = hi[mode];
            } else {
                c[0] = 2.0 / (h * h);
                x[0] -= 2.0 * lo[mode] / h;
                a[n - 1] = 2.0 / (h * h);
                x[n - 1] -= 2.0 * hi[mode] / h;
                if (K2 == 0.0) {
                    cplx total(0.0, 0.0);
                    double scale = std::abs(lo[mode]) + std::abs(hi[mode]);
                    for (int i = 0; i < n; ++i) {
                        double w = (i == 0 || i == n - 1) ? 0.5 * h : h;
                        total += w * r[i * fs + mode];
                        scale += w * std::abs(r[i * fs + mode]);
                    }
                    double defect = std::abs(total - lo[mode] - hi[mode]);
                    if (defect > solvability_tol * std::max(scale, 1e-300) && defect > 1e-14)
                        throw PreconditionError("Neumann data violate solvability (defect " + std::to_string(defect) +
                                                ")");
                    pin = true;
                    b[0] = 1.0;
                    c[0] = 0.0;
                    x[0] = 0.0;
                }
            }
            thomas(a, b, c, x);
            if (pin) {
                cplx mean(0.0, 0.0);
                for (int i = 0; i < n; ++i) mean += ((i == 0 || i == n - 1) ? 0.5 * h : h) * x[i];
                mean /= g.length3;
                for (int i = 0; i < n; ++i) x[i] -= mean;
            }
            for (int i = 0; i < n; ++i) out[i * fs + mode] = x[i];
        }
    return field_idft(g, out);
}

HodgeResult hodge_reconstruct(const HodgeData& d, double compat_tol) {
    const SlabGrid& g = d.div.grid;
    if (d.curl.grid != g || d.normal_trace.grid != g) throw GridMismatch();
    const double area = 1.0;
    double fint = integrate(d.div);
    double gtop = face_integral(g, d.normal_trace.top), gbot = face_integral(g, d.normal_trace.bottom);
    HodgeResult res;
    res.shift = (fint - (gtop - gbot)) / (2.0 * area);
    ScalarField absdiv = d.div;
    for (double& v : absdiv.data) v = std::abs(v);
    double scale = integrate(absdiv) + face_integral(g, face_abs(d.normal_trace.top)) +
                   face_integral(g, face_abs(d.normal_trace.bottom));
    if (std::abs(2.0 * area * res.shift) > compat_tol * std::max(scale, 1e-300) && std::abs(res.shift) > 1e-14)
        throw CompatibilityDefect(res.shift, "divergence and normal trace are incompatible (shift " +
                                                 std::to_string(res.shift) + ")");
    FaceField trace = d.normal_trace;
    for (double& v : trace.top) v += res.shift;
    for (double& v : trace.bottom) v -= res.shift;

    FaceField outward(g);
    for (std::size_t m = 0; m < g.face_size(); ++m) {
        outward.bottom[m] = -trace.bottom[m];
        outward.top[m] = trace.top[m];
    }
    ScalarField phi = slab_poisson(d.div, BoundaryKind::neumann, outward, std::numeric_limits<double>::infinity());

    VectorField A(g);
    FaceField zero(g);
    for (int c = 0; c < 2; ++c)
        set_component(A, c, slab_poisson(-component(d.curl, c), BoundaryKind::dirichlet, zero));
    ScalarField w3 = component(d.curl, 2);
    double mean3 = integrate(w3) / g.length3;
    for (double& v : w3.data) v -= mean3;
    set_component(A, 2, slab_poisson(-w3, BoundaryKind::neumann, zero, std::numeric_limits<double>::infinity()));

    res.w = gradient(phi) + curl(A);
    std::size_t fs = g.face_size();
    for (std::size_t m = 0; m < fs; ++m) {
        res.w(m, 2) = trace.bottom[m];
        res.w((g.n3 - 1) * fs + m, 2) = trace.top[m];
    }
    double vol = area * g.length3;
    double c1 = (d.mean1 - integrate(component(res.w, 0))) / vol;
    double c2 = (d.mean2 - integrate(component(res.w, 1))) / vol;
    for (std::size_t n = 0; n < g.size(); ++n) {
        res.w(n, 0) += c1;
        res.w(n, 1) += c2;
    }
    return res;
}

double hodge_bound_ratio(const VectorField& w) {
    const SlabGrid& g = w.grid;
    double h1 = std::sqrt(sobolev_norm_squared(w, 1));
    double base = l2_norm(w) + l2_norm(curl(w)) + l2_norm(divergence(w));
    FaceField t = trace(component(w, 2));
    double half = 0.0;
    for (const auto* face : {&t.bottom, &t.top}) {
        auto c = face_dft(g, *face);
        for (int i2 = 0; i2 < g.n2; ++i2)
            for (int i1 = 0; i1 < g.n1; ++i1) {
                double k1 = 2 * pi * wavenumber(i1, g.n1), k2 = 2 * pi * wavenumber(i2, g.n2);
                half += std::sqrt(1.0 + k1 * k1 + k2 * k2) * std::norm(c[i1 + static_cast<std::size_t>(g.n1) * i2]);
            }
    }
    base += std::sqrt(half);
    return base > 0.0 ? h1 / base : 0.0;
}

// ---------------------------------------------------------------------------

GalerkinBasis::GalerkinBasis(const SlabGrid& g, int kmax_tangential, int mmax_normal) : grid_(g) {
    if (kmax_tangential < 0 || mmax_normal < 1) throw PreconditionError("invalid Galerkin truncation");
    auto factors = [&](int n) {
        std::vector<std::pair<int, int>> f{{0, 0}};
        int kmax = std::min(kmax_tangential, (n - 1) / 2);
        for (int k = 1; k <= kmax; ++k) {
            f.emplace_back(1, k);
            f.emplace_back(2, k);
        }
        return f;
    };
    auto f1 = factors(g.n1), f2 = factors(g.n2);
    int mmax = std::min(mmax_normal, g.n3 - 2);
    const double L = g.length3;
    for (int m = 1; m <= mmax; ++m)
        for (auto [t2, k2] : f2)
            for (auto [t1, k1] : f1) {
                GalerkinMode md{t1, k1, t2, k2, m, 0.0};
                md.lambda = std::pow(2 * pi * k1, 2) + std::pow(2 * pi * k2, 2) + std::pow(m * pi / L, 2);
                modes_.push_back(md);
            }
    std::size_t L_ = modes_.size();
    values_.assign(g.size() * L_, 0.0);
    for (auto& gr : grads_) gr.assign(g.size() * L_, 0.0);
    auto tang = [](int kind, int k, double x, double& v, double& dv) {
        if (kind == 0) {
            v = 1.0;
            dv = 0.0;
            return;
        }
        double a = 2 * pi * k;
        double s = std::sin(a * x), c = std::cos(a * x);
        if (kind == 1) {
            v = std::sqrt(2.0) * c;
            dv = -std::sqrt(2.0) * a * s;
        } else {
            v = std::sqrt(2.0) * s;
            dv = std::sqrt(2.0) * a * c;
        }
    };
    for (std::size_t n = 0; n < g.size(); ++n) {
        auto x = g.position(n);
        for (std::size_t l = 0; l < L_; ++l) {
            const auto& md = modes_[l];
            double v1, d1, v2, d2;
            tang(md.kind1, md.k1, x[0], v1, d1);
            tang(md.kind2, md.k2, x[1], v2, d2);
            double a = md.m * pi / L, nrm = std::sqrt(2.0 / L);
            double v3 = nrm * std::sin(a * x[2]), d3 = nrm * a * std::cos(a * x[2]);
            values_[n * L_ + l] = v1 * v2 * v3;
            grads_[0][n * L_ + l] = d1 * v2 * v3;
            grads_[1][n * L_ + l] = v1 * d2 * v3;
            grads_[2][n * L_ + l] = v1 * v2 * d3;
        }
    }
}

ScalarField GalerkinBasis::field(const Eigen::VectorXd& coeffs) const {
    ScalarField f(grid_);
    std::size_t L = size();
    for (std::size_t n = 0; n < grid_.size(); ++n) {
        double s = 0.0;
        for (std::size_t l = 0; l < L; ++l) s += values_[n * L + l] * coeffs[l];
        f(n) = s;
    }
    return f;
}

double GalerkinBasis::evaluate(std::size_t mode, const std::array<double, 3>& x) const {
    const auto& md = modes_.at(mode);
    auto t = [](int kind, int k, double y) {
        if (kind == 0) return 1.0;
        double a = 2 * pi * k * y;
        return std::sqrt(2.0) * (kind == 1 ? std::cos(a) : std::sin(a));
    };
    const double L = grid_.length3;
    return t(md.kind1, md.k1, x[0]) * t(md.kind2, md.k2, x[1]) * std::sqrt(2.0 / L) * std::sin(md.m * pi * x[2] / L);
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return Eigen::Map<const RowMat>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool on_face(const SlabGrid& g, std::size_t n) {
    std::size_t i3 = n / g.face_size();
    return i3 == 0 || i3 == static_cast<std::size_t>(g.n3 - 1);
}

Eigen::MatrixXd weighted_gram(const Eigen::Map<const RowMat>& A, const Eigen::Map<const RowMat>& B,
                              const Eigen::VectorXd& w) {
    return A.transpose() * w.asDiagonal() * B;
}

}  // namespace

GalerkinSystem assemble_galerkin(const XProblem& pr, const GalerkinBasis& basis) {
    const SlabGrid& g = basis.grid();
    if (pr.jbar.grid != g || pr.b.grid != g || pr.weight.grid != g) throw GridMismatch();
    if (pr.kappa < 0.0) throw PreconditionError("kappa must be nonnegative");
    const std::size_t N = g.size(), L = basis.size();
    GalerkinSystem sys;
    sys.beta_min = 1e300;
    Eigen::VectorXd wm(N), wr(N), wq(N);
    for (std::size_t n = 0; n < N; ++n) {
        double q = g.weight(n);
        wq[n] = q;
        Eigen::Matrix3d B;
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) B(j, k) = 0.5 * (pr.b(n, 3 * j + k) + pr.b(n, 3 * k + j));
        double lam = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(B, Eigen::EigenvaluesOnly).eigenvalues()(0);
        if (lam < 7.0 / 8.0) throw CoercivityViolation(n, lam);
        sys.beta_min = std::min(sys.beta_min, lam);
        if (on_face(g, n)) {
            wm[n] = 0.0;
            wr[n] = 0.0;
            continue;
        }
        double wt = pr.weight(n);
        if (!(wt > 0.0)) throw PreconditionError("X-problem weight must be positive in the interior");
        wm[n] = q * std::pow(pr.jbar(n), pr.gamma) / wt;
        double r = pr.reaction.data.empty() ? std::pow(pr.jbar(n), pr.gamma - 1.0) : pr.reaction(n);
        if (r < 0.0) throw PreconditionError("X-problem reaction coefficient must be nonnegative");
        wr[n] = q * r;
    }
    auto E = as_matrix(basis.values(), N, L);
    sys.mass = weighted_gram(E, E, wm);
    sys.reaction = pr.kappa * weighted_gram(E, E, wr);
    sys.gram_l2 = weighted_gram(E, E, wq);
    sys.gram_grad = Eigen::MatrixXd::Zero(L, L);
    sys.stiffness = Eigen::MatrixXd::Zero(L, L);
    for (int j = 0; j < 3; ++j) {
        auto Gj = as_matrix(basis.gradients(j), N, L);
        sys.gram_grad += weighted_gram(Gj, Gj, wq);
        for (int k = 0; k < 3; ++k) {
            Eigen::VectorXd wb(N);
            for (std::size_t n = 0; n < N; ++n) wb[n] = wq[n] * pr.b(n, 3 * j + k);
            auto Gk = as_matrix(basis.gradients(k), N, L);
            sys.stiffness += weighted_gram(Gj, Gk, wb);
        }
    }
    sys.stiffness = 0.5 * pr.gamma * pr.kappa * (sys.stiffness + sys.stiffness.transpose()).eval();
    double dmax = sys.mass.diagonal().cwiseAbs().maxCoeff();
    for (std::size_t l = 0; l < L; ++l) {
        double dl = sys.mass(l, l);
        if (!std::isfinite(dl) || !(dl > 1e-12 * dmax)) throw MassMatrixDegenerate(l, dl);
    }
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(sys.gram_grad, sys.gram_l2, Eigen::EigenvaluesOnly);
    sys.lambda_poincare = ges.eigenvalues()(0);
    return sys;
}

Eigen::VectorXd load_vector(const GalerkinBasis& basis, const ScalarField& f) {
    const SlabGrid& g = basis.grid();
    if (f.grid != g) throw GridMismatch();
    Eigen::VectorXd wf(g.size());
    for (std::size_t n = 0; n < g.size(); ++n) wf[n] = g.weight(n) * f(n);
    return as_matrix(basis.values(), g.size(), basis.size()).transpose() * wf;
}

XProblem x_problem_from_state(const FlowState& s, const DensityProfile& p) {
    const SlabGrid& g = s.v.grid;
    XProblem pr;
    pr.jbar = s.pack.J;
    pr.b = TensorField(g);
    pr.weight = p.omega0;
    pr.kappa = s.kappa;
    pr.gamma = p.gamma;
    pr.reaction = ScalarField(g);
    for (std::size_t n = 0; n < g.size(); ++n) {
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) {
                double v = 0.0;
                for (int i = 0; i < 3; ++i) v += s.pack.Fstar(n, 3 * j + i) * s.pack.Finv(n, 3 * k + i);
                pr.b(n, 3 * j + k) = v;
            }
        if (!on_face(g, n) && p.omega0(n) > 0.0)
            pr.reaction(n) = p.rho0(n) / p.omega0(n) * std::pow(s.pack.J(n), p.gamma - 1.0);
    }
    return pr;
}

XSolution solve_x(const XProblem& pr, const GalerkinBasis& basis, double T, double dt, int output_every) {
    if (!(T >= 0.0) || !(dt > 0.0)) throw PreconditionError("solve_x needs T >= 0 and dt > 0");
    if (output_every < 1) throw PreconditionError("output cadence must be positive");
    const SlabGrid& g = basis.grid();
    GalerkinSystem sys = assemble_galerkin(pr, basis);
    const std::size_t N = g.size(), L = basis.size();
    XSolution sol;
    sol.beta_min = sys.beta_min;
    sol.lambda_poincare = sys.lambda_poincare;
    double a = pr.gamma * pr.kappa * sys.beta_min / (1.0 + 1.0 / sys.lambda_poincare);
    sol.c_p = pr.kappa > 0.0 ? a / pr.kappa : 0.0;
    sol.c_kappa = a > 0.0 ? 1.0 / a : std::numeric_limits<double>::infinity();

    double jmin = 1e300, jmax = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        double jg = std::pow(pr.jbar(n), pr.gamma);
        jmin = std::min(jmin, jg);
        jmax = std::max(jmax, jg);
    }
    auto E = as_matrix(basis.values(), N, L);
    auto weighted_sq = [&](const Eigen::VectorXd& c) {
        Eigen::VectorXd x = E * c;
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n)
            if (!on_face(g, n)) s += g.weight(n) * x[n] * x[n] / pr.weight(n);
        return s;
    };

    Eigen::VectorXd c = Eigen::VectorXd::Zero(L);
    if (!pr.x0.data.empty()) {
        if (pr.x0.grid != g) throw GridMismatch();
        Eigen::VectorXd b(N);
        for (std::size_t n = 0; n < N; ++n)
            b[n] = on_face(g, n) ? 0.0 : g.weight(n) * std::pow(pr.jbar(n), pr.gamma) * pr.x0(n) / pr.weight(n);
        c = sys.mass.ldlt().solve(E.transpose() * b);
    }
    Eigen::MatrixXd h1 = sys.gram_l2 + sys.gram_grad;
    Eigen::LDLT<Eigen::MatrixXd> h1f(h1);
    Eigen::MatrixXd S = sys.mass / dt + sys.stiffness + sys.reaction;
    Eigen::LDLT<Eigen::MatrixXd> Sf(S);

    long steps = static_cast<long>(std::ceil(T / dt - 1e-9));
    double h = steps > 0 ? T / steps : dt;
    LedgerRow row;
    row.initial_term = jmax * weighted_sq(c);
    row.state_term = jmin * weighted_sq(c);
    sol.times.push_back(0.0);
    sol.coeffs.push_back(c);
    sol.ledger.push_back(row);
    double diss = 0.0, forc = 0.0;
    for (long k = 1; k <= steps; ++k) {
        double t = k * h;
        Eigen::VectorXd f = pr.forcing ? load_vector(basis, pr.forcing(t)) : Eigen::VectorXd::Zero(L);
        c = Sf.solve(sys.mass * c / h + f);
        diss += h * c.dot(h1 * c);
        double fn = f.dot(h1f.solve(f));
        forc += h * fn;
        if (k % output_every == 0 || k == steps) {
            row.t = t;
            row.state_term = jmin * weighted_sq(c);
            row.dissipation_term = sol.c_p * pr.kappa * diss;
            row.forcing_term = forc > 0.0 ? sol.c_kappa * forc : 0.0;
            sol.times.push_back(t);
            sol.coeffs.push_back(c);
            sol.ledger.push_back(row);
        }
    }
    return sol;
}

std::string ledger_csv(const XSolution& s) {
    std::ostringstream os;
    os.precision(17);
    os << "t,state_term,dissipation_term,lhs,initial_term,forcing_term,rhs\n";
    for (const auto& r : s.ledger)
        os << r.t << ',' << r.state_term << ',' << r.dissipation_term << ',' << r.lhs() << ',' << r.initial_term << ','
           << r.forcing_term << ',' << r.rhs() << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------

VectorField acceleration(const FlowState& s) { return -(s.w + s.kappa * s.w_rate); }

ForcingMemory start_forcing_memory(const FlowState& s) {
    ForcingMemory m;
    m.t = s.t;
    m.value = s.w;
    m.last_accel = acceleration(s);
    return m;
}

void advance_forcing_memory(ForcingMemory& m, const FlowState& s) {
    double dt = s.t - m.t;
    VectorField a = acceleration(s);
    if (s.kappa == 0.0) {
        m.value = -a;
    } else {
        // exact weights for an acceleration linear in time over the step
        double r = dt / s.kappa, e = std::exp(-r);
        double w_old = r > 1e-6 ? (1.0 - e * (1.0 + r)) / r : 0.5 * r;
        double w_new = (r > 1e-6 ? -std::expm1(-r) : r) - w_old;
        m.value = e * m.value - (w_old * m.last_accel + w_new * a);
    }
    m.last_accel = a;
    m.t = s.t;
}

FixedPointReport fixed_point_defect(const FlowState& s, const DensityProfile& p, const GravityConfig& gravity,
                                    const FixedPointOptions& opt, const ForcingMemory* memory) {
    const SlabGrid& g = s.v.grid;
    const DeformationPack& pack = s.pack;
    const double gm = p.gamma, kappa = s.kappa;
    FixedPointReport rep;
    VectorField a = acceleration(s);
    ScalarField X, W(g);
    try {
        X = compute_X(s, pack, p);
        const double cg = enthalpy_coefficient(gm);
        ScalarField q(g);
        for (std::size_t n = 0; n < g.size(); ++n) q(n) = cg * p.omega0(n) * std::pow(pack.J(n), 1.0 - gm);
        VectorField dq = gradient(q);
        ScalarField Jt = jacobian_rate(s.v, pack);
        TensorField dFs = fstar_rate(s.v, pack);
        TensorField dFinv = finv_rate(s.v, pack);
        TensorField Dv = jacobian_matrix(s.v);
        VectorField flux(g), kflux(g);
        for (std::size_t n = 0; n < g.size(); ++n)
            for (int j = 0; j < 3; ++j) {
                double f = 0.0, kf = 0.0;
                for (int i = 0; i < 3; ++i)
                    for (int k = 0; k < 3; ++k) {
                        f += pack.Fstar(n, 3 * j + i) * pack.Finv(n, 3 * k + i) * dq(n, k);
                        kf += pack.Fstar(n, 3 * j + i) * dFinv(n, 3 * k + i) * dq(n, k);
                    }
                flux(n, j) = f;
                kflux(n, j) = kf;
            }
        ScalarField divflux = divergence(flux), divk = divergence(kflux);
        TensorField DG(g);
        if (gravity.enabled && kappa != 0.0) DG = jacobian_matrix(force(p.rho0, s.eta, pack, gravity));
        for (std::size_t n = 0; n < g.size(); ++n) {
            double J = pack.J(n);
            double t2 = 0.0, t6 = 0.0;
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    t2 += dFs(n, 3 * j + i) * Dv(n, 3 * i + j);
                    t6 += dFinv(n, 3 * j + i) * DG(n, 3 * i + j);
                }
            double ratio = p.omega0(n) > 0.0 ? p.rho0(n) / p.omega0(n) : 0.0;
            W(n) = -gm * Jt(n) * Jt(n) / J + t2 - divflux(n) - p.rho0(n) - kappa * divk(n) - kappa * J * t6 +
                   2.0 * kappa * ratio * std::pow(J, gm - 1.0) * X(n);
        }
    } catch (const std::exception& e) {
        throw StageError("x-forcing", e.what());
    }

    ScalarField Xt;
    try {
        XProblem pr = x_problem_from_state(s, p);
        pr.x0 = X;
        pr.forcing = [&W](double) { return W; };
        GalerkinBasis basis(g, opt.kmax_tangential, opt.mmax_normal);
        XSolution sol = solve_x(pr, basis, opt.dt, opt.dt);
        Xt = (1.0 / opt.dt) * (basis.field(sol.coeffs.back()) - basis.field(sol.coeffs.front()));
    } catch (const std::exception& e) {
        throw StageError("x-solve", e.what());
    }

    try {
        ScalarField Jt = jacobian_rate(s.v, pack);
        ScalarField num(g);
        for (std::size_t n = 0; n < g.size(); ++n) {
            double J = pack.J(n);
            num(n) = (gm - 1.0) * std::pow(J, gm - 2.0) * Jt(n) * X(n) + std::pow(J, gm - 1.0) * Xt(n);
        }
        ScalarField dnum = partial(num, 2), dw = partial(p.omega0, 2);
        TensorField dFinv = finv_rate(s.v, pack);
        TensorField Dv = jacobian_matrix(s.v);
        ScalarField div_data = divergence(a) - div_eta(a, pack);
        for (std::size_t n = 0; n < g.size(); ++n) {
            double r = on_face(g, n) ? dnum(n) / dw(n) : num(n) / p.omega0(n);
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) r -= dFinv(n, 3 * j + i) * Dv(n, 3 * i + j);
            div_data(n) += r;
        }
        VectorField curl_data = curl(a) - curl_eta(a, pack) + vorticity_rhs(s.v, s.w, pack, kappa);
        ScalarField psi = slab_poisson(divergence(curl_data), BoundaryKind::dirichlet, FaceField(g));
        curl_data -= gradient(psi);
        HodgeData hd;
        hd.div = div_data;
        hd.curl = curl_data;
        hd.normal_trace = boundary_normal_acceleration(s, p, gravity);
        hd.mean1 = integrate(component(a, 0));
        hd.mean2 = integrate(component(a, 1));
        HodgeResult hr = hodge_reconstruct(hd, std::numeric_limits<double>::infinity());
        rep.reconstructed = hr.w;
        rep.shift = hr.shift;
    } catch (const std::exception& e) {
        throw StageError("reconstruction", e.what());
    }
    rep.defect = l2_norm(rep.reconstructed - a);
    rep.accel_norm = l2_norm(a);
    if (memory) rep.forcing_residual = l2_norm(memory->value - s.w);
    return rep;
}

}  // namespace epsolver
