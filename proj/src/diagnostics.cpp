#include "epsolver/diagnostics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

namespace epsolver {

namespace {

constexpr double pi = std::numbers::pi;

std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

double tensor_tangential(const TensorField& t, int k, const ScalarField* weight) {
    double s = 0.0;
    for (int c = 0; c < 9; ++c) {
        ScalarField f(t.grid);
        for (std::size_t n = 0; n < t.grid.size(); ++n) f(n) = t(n, c);
        s += tangential_norm_squared(f, k, weight);
    }
    return s;
}

double vector_tangential(const VectorField& v, int k, const ScalarField* weight) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += tangential_norm_squared(component(v, c), k, weight);
    return s;
}

// ||eta||_0^2 + sum_k ||d_k eta||_3^2; the derivatives come from F so the linear part
// never meets a periodic differentiation.
double flow_map_norm(const FlowMap& eta, const DeformationPack& pack) {
    double s = l2_norm_squared(eta.positions());
    for (int c = 0; c < 9; ++c) {
        ScalarField f(eta.grid());
        for (std::size_t n = 0; n < f.grid.size(); ++n) f(n) = pack.F(n, c);
        s += sobolev_norm_squared(f, 3);
    }
    return s;
}

std::optional<ScalarField> jacobian_power_derivative(const FlowState& s, int order) {
    if (static_cast<int>(s.history.size()) < order + 1) return std::nullopt;
    std::vector<double> nodes;
    for (int j = 0; j <= order; ++j) nodes.push_back(s.history[j].t);
    auto w = finite_difference_weights(nodes, s.t, order);
    ScalarField out(s.v.grid);
    for (int j = 0; j <= order; ++j) {
        ScalarField J = j == 0 ? s.pack.J : build_deformation(s.history[j].eta).J;
        for (std::size_t n = 0; n < out.grid.size(); ++n) out(n) += w[j] / (J(n) * J(n));
    }
    return out;
}

}  // namespace

std::vector<double> finite_difference_weights(const std::vector<double>& x, double z, int m) {
    const int n = static_cast<int>(x.size()) - 1;
    if (m < 0 || n < m) throw PreconditionError("not enough nodes for the requested derivative");
    std::vector<std::vector<double>> c(n + 1, std::vector<double>(m + 1, 0.0));
    double c1 = 1.0, c4 = x[0] - z;
    c[0][0] = 1.0;
    for (int i = 1; i <= n; ++i) {
        int mn = std::min(i, m);
        double c2 = 1.0, c5 = c4;
        c4 = x[i] - z;
        for (int j = 0; j < i; ++j) {
            double c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(n + 1);
    for (int i = 0; i <= n; ++i) w[i] = c[i][m];
    return w;
}

std::optional<VectorField> history_time_derivative(const FlowState& s, int order) {
    if (order == 0) return s.v;
    if (static_cast<int>(s.history.size()) < order + 1) return std::nullopt;
    std::vector<double> nodes;
    for (int j = 0; j <= order; ++j) nodes.push_back(s.history[j].t);
    auto w = finite_difference_weights(nodes, s.t, order);
    VectorField out(s.v.grid);
    for (int j = 0; j <= order; ++j) out += w[j] * s.history[j].v;
    return out;
}

// ---------------------------------------------------------------------------

const EnergyTerm* EnergyReport::find(const std::string& name) const {
    for (const auto& t : terms)
        if (t.name == name) return &t;
    return nullptr;
}

std::vector<std::string> energy_term_names(int s_max) {
    std::vector<std::string> names;
    for (int s = 0; s <= s_max; ++s)
        for (const char* base : {"eta", "rho_deta", "rho_v", "diss", "jinv"})
            names.push_back(std::string(base) + "_s" + std::to_string(s));
    names.push_back("curl_h3");
    names.push_back("rho_curl_t4");
    return names;
}

std::optional<double> dissipation_integrand(const FlowState& s, const DensityProfile& p, int index) {
    auto d = history_time_derivative(s, 2 * index);
    if (!d) return std::nullopt;
    ScalarField rho2 = pointwise_product(p.rho0, p.rho0);
    return tensor_tangential(jacobian_matrix(*d), 4 - index, &rho2);
}

EnergyReport energy(const FlowState& s, const DensityProfile& p, int s_max,
                    const std::vector<std::optional<double>>* accumulated) {
    if (s_max < 0 || s_max > 4) throw PreconditionError("s_max must be in 0..4");
    EnergyReport r;
    r.t = s.t;
    r.s_max = s_max;
    ScalarField rho2 = pointwise_product(p.rho0, p.rho0);
    for (int si = 0; si <= s_max; ++si) {
        const int k = 4 - si;
        const std::string tag = "_s" + std::to_string(si);
        EnergyTerm eta{"eta" + tag, si}, deta{"rho_deta" + tag, si}, vel{"rho_v" + tag, si}, diss{"diss" + tag, si},
            jinv{"jinv" + tag, si};
        if (si == 0) {
            eta.present = deta.present = true;
            eta.value = flow_map_norm(s.eta, s.pack);
            deta.value = tensor_tangential(s.pack.F, k, &rho2);
        } else if (auto d = history_time_derivative(s, 2 * si - 1)) {
            eta.present = deta.present = true;
            eta.value = sobolev_norm_squared(*d, k);
            deta.value = tensor_tangential(jacobian_matrix(*d), k, &rho2);
        }
        if (auto d = history_time_derivative(s, 2 * si)) {
            vel.present = true;
            vel.value = vector_tangential(*d, k, &p.rho0);
        }
        if (accumulated && static_cast<int>(accumulated->size()) > si && (*accumulated)[si]) {
            diss.present = true;
            diss.value = *(*accumulated)[si];
        }
        if (auto dj = jacobian_power_derivative(s, 2 * si)) {
            jinv.present = true;
            jinv.value = sobolev_norm_squared(pointwise_product(p.rho0, *dj), k);
        }
        bool all = eta.present && deta.present && vel.present && diss.present && jinv.present;
        if (all && r.s_computed == si - 1) r.s_computed = si;
        for (auto* t : {&eta, &deta, &vel, &diss, &jinv}) r.terms.push_back(*t);
    }
    VectorField c = curl_eta(s.v, s.pack);
    r.terms.push_back({"curl_h3", -1, true, sobolev_norm_squared(c, 3)});
    r.terms.push_back({"rho_curl_t4", -1, true, vector_tangential(c, 4, &rho2)});
    for (const auto& t : r.terms)
        if (t.present) r.total += t.value;
    return r;
}

EnergyTracker::EnergyTracker(const DensityProfile& p, int s_max)
    : profile_(p), s_max_(s_max), last_integrand_(s_max + 1), integral_(s_max + 1) {}

EnergyReport EnergyTracker::observe(const FlowState& s) {
    double dt = started_ ? s.t - last_t_ : 0.0;
    for (int si = 0; si <= s_max_; ++si) {
        auto now = dissipation_integrand(s, profile_, si);
        if (now) {
            // accumulated from the first level where the integrand is available
            if (!integral_[si]) integral_[si] = 0.0;
            if (last_integrand_[si]) *integral_[si] += 0.5 * dt * (*last_integrand_[si] + *now);
        }
        last_integrand_[si] = now;
    }
    started_ = true;
    last_t_ = s.t;
    std::vector<std::optional<double>> scaled(s_max_ + 1);
    for (int si = 0; si <= s_max_; ++si)
        if (integral_[si]) scaled[si] = s.kappa * *integral_[si];
    EnergyReport r = energy(s, profile_, s_max_, &scaled);
    if (!reference_ && r.complete()) reference_ = r.total;
    return r;
}

std::string energy_csv_header(int s_max) {
    std::string h = "t";
    for (const auto& n : energy_term_names(s_max)) h += "," + n;
    return h + ",total\n";
}

std::string energy_csv_row(const EnergyReport& r) {
    std::string row = num(r.t);
    for (const auto& t : r.terms) row += "," + (t.present ? num(t.value) : std::string("absent"));
    return row + "," + num(r.total) + "\n";
}

// ---------------------------------------------------------------------------

VectorField CurlTransport::integrand(const FlowState& s) {
    return vorticity_stretching(s.v, s.pack) + vorticity_rhs(s.v, s.w, s.pack, s.kappa);
}

CurlTransport::CurlTransport(const FlowState& s0)
    : curl0_(curl_eta(s0.v, s0.pack)),
      integral_(s0.v.grid),
      last_integrand_(integrand(s0)),
      residual_(s0.v.grid),
      last_t_(s0.t) {}

double CurlTransport::observe(const FlowState& s) {
    VectorField now = integrand(s);
    integral_ += (0.5 * (s.t - last_t_)) * (last_integrand_ + now);
    last_integrand_ = std::move(now);
    last_t_ = s.t;
    residual_ = curl_eta(s.v, s.pack) - curl0_ - integral_;
    return l2_norm(residual_);
}

// ---------------------------------------------------------------------------

AprioriRecord apriori_window(double t, const FlowMap& eta, const DeformationPack& pack, std::uint64_t seed,
                             int pairs) {
    const SlabGrid& g = eta.grid();
    AprioriRecord r;
    r.t = t;
    r.j_min = 1e300;
    r.j_max = -1e300;
    r.coercivity_min = 1e300;
    for (std::size_t n = 0; n < g.size(); ++n) {
        r.j_min = std::min(r.j_min, pack.J(n));
        r.j_max = std::max(r.j_max, pack.J(n));
        Eigen::Matrix3d B;
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) {
                double a = 0.0, b = 0.0;
                for (int i = 0; i < 3; ++i) {
                    a += pack.Fstar(n, 3 * j + i) * pack.Finv(n, 3 * k + i);
                    b += pack.Fstar(n, 3 * k + i) * pack.Finv(n, 3 * j + i);
                }
                B(j, k) = 0.5 * (a + b);
            }
        double e = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(B, Eigen::EigenvaluesOnly).eigenvalues()(0);
        r.coercivity_min = std::min(r.coercivity_min, e);
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, g.size() - 1);
    r.lipschitz_min = 1e300;
    r.lipschitz_max = 0.0;
    int done = 0;
    for (int attempt = 0; done < pairs && attempt < 16 * pairs; ++attempt) {
        std::size_t a = pick(rng), b = pick(rng);
        if (a == b) continue;
        auto xa = g.position(a), xb = g.position(b);
        auto ya = eta.at(a), yb = eta.at(b);
        double dx = 0.0, dy = 0.0;
        for (int c = 0; c < 3; ++c) {
            dx += (xa[c] - xb[c]) * (xa[c] - xb[c]);
            dy += (ya[c] - yb[c]) * (ya[c] - yb[c]);
        }
        double q = std::sqrt(dy / dx);
        r.lipschitz_min = std::min(r.lipschitz_min, q);
        r.lipschitz_max = std::max(r.lipschitz_max, q);
        ++done;
    }
    if (done == 0) r.lipschitz_min = r.lipschitz_max = 1.0;
    r.j_pass = r.j_min >= j_window_min && r.j_max <= j_window_max;
    r.coercivity_pass = r.coercivity_min >= 7.0 / 8.0;
    r.lipschitz_pass = r.lipschitz_min >= 7.0 / 8.0 && r.lipschitz_max <= 9.0 / 8.0;
    return r;
}

AprioriRecord apriori_window(const FlowState& s, std::uint64_t seed, int pairs) {
    return apriori_window(s.t, s.eta, s.pack, seed, pairs);
}

void AprioriTracker::observe(const AprioriRecord& r) {
    bool pass[3] = {r.j_pass, r.coercivity_pass, r.lipschitz_pass};
    std::optional<double>* first[3] = {&first_j_violation, &first_coercivity_violation, &first_lipschitz_violation};
    for (int i = 0; i < 3; ++i) {
        if (!pass[i]) {
            if (!*first[i]) *first[i] = r.t;
            failed_[i] = true;
        } else if (failed_[i]) {
            flicker = true;
        }
    }
    ++records;
}

// ---------------------------------------------------------------------------

double smoothed_distance(double x, double L) {
    const double d = 0.25 * L;
    double y = x - 0.5 * L;
    if (std::abs(y) >= d) return std::min(x, L - x);
    return 13.0 * d / 8.0 - 3.0 * y * y / (4.0 * d) + y * y * y * y / (8.0 * d * d * d);
}

ScalarField smoothed_distance(const SlabGrid& g) {
    return sample_scalar(g, [&](double, double, double x3) { return smoothed_distance(x3, g.length3); });
}

double hardy_verifier(const ScalarField& u, int s, double face_tol) {
    if (s != 1 && s != 2) throw PreconditionError("hardy verifier supports s = 1 or 2");
    const SlabGrid& g = u.grid;
    const std::size_t fs = g.face_size();
    double scale = std::max(max_abs(u), 1e-300);
    for (std::size_t m = 0; m < fs; ++m)
        if (std::abs(u(m)) > face_tol * scale || std::abs(u((g.n3 - 1) * fs + m)) > face_tol * scale)
            throw PreconditionError("hardy verifier needs u = 0 on both faces");
    ScalarField d = smoothed_distance(g), du = partial(u, 2), q(g);
    for (std::size_t n = 0; n < g.size(); ++n) {
        std::size_t i3 = n / fs;
        if (i3 == 0)
            q(n) = du(n);
        else if (i3 == static_cast<std::size_t>(g.n3 - 1))
            q(n) = -du(n);
        else
            q(n) = u(n) / d(n);
    }
    double den = sobolev_norm_squared(u, s);
    return den > 0.0 ? std::sqrt(sobolev_norm_squared(q, s - 1) / den) : 0.0;
}

double embedding_verifier(const ScalarField& f, int p) {
    if (p != 1 && p != 2) throw PreconditionError("embedding verifier supports p = 1 or 2");
    const SlabGrid& g = f.grid;
    VectorField df = gradient(f);
    double den = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n) {
        double x3 = g.position(n)[2];
        double d = std::min(x3, g.length3 - x3);
        double a = f(n) * f(n);
        for (int c = 0; c < 3; ++c) a += df(n, c) * df(n, c);
        den += g.weight(n) * std::pow(d, p) * a;
    }
    double numer = p == 2 ? l2_norm_squared(f) : std::sqrt(l2_norm_squared(f) * sobolev_norm_squared(f, 1));
    return den > 0.0 ? numer / den : 0.0;
}

ScalarField family_member(const SlabGrid& g, std::uint64_t seed, int index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(family_version)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal;
    std::uniform_int_distribution<int> count(1, 6), mpick(1, 4), kpick(0, 2), kind(1, 2);
    int terms = count(rng);
    struct Term {
        double a;
        int k1, t1, k2, t2, m;
    };
    std::vector<Term> ts;
    for (int i = 0; i < terms; ++i) {
        Term t{normal(rng), kpick(rng), kind(rng), kpick(rng), kind(rng), mpick(rng)};
        if (2 * t.k1 >= g.n1) t.k1 = 0;
        if (2 * t.k2 >= g.n2) t.k2 = 0;
        ts.push_back(t);
    }
    auto tang = [](int k, int t, double x) {
        if (k == 0) return 1.0;
        return t == 1 ? std::cos(2 * pi * k * x) : std::sin(2 * pi * k * x);
    };
    return sample_scalar(g, [&](double x1, double x2, double x3) {
        double v = 0.0;
        for (const auto& t : ts)
            v += t.a * tang(t.k1, t.t1, x1) * tang(t.k2, t.t2, x2) * std::sin(t.m * pi * x3 / g.length3);
        return v;
    });
}

FamilyBounds family_sweep(const SlabGrid& g, std::uint64_t seed, int count) {
    FamilyBounds b;
    for (int i = 0; i < count; ++i) {
        ScalarField u = family_member(g, seed, i);
        double r[4] = {hardy_verifier(u, 1, 1e-10), hardy_verifier(u, 2, 1e-10), embedding_verifier(u, 1),
                       embedding_verifier(u, 2)};
        for (double x : r)
            if (!std::isfinite(x)) b.finite = false;
        b.hardy_s1 = std::max(b.hardy_s1, r[0]);
        b.hardy_s2 = std::max(b.hardy_s2, r[1]);
        b.embedding_p1 = std::max(b.embedding_p1, r[2]);
        b.embedding_p2 = std::max(b.embedding_p2, r[3]);
    }
    return b;
}

FamilyBounds recorded_family_bounds() {
    FamilyBounds b;
    b.hardy_s1 = 1.25;
    b.hardy_s2 = 0.65;
    b.embedding_p1 = 1.85;
    b.embedding_p2 = 2.25;
    return b;
}

// ---------------------------------------------------------------------------

VacuumPersistence vacuum_persistence(const FlowState& s, const DensityProfile& p) {
    const SlabGrid& g = s.v.grid;
    ScalarField f(g);
    for (std::size_t n = 0; n < g.size(); ++n) f(n) = p.omega0(n) * std::pow(s.pack.J(n), 1.0 - p.gamma);
    ScalarField d = partial(f, 2);
    const std::size_t fs = g.face_size();
    VacuumPersistence r;
    r.t = s.t;
    r.slope = FaceField(g);
    r.worst_slope = -1e300;
    r.min_ratio = 1e300;
    for (std::size_t m = 0; m < fs; ++m) {
        r.slope.bottom[m] = -d(m);
        r.slope.top[m] = d((g.n3 - 1) * fs + m);
        for (auto [now, ref] : {std::pair{r.slope.bottom[m], p.slope.bottom[m]}, {r.slope.top[m], p.slope.top[m]}}) {
            r.worst_slope = std::max(r.worst_slope, now);
            r.min_ratio = std::min(r.min_ratio, ref != 0.0 ? now / ref : 0.0);
        }
    }
    r.negative = r.worst_slope < 0.0;
    return r;
}

std::string monitor_csv_header() { return "t,name,value,pass\n"; }

std::string monitor_csv_row(const MonitorRow& r) {
    return num(r.t) + "," + r.name + "," + num(r.value) + "," + (r.pass ? "1" : "0") + "\n";
}

}  // namespace epsolver
