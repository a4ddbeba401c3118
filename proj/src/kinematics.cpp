#include "epsolver/kinematics.hpp"

namespace epsolver {

std::array<double, 3> FlowMap::at(std::size_t node) const {
    auto x = grid().position(node);
    std::array<double, 3> p{};
    for (int i = 0; i < 3; ++i)
        p[i] = linear[3 * i] * x[0] + linear[3 * i + 1] * x[1] + linear[3 * i + 2] * x[2] + displacement(node, i);
    return p;
}

VectorField FlowMap::positions() const {
    VectorField p(grid());
    for (std::size_t n = 0; n < p.nodes(); ++n) {
        auto a = at(n);
        for (int i = 0; i < 3; ++i) p(n, i) = a[i];
    }
    return p;
}

std::uint64_t FlowMap::checksum() const {
    std::vector<double> buf(linear.begin(), linear.end());
    buf.insert(buf.end(), displacement.data.begin(), displacement.data.end());
    return epsolver::checksum(buf);
}

FlowMap identity_map(const SlabGrid& g) { return FlowMap(g); }

FlowMap flow_from_positions(const VectorField& positions, const Mat3& linear) {
    FlowMap m(linear, VectorField(positions.grid));
    for (std::size_t n = 0; n < positions.nodes(); ++n) {
        auto x = positions.grid.position(n);
        for (int i = 0; i < 3; ++i)
            m.displacement(n, i) =
                positions(n, i) - (linear[3 * i] * x[0] + linear[3 * i + 1] * x[1] + linear[3 * i + 2] * x[2]);
    }
    return m;
}

DeformationPack build_deformation(const FlowMap& eta) {
    const SlabGrid& g = eta.grid();
    DeformationPack p;
    p.F = jacobian_matrix(eta.displacement);
    for (std::size_t n = 0; n < g.size(); ++n)
        for (int c = 0; c < 9; ++c) p.F(n, c) += eta.linear[c];
    p.J = ScalarField(g);
    p.Finv = TensorField(g);
    p.Fstar = TensorField(g);
    for (std::size_t n = 0; n < g.size(); ++n) {
        auto f = [&](int i, int k) { return p.F(n, 3 * i + k); };
        // Row k of the adjugate is the cross product of the other two columns of F.
        double a[9];
        for (int k = 0; k < 3; ++k) {
            int k1 = (k + 1) % 3, k2 = (k + 2) % 3;
            for (int i = 0; i < 3; ++i) {
                int i1 = (i + 1) % 3, i2 = (i + 2) % 3;
                a[3 * k + i] = f(i1, k1) * f(i2, k2) - f(i2, k1) * f(i1, k2);
            }
        }
        double J = f(0, 0) * a[0] + f(0, 1) * a[3] + f(0, 2) * a[6];
        if (!(J > 0.0)) throw InvertibilityLost(n, J);
        p.J(n) = J;
        for (int c = 0; c < 9; ++c) {
            p.Fstar(n, c) = a[c];
            p.Finv(n, c) = a[c] / J;
        }
    }
    p.source_checksum = eta.checksum();
    return p;
}

VectorField piola_residual(const DeformationPack& pack) {
    const SlabGrid& g = pack.J.grid;
    VectorField r(g);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) {
            ScalarField c(g);
            for (std::size_t n = 0; n < g.size(); ++n) c(n) = pack.Fstar(n, 3 * k + i);
            ScalarField d = partial(c, k);
            for (std::size_t n = 0; n < g.size(); ++n) r(n, i) += d(n);
        }
    return r;
}

TensorField eulerian_gradient(const VectorField& u, const DeformationPack& pack) {
    if (u.grid != pack.J.grid) throw GridMismatch();
    TensorField D = jacobian_matrix(u);
    TensorField r(u.grid);
    for (std::size_t n = 0; n < u.nodes(); ++n)
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int q = 0; q < 3; ++q) s += D(n, 3 * k + q) * pack.Finv(n, 3 * q + j);
                r(n, 3 * k + j) = s;
            }
    return r;
}

ScalarField div_eta(const VectorField& u, const DeformationPack& pack) {
    TensorField E = eulerian_gradient(u, pack);
    ScalarField r(u.grid);
    for (std::size_t n = 0; n < u.nodes(); ++n) r(n) = E(n, 0) + E(n, 4) + E(n, 8);
    return r;
}

VectorField curl_eta(const VectorField& u, const DeformationPack& pack) {
    TensorField E = eulerian_gradient(u, pack);
    VectorField r(u.grid);
    for (std::size_t n = 0; n < u.nodes(); ++n) {
        auto e = [&](int k, int j) { return E(n, 3 * k + j); };
        r(n, 0) = e(2, 1) - e(1, 2);
        r(n, 1) = e(0, 2) - e(2, 0);
        r(n, 2) = e(1, 0) - e(0, 1);
    }
    return r;
}

TensorField curlmat_eta(const VectorField& u, const DeformationPack& pack) {
    TensorField E = eulerian_gradient(u, pack);
    TensorField r(u.grid);
    for (std::size_t n = 0; n < u.nodes(); ++n)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(n, 3 * i + j) = E(n, 3 * i + j) - E(n, 3 * j + i);
    return r;
}

ScalarField jacobian_rate(const VectorField& v, const DeformationPack& pack) {
    if (v.grid != pack.J.grid) throw GridMismatch();
    TensorField D = jacobian_matrix(v);
    ScalarField r(v.grid);
    for (std::size_t n = 0; n < v.nodes(); ++n) {
        double s = 0.0;
        for (int rr = 0; rr < 3; ++rr)
            for (int q = 0; q < 3; ++q) s += pack.Fstar(n, 3 * q + rr) * D(n, 3 * rr + q);
        r(n) = s;
    }
    return r;
}

TensorField finv_rate(const VectorField& v, const DeformationPack& pack) {
    if (v.grid != pack.J.grid) throw GridMismatch();
    TensorField D = jacobian_matrix(v);
    TensorField r(v.grid);
    for (std::size_t n = 0; n < v.nodes(); ++n) {
        double t[9];  // t(r,i) = v^r_,s Finv(s,i)
        for (int a = 0; a < 3; ++a)
            for (int i = 0; i < 3; ++i) {
                double s = 0.0;
                for (int q = 0; q < 3; ++q) s += D(n, 3 * a + q) * pack.Finv(n, 3 * q + i);
                t[3 * a + i] = s;
            }
        for (int k = 0; k < 3; ++k)
            for (int i = 0; i < 3; ++i) {
                double s = 0.0;
                for (int a = 0; a < 3; ++a) s += pack.Finv(n, 3 * k + a) * t[3 * a + i];
                r(n, 3 * k + i) = -s;
            }
    }
    return r;
}

TensorField fstar_rate(const VectorField& v, const DeformationPack& pack) {
    ScalarField Jt = jacobian_rate(v, pack);
    TensorField dFinv = finv_rate(v, pack);
    TensorField r(v.grid);
    for (std::size_t n = 0; n < v.nodes(); ++n)
        for (int c = 0; c < 9; ++c) r(n, c) = Jt(n) * pack.Finv(n, c) + pack.J(n) * dFinv(n, c);
    return r;
}

TensorField ddt_finv_over_j(const VectorField& v, const DeformationPack& pack) {
    ScalarField Jt = jacobian_rate(v, pack);
    TensorField dFinv = finv_rate(v, pack);
    TensorField r(v.grid);
    for (std::size_t n = 0; n < v.nodes(); ++n) {
        double J = pack.J(n);
        for (int c = 0; c < 9; ++c) r(n, c) = dFinv(n, c) / J - pack.Finv(n, c) * Jt(n) / (J * J);
    }
    return r;
}

FinvRateParts ddt_identity_decompose(const VectorField& v, const DeformationPack& pack) {
    TensorField E = eulerian_gradient(v, pack);  // E(i,r) = D_{eta^r} v^i
    FinvRateParts p{TensorField(v.grid), TensorField(v.grid), TensorField(v.grid)};
    for (std::size_t n = 0; n < v.nodes(); ++n) {
        double Jinv = 1.0 / pack.J(n);
        double div = E(n, 0) + E(n, 4) + E(n, 8);
        for (int k = 0; k < 3; ++k)
            for (int i = 0; i < 3; ++i) {
                double g = 0.0, c = 0.0;
                for (int r = 0; r < 3; ++r) {
                    double fk = pack.Finv(n, 3 * k + r);
                    g += fk * E(n, 3 * i + r);
                    c += fk * (E(n, 3 * r + i) - E(n, 3 * i + r));
                }
                p.grad_part(n, 3 * k + i) = -Jinv * g;
                p.div_part(n, 3 * k + i) = -Jinv * pack.Finv(n, 3 * k + i) * div;
                p.curl_part(n, 3 * k + i) = -Jinv * c;
            }
    }
    return p;
}

}  // namespace epsolver
