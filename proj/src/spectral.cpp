#include "epsolver/spectral.hpp"

#include <cmath>
#include <numbers>

namespace epsolver {

namespace {

// In-place 1D DFT of n strided complex values; sign -1 forward, +1 inverse (unnormalised).
void dft_line(cplx* a, std::size_t stride, int n, int sign, std::vector<cplx>& scratch) {
    if (n == 1) return;
    scratch.assign(n, cplx(0.0, 0.0));
    for (int k = 0; k < n; ++k) {
        cplx s(0.0, 0.0);
        for (int j = 0; j < n; ++j) {
            double arg = sign * 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * j) % n) / n;
            s += a[j * stride] * cplx(std::cos(arg), std::sin(arg));
        }
        scratch[k] = s;
    }
    for (int k = 0; k < n; ++k) a[k * stride] = scratch[k];
}

void dft_face(const SlabGrid& g, cplx* a, int sign) {
    std::vector<cplx> scratch;
    for (int i2 = 0; i2 < g.n2; ++i2) dft_line(a + static_cast<std::size_t>(i2) * g.n1, 1, g.n1, sign, scratch);
    for (int i1 = 0; i1 < g.n1; ++i1) dft_line(a + i1, g.n1, g.n2, sign, scratch);
}

}  // namespace

std::vector<cplx> face_dft(const SlabGrid& g, const std::vector<double>& face) {
    std::vector<cplx> a(face.begin(), face.end());
    dft_face(g, a.data(), -1);
    double inv = 1.0 / static_cast<double>(g.face_size());
    for (auto& c : a) c *= inv;
    return a;
}

std::vector<double> face_idft(const SlabGrid& g, const std::vector<cplx>& coeffs) {
    std::vector<cplx> a = coeffs;
    dft_face(g, a.data(), +1);
    std::vector<double> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i].real();
    return r;
}

std::vector<cplx> field_dft(const ScalarField& f) {
    const SlabGrid& g = f.grid;
    std::size_t fs = g.face_size();
    std::vector<cplx> out(f.data.begin(), f.data.end());
    double inv = 1.0 / static_cast<double>(fs);
    for (int i3 = 0; i3 < g.n3; ++i3) {
        dft_face(g, out.data() + i3 * fs, -1);
        for (std::size_t m = 0; m < fs; ++m) out[i3 * fs + m] *= inv;
    }
    return out;
}

ScalarField field_idft(const SlabGrid& g, const std::vector<cplx>& coeffs) {
    std::size_t fs = g.face_size();
    std::vector<cplx> a = coeffs;
    ScalarField f(g);
    for (int i3 = 0; i3 < g.n3; ++i3) {
        dft_face(g, a.data() + i3 * fs, +1);
        for (std::size_t m = 0; m < fs; ++m) f.data[i3 * fs + m] = a[i3 * fs + m].real();
    }
    return f;
}

std::vector<double> apply_face_multiplier(const SlabGrid& g, const std::vector<double>& face, const Multiplier& m) {
    auto c = face_dft(g, face);
    for (int i2 = 0; i2 < g.n2; ++i2)
        for (int i1 = 0; i1 < g.n1; ++i1)
            c[i1 + static_cast<std::size_t>(g.n1) * i2] *= m(wavenumber(i1, g.n1), wavenumber(i2, g.n2));
    return face_idft(g, c);
}

ScalarField apply_tangential_multiplier(const ScalarField& f, const Multiplier& m) {
    const SlabGrid& g = f.grid;
    ScalarField r(g);
    std::size_t fs = g.face_size();
    for (int i3 = 0; i3 < g.n3; ++i3) {
        std::vector<double> face(f.data.begin() + i3 * fs, f.data.begin() + (i3 + 1) * fs);
        auto out = apply_face_multiplier(g, face, m);
        std::copy(out.begin(), out.end(), r.data.begin() + i3 * fs);
    }
    return r;
}

}  // namespace epsolver
