#pragma once

#include <complex>
#include <functional>
#include <vector>

#include "epsolver/grid.hpp"

namespace epsolver {

using cplx = std::complex<double>;

// Signed wavenumber of DFT index i on n points.
inline int wavenumber(int i, int n) { return i <= n / 2 ? i : i - n; }
// True for the unpaired Nyquist index of an even n.
inline bool is_nyquist(int i, int n) { return n % 2 == 0 && n > 1 && i == n / 2; }

// Forward DFT of a face array (i1 fastest), normalised so that
// f(x) = sum_k c_k exp(2 pi i k.x).
std::vector<cplx> face_dft(const SlabGrid& g, const std::vector<double>& face);
// Inverse of face_dft, keeping the real part.
std::vector<double> face_idft(const SlabGrid& g, const std::vector<cplx>& coeffs);

// Plane-by-plane transforms of a field: entry [i3 * face_size + mode].
std::vector<cplx> field_dft(const ScalarField& f);
ScalarField field_idft(const SlabGrid& g, const std::vector<cplx>& coeffs);

// Applies an even real multiplier m(k1, k2) in the periodic directions.
using Multiplier = std::function<double(int, int)>;
ScalarField apply_tangential_multiplier(const ScalarField& f, const Multiplier& m);
std::vector<double> apply_face_multiplier(const SlabGrid& g, const std::vector<double>& face, const Multiplier& m);

}  // namespace epsolver
