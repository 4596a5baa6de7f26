#pragma once

// Wigner function of one collective mode c_f = sum_k f_k c_k from its
// symmetric-ordered characteristic function chi(lambda) = <D_f(lambda)>.
//
// Conventions: hbar = 1, [q, p] = i, beta = (q + i p)/sqrt(2), so the vacuum
// has variance 1/2 per quadrature and W(0,0) = 1/pi. With c_f = sum_k f_k c_k,
//   D_f(lambda) = exp(lambda c_f^dag - lambda^* c_f) = prod_k D_k(lambda f_k^*).

#include <cstddef>

#include "sbchain/mps.hpp"

namespace sbchain {

/// Midpoint grid for lambda = x + i y, symmetric about 0 (lambda <-> -lambda
/// maps index i to n-1-i).
struct LambdaGrid {
    double half_extent = 6.0;
    int n_points = 64;

    void validate() const;
    double spacing() const { return 2.0 * half_extent / n_points; }
    double coord(int i) const { return -half_extent + (i + 0.5) * spacing(); }
};

/// Node grid in q and p including the endpoints; odd n_points keeps the origin.
struct PhaseSpaceGrid {
    double half_extent = 6.0;
    int n_points = 101;

    void validate() const;
    double spacing() const { return 2.0 * half_extent / (n_points - 1); }
    double coord(int i) const { return -half_extent + i * spacing(); }
};

/// chi(lambda) for the mode f over sites first_mode, first_mode+1, ... of the
/// state. Sites before first_mode (the qubit, for a joint state) are traced
/// out. Normalised by <psi|psi>. Entry (i, j) is lambda = x_i + i y_j.
MatrixXcd characteristic_function(const Mps& state, const VectorXcd& f, const LambdaGrid& grid,
                                  std::size_t first_mode);

cplx characteristic_value(const Mps& state, const VectorXcd& f, cplx lambda, std::size_t first_mode);

struct WignerFunction {
    PhaseSpaceGrid grid;
    MatrixXd values;            ///< (q index, p index)
    double integral = 0.0;      ///< Riemann sum of W
    double norm_defect = 0.0;   ///< |integral - 1|
    double imag_residue = 0.0;  ///< max |Im| of the transform before discarding
};

/// W(q,p) = (1/(2 pi^2)) int chi(lambda) exp(i sqrt(2) (p x - q y)) dx dy, by a
/// separable direct Fourier sum. Throws GridConvergenceError when the
/// norm defect exceeds `max_norm_defect`.
WignerFunction wigner_from_characteristic(const MatrixXcd& chi, const LambdaGrid& lambda, const PhaseSpaceGrid& out,
                                          double max_norm_defect = 0.01);

/// V_nc = 2 * sum over nodes with W < 0 of |W| dq dp.
double negativity_volume(const WignerFunction& w);

/// Sum of |W| dq dp.
double absolute_integral(const WignerFunction& w);

struct WignerGrids {
    LambdaGrid lambda;
    PhaseSpaceGrid out;
    double scale = 1.0;
};

/// Widens the output grid by max(1, sqrt(occupation/2)) and narrows the lambda
/// grid by the same factor (point counts unchanged).
WignerGrids adaptive_grids(const LambdaGrid& lambda, const PhaseSpaceGrid& out, double occupation);

}  // namespace sbchain
