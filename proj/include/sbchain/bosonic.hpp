#pragma once

// Local operators on truncated single-site Hilbert spaces.

#include <cstddef>

#include "sbchain/types.hpp"

namespace sbchain {

MatrixXd annihilation(Eigen::Index d);
MatrixXd creation(Eigen::Index d);
MatrixXd number_operator(Eigen::Index d);

MatrixXcd pauli_x();
MatrixXcd pauli_y();
MatrixXcd pauli_z();

/// Fock-basis matrix elements <m|D(z)|n>, 0 <= m,n < d, of the exact
/// displacement D(z) = exp(z a^dag - z^* a). This is the projection P D(z) P,
/// not the exponential of the truncated generator, so <psi|D(z)|psi> is exact
/// for any state supported on the first d levels.
MatrixXcd displacement(Eigen::Index d, cplx z);

}  // namespace sbchain
