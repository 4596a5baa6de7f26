#pragma once

// Qubit Bloch metrics, chain occupations and the leading natural orbital of the
// bath one-body density matrix.

#include <array>
#include <optional>

#include "sbchain/mps.hpp"
#include "sbchain/spectral_chain.hpp"

namespace sbchain {

struct QubitMetrics {
    std::array<double, 3> bloch{0.0, 0.0, 0.0};
    double coherence = 0.0;  ///< <sigma_x> = r_x
    double purity = 1.0;
    double entropy = 0.0;    ///< nats
    MatrixXcd rho;           ///< normalised reduced density matrix
};

/// Reduced qubit state of site 0, normalised by its trace.
QubitMetrics qubit_metrics(const Mps& state);

/// Bloch-vector form, purity and von Neumann entropy (from the eigenvalues) of a 2x2 density matrix.
QubitMetrics qubit_metrics_from_rho(const MatrixXcd& rho);

/// <c_k^dag c_k> for every bath site (sites 1..L).
VectorXd chain_occupations(const Mps& state);

/// 2 max_n |t_n|.
double hopping_guide_velocity(const ChainCoefficients& coeffs);

struct NaturalOrbital {
    VectorXcd f;
    double eigenvalue = 0.0;
    double leading_fraction = 0.0;  ///< eigenvalue / trace
    double participation_width = 1.0;  ///< inverse participation ratio 1 / sum |f_k|^4
};

/// 1 / sum_k |f_k|^4 for a unit vector.
double ipr_width(const VectorXcd& f);

/// Unit site vector e_k as a natural orbital with zero occupation.
NaturalOrbital site_orbital(Eigen::Index L, Eigen::Index k);

/// Top eigenvector of (M + M^dag)/2.
///
/// Phase: <previous.f, f> real and non-negative; without `previous` the
/// largest-magnitude component (lowest index on ties) is real positive. A top
/// eigenvalue degenerate within 1e-12 is resolved by projecting `previous`
/// onto the eigenspace, or else by the basis vector with the largest weight in
/// it. Throws DegenerateOrbitalError when trace(M) < 1e-14.
NaturalOrbital leading_natural_orbital(const MatrixXcd& one_body, const std::optional<NaturalOrbital>& previous = {});

}  // namespace sbchain
