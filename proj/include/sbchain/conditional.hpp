#pragma once

// Bath states conditioned on a projective sigma_x readout of the qubit.

#include "sbchain/mps.hpp"
#include "sbchain/observables.hpp"

namespace sbchain {

struct ConditionalBathState {
    Mps state;                 ///< bath sites only, normalised, centre at 0
    double probability = 0.0;  ///< clamped to [0, 1]
    double raw_probability = 0.0;
};

/// <+x|Psi> / sqrt(P(+x)) over the bath sites. Throws NullBranchError when
/// P < 1e-12.
ConditionalBathState postselect_plus_x(const Mps& joint);
ConditionalBathState postselect_minus_x(const Mps& joint);

/// f^dag M f with M(j,k) = <c_j^dag c_k>.
double mode_occupation(const MatrixXcd& one_body, const VectorXcd& f);

double conditional_mode_occupation(const ConditionalBathState& cond, const NaturalOrbital& f);

}  // namespace sbchain
