#pragma once

// Reservoir spectral density and its mapping to a nearest-neighbour chain.
//
// The chain coefficients are the three-term recurrence coefficients of the
// orthonormal polynomials of the measure dmu(w) = J(w) dw. With the coupling
// convention J(w) = pi * sum_k lambda_k^2 delta(w - Omega_k) the qubit couples
// to the head of the chain with g = sqrt(mu_0 / pi).

#include <cstddef>
#include <optional>
#include <vector>

#include "sbchain/types.hpp"

namespace sbchain {

/// J(w) = 2 alpha omega_c^(1-s) w^s exp(-w/omega_c) for w >= 0.
struct SpectralDensity {
    double alpha = 0.0;
    double s = 1.0;
    double omega_c = 4.0;

    void validate() const;
    /// Integral of J over (0, inf): 2 alpha omega_c^2 Gamma(s+1).
    double zeroth_moment() const;
};

double eval_density(const SpectralDensity& density, double omega);

/// Finite-temperature extension over signed frequencies,
/// J_T(w) = sign(w) J(|w|)/2 [1 + coth(w / 2 theta)], truncated to |w| <= omega_max.
/// A vacuum-initialised chain built from this measure reproduces the thermal
/// bath correlations.
struct ThermalExtendedDensity {
    SpectralDensity base;
    double theta = 1.0;
    double omega_max = 40.0;

    void validate() const;
};

double eval_thermal_density(const ThermalExtendedDensity& density, double omega);

/// Support extent (absolute frequency) large enough that the first L recurrence
/// coefficients of the untruncated exponential-cutoff measure are unaffected.
double exact_measure_extent(double omega_c, std::size_t L);

struct QuadratureConfig {
    int order = 24;                        ///< Gauss-Legendre points per panel
    std::optional<int> nodes_per_mode;     ///< minimum nodes / L; 50 zero-T, 100 thermal
    std::optional<double> support_factor;  ///< zero-T truncation in units of omega_c; unset = exact measure
    double tolerance = 1e-10;              ///< relative change allowed between refinements
    int max_refinements = 4;
};

/// Discrete quadrature of a measure: nodes and sqrt of the (positive) weights.
/// Square-root weights keep the Lanczos vectors in range far out in the tail.
struct DiscreteMeasure {
    VectorXd nodes;
    VectorXd sqrt_weights;

    double zeroth_moment() const { return sqrt_weights.squaredNorm(); }
};

/// n-point Gauss-Legendre rule on [-1, 1]; nodes ascending.
void gauss_legendre(int n, VectorXd& nodes, VectorXd& weights);

struct MeasureInfo {
    double alpha = 0.0;
    double s = 1.0;
    double omega_c = 4.0;
    double theta = 0.0;  ///< 0 for the zero-temperature measure
    double support_lo = 0.0;
    double support_hi = 0.0;
};

struct QuadratureInfo {
    int order = 0;
    int nodes = 0;
    int refinements = 0;
    double tolerance = 0.0;
    double achieved = 0.0;  ///< max relative change at the last refinement
};

struct ChainCoefficients {
    std::vector<double> omegas;  ///< on-site frequencies, size L
    std::vector<double> hops;    ///< nearest-neighbour hoppings, size L-1
    double g = 0.0;              ///< qubit-chain coupling
    MeasureInfo measure;
    QuadratureInfo quadrature;

    std::size_t L() const noexcept { return omegas.size(); }
};

/// Recurrence coefficients (diagonal a_0..a_{n-1}, off-diagonal b_1..b_{n-1})
/// of the orthonormal polynomials of a discrete measure, by Lanczos with full
/// reorthogonalisation on diag(nodes).
void lanczos_recurrence(const DiscreteMeasure& measure, std::size_t n, std::vector<double>& diagonal,
                        std::vector<double>& off_diagonal);

ChainCoefficients chain_coefficients(const SpectralDensity& density, std::size_t L,
                                     const QuadratureConfig& quad = {});

ChainCoefficients chain_coefficients(const ThermalExtendedDensity& density, std::size_t L,
                                     const QuadratureConfig& quad = {});

}  // namespace sbchain
