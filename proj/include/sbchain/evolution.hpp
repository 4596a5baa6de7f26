#pragma once

// Chain Hamiltonian
//   H = Delta sx + sum_n w_n c_n^dag c_n + sum_n t_n (c_n^dag c_{n+1} + h.c.) + g sz (c_0^dag + c_0)
// as an MPO (qubit on site 0, mode n on site n+1) and its time evolution with
// symmetric second-order two-site TDVP.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "sbchain/mps.hpp"
#include "sbchain/spectral_chain.hpp"

namespace sbchain {

struct ChainModel {
    double delta = 1.0;
    ChainCoefficients coeffs;
};

struct EvolutionConfig {
    double dt = 0.01;
    double t_max = 5.0;
    int krylov_dim = 30;
    double krylov_tol = 1e-12;
    TruncationPolicy trunc;
    std::size_t observe_stride = 10;
    /// Bonds already at trunc.max_bond are updated with one-site steps and a
    /// backward bond step instead of a two-site step; the split could not grow them.
    bool one_site_when_saturated = true;

    void validate() const;
    std::size_t steps() const { return static_cast<std::size_t>(std::llround(t_max / dt)); }
};

/// `local_dims` holds one entry per site: 2 for the qubit, then the Fock
/// dimension of every chain mode. MPO bond dimension is 4.
Mpo build_mpo(const ChainModel& model, const std::vector<Index>& local_dims);

/// Incremental two-site TDVP integrator owning its state and environments.
class Tdvp2 {
public:
    Tdvp2(Mpo hamiltonian, Mps state, const EvolutionConfig& config);

    /// One symmetric sweep advancing the state by dt. Returns the largest
    /// discarded weight of the two-site splits.
    ///
    /// Along each half sweep every bond is crossed either by a two-site block
    /// (forward) followed by a backward one-site step, or, when saturated, by
    /// a forward one-site step followed by a backward bond step.
    double sweep(double dt);

    const Mps& state() const noexcept { return psi_; }
    Mps release() && { return std::move(psi_); }
    const Mpo& hamiltonian() const noexcept { return mpo_; }
    int max_krylov_dimension() const noexcept { return max_krylov_; }

private:
    void evolve_two_site(VectorXcd& theta, std::size_t i, cplx tau);
    void evolve_one_site(VectorXcd& theta, std::size_t i, cplx tau);
    void evolve_bond(MatrixXcd& C, std::size_t i, cplx tau);  // bond between sites i-1 and i
    bool saturated(std::size_t bond) const;

    Mpo mpo_;
    Mps psi_;
    EvolutionConfig config_;
    std::vector<std::vector<MatrixXcd>> left_;   // left_[i]: sites < i
    std::vector<std::vector<MatrixXcd>> right_;  // right_[i]: sites >= i
    int max_krylov_ = 0;
};

/// One sweep on a fresh integrator (environments rebuilt). The input must be
/// canonicalisable to site 0; dims must match the MPO.
std::pair<Mps, double> tdvp2_sweep(Mps state, const Mpo& mpo, double dt, const EvolutionConfig& config = {});

struct ObservationPoint {
    std::size_t step = 0;
    double time = 0.0;  ///< step * dt, computed from the index
    double max_discarded_weight = 0.0;  ///< since the previous record
    Index max_bond = 0;
    double norm_defect = 0.0;
};

using Observer = std::function<void(const ObservationPoint&, const Mps&)>;

/// Evolves `state` in place to t_max. Observers run at step 0, every
/// observe_stride steps, and at the final step. Without observers no records
/// are produced.
std::vector<ObservationPoint> evolve(Mps& state, const ChainModel& model, const EvolutionConfig& config,
                                     const std::vector<Observer>& observers = {});

}  // namespace sbchain
