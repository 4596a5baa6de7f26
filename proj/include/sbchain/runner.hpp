#pragma once

// Run configuration, single runs, sweeps and their on-disk outputs.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbchain/evolution.hpp"
#include "sbchain/wigner.hpp"

namespace sbchain {

inline constexpr int kSchemaVersion = 1;

struct RunConfig {
    double delta = 1.0;
    double omega_c = 4.0;
    double alpha = 0.2;
    double s = 1.0;
    double theta = 0.0;  ///< k_B T / hbar in the energy unit (Theta/Delta at delta = 1); 0 selects the zero-temperature chain
    std::size_t L = 120;
    double dt = 0.01;
    double t_max = 5.0;
    TruncationPolicy trunc;
    std::vector<Index> fock_dims;  ///< one per mode; empty selects the default rule
    std::size_t observe_stride = 10;
    int krylov_dim = 30;
    double krylov_tol = 1e-12;
    double support_factor = 10.0;  ///< spectral support |w| <= support_factor * omega_c
    double vnc_interval = 0.1;     ///< time between V_nc evaluations; 0 disables them
    std::vector<double> wigner_times{0.0, 0.5, 1.0, 2.5, 5.0};
    LambdaGrid lambda_grid;
    PhaseSpaceGrid phase_grid;
    double memory_limit_gb = 4.0;
    bool write_checkpoints = false;  ///< MPS checkpoint at each Wigner snapshot time

    void validate() const;
    /// Fock dimension of every mode after applying the default rule.
    std::vector<Index> resolved_fock_dims() const;
    EvolutionConfig evolution_config() const;
};

/// d = 8 for every mode at zero temperature; 16 for the first 10 modes and 10
/// beyond at finite temperature.
std::vector<Index> default_fock_dims(std::size_t L, double theta);

/// "desk": L = 24, d = 8, D_max = 48, V_nc every 0.25 on a 48 x 48 lambda grid.
/// "paper": L = 120, D_max = 100, default Fock dims.
void apply_preset(RunConfig& config, const std::string& preset);

/// Fields present in `j` override `base`; unknown keys are a ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base = {});
nlohmann::json to_json(const RunConfig& config);
nlohmann::json to_json(const ChainCoefficients& coeffs);

ChainCoefficients run_chain_coefficients(const RunConfig& config);

/// Sum over sites of bond^2 * d * 16 bytes with D capped by max_bond and the
/// exact Schmidt bound, times a safety factor for environments and Krylov vectors.
double estimated_memory_bytes(const RunConfig& config);

struct TimeseriesRow {
    std::size_t step = 0;
    double t = 0.0;
    double sigma_x = 0.0, sigma_y = 0.0, sigma_z = 0.0;
    double purity = 1.0;
    double entropy = 0.0;
    double p_plus_x = 1.0;
    double vnc_cond = 0.0;    ///< NaN when not evaluated at this record
    double vnc_uncond = 0.0;  ///< NaN when not evaluated at this record
    double mode_occ_cond = 0.0;
    double mode_occ_uncond = 0.0;
    double total_occupation = 0.0;
    double leading_eigenvalue = 0.0;
    double leading_fraction = 0.0;
    double ipr_width = 1.0;
    Index max_bond = 1;
    double discarded_weight = 0.0;
};

struct SnapshotInfo {
    double time = 0.0;
    std::string condition;  ///< "uncond" or "plus_x"
    double vnc = 0.0;
    double mode_occupation = 0.0;
    double norm_defect = 0.0;
    std::filesystem::path csv;
};

struct RunOutput {
    RunConfig config;
    ChainCoefficients coeffs;
    std::vector<TimeseriesRow> rows;
    std::vector<VectorXd> occupations;  ///< per record, one entry per mode
    std::vector<SnapshotInfo> snapshots;
    std::vector<std::string> warnings;
    double max_discarded_weight = 0.0;
    double max_vnc_cond = 0.0;
    double max_vnc_uncond = 0.0;
    double t_peak_vnc_cond = 0.0;
    double coherence_loss_at_peak = 0.0;
    double p_plus_x_at_peak = 1.0;
    double peak_total_occupation = 0.0;
    double v_guide = 0.0;
    double runtime_seconds = 0.0;
};

/// Full pipeline. Writes every output file under `out_dir` when it is
/// non-empty. Module errors are recorded in metadata.json with the step at
/// which they occurred and rethrown.
RunOutput run_single(const RunConfig& config, const std::filesystem::path& out_dir = {});

struct SweepSpec {
    std::vector<double> alphas;
    std::vector<double> ss;
    std::vector<double> thetas;
    nlohmann::json base = nlohmann::json::object();  ///< RunConfig overrides shared by every point
    std::optional<std::string> preset;

    std::size_t size() const { return alphas.size() * ss.size() * thetas.size(); }
};

SweepSpec sweep_spec_from_json(const nlohmann::json& j);

struct SweepRow {
    std::size_t index = 0;
    double alpha = 0.0, s = 0.0, theta = 0.0;
    std::string status;  ///< "ok" or the error message
    double peak_vnc_cond = 0.0;
    double t_peak = 0.0;
    double coherence_loss_at_peak = 0.0;
    double p_plus_x_at_peak = 0.0;
    double peak_total_occupation = 0.0;
    double peak_vnc_uncond = 0.0;
};

/// Summary row derived from a finished run.
SweepRow summarize(const RunOutput& out);

/// Runs every (alpha, s, theta) point on `workers` threads. Point failures are
/// recorded in their row. Rows are ordered by point index; the summary is
/// written to out_dir/sweep_summary.csv when out_dir is non-empty.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, std::size_t workers, const std::filesystem::path& out_dir = {});

/// f_vector of a snapshot sidecar, stored as [[re, im], ...].
VectorXcd f_vector_from_json(const nlohmann::json& sidecar);

/// Wigner snapshot pair (unconditional and +x) of a stored joint state, with
/// the leading natural orbital of that state. The orbital phase is aligned to
/// `reference` when given (e.g. the f_vector of an earlier sidecar), otherwise
/// its largest component is made real and positive.
std::vector<SnapshotInfo> wigner_snapshot(const Mps& joint, double time, const LambdaGrid& lambda,
                                          const PhaseSpaceGrid& out, const std::filesystem::path& out_dir,
                                          const std::optional<VectorXcd>& reference = {});

}  // namespace sbchain
