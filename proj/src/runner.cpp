#include "sbchain/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "sbchain/bosonic.hpp"
#include "sbchain/checkpoint.hpp"
#include "sbchain/conditional.hpp"
#include "sbchain/observables.hpp"

namespace sbchain {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kTopFockWarning = 1e-6;

std::size_t aligned_steps(double t, double dt, const char* what) {
    const double k = t / dt;
    const double r = std::round(k);
    if (std::abs(k - r) > 1e-9 * std::max(1.0, r))
        throw ConfigError(std::string(what) + " is not a multiple of dt");
    return static_cast<std::size_t>(r);
}

std::string time_tag(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "t%.2f", t);
    return buf;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path.string());
    os.precision(17);
    return os;
}

std::ofstream open_csv(const fs::path& path) {
    auto os = open_output(path);
    os << "# schema_version: " << kSchemaVersion << '\n';
    return os;
}

void write_json(const fs::path& path, const json& j) {
    auto os = open_output(path);
    os << j.dump(2) << '\n';
}

json grid_json(const LambdaGrid& g) { return {{"half_extent", g.half_extent}, {"n_points", g.n_points}}; }
json grid_json(const PhaseSpaceGrid& g) { return {{"half_extent", g.half_extent}, {"n_points", g.n_points}}; }

json complex_vector_json(const VectorXcd& v) {
    json a = json::array();
    for (Index k = 0; k < v.size(); ++k) a.push_back({std::real(v[k]), std::imag(v[k])});
    return a;
}

template <typename T>
T get_as(const json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config field '" + key + "': " + e.what());
    }
}

template <typename Grid>
Grid grid_from_json(const json& j, Grid g, const std::string& key) {
    if (!j.is_object()) throw ConfigError("config field '" + key + "' must be an object");
    for (const auto& [k, v] : j.items()) {
        if (k == "half_extent")
            g.half_extent = get_as<double>(v, key + "." + k);
        else if (k == "n_points")
            g.n_points = get_as<int>(v, key + "." + k);
        else
            throw ConfigError("unknown config field '" + key + "." + k + "'");
    }
    return g;
}

// Wigner pair (unconditional joint state, +x conditioned bath) on shared grids.
struct WignerPair {
    WignerGrids grids;
    WignerFunction uncond;
    std::optional<WignerFunction> cond;
};

WignerPair evaluate_pair(const Mps& joint, const std::optional<ConditionalBathState>& cond, const VectorXcd& f,
                         double occupation, const LambdaGrid& lambda, const PhaseSpaceGrid& out) {
    WignerPair p;
    p.grids = adaptive_grids(lambda, out, occupation);
    for (int attempt = 0;; ++attempt) {
        try {
            p.uncond = wigner_from_characteristic(characteristic_function(joint, f, p.grids.lambda, 1), p.grids.lambda,
                                                  p.grids.out);
            if (cond)
                p.cond = wigner_from_characteristic(characteristic_function(cond->state, f, p.grids.lambda, 0),
                                                    p.grids.lambda, p.grids.out);
            return p;
        } catch (const GridConvergenceError& e) {
            if (attempt > 0) throw;
            // same spacing in q and p over twice the window; lambda spacing halved to match
            spdlog::warn("Wigner grid retry: {}", e.what());
            p.grids.out.half_extent *= 2.0;
            p.grids.out.n_points = 2 * p.grids.out.n_points - 1;
            p.grids.lambda.n_points *= 2;
        }
    }
}

SnapshotInfo write_snapshot(const WignerFunction& w, const WignerPair& pair, const std::string& condition, double time,
                            double mode_occupation, const VectorXcd& f, std::optional<double> probability,
                            const fs::path& dir) {
    SnapshotInfo info;
    info.time = time;
    info.condition = condition;
    info.vnc = negativity_volume(w);
    info.mode_occupation = mode_occupation;
    info.norm_defect = w.norm_defect;
    if (dir.empty()) return info;

    const std::string stem = "wigner_" + condition + "_" + time_tag(time);
    info.csv = dir / (stem + ".csv");
    {
        auto os = open_csv(info.csv);
        for (Index a = 0; a < w.values.rows(); ++a) {
            for (Index b = 0; b < w.values.cols(); ++b) os << (b ? "," : "") << w.values(a, b);
            os << '\n';
        }
    }
    json side = {{"schema_version", kSchemaVersion},
                 {"time", time},
                 {"condition", condition},
                 {"grid",
                  {{"q", grid_json(w.grid)},
                   {"p", grid_json(w.grid)},
                   {"lambda", grid_json(pair.grids.lambda)},
                   {"scale", pair.grids.scale},
                   {"layout", "rows index q, columns index p, nodes -half_extent + k * spacing"}}},
                 {"V_nc", info.vnc},
                 {"mode_occupation", mode_occupation},
                 {"f_vector", complex_vector_json(f)},
                 {"integral", w.integral},
                 {"norm_defect", w.norm_defect},
                 {"imag_residue", w.imag_residue}};
    if (probability) side["probability"] = *probability;
    write_json(dir / (stem + ".json"), side);
    return info;
}

json conventions_json(const RunConfig& c) {
    return {
        {"units", "hbar = 1, k_B = 1; theta = k_B T / hbar in the units of delta, so theta = Theta/Delta at delta = 1"},
        {"hamiltonian",
         "H = delta sx + sum_n w_n c_n^dag c_n + sum_n t_n (c_n^dag c_{n+1} + h.c.) + g sz (c_0^dag + c_0)"},
        {"spectral_density", "J(w) = 2 alpha omega_c^(1-s) w^s exp(-w/omega_c)"},
        {"coupling", "J(w) = pi sum_k lambda_k^2 delta(w - Omega_k), g = sqrt(mu_0 / pi)"},
        {"spectral_support", "|w| <= " + std::to_string(c.support_factor) + " omega_c"},
        {"thermal_chain", "vacuum chain of the signed measure sign(w) J(|w|)/2 [1 + coth(w / 2 theta)]"},
        {"initial_state", "|+x> x vacuum"},
        {"integrator", "symmetric second-order two-site TDVP, Lanczos local exponentials"},
        {"readout", "projective sigma_x, +x branch"},
        {"quadratures", "beta = (q + i p)/sqrt(2), vacuum variance 1/2, W(0,0) = 1/pi for the vacuum"},
        {"characteristic_function", "chi(lambda) = <prod_k D_k(lambda f_k^*)>, c_f = sum_k f_k c_k"},
        {"wigner_transform", "direct separable Fourier sum over a midpoint lambda grid"},
        {"wigner_grid_scaling", "output extent x max(1, sqrt(n/2)), lambda extent / the same factor, n = max mode occupation"},
        {"V_nc", "2 sum_{W<0} |W| dq dp"},
        {"orbital", "leading eigenvector of <c_j^dag c_k> on the joint state, shared by both conditions"},
        {"orbital_phase", "overlap with the previous record real and non-negative"},
        {"orbital_at_zero_occupation", "e_0, the site coupled to the qubit"},
        {"participation_width", "ipr_width = 1 / sum_k |f_k|^4"},
        {"peak_window", "whole trajectory over the V_nc cadence"},
        {"coherence_loss", "1 - <sigma_x> at the time of peak conditional V_nc"},
    };
}

json summary_json(const RunOutput& o) {
    return {{"max_discarded_weight", o.max_discarded_weight},
            {"max_vnc_cond", o.max_vnc_cond},
            {"max_vnc_uncond", o.max_vnc_uncond},
            {"t_peak_vnc_cond", o.t_peak_vnc_cond},
            {"coherence_loss_at_peak", o.coherence_loss_at_peak},
            {"p_plus_x_at_peak", o.p_plus_x_at_peak},
            {"peak_total_occupation", o.peak_total_occupation},
            {"v_guide", o.v_guide},
            {"records", o.rows.size()},
            {"snapshots", o.snapshots.size()},
            {"runtime_seconds", o.runtime_seconds}};
}

void write_timeseries(const fs::path& path, const std::vector<TimeseriesRow>& rows) {
    auto os = open_csv(path);
    os << "step,t,sigma_x,sigma_y,sigma_z,purity,entropy,p_plus_x,vnc_cond,vnc_uncond,mode_occ_cond,mode_occ_uncond,"
          "total_occupation,leading_eigenvalue,leading_fraction,ipr_width,max_bond,discarded_weight\n";
    for (const auto& r : rows)
        os << r.step << ',' << r.t << ',' << r.sigma_x << ',' << r.sigma_y << ',' << r.sigma_z << ',' << r.purity << ','
           << r.entropy << ',' << r.p_plus_x << ',' << r.vnc_cond << ',' << r.vnc_uncond << ',' << r.mode_occ_cond << ','
           << r.mode_occ_uncond << ',' << r.total_occupation << ',' << r.leading_eigenvalue << ',' << r.leading_fraction
           << ',' << r.ipr_width << ',' << r.max_bond << ',' << r.discarded_weight << '\n';
}

void write_site_table(const fs::path& path, const std::string& prefix, const std::vector<TimeseriesRow>& rows,
                      const std::vector<VectorXd>& values, std::size_t L) {
    auto os = open_csv(path);
    os << "step,t";
    for (std::size_t k = 0; k < L; ++k) os << ',' << prefix << k;
    os << '\n';
    for (std::size_t r = 0; r < values.size(); ++r) {
        os << rows[r].step << ',' << rows[r].t;
        for (Index k = 0; k < values[r].size(); ++k) os << ',' << values[r][k];
        os << '\n';
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

void RunConfig::validate() const {
    try {
        if (!(delta >= 0.0)) throw ConfigError("delta must be non-negative");
        SpectralDensity{alpha, s, omega_c}.validate();
        if (!(theta >= 0.0)) throw ConfigError("theta must be non-negative");
        if (L < 2) throw ConfigError("L must be at least 2");
        if (!fock_dims.empty() && fock_dims.size() != L) throw ConfigError("fock_dims must have one entry per mode");
        for (Index d : fock_dims)
            if (d < 2) throw ConfigError("every Fock dimension must be at least 2");
        if (!(support_factor > 0.0)) throw ConfigError("support_factor must be positive");
        if (!(memory_limit_gb > 0.0)) throw ConfigError("memory_limit_gb must be positive");
        evolution_config().validate();
        lambda_grid.validate();
        phase_grid.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    aligned_steps(t_max, dt, "t_max");
    if (!(vnc_interval >= 0.0)) throw ConfigError("vnc_interval must be non-negative");
    if (vnc_interval > 0.0 && aligned_steps(vnc_interval, dt, "vnc_interval") == 0)
        throw ConfigError("vnc_interval must be at least dt");
    for (double t : wigner_times) {
        if (!(t >= 0.0 && t <= t_max + 1e-12)) throw ConfigError("wigner_times must lie in [0, t_max]");
        aligned_steps(t, dt, "wigner time");
    }
}

std::vector<Index> default_fock_dims(std::size_t L, double theta) {
    if (theta <= 0.0) return std::vector<Index>(L, 8);
    std::vector<Index> d(L, 10);
    for (std::size_t k = 0; k < std::min<std::size_t>(L, 10); ++k) d[k] = 16;
    return d;
}

std::vector<Index> RunConfig::resolved_fock_dims() const {
    return fock_dims.empty() ? default_fock_dims(L, theta) : fock_dims;
}

EvolutionConfig RunConfig::evolution_config() const {
    EvolutionConfig e;
    e.dt = dt;
    e.t_max = t_max;
    e.krylov_dim = krylov_dim;
    e.krylov_tol = krylov_tol;
    e.trunc = trunc;
    e.observe_stride = observe_stride;
    return e;
}

void apply_preset(RunConfig& config, const std::string& preset) {
    if (preset == "desk") {
        config.L = 24;
        config.fock_dims.assign(24, 8);
        config.trunc.max_bond = 48;
        config.t_max = 5.0;
        config.vnc_interval = 0.25;
        config.lambda_grid.n_points = 48;
    } else if (preset == "paper") {
        config.L = 120;
        config.fock_dims.clear();
        config.trunc = TruncationPolicy{};
        config.t_max = 5.0;
    } else {
        throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
    }
}

RunConfig run_config_from_json(const json& j, const RunConfig& base) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c = base;
    std::optional<Index> uniform_dim;
    for (const auto& [key, v] : j.items()) {
        if (key == "delta") c.delta = get_as<double>(v, key);
        else if (key == "omega_c") c.omega_c = get_as<double>(v, key);
        else if (key == "alpha") c.alpha = get_as<double>(v, key);
        else if (key == "s") c.s = get_as<double>(v, key);
        else if (key == "theta") c.theta = get_as<double>(v, key);
        else if (key == "L") {
            const auto L = get_as<long long>(v, key);
            if (L < 0) throw ConfigError("L must be non-negative");
            c.L = static_cast<std::size_t>(L);
        } else if (key == "dt") c.dt = get_as<double>(v, key);
        else if (key == "t_max") c.t_max = get_as<double>(v, key);
        else if (key == "trunc") {
            if (!v.is_object()) throw ConfigError("config field 'trunc' must be an object");
            for (const auto& [k, w] : v.items()) {
                if (k == "max_bond") {
                    const auto m = get_as<long long>(w, "trunc.max_bond");
                    if (m < 1) throw ConfigError("trunc.max_bond must be >= 1");
                    c.trunc.max_bond = static_cast<std::size_t>(m);
                } else if (k == "sv_cutoff") c.trunc.sv_cutoff = get_as<double>(w, "trunc.sv_cutoff");
                else throw ConfigError("unknown config field 'trunc." + k + "'");
            }
        } else if (key == "fock_dims") {
            if (v.is_number_integer()) uniform_dim = get_as<Index>(v, key);
            else c.fock_dims = get_as<std::vector<Index>>(v, key);
        } else if (key == "observe_stride") {
            const auto m = get_as<long long>(v, key);
            if (m < 1) throw ConfigError("observe_stride must be >= 1");
            c.observe_stride = static_cast<std::size_t>(m);
        } else if (key == "krylov_dim") c.krylov_dim = get_as<int>(v, key);
        else if (key == "krylov_tol") c.krylov_tol = get_as<double>(v, key);
        else if (key == "support_factor") c.support_factor = get_as<double>(v, key);
        else if (key == "vnc_interval") c.vnc_interval = get_as<double>(v, key);
        else if (key == "wigner_times") c.wigner_times = get_as<std::vector<double>>(v, key);
        else if (key == "lambda_grid") c.lambda_grid = grid_from_json(v, c.lambda_grid, key);
        else if (key == "phase_grid") c.phase_grid = grid_from_json(v, c.phase_grid, key);
        else if (key == "memory_limit_gb") c.memory_limit_gb = get_as<double>(v, key);
        else if (key == "write_checkpoints") c.write_checkpoints = get_as<bool>(v, key);
        else throw ConfigError("unknown config field '" + key + "'");
    }
    if (uniform_dim) c.fock_dims.assign(c.L, *uniform_dim);
    // a preset's per-mode list no longer fits once L is overridden
    else if (j.contains("L") && !j.contains("fock_dims") && !c.fock_dims.empty() && c.fock_dims.size() != c.L) {
        const Index d = c.fock_dims.front();
        if (std::all_of(c.fock_dims.begin(), c.fock_dims.end(), [d](Index x) { return x == d; }))
            c.fock_dims.assign(c.L, d);
    }
    return c;
}

json to_json(const RunConfig& c) {
    return {{"delta", c.delta},
            {"omega_c", c.omega_c},
            {"alpha", c.alpha},
            {"s", c.s},
            {"theta", c.theta},
            {"L", c.L},
            {"dt", c.dt},
            {"t_max", c.t_max},
            {"trunc", {{"max_bond", c.trunc.max_bond}, {"sv_cutoff", c.trunc.sv_cutoff}}},
            {"fock_dims", c.resolved_fock_dims()},
            {"observe_stride", c.observe_stride},
            {"krylov_dim", c.krylov_dim},
            {"krylov_tol", c.krylov_tol},
            {"support_factor", c.support_factor},
            {"vnc_interval", c.vnc_interval},
            {"wigner_times", c.wigner_times},
            {"lambda_grid", grid_json(c.lambda_grid)},
            {"phase_grid", grid_json(c.phase_grid)},
            {"memory_limit_gb", c.memory_limit_gb},
            {"write_checkpoints", c.write_checkpoints}};
}

json to_json(const ChainCoefficients& c) {
    const auto& m = c.measure;
    const auto& q = c.quadrature;
    return {{"L", c.L()},
            {"g", c.g},
            {"omegas", c.omegas},
            {"hops", c.hops},
            {"density",
             {{"alpha", m.alpha},
              {"s", m.s},
              {"omega_c", m.omega_c},
              {"theta", m.theta},
              {"support", {m.support_lo, m.support_hi}}}},
            {"quadrature",
             {{"order", q.order},
              {"nodes", q.nodes},
              {"refinements", q.refinements},
              {"tolerance", q.tolerance},
              {"achieved", q.achieved}}}};
}

ChainCoefficients run_chain_coefficients(const RunConfig& c) {
    const SpectralDensity density{c.alpha, c.s, c.omega_c};
    if (c.theta > 0.0)
        return chain_coefficients(ThermalExtendedDensity{density, c.theta, c.support_factor * c.omega_c}, c.L);
    QuadratureConfig q;
    q.support_factor = c.support_factor;
    return chain_coefficients(density, c.L, q);
}

double estimated_memory_bytes(const RunConfig& c) {
    constexpr double kSafety = 8.0;  // environments, Krylov basis, two-site blocks
    std::vector<double> dims{2.0};
    for (Index d : c.resolved_fock_dims()) dims.push_back(static_cast<double>(d));
    const std::size_t n = dims.size();
    // bond b sits between sites b-1 and b
    std::vector<double> left(n + 1, 1.0), right(n + 1, 1.0);
    for (std::size_t b = 1; b <= n; ++b) left[b] = std::min(1e12, left[b - 1] * dims[b - 1]);
    for (std::size_t b = n; b-- > 0;) right[b] = std::min(1e12, right[b + 1] * dims[b]);
    auto bond = [&](std::size_t b) { return std::min({static_cast<double>(c.trunc.max_bond), left[b], right[b]}); };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += bond(i) * bond(i + 1) * dims[i] * 16.0;
    return total * kSafety;
}

// ---------------------------------------------------------------------------
// single run

RunOutput run_single(const RunConfig& config, const fs::path& out_dir) {
    const auto t_start = std::chrono::steady_clock::now();
    config.validate();
    const double need = estimated_memory_bytes(config);
    if (need > config.memory_limit_gb * 1e9)
        throw ResourceError("estimated memory " + std::to_string(need / 1e9) + " GB exceeds memory_limit_gb = " +
                            std::to_string(config.memory_limit_gb));

    RunOutput out;
    out.config = config;
    if (!out_dir.empty()) fs::create_directories(out_dir);
    const fs::path snap_dir = out_dir.empty() ? fs::path{} : out_dir / "wigner";
    if (!snap_dir.empty()) fs::create_directories(snap_dir);

    const std::size_t steps = aligned_steps(config.t_max, config.dt, "t_max");
    const std::size_t vnc_stride = config.vnc_interval > 0.0 ? aligned_steps(config.vnc_interval, config.dt, "vnc") : 0;
    std::set<std::size_t> wigner_steps;
    for (double t : config.wigner_times) wigner_steps.insert(aligned_steps(t, config.dt, "wigner time"));

    std::optional<std::size_t> last_observed;
    bool in_observer = false;
    std::set<std::size_t> warned_sites;
    std::optional<NaturalOrbital> prev_orbital;
    double pending_discard = 0.0;
    std::vector<VectorXd> profiles;

    auto warn = [&](const std::string& msg) {
        spdlog::warn("{}", msg);
        out.warnings.push_back(msg);
    };

    auto observe = [&](const ObservationPoint& pt, const Mps& psi) {
        last_observed = pt.step;
        in_observer = true;
        pending_discard = std::max(pending_discard, pt.max_discarded_weight);
        const bool vnc_due = vnc_stride > 0 && pt.step % vnc_stride == 0;
        const bool snap_due = wigner_steps.count(pt.step) > 0;
        if (!(pt.step % config.observe_stride == 0 || pt.step == steps || vnc_due || snap_due)) {
            in_observer = false;
            return;
        }

        TimeseriesRow row;
        row.step = pt.step;
        row.t = static_cast<double>(pt.step) * config.dt;
        row.max_bond = pt.max_bond;
        row.discarded_weight = pending_discard;
        out.max_discarded_weight = std::max(out.max_discarded_weight, pending_discard);
        pending_discard = 0.0;

        const auto q = qubit_metrics(psi);
        row.sigma_x = q.bloch[0];
        row.sigma_y = q.bloch[1];
        row.sigma_z = q.bloch[2];
        row.purity = q.purity;
        row.entropy = q.entropy;

        const auto pops = site_populations(psi);
        VectorXd occ(static_cast<Index>(pops.size()) - 1);
        for (std::size_t i = 1; i < pops.size(); ++i) {
            const VectorXd& p = pops[i];
            occ[static_cast<Index>(i) - 1] = p.dot(VectorXd::LinSpaced(p.size(), 0.0, static_cast<double>(p.size() - 1)));
            if (p[p.size() - 1] > kTopFockWarning && warned_sites.insert(i).second) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "mode %zu: top Fock level population %.2e at t = %.2f; increase fock_dims",
                              i - 1, p[p.size() - 1], row.t);
                warn(buf);
            }
        }
        row.total_occupation = occ.sum();

        const MatrixXcd M = one_body_matrix(psi, 1);
        const NaturalOrbital orbital = std::real(M.trace()) < 1e-14
                                           ? site_orbital(static_cast<Index>(config.L), 0)
                                           : leading_natural_orbital(M, prev_orbital);
        prev_orbital = orbital;
        profiles.push_back(orbital.f.cwiseAbs2());
        row.leading_eigenvalue = orbital.eigenvalue;
        row.leading_fraction = orbital.leading_fraction;
        row.ipr_width = orbital.participation_width;
        row.mode_occ_uncond = mode_occupation(M, orbital.f);

        std::optional<ConditionalBathState> cond;
        try {
            cond = postselect_plus_x(psi);
            row.p_plus_x = cond->probability;
            row.mode_occ_cond = conditional_mode_occupation(*cond, orbital);
        } catch (const NullBranchError&) {
            row.p_plus_x = 0.0;
            row.mode_occ_cond = kNaN;
        }

        row.vnc_cond = kNaN;
        row.vnc_uncond = kNaN;
        if (vnc_due || snap_due) {
            const double n_grid = std::max(row.mode_occ_uncond, cond ? row.mode_occ_cond : 0.0);
            const auto pair = evaluate_pair(psi, cond, orbital.f, n_grid, config.lambda_grid, config.phase_grid);
            row.vnc_uncond = negativity_volume(pair.uncond);
            if (pair.cond) row.vnc_cond = negativity_volume(*pair.cond);
            if (snap_due) {
                out.snapshots.push_back(write_snapshot(pair.uncond, pair, "uncond", row.t, row.mode_occ_uncond,
                                                       orbital.f, std::nullopt, snap_dir));
                if (pair.cond)
                    out.snapshots.push_back(write_snapshot(*pair.cond, pair, "plus_x", row.t, row.mode_occ_cond,
                                                           orbital.f, row.p_plus_x, snap_dir));
                else
                    warn("no +x snapshot at t = " + std::to_string(row.t) + ": null branch");
                if (config.write_checkpoints && !out_dir.empty())
                    save_checkpoint(out_dir / ("checkpoint_" + time_tag(row.t) + ".bin"), psi);
            }
        }
        out.rows.push_back(row);
        out.occupations.push_back(std::move(occ));
        in_observer = false;
    };

    json error = nullptr;
    std::exception_ptr failure;
    Mps psi;
    try {
        out.coeffs = run_chain_coefficients(config);
        out.v_guide = hopping_guide_velocity(out.coeffs);
        std::vector<VectorXcd> local{VectorXcd::Constant(2, 1.0 / std::sqrt(2.0))};
        for (Index d : config.resolved_fock_dims()) {
            VectorXcd v = VectorXcd::Zero(d);
            v[0] = 1.0;
            local.push_back(v);
        }
        psi = product_state<cplx>(local);
        EvolutionConfig ev = config.evolution_config();
        ev.observe_stride = 1;
        evolve(psi, ChainModel{config.delta, out.coeffs}, ev, {observe});
    } catch (const std::exception& e) {
        const std::size_t step = !last_observed ? 0 : in_observer ? *last_observed : *last_observed + 1;
        error = {{"message", e.what()}, {"step", step}, {"time", static_cast<double>(step) * config.dt}};
        spdlog::error("run failed at step {}: {}", step, e.what());
        if (out_dir.empty()) throw;
        failure = std::current_exception();
    }

    // summary over the V_nc cadence
    bool have_peak = false;
    for (const auto& r : out.rows) {
        out.peak_total_occupation = std::max(out.peak_total_occupation, r.total_occupation);
        if (!std::isnan(r.vnc_uncond)) out.max_vnc_uncond = std::max(out.max_vnc_uncond, r.vnc_uncond);
        if (!std::isnan(r.vnc_cond) && (!have_peak || r.vnc_cond > out.max_vnc_cond)) {
            have_peak = true;
            out.max_vnc_cond = r.vnc_cond;
            out.t_peak_vnc_cond = r.t;
            out.coherence_loss_at_peak = 1.0 - r.sigma_x;
            out.p_plus_x_at_peak = r.p_plus_x;
        }
    }
    out.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    if (!out_dir.empty()) {
        json chain = to_json(out.coeffs);
        chain["schema_version"] = kSchemaVersion;
        write_json(out_dir / "chain.json", chain);
        write_timeseries(out_dir / "timeseries.csv", out.rows);
        write_site_table(out_dir / "occupations.csv", "n_", out.rows, out.occupations, config.L);
        write_site_table(out_dir / "mode_profile.csv", "f2_", out.rows, profiles, config.L);
        json meta = {{"schema_version", kSchemaVersion},
                     {"config", to_json(config)},
                     {"conventions", conventions_json(config)},
                     {"summary", summary_json(out)},
                     {"warnings", out.warnings},
                     {"error", error},
                     {"snapshots", json::array()}};
        for (const auto& s : out.snapshots)
            meta["snapshots"].push_back({{"time", s.time},
                                         {"condition", s.condition},
                                         {"V_nc", s.vnc},
                                         {"mode_occupation", s.mode_occupation},
                                         {"file", fs::relative(s.csv, out_dir).string()}});
        write_json(out_dir / "metadata.json", meta);
        if (error.is_null()) save_checkpoint(out_dir / "checkpoint_final.bin", psi);
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

// ---------------------------------------------------------------------------
// sweeps and stored-state snapshots

SweepSpec sweep_spec_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("sweep spec must be a JSON object");
    SweepSpec spec;
    for (const auto& [key, v] : j.items()) {
        if (key == "alphas") spec.alphas = get_as<std::vector<double>>(v, key);
        else if (key == "ss") spec.ss = get_as<std::vector<double>>(v, key);
        else if (key == "thetas") spec.thetas = get_as<std::vector<double>>(v, key);
        else if (key == "base") {
            if (!v.is_object()) throw ConfigError("sweep field 'base' must be an object");
            spec.base = v;
        } else if (key == "preset") spec.preset = get_as<std::string>(v, key);
        else throw ConfigError("unknown sweep field '" + key + "'");
    }
    if (spec.size() == 0) throw ConfigError("sweep needs non-empty alphas, ss and thetas");
    for (const char* k : {"alpha", "s", "theta"})
        if (spec.base.contains(k)) throw ConfigError(std::string("sweep base must not set '") + k + "'");
    // fail on a bad base before any point runs
    RunConfig probe;
    if (spec.preset) apply_preset(probe, *spec.preset);
    run_config_from_json(spec.base, probe);
    return spec;
}

SweepRow summarize(const RunOutput& out) {
    SweepRow r;
    r.alpha = out.config.alpha;
    r.s = out.config.s;
    r.theta = out.config.theta;
    r.status = "ok";
    r.peak_vnc_cond = out.max_vnc_cond;
    r.t_peak = out.t_peak_vnc_cond;
    r.coherence_loss_at_peak = out.coherence_loss_at_peak;
    r.p_plus_x_at_peak = out.p_plus_x_at_peak;
    r.peak_total_occupation = out.peak_total_occupation;
    r.peak_vnc_uncond = out.max_vnc_uncond;
    return r;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c == '\n' ? ' ' : c;
    }
    return q + '"';
}

}  // namespace

std::vector<SweepRow> run_sweep(const SweepSpec& spec, std::size_t workers, const fs::path& out_dir) {
    const std::size_t n = spec.size();
    if (n == 0) throw ConfigError("empty sweep");
    std::vector<SweepRow> rows(n);
    std::atomic<std::size_t> next{0};
    if (!out_dir.empty()) fs::create_directories(out_dir);

    auto work = [&] {
        const std::size_t nt = spec.thetas.size(), ns = spec.ss.size();
        // index order: alpha slowest, theta fastest
        for (std::size_t i = next++; i < n; i = next++) {
            SweepRow& row = rows[i];
            row.index = i;
            row.alpha = spec.alphas[i / (ns * nt)];
            row.s = spec.ss[(i / nt) % ns];
            row.theta = spec.thetas[i % nt];
            try {
                RunConfig c;
                if (spec.preset) apply_preset(c, *spec.preset);
                c = run_config_from_json(spec.base, c);
                c.alpha = row.alpha;
                c.s = row.s;
                c.theta = row.theta;
                char name[32];
                std::snprintf(name, sizeof name, "point_%03zu", i);
                const auto out = run_single(c, out_dir.empty() ? fs::path{} : out_dir / name);
                const std::size_t index = row.index;
                row = summarize(out);
                row.index = index;
            } catch (const std::exception& e) {
                row.status = e.what();
                spdlog::error("sweep point {} (alpha {}, s {}, theta {}) failed: {}", i, row.alpha, row.s, row.theta,
                              e.what());
            }
        }
    };

    const std::size_t w = std::clamp<std::size_t>(workers, 1, n);
    std::vector<std::thread> pool;
    for (std::size_t k = 1; k < w; ++k) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    if (!out_dir.empty()) {
        auto os = open_csv(out_dir / "sweep_summary.csv");
        os << "index,alpha,s,theta,status,peak_vnc_cond,t_peak,coherence_loss_at_peak,p_plus_x_at_peak,"
              "peak_total_occupation,peak_vnc_uncond\n";
        for (const auto& r : rows)
            os << r.index << ',' << r.alpha << ',' << r.s << ',' << r.theta << ',' << csv_field(r.status) << ','
               << r.peak_vnc_cond << ',' << r.t_peak << ',' << r.coherence_loss_at_peak << ',' << r.p_plus_x_at_peak
               << ',' << r.peak_total_occupation << ',' << r.peak_vnc_uncond << '\n';
    }
    return rows;
}

VectorXcd f_vector_from_json(const json& sidecar) {
    if (!sidecar.contains("f_vector") || !sidecar["f_vector"].is_array())
        throw ConfigError("sidecar has no f_vector array");
    const auto& a = sidecar["f_vector"];
    VectorXcd f(static_cast<Index>(a.size()));
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (!a[k].is_array() || a[k].size() != 2) throw ConfigError("f_vector entries must be [re, im] pairs");
        f[static_cast<Index>(k)] = cplx(get_as<double>(a[k][0], "f_vector"), get_as<double>(a[k][1], "f_vector"));
    }
    return f;
}

std::vector<SnapshotInfo> wigner_snapshot(const Mps& joint, double time, const LambdaGrid& lambda,
                                          const PhaseSpaceGrid& out, const fs::path& out_dir,
                                          const std::optional<VectorXcd>& reference) {
    if (joint.size() < 2 || joint.site(0).phys_dim() != 2)
        throw DomainError("snapshot state must be a qubit followed by bath sites");
    const Index L = static_cast<Index>(joint.size()) - 1;
    const MatrixXcd M = one_body_matrix(joint, 1);
    std::optional<NaturalOrbital> previous;
    if (reference) {
        if (reference->size() != L) throw DomainError("reference orbital length differs from the bath length");
        previous = NaturalOrbital{*reference};
    }
    const NaturalOrbital orbital =
        std::real(M.trace()) < 1e-14 ? site_orbital(L, 0) : leading_natural_orbital(M, previous);
    const double n_uncond = mode_occupation(M, orbital.f);
    std::optional<ConditionalBathState> cond;
    double n_cond = 0.0;
    try {
        cond = postselect_plus_x(joint);
        n_cond = conditional_mode_occupation(*cond, orbital);
    } catch (const NullBranchError&) {
        spdlog::warn("no +x snapshot: null branch");
    }
    if (!out_dir.empty()) fs::create_directories(out_dir);
    const auto pair = evaluate_pair(joint, cond, orbital.f, std::max(n_uncond, n_cond), lambda, out);
    std::vector<SnapshotInfo> infos{
        write_snapshot(pair.uncond, pair, "uncond", time, n_uncond, orbital.f, std::nullopt, out_dir)};
    if (pair.cond)
        infos.push_back(write_snapshot(*pair.cond, pair, "plus_x", time, n_cond, orbital.f, cond->probability, out_dir));
    return infos;
}

}  // namespace sbchain
