// Command-line front end: run, sweep, wigner-snapshot, coeffs.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "sbchain/checkpoint.hpp"
#include "sbchain/runner.hpp"

using namespace sbchain;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitConvergence = 3;
constexpr int kExitResource = 4;

json read_json_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

int cmd_run(const fs::path& config_path, const fs::path& out_dir, const std::string& preset) {
    RunConfig base;
    if (!preset.empty()) apply_preset(base, preset);
    const RunConfig config = run_config_from_json(read_json_file(config_path), base);
    const auto out = run_single(config, out_dir);
    spdlog::info("run finished in {:.1f} s: {} records, peak V_nc cond {:.4g} at t = {:.2f}, uncond {:.4g}",
                 out.runtime_seconds, out.rows.size(), out.max_vnc_cond, out.t_peak_vnc_cond, out.max_vnc_uncond);
    return 0;
}

int cmd_sweep(const fs::path& spec_path, std::size_t workers, const fs::path& out_dir) {
    const auto spec = sweep_spec_from_json(read_json_file(spec_path));
    const auto rows = run_sweep(spec, workers, out_dir);
    std::size_t failed = 0;
    for (const auto& r : rows) failed += r.status != "ok";
    spdlog::info("sweep finished: {} points, {} failed; summary in {}", rows.size(), failed,
                 (out_dir / "sweep_summary.csv").string());
    return 0;
}

int cmd_snapshot(const fs::path& state, double time, const fs::path& out_dir, const fs::path& config_path,
                 const fs::path& reference_path) {
    RunConfig grids;
    if (!config_path.empty()) grids = run_config_from_json(read_json_file(config_path));
    grids.lambda_grid.validate();
    grids.phase_grid.validate();
    std::optional<VectorXcd> reference;
    if (!reference_path.empty()) reference = f_vector_from_json(read_json_file(reference_path));
    const Mps psi = load_checkpoint(state);
    for (const auto& s : wigner_snapshot(psi, time, grids.lambda_grid, grids.phase_grid, out_dir, reference))
        std::cout << s.condition << " V_nc=" << s.vnc << " mode_occupation=" << s.mode_occupation << " -> "
                  << s.csv.string() << '\n';
    return 0;
}

int cmd_coeffs(double alpha, double s, double omega_c, double theta, std::size_t L, double support_factor) {
    RunConfig c;
    c.alpha = alpha;
    c.s = s;
    c.omega_c = omega_c;
    c.theta = theta;
    c.L = L;
    c.support_factor = support_factor;
    std::cout << to_json(run_chain_coefficients(c)).dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spin-boson chain simulator"};
    app.require_subcommand(1);

    fs::path config_path, out_dir = "out";
    std::string preset;
    auto* run = app.add_subcommand("run", "Single run from a JSON config");
    run->add_option("--config", config_path, "JSON file with RunConfig fields")->required();
    run->add_option("--out", out_dir, "Output directory")->capture_default_str();
    run->add_option("--preset", preset, "Base parameter set")->check(CLI::IsMember({"desk", "paper"}));

    fs::path spec_path, sweep_out = "sweep";
    std::size_t workers = 1;
    auto* sweep = app.add_subcommand("sweep", "Parameter sweep over alpha x s x theta");
    sweep->add_option("--spec", spec_path, "JSON sweep spec")->required();
    sweep->add_option("--workers", workers, "Concurrent runs")->capture_default_str()->check(CLI::PositiveNumber);
    sweep->add_option("--out", sweep_out, "Output directory")->capture_default_str();

    fs::path state_path, snap_out = ".", snap_config, snap_reference;
    double snap_time = 0.0;
    auto* snap = app.add_subcommand("wigner-snapshot", "Wigner pair of a checkpointed state");
    snap->add_option("--state", state_path, "MPS checkpoint")->required();
    snap->add_option("--time", snap_time, "Time label of the state")->required();
    snap->add_option("--out", snap_out, "Output directory")->capture_default_str();
    snap->add_option("--config", snap_config, "JSON config supplying lambda_grid and phase_grid");
    snap->add_option("--reference", snap_reference, "Snapshot sidecar whose f_vector fixes the orbital phase");

    double alpha = 0.2, s = 1.0, omega_c = 4.0, theta = 0.0, support = 10.0;
    std::size_t L = 120;
    auto* coeffs = app.add_subcommand("coeffs", "Print chain coefficients as JSON");
    coeffs->add_option("--alpha", alpha)->capture_default_str();
    coeffs->add_option("--s", s)->capture_default_str();
    coeffs->add_option("--omega-c", omega_c)->capture_default_str();
    coeffs->add_option("--theta", theta)->capture_default_str();
    coeffs->add_option("--L", L)->capture_default_str();
    coeffs->add_option("--support-factor", support, "Spectral support in units of omega_c")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) return cmd_run(config_path, out_dir, preset);
        if (*sweep) return cmd_sweep(spec_path, workers, sweep_out);
        if (*snap) return cmd_snapshot(state_path, snap_time, snap_out, snap_config, snap_reference);
        if (*coeffs) return cmd_coeffs(alpha, s, omega_c, theta, L, support);
    } catch (const ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return kExitConfig;
    } catch (const DomainError& e) {
        spdlog::error("invalid input: {}", e.what());
        return kExitConfig;
    } catch (const ConvergenceError& e) {
        spdlog::error("convergence error: {}", e.what());
        return kExitConvergence;
    } catch (const ResourceError& e) {
        spdlog::error("resource guardrail: {}", e.what());
        return kExitResource;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
