#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <spdlog/spdlog.h>

#include "sbchain/checkpoint.hpp"
#include "sbchain/runner.hpp"

using namespace sbchain;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("sbchain_runner_" + name);
    fs::remove_all(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string first_lines(const fs::path& p, int n) {
    std::ifstream is(p);
    std::string out, line;
    for (int k = 0; k < n && std::getline(is, line); ++k) out += line + "\n";
    return out;
}

// small chain that runs in well under a second per time unit
RunConfig small_config() {
    RunConfig c;
    c.alpha = 0.2;
    c.s = 1.0;
    c.L = 4;
    c.fock_dims.assign(4, 4);
    c.t_max = 1.0;
    c.dt = 0.02;
    c.observe_stride = 5;
    c.vnc_interval = 0.2;
    c.wigner_times = {0.0, 0.5, 1.0};
    c.lambda_grid = {6.0, 32};
    c.trunc = {16, 1e-10};
    return c;
}

}  // namespace

TEST(RunConfig, DefaultsMatchMethodsParameters) {
    const RunConfig c;
    EXPECT_EQ(c.delta, 1.0);
    EXPECT_EQ(c.omega_c, 4.0);
    EXPECT_EQ(c.L, 120u);
    EXPECT_EQ(c.dt, 0.01);
    EXPECT_EQ(c.t_max, 5.0);
    EXPECT_EQ(c.trunc.max_bond, 100u);
    EXPECT_EQ(c.trunc.sv_cutoff, 1e-8);
    EXPECT_EQ(c.theta, 0.0);
    EXPECT_EQ(c.wigner_times, (std::vector<double>{0.0, 0.5, 1.0, 2.5, 5.0}));
    EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, DefaultFockDims) {
    EXPECT_EQ(default_fock_dims(3, 0.0), (std::vector<Index>{8, 8, 8}));
    const auto d = default_fock_dims(12, 1.0);
    EXPECT_EQ(d[0], 16);
    EXPECT_EQ(d[9], 16);
    EXPECT_EQ(d[10], 10);
    EXPECT_EQ(d[11], 10);
}

TEST(RunConfig, JsonRoundTrip) {
    RunConfig c = small_config();
    c.theta = 0.7;
    c.phase_grid = {5.0, 81};
    c.write_checkpoints = true;
    const json j = to_json(c);
    const RunConfig back = run_config_from_json(j);
    EXPECT_EQ(to_json(back), j);
}

TEST(RunConfig, JsonOverridesAndRejections) {
    const auto c = run_config_from_json(json{{"alpha", 0.5}, {"trunc", {{"max_bond", 7}}}, {"L", 5}, {"fock_dims", 6}});
    EXPECT_EQ(c.alpha, 0.5);
    EXPECT_EQ(c.trunc.max_bond, 7u);
    EXPECT_EQ(c.trunc.sv_cutoff, 1e-8);
    EXPECT_EQ(c.fock_dims, std::vector<Index>(5, 6));

    EXPECT_THROW(run_config_from_json(json{{"alpah", 0.5}}), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"trunc", {{"D", 3}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"alpha", "big"}}), ConfigError);
    EXPECT_THROW(run_config_from_json(json::array()), ConfigError);
}

TEST(RunConfig, PresetThenConfig) {
    RunConfig base;
    apply_preset(base, "desk");
    EXPECT_EQ(base.L, 24u);
    EXPECT_EQ(base.resolved_fock_dims(), std::vector<Index>(24, 8));
    EXPECT_EQ(base.trunc.max_bond, 48u);
    const auto c = run_config_from_json(json{{"s", 0.5}, {"trunc", {{"sv_cutoff", 1e-9}}}}, base);
    EXPECT_EQ(c.L, 24u);
    EXPECT_EQ(c.s, 0.5);
    EXPECT_EQ(c.trunc.max_bond, 48u);
    EXPECT_EQ(c.trunc.sv_cutoff, 1e-9);
    // a uniform preset list follows an overridden L
    EXPECT_EQ(run_config_from_json(json{{"L", 10}}, base).fock_dims, std::vector<Index>(10, 8));

    RunConfig paper;
    apply_preset(paper, "paper");
    EXPECT_EQ(paper.L, 120u);
    EXPECT_EQ(paper.trunc.max_bond, 100u);
    EXPECT_TRUE(paper.fock_dims.empty());
    EXPECT_THROW(apply_preset(paper, "huge"), ConfigError);
}

TEST(RunConfig, Validation) {
    auto bad = [](auto mutate) {
        RunConfig c = small_config();
        mutate(c);
        return c;
    };
    EXPECT_THROW(bad([](RunConfig& c) { c.t_max = 1.005; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.wigner_times = {1.5}; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.wigner_times = {0.33}; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.vnc_interval = 0.03; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.fock_dims = {4, 4}; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.alpha = -1; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.s = 0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.theta = -0.1; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.dt = 0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.phase_grid.n_points = 100; }).validate(), ConfigError);
    EXPECT_NO_THROW(bad([](RunConfig& c) { c.vnc_interval = 0; }).validate());
}

TEST(RunConfig, MemoryGuardrail) {
    RunConfig paper;
    apply_preset(paper, "paper");
    const double est = estimated_memory_bytes(paper);
    EXPECT_GT(est, 1e8);
    EXPECT_LT(est, paper.memory_limit_gb * 1e9);
    RunConfig c = small_config();
    // bonds capped by the Schmidt bound: 1, 2, 8, 4, 1 over dims 2, 4, 4, 4, 4
    EXPECT_DOUBLE_EQ(estimated_memory_bytes(c), 8.0 * 16.0 * (1 * 2 * 2 + 2 * 8 * 4 + 8 * 16 * 4 + 16 * 4 * 4 + 4 * 1 * 4));
    paper.memory_limit_gb = 0.01;
    EXPECT_THROW(run_single(paper), ResourceError);
}

TEST(ChainJson, MatchesGoldenLayoutAndClosedForms) {
    const json golden = json::parse(read_file(fs::path(SBCHAIN_GOLDEN_DIR) / "chain_ohmic_L5.json"));
    const json j = to_json(chain_coefficients(SpectralDensity{0.2, 1.0, 4.0}, 5));
    ASSERT_EQ(j.size(), golden.size());
    for (const auto& [key, value] : golden.items()) {
        ASSERT_TRUE(j.contains(key)) << key;
        if (value.is_object()) {
            for (const auto& [k, v] : value.items()) EXPECT_TRUE(j[key].contains(k)) << key << "." << k;
        }
    }
    EXPECT_EQ(j["density"].size(), golden["density"].size());
    EXPECT_EQ(j["quadrature"].size(), golden["quadrature"].size());
    EXPECT_EQ(j["L"], 5);
    EXPECT_NEAR(j["g"].get<double>(), golden["g"].get<double>(), 1e-12);
    for (int n = 0; n < 5; ++n)
        EXPECT_NEAR(j["omegas"][n].get<double>() / golden["omegas"][n].get<double>(), 1.0, 1e-12);
    for (int n = 0; n < 4; ++n) EXPECT_NEAR(j["hops"][n].get<double>() / golden["hops"][n].get<double>(), 1.0, 1e-12);
    for (const char* k : {"alpha", "s", "omega_c", "theta"}) EXPECT_EQ(j["density"][k], golden["density"][k]) << k;
}

TEST(RunSingle, DecoupledQubitIsTrivial) {
    RunConfig c = small_config();
    c.alpha = 0.0;
    const auto out = run_single(c);
    ASSERT_EQ(out.rows.size(), 11u);
    for (const auto& r : out.rows) {
        EXPECT_NEAR(r.sigma_x, 1.0, 1e-10);
        EXPECT_NEAR(r.p_plus_x, 1.0, 1e-10);
        EXPECT_NEAR(r.total_occupation, 0.0, 1e-12);
        EXPECT_NEAR(r.purity, 1.0, 1e-10);
        if (!std::isnan(r.vnc_cond)) {
            EXPECT_LT(r.vnc_cond, 1e-6);
            EXPECT_LT(r.vnc_uncond, 1e-6);
        }
    }
    EXPECT_EQ(out.v_guide, 2.0 * *std::max_element(out.coeffs.hops.begin(), out.coeffs.hops.end(),
                                                    [](double a, double b) { return std::abs(a) < std::abs(b); }));
}

TEST(RunSingle, OutputsScheduleAndSchema) {
    spdlog::set_level(spdlog::level::err);
    const fs::path dir = fresh_dir("outputs");
    RunConfig c = small_config();
    c.write_checkpoints = true;
    const auto out = run_single(c, dir);

    // records at every observe_stride, the V_nc cadence and the snapshot times
    std::vector<std::size_t> steps;
    for (const auto& r : out.rows) {
        steps.push_back(r.step);
        EXPECT_EQ(r.t, static_cast<double>(r.step) * c.dt);
        const bool vnc_due = r.step % 10 == 0 || r.step == 25;
        EXPECT_EQ(std::isnan(r.vnc_cond), !vnc_due) << r.step;
        EXPECT_EQ(std::isnan(r.vnc_uncond), !vnc_due) << r.step;
        EXPECT_NEAR(r.purity, 0.5 * (1 + r.sigma_x * r.sigma_x + r.sigma_y * r.sigma_y + r.sigma_z * r.sigma_z), 1e-10);
    }
    EXPECT_EQ(steps, (std::vector<std::size_t>{0, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50}));

    ASSERT_EQ(out.snapshots.size(), 6u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(out.snapshots[2 * k].condition, "uncond");
        EXPECT_EQ(out.snapshots[2 * k + 1].condition, "plus_x");
        EXPECT_EQ(out.snapshots[2 * k].time, out.snapshots[2 * k + 1].time);
        EXPECT_TRUE(fs::exists(out.snapshots[2 * k].csv));
        EXPECT_TRUE(fs::exists(fs::path(out.snapshots[2 * k + 1].csv).replace_extension(".json")));
    }

    const fs::path golden(SBCHAIN_GOLDEN_DIR);
    EXPECT_EQ(first_lines(dir / "timeseries.csv", 2), read_file(golden / "timeseries_header.csv"));
    EXPECT_EQ(first_lines(dir / "occupations.csv", 2), read_file(golden / "occupations_header_L4.csv"));
    EXPECT_EQ(first_lines(dir / "mode_profile.csv", 2), read_file(golden / "mode_profile_header_L4.csv"));

    const json meta = json::parse(read_file(dir / "metadata.json"));
    EXPECT_EQ(meta["schema_version"], kSchemaVersion);
    EXPECT_TRUE(meta["error"].is_null());
    EXPECT_EQ(run_config_from_json(meta["config"]).L, 4u);
    for (const char* k : {"integrator", "characteristic_function", "peak_window", "coherence_loss", "participation_width"})
        EXPECT_TRUE(meta["conventions"].contains(k)) << k;
    EXPECT_EQ(meta["summary"]["max_vnc_cond"].get<double>(), out.max_vnc_cond);
    EXPECT_EQ(json::parse(read_file(dir / "chain.json"))["schema_version"], kSchemaVersion);

    const json side = json::parse(read_file(dir / "wigner" / "wigner_plus_x_t0.50.json"));
    EXPECT_EQ(side["condition"], "plus_x");
    EXPECT_EQ(side["time"], 0.5);
    EXPECT_EQ(side["f_vector"].size(), 4u);
    for (const char* k : {"grid", "V_nc", "mode_occupation"}) EXPECT_TRUE(side.contains(k)) << k;
    EXPECT_TRUE(fs::exists(dir / "checkpoint_t0.50.bin"));

    // the stored final state reproduces the last snapshot pair once the orbital phase follows its sidecar
    const VectorXcd f_last = f_vector_from_json(json::parse(read_file(dir / "wigner" / "wigner_uncond_t1.00.json")));
    const auto again = wigner_snapshot(load_checkpoint(dir / "checkpoint_final.bin"), 1.0, c.lambda_grid, c.phase_grid,
                                       dir / "again", f_last);
    ASSERT_EQ(again.size(), 2u);
    EXPECT_NEAR(again[0].vnc, out.snapshots[4].vnc, 1e-10);
    EXPECT_NEAR(again[1].vnc, out.snapshots[5].vnc, 1e-10);
    EXPECT_NEAR(again[1].mode_occupation, out.snapshots[5].mode_occupation, 1e-10);
    fs::remove_all(dir);
}

TEST(RunSingle, SummaryFollowsConditionalPeak) {
    const auto out = run_single(small_config());
    double best = -1.0;
    const TimeseriesRow* peak = nullptr;
    for (const auto& r : out.rows)
        if (!std::isnan(r.vnc_cond) && r.vnc_cond > best) {
            best = r.vnc_cond;
            peak = &r;
        }
    ASSERT_NE(peak, nullptr);
    EXPECT_EQ(out.max_vnc_cond, peak->vnc_cond);
    EXPECT_EQ(out.t_peak_vnc_cond, peak->t);
    EXPECT_EQ(out.coherence_loss_at_peak, 1.0 - peak->sigma_x);
    EXPECT_EQ(out.p_plus_x_at_peak, peak->p_plus_x);
    const auto row = summarize(out);
    EXPECT_EQ(row.status, "ok");
    EXPECT_EQ(row.peak_vnc_cond, out.max_vnc_cond);
    EXPECT_EQ(row.peak_total_occupation, out.peak_total_occupation);
}

TEST(RunSingle, Deterministic) {
    const auto a = run_single(small_config());
    const auto b = run_single(small_config());
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
        EXPECT_EQ(a.rows[k].sigma_x, b.rows[k].sigma_x);
        EXPECT_EQ(a.rows[k].total_occupation, b.rows[k].total_occupation);
        EXPECT_TRUE(a.rows[k].vnc_cond == b.rows[k].vnc_cond || std::isnan(a.rows[k].vnc_cond));
    }
}

TEST(RunSingle, ErrorRecordedWithStep) {
    spdlog::set_level(spdlog::level::off);
    const fs::path dir = fresh_dir("error");
    RunConfig c = small_config();
    c.krylov_dim = 2;
    c.krylov_tol = 1e-14;
    EXPECT_THROW(run_single(c, dir), IntegratorError);
    const json meta = json::parse(read_file(dir / "metadata.json"));
    ASSERT_FALSE(meta["error"].is_null());
    EXPECT_EQ(meta["error"]["step"], 1);
    EXPECT_EQ(meta["error"]["time"], 0.02);
    EXPECT_TRUE(fs::exists(dir / "timeseries.csv"));
    fs::remove_all(dir);
    spdlog::set_level(spdlog::level::info);
}

TEST(Sweep, SpecParsing) {
    const auto spec = sweep_spec_from_json(
        json{{"alphas", {0.05, 0.1, 0.2, 0.5, 1.0}}, {"ss", {0.3, 0.5, 0.7, 0.9, 1.0}}, {"thetas", {0, 1}}});
    EXPECT_EQ(spec.size(), 50u);
    EXPECT_THROW(sweep_spec_from_json(json{{"alphas", {0.1}}, {"ss", json::array()}, {"thetas", {0}}}), ConfigError);
    EXPECT_THROW(sweep_spec_from_json(json{{"alphas", {0.1}}, {"ss", {1}}, {"thetas", {0}}, {"workers", 2}}), ConfigError);
    EXPECT_THROW(sweep_spec_from_json(json{{"alphas", {0.1}}, {"ss", {1}}, {"thetas", {0}}, {"base", {{"alpha", 1}}}}),
                 ConfigError);
    EXPECT_THROW(sweep_spec_from_json(json{{"alphas", {0.1}}, {"ss", {1}}, {"thetas", {0}}, {"base", {{"Lx", 1}}}}),
                 ConfigError);
}

TEST(Sweep, SinglePointMatchesRunSingle) {
    SweepSpec spec;
    spec.alphas = {0.2};
    spec.ss = {1.0};
    spec.thetas = {0.0};
    spec.base = to_json(small_config());
    spec.base.erase("alpha");
    spec.base.erase("s");
    spec.base.erase("theta");
    const auto rows = run_sweep(spec, 1);
    ASSERT_EQ(rows.size(), 1u);
    const auto direct = summarize(run_single(small_config()));
    EXPECT_EQ(rows[0].status, "ok");
    EXPECT_EQ(rows[0].peak_vnc_cond, direct.peak_vnc_cond);
    EXPECT_EQ(rows[0].t_peak, direct.t_peak);
    EXPECT_EQ(rows[0].coherence_loss_at_peak, direct.coherence_loss_at_peak);
    EXPECT_EQ(rows[0].peak_total_occupation, direct.peak_total_occupation);
}

TEST(Sweep, IndependentOfWorkersAndRecordsFailures) {
    spdlog::set_level(spdlog::level::off);
    SweepSpec spec;
    spec.alphas = {0.1, 0.3};
    spec.ss = {-1.0, 1.0};  // s = -1 is invalid
    spec.thetas = {0.0};
    spec.base = to_json(small_config());
    for (const char* k : {"alpha", "s", "theta"}) spec.base.erase(k);
    spec.base["t_max"] = 0.4;
    spec.base["wigner_times"] = {0.4};
    const fs::path dir = fresh_dir("sweep");
    const auto one = run_sweep(spec, 1, dir);
    const auto three = run_sweep(spec, 3);
    ASSERT_EQ(one.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(one[k].index, k);
        EXPECT_EQ(one[k].alpha, spec.alphas[k / 2]);
        EXPECT_EQ(one[k].s, spec.ss[k % 2]);
        EXPECT_EQ(one[k].status == "ok", k % 2 == 1) << one[k].status;
        EXPECT_EQ(one[k].status, three[k].status);
        EXPECT_EQ(one[k].peak_vnc_cond, three[k].peak_vnc_cond);
        EXPECT_EQ(one[k].peak_total_occupation, three[k].peak_total_occupation);
    }
    EXPECT_EQ(first_lines(dir / "sweep_summary.csv", 2),
              read_file(fs::path(SBCHAIN_GOLDEN_DIR) / "sweep_summary_header.csv"));
    EXPECT_TRUE(fs::exists(dir / "point_001" / "timeseries.csv"));
    fs::remove_all(dir);
    spdlog::set_level(spdlog::level::info);
}
