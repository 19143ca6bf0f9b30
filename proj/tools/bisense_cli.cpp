// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the sensing experiments.

#include "bisense/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace bisense;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> trials;
    std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "experiment configuration (YAML)");
    cmd->add_option("--seed", f.seed, "root seed");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--trials", f.trials, "Monte-Carlo trials per point (calibrate: noise-only trials)");
    cmd->add_option("--threads", f.threads, "worker threads");
}

ExperimentConfig resolve(const CommonFlags& f, ExperimentConfig defaults) {
    ExperimentConfig c = f.config.empty() ? std::move(defaults) : load_config(f.config);
    if (f.seed) c.seed = *f.seed;
    if (f.out) c.output_dir = *f.out;
    if (f.trials) c.trials = *f.trials;
    if (f.threads) c.threads = *f.threads;
    c.validate();
    fs::create_directories(c.output_dir);
    return c;
}

std::ofstream open_output(const ExperimentConfig& c, const std::string& name) {
    const fs::path path = fs::path(c.output_dir) / name;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    std::cout << "writing " << path.string() << "\n";
    return os;
}

int cmd_calibrate(const CommonFlags& f) {
    ExperimentConfig c = resolve(f, ExperimentConfig::scenario_one());
    if (f.trials) c.calibration_trials = *f.trials;
    auto os = open_output(c, "calibration.csv");
    os << "pattern,false_alarm,trials,kappa_unit,kappa_thermal\n";
    for (const auto& p : c.patterns) {
        const FrameConfig cfg = c.frame_config(p);
        const double k = unit_threshold(c, cfg);
        const double thermal = k * c.thermal_noise(cfg).variance;
        os << p.label() << ',' << format_number(c.false_alarm) << ',' << c.calibration_trials << ','
           << format_number(k) << ',' << format_number(thermal) << '\n';
        std::cout << "pattern " << p.label() << ": kappa = " << k << " * sigma^2\n";
    }
    return 0;
}

int cmd_sweep_snr(const CommonFlags& f) {
    const ExperimentConfig c = resolve(f, ExperimentConfig::scenario_one());
    const auto points = run_rmse_sweep(c);
    auto os = open_output(c, "rmse_vs_snr.csv");
    write_rmse_csv(os, points);
    return 0;
}

int cmd_sweep_ratio(const CommonFlags& f) {
    const ExperimentConfig c = resolve(f, ExperimentConfig::scenario_two());
    const auto points = run_ratio_sweep(c);
    auto os = open_output(c, "rmse_vs_ratio.csv");
    write_rmse_csv(os, points);
    return 0;
}

int cmd_aoa_study(const CommonFlags& f) {
    const ExperimentConfig c = resolve(f, ExperimentConfig::scenario_one());
    const auto cells = run_aoa_study(c, c.aoa_error_deg);
    auto os = open_output(c, "aoa_study.csv");
    write_aoa_csv(os, cells);
    return 0;
}

int cmd_oracle_check(const CommonFlags& f, double delay_tol, double doppler_tol) {
    ExperimentConfig c = resolve(f, ExperimentConfig::scenario_one());
    if (!f.trials) c.trials = 20;
    const FrameConfig cfg = c.frame_config(c.aoa_pattern);
    auto os = open_output(c, "oracle_check.csv");
    os << "trial,tau_true_s,tau_pipeline_s,tau_oracle_s,fd_true_hz,fd_pipeline_hz,fd_oracle_hz,oracle_at_boundary,agree\n";
    os << std::setprecision(12);
    std::size_t disagreements = 0;
    SensingReceiver rx(cfg, c.detector);
    for (std::uint64_t t = 0; t < c.trials; ++t) {
        const Scene scene = draw_trial_scene(c.prior, c.seed, t);
        const Propagation prop = derive_propagation(scene, cfg);
        const FrameSymbols frame = generate_frame(cfg, pilot_seed(c.seed), derive_seed(c.seed, kDataStream, t));
        const SampleStream stream = synthesize_rx(cfg, frame, prop, Scenario::LosBlocked, NoiseModel{0.0}, 0);
        const TargetEstimate est = rx.detect(stream, frame, 0.0, prop.baseline, arrival_angle(scene));
        const OracleResult o = brute_force_oracle(stream, frame, cfg, linear_grid(prop.tau_nlos, 10e-9, 0.5e-9),
                                                  linear_grid(prop.doppler_hz, 50.0, 1.0));
        const bool agree = est.detected && !o.at_boundary && std::abs(est.delay - o.delay) <= delay_tol &&
                           std::abs(est.doppler_hz - o.doppler) <= doppler_tol;
        disagreements += agree ? 0 : 1;
        os << t << ',' << prop.tau_nlos << ',' << est.delay << ',' << o.delay << ',' << prop.doppler_hz << ','
           << est.doppler_hz << ',' << o.doppler << ',' << (o.at_boundary ? 1 : 0) << ',' << (agree ? 1 : 0) << '\n';
    }
    if (disagreements > 0)
        throw std::runtime_error(std::to_string(disagreements) + " of " + std::to_string(c.trials) +
                                 " scenes outside the oracle tolerance");
    return 0;
}

int cmd_dump_samples(const CommonFlags& f, double snr_db, std::uint64_t trial) {
    const ExperimentConfig c = resolve(f, ExperimentConfig::scenario_one());
    const FrameConfig cfg = c.frame_config(c.aoa_pattern);
    const Scene scene = draw_trial_scene(c.prior, c.seed, trial);
    const Propagation prop = derive_propagation(scene, cfg);
    const FrameSymbols frame = generate_frame(cfg, pilot_seed(c.seed), derive_seed(c.seed, kDataStream, trial));
    const NoiseModel noise = c.prior.scenario == Scenario::LosPresent ? c.thermal_noise(cfg) : set_snr(prop, snr_db);
    const SampleStream stream =
        synthesize_rx(cfg, frame, prop, c.prior.scenario, noise, noise_seed(c.seed, snr_db, trial));
    const fs::path samples = fs::path(c.output_dir) / "samples.cf64";
    write_samples(samples.string(), stream);
    std::cout << "writing " << samples.string() << " (+ .txt sidecar)\n";

    SensingReceiver rx(cfg, c.detector);
    const double kappa = unit_threshold(c, cfg) * noise.variance;
    const TargetEstimate est = rx.detect(stream, frame, kappa, prop.baseline, arrival_angle(scene));
    const std::size_t anchor = est.detected ? est.anchor : static_cast<std::size_t>(prop.tau_nlos / cfg.sample_period());
    const DelayDopplerMap map = rx.fine_map(rx.ls_grid(stream.samples, frame, window_offset_for_anchor(cfg, anchor)));
    auto os = open_output(c, "periodogram.csv");
    write_periodogram_csv(os, map, 32, 64);
    std::cout << std::setprecision(10) << "truth: R_bis = " << prop.bistatic_range << " m, v_bis = " << prop.bistatic_velocity
              << " m/s\n";
    if (est.detected)
        std::cout << "estimate: R_bis = " << est.geometry.bistatic_range << " m, v_bis = " << est.geometry.bistatic_velocity
                  << " m/s (anchor " << est.anchor << ")\n";
    else
        std::cout << "estimate: no target\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bistatic OFDM sensing beyond the cyclic-prefix limit"};
    app.require_subcommand(1);
    CommonFlags flags;

    auto* calibrate = app.add_subcommand("calibrate", "calibrate detection thresholds on noise-only frames");
    auto* sweep_snr = app.add_subcommand("sweep-snr", "range/velocity RMSE versus SNR (LOS blocked)");
    auto* sweep_ratio = app.add_subcommand("sweep-ratio", "range/velocity RMSE versus NLOS-to-LOS power ratio");
    auto* aoa = app.add_subcommand("aoa-study", "velocity RMSE under receive-beam pointing errors");
    auto* oracle = app.add_subcommand("oracle-check", "compare the receiver with a brute-force matched filter");
    auto* dump = app.add_subcommand("dump-samples", "write one received frame and its periodogram");
    for (auto* cmd : {calibrate, sweep_snr, sweep_ratio, aoa, oracle, dump}) add_common(cmd, flags);

    double delay_tol = 2e-9;
    double doppler_tol = 5.0;
    oracle->add_option("--delay-tol", delay_tol, "delay tolerance, s");
    oracle->add_option("--doppler-tol", doppler_tol, "Doppler tolerance, Hz");
    double dump_snr = 10.0;
    std::uint64_t dump_trial = 0;
    dump->add_option("--snr", dump_snr, "SNR in dB (LOS-blocked scenes)");
    dump->add_option("--trial", dump_trial, "trial index of the scene draw");

    CLI11_PARSE(app, argc, argv);

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        if (*calibrate) return cmd_calibrate(flags);
        if (*sweep_snr) return cmd_sweep_snr(flags);
        if (*sweep_ratio) return cmd_sweep_ratio(flags);
        if (*aoa) return cmd_aoa_study(flags);
        if (*oracle) return cmd_oracle_check(flags, delay_tol, doppler_tol);
        if (*dump) return cmd_dump_samples(flags, dump_snr, dump_trial);
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"status", "error"}, {"command", name}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
