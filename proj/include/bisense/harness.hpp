// SPDX-License-Identifier: Apache-2.0
#pragma once

// Monte-Carlo experiments: configuration, scene draws, trial execution and
// RMSE aggregation, plus a brute-force matched-filter oracle.

#include "bisense/channel.hpp"
#include "bisense/common.hpp"
#include "bisense/detector.hpp"
#include "bisense/parallel.hpp"
#include "bisense/receiver.hpp"
#include "bisense/scene.hpp"
#include "bisense/waveform.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <locale>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bisense {

// ---------------------------------------------------------------------------
// Configuration

struct PilotSpacing {
    int freq = 2; // n_p
    int time = 1; // m_p
    std::string label() const { return std::to_string(freq) + "x" + std::to_string(time); }
    bool operator==(const PilotSpacing&) const = default;
};

struct ScenePrior {
    Vec2 tx{-1000.0, 0.0};
    Vec2 rx{1000.0, 0.0};
    double x_min = -1000.0, x_max = 1000.0;
    double y_min = -1000.0, y_max = -500.0;
    double speed_min = 0.0, speed_max = 30.0;
    double angle_min = deg_to_rad(-5.0), angle_max = deg_to_rad(5.0);
    double rcs = 1.0;
    Scenario scenario = Scenario::LosBlocked;

    void validate() const {
        if (x_min > x_max || y_min > y_max || speed_min > speed_max || angle_min > angle_max)
            throw std::invalid_argument("scene prior: every range needs min <= max");
        if (speed_min < 0.0) throw std::invalid_argument("scene prior: speeds must be non-negative");
        if (!(rcs > 0.0)) throw std::invalid_argument("scene prior: RCS must be positive");
        if (!(distance(tx, rx) > 0.0)) throw std::invalid_argument("scene prior: tx and rx must differ");
    }

    static ScenePrior scenario_one() { return {}; }

    static ScenePrior scenario_two() {
        ScenePrior p;
        p.tx = {-200.0, 0.0};
        p.rx = {200.0, 0.0};
        p.x_min = -200.0;
        p.x_max = 200.0;
        p.y_min = -200.0;
        p.y_max = -100.0;
        p.scenario = Scenario::LosPresent;
        return p;
    }
};

struct ExperimentConfig {
    FrameConfig::Params frame;
    double n0_dbm_per_hz = -174.0;
    double noise_figure_db = 8.0;
    ScenePrior prior;
    DetectorSettings detector;
    LosGainModel los_model = LosGainModel::LeastSquares;
    double false_alarm = 1e-3;
    std::size_t calibration_trials = 10000;
    std::vector<PilotSpacing> patterns{{2, 4}, {2, 2}, {2, 1}};
    std::vector<double> snr_db{-20.0, -10.0, 0.0, 10.0, 20.0};
    std::vector<double> ratio_db{-50.0, -40.0, -30.0, -20.0, -10.0, 0.0, 10.0};
    std::vector<double> aoa_error_deg{0.0, 1.0, 5.0};
    std::vector<double> aoa_snr_db{0.0, 10.0};
    PilotSpacing aoa_pattern{2, 1};
    std::size_t trials = 200;
    std::uint64_t seed = 1;
    int threads = 1;
    std::string output_dir = "results";
    std::string calibration_cache; // empty: no cache

    FrameConfig frame_config(PilotSpacing p) const {
        FrameConfig::Params params = frame;
        params.pilot_spacing_freq = p.freq;
        params.pilot_spacing_time = p.time;
        return FrameConfig(params);
    }

    NoiseModel thermal_noise(const FrameConfig& cfg) const {
        return NoiseModel::from_psd(n0_dbm_per_hz, cfg.num_subcarriers() * cfg.subcarrier_spacing(), noise_figure_db);
    }

    void validate() const {
        prior.validate();
        detector.validate();
        if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
        if (patterns.empty()) throw std::invalid_argument("config: at least one pilot pattern is required");
        if (!(false_alarm > 0.0 && false_alarm < 1.0)) throw std::invalid_argument("config: false_alarm must lie in (0, 1)");
        for (const auto& p : patterns) (void)frame_config(p);
        (void)frame_config(aoa_pattern);
    }

    static ExperimentConfig scenario_one() { return {}; }

    static ExperimentConfig scenario_two() {
        ExperimentConfig c;
        c.prior = ScenePrior::scenario_two();
        c.patterns = {{2, 1}, {2, 2}};
        return c;
    }
};

namespace detail {

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
    if (const auto v = node[key]) out = v.as<T>();
}

inline void read_range(const YAML::Node& node, const char* key, double& lo, double& hi, double scale = 1.0) {
    const auto v = node[key];
    if (!v) return;
    if (!v.IsSequence() || v.size() != 2) throw std::invalid_argument(std::string("config: ") + key + " must be [min, max]");
    lo = v[0].as<double>() * scale;
    hi = v[1].as<double>() * scale;
}

inline void read_point(const YAML::Node& node, const char* key, Vec2& out) {
    const auto v = node[key];
    if (!v) return;
    if (!v.IsSequence() || v.size() != 2) throw std::invalid_argument(std::string("config: ") + key + " must be [x, y]");
    out = {v[0].as<double>(), v[1].as<double>()};
}

inline Scenario scenario_from_string(const std::string& s) {
    if (s == "los_blocked") return Scenario::LosBlocked;
    if (s == "los_present") return Scenario::LosPresent;
    throw std::invalid_argument("config: unknown scenario '" + s + "'");
}

} // namespace detail

/// Parses the nested YAML experiment description; absent keys keep defaults.
inline ExperimentConfig parse_config(const YAML::Node& root) {
    ExperimentConfig c;
    if (const auto s = root["scenario"]) {
        const Scenario sc = detail::scenario_from_string(s.as<std::string>());
        c = sc == Scenario::LosPresent ? ExperimentConfig::scenario_two() : ExperimentConfig::scenario_one();
    }
    if (const auto f = root["frame"]) {
        detail::read(f, "carrier_frequency_hz", c.frame.carrier_frequency_hz);
        detail::read(f, "subcarrier_spacing_hz", c.frame.subcarrier_spacing_hz);
        detail::read(f, "cp_duration_s", c.frame.cp_duration_s);
        detail::read(f, "num_subcarriers", c.frame.num_subcarriers);
        detail::read(f, "num_symbols", c.frame.num_symbols);
    }
    if (const auto n = root["noise"]) {
        detail::read(n, "n0_dbm_per_hz", c.n0_dbm_per_hz);
        detail::read(n, "noise_figure_db", c.noise_figure_db);
    }
    if (const auto s = root["scene"]) {
        detail::read_point(s, "tx", c.prior.tx);
        detail::read_point(s, "rx", c.prior.rx);
        detail::read_range(s, "x", c.prior.x_min, c.prior.x_max);
        detail::read_range(s, "y", c.prior.y_min, c.prior.y_max);
        detail::read_range(s, "speed", c.prior.speed_min, c.prior.speed_max);
        detail::read_range(s, "velocity_angle_deg", c.prior.angle_min, c.prior.angle_max, kPi / 180.0);
        detail::read(s, "rcs", c.prior.rcs);
    }
    if (const auto d = root["detector"]) {
        detail::read(d, "doppler_fft", c.detector.doppler_fft);
        detail::read(d, "delay_fft", c.detector.delay_fft);
        detail::read(d, "window_blocks", c.detector.window_blocks);
        detail::read(d, "max_range", c.detector.max_range);
        detail::read(d, "relative_gate", c.detector.relative_gate);
        detail::read(d, "false_alarm", c.false_alarm);
        detail::read(d, "calibration_trials", c.calibration_trials);
        if (const auto m = d["los_gain_model"]) c.los_model = los_gain_model_from_string(m.as<std::string>());
    }
    if (const auto s = root["sweep"]) {
        if (const auto p = s["patterns"]) {
            c.patterns.clear();
            for (const auto& e : p) {
                if (!e.IsSequence() || e.size() != 2) throw std::invalid_argument("config: patterns are [n_p, m_p] pairs");
                c.patterns.push_back({e[0].as<int>(), e[1].as<int>()});
            }
        }
        detail::read(s, "snr_db", c.snr_db);
        detail::read(s, "ratio_db", c.ratio_db);
        detail::read(s, "trials", c.trials);
    }
    if (const auto a = root["aoa_study"]) {
        detail::read(a, "errors_deg", c.aoa_error_deg);
        detail::read(a, "snr_db", c.aoa_snr_db);
        if (const auto p = a["pattern"]) c.aoa_pattern = {p[0].as<int>(), p[1].as<int>()};
    }
    detail::read(root, "seed", c.seed);
    detail::read(root, "threads", c.threads);
    if (const auto o = root["output"]) {
        detail::read(o, "dir", c.output_dir);
        detail::read(o, "calibration_cache", c.calibration_cache);
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(YAML::LoadFile(path)); }
inline ExperimentConfig parse_config_string(const std::string& text) { return parse_config(YAML::Load(text)); }

// ---------------------------------------------------------------------------
// Seeding

// Streams of the counter-based seed split. Trial t of every sweep point uses
// the same scene, frame and (per point) noise seeds, so adding sweep points or
// trials never changes existing draws.
inline constexpr std::uint64_t kSceneStream = 0x5ce7e;
inline constexpr std::uint64_t kDataStream = 0xda7a;
inline constexpr std::uint64_t kPilotStream = 0x9170;
inline constexpr std::uint64_t kNoiseStream = 0x7015e;

inline std::uint64_t point_key(double x) {
    std::uint64_t bits = 0;
    static_assert(sizeof bits == sizeof x);
    std::memcpy(&bits, &x, sizeof bits);
    return bits;
}

inline std::uint64_t pilot_seed(std::uint64_t root) { return derive_seed(root, kPilotStream); }

inline std::uint64_t noise_seed(std::uint64_t root, double x, std::uint64_t trial) {
    return derive_seed(derive_seed(root, kNoiseStream, trial), point_key(x));
}

/// Uniform scene draw; re-draws with the next sub-seed if the target lands on
/// the transmitter or the receiver.
inline Scene draw_scene(const ScenePrior& prior, std::uint64_t seed) {
    prior.validate();
    for (std::uint64_t attempt = 0;; ++attempt) {
        std::mt19937_64 rng(derive_seed(seed, attempt));
        std::uniform_real_distribution<double> ux(prior.x_min, std::nextafter(prior.x_max, prior.x_max + 1.0));
        std::uniform_real_distribution<double> uy(prior.y_min, std::nextafter(prior.y_max, prior.y_max + 1.0));
        std::uniform_real_distribution<double> us(prior.speed_min, std::nextafter(prior.speed_max, prior.speed_max + 1.0));
        std::uniform_real_distribution<double> ua(prior.angle_min, std::nextafter(prior.angle_max, prior.angle_max + 1.0));
        Scene s;
        s.tx = prior.tx;
        s.rx = prior.rx;
        s.target = {std::clamp(ux(rng), prior.x_min, prior.x_max), std::clamp(uy(rng), prior.y_min, prior.y_max)};
        s.speed = std::clamp(us(rng), prior.speed_min, prior.speed_max);
        s.velocity_angle = std::clamp(ua(rng), prior.angle_min, prior.angle_max);
        s.rcs = prior.rcs;
        s.scenario = prior.scenario;
        if (distance(s.target, s.tx) > 0.0 && distance(s.target, s.rx) > 0.0) return s;
    }
}

inline Scene draw_trial_scene(const ScenePrior& prior, std::uint64_t root, std::uint64_t trial) {
    return draw_scene(prior, derive_seed(root, kSceneStream, trial));
}

// ---------------------------------------------------------------------------
// Thresholds

/// Threshold at unit noise variance for one numerology, from the cache when
/// possible, otherwise by Monte-Carlo calibration (stored back to the cache).
inline double unit_threshold(const FrameConfig& cfg, const DetectorSettings& settings, double false_alarm,
                             std::size_t trials, std::uint64_t seed, const std::string& cache_path, int threads) {
    const std::string key = calibration_key(cfg, settings, false_alarm, trials, seed);
    std::optional<CalibrationCache> cache;
    if (!cache_path.empty()) {
        cache.emplace(cache_path);
        if (const auto k = cache->find(key)) return *k;
    }
    const ThresholdCalibration cal = calibrate_threshold(cfg, settings, false_alarm, trials, seed, 1.0, threads);
    if (cache) cache->store(key, cal.kappa);
    return cal.kappa;
}

inline double unit_threshold(const ExperimentConfig& c, const FrameConfig& cfg) {
    return unit_threshold(cfg, c.detector, c.false_alarm, c.calibration_trials, c.seed, c.calibration_cache, c.threads);
}

// ---------------------------------------------------------------------------
// Trials

struct TrialRecord {
    std::uint64_t trial = 0;
    Scene scene;
    Propagation truth;
    int true_block = 0; // l0
    double noise_variance = 0.0;
    TargetEstimate estimate;
    double range_error = 0.0;
    double velocity_error = 0.0;
    bool los_detected = false; // LOS-present trials only
};

inline int true_block(const Propagation& p, const FrameConfig& cfg) {
    return static_cast<int>(std::floor(p.tau_nlos / cfg.cp_duration())) + 1;
}

/// One LOS-blocked trial at the given SNR. `aoa_error` offsets the receive
/// beam direction used by the geometry solver.
inline TrialRecord run_nlos_trial(SensingReceiver& rx, const ExperimentConfig& c, double snr_db, double kappa_unit,
                                  std::uint64_t trial, double aoa_error = 0.0) {
    const FrameConfig& cfg = rx.config();
    TrialRecord rec;
    rec.trial = trial;
    rec.scene = draw_trial_scene(c.prior, c.seed, trial);
    rec.scene.aoa_pointing_error = aoa_error;
    rec.truth = derive_propagation(rec.scene, cfg);
    rec.true_block = true_block(rec.truth, cfg);
    const NoiseModel noise = set_snr(rec.truth, snr_db);
    rec.noise_variance = noise.variance;
    const FrameSymbols frame = generate_frame(cfg, pilot_seed(c.seed), derive_seed(c.seed, kDataStream, trial));
    const SampleStream stream =
        synthesize_rx(cfg, frame, rec.truth, Scenario::LosBlocked, noise, noise_seed(c.seed, snr_db, trial));
    rec.estimate = rx.detect(stream, frame, kappa_unit * noise.variance, rec.truth.baseline,
                             arrival_angle(rec.scene) + aoa_error);
    if (rec.estimate.detected) {
        rec.range_error = rec.estimate.geometry.bistatic_range - rec.truth.bistatic_range;
        rec.velocity_error = rec.estimate.geometry.bistatic_velocity - rec.truth.bistatic_velocity;
    }
    return rec;
}

/// One LOS-present trial with |alpha_NLOS|^2 / |alpha_LOS|^2 set to ratio_db
/// and thermal noise from the configuration.
inline TrialRecord run_los_trial(SensingReceiver& rx, const ExperimentConfig& c, double ratio_db, double kappa_unit,
                                 std::uint64_t trial) {
    const FrameConfig& cfg = rx.config();
    TrialRecord rec;
    rec.trial = trial;
    rec.scene = draw_trial_scene(c.prior, c.seed, trial);
    rec.truth = derive_propagation(rec.scene, cfg);
    rec.truth.alpha_nlos =
        std::polar(std::abs(rec.truth.alpha_los) * std::sqrt(db_to_linear(ratio_db)), std::arg(rec.truth.alpha_nlos));
    rec.true_block = true_block(rec.truth, cfg);
    const NoiseModel noise = c.thermal_noise(cfg);
    rec.noise_variance = noise.variance;
    const FrameSymbols frame = generate_frame(cfg, pilot_seed(c.seed), derive_seed(c.seed, kDataStream, trial));
    const SampleStream stream =
        synthesize_rx(cfg, frame, rec.truth, Scenario::LosPresent, noise, noise_seed(c.seed, ratio_db, trial));
    const double kappa = kappa_unit * noise.variance;
    LosOptions opt;
    opt.model = c.los_model;
    opt.oracle_gain = rec.truth.alpha_los;
    opt.oracle_delay = rec.truth.tau_los;
    const LosCancellation cancel = detect_and_cancel_los(rx, stream, frame, kappa, opt);
    rec.los_detected = cancel.los_detected;
    rec.estimate = localize_after_cancellation(rx, cancel, stream, frame, kappa, rec.truth.baseline, arrival_angle(rec.scene));
    if (rec.estimate.detected) {
        rec.range_error = rec.estimate.geometry.bistatic_range - rec.truth.bistatic_range;
        rec.velocity_error = rec.estimate.geometry.bistatic_velocity - rec.truth.bistatic_velocity;
    }
    return rec;
}

/// Runs `count` trials on `threads` workers, each with its own receiver.
/// Records are returned in trial order whatever the scheduling.
inline std::vector<TrialRecord> run_trials(const FrameConfig& cfg, const DetectorSettings& settings, std::size_t count,
                                           int threads,
                                           const std::function<TrialRecord(SensingReceiver&, std::uint64_t)>& body) {
    std::vector<TrialRecord> out(count);
    std::vector<std::unique_ptr<SensingReceiver>> workers(static_cast<std::size_t>(std::max(threads, 1)));
    parallel_for(count, threads, [&](std::size_t w, std::size_t i) {
        if (!workers[w]) workers[w] = std::make_unique<SensingReceiver>(cfg, settings);
        out[i] = body(*workers[w], i);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct RmsePoint {
    double x = 0.0; // SNR or NLOS-to-LOS ratio, dB
    std::string pattern;
    std::size_t n_trials = 0;
    std::size_t n_detected = 0;
    std::optional<double> rmse_range;    // m, over detected trials only
    std::optional<double> rmse_velocity; // m/s, over detected trials only

    double detection_rate() const { return n_trials ? static_cast<double>(n_detected) / n_trials : 0.0; }
};

inline RmsePoint aggregate(double x, const std::string& pattern, const std::vector<TrialRecord>& records) {
    RmsePoint p;
    p.x = x;
    p.pattern = pattern;
    p.n_trials = records.size();
    double se_r = 0.0;
    double se_v = 0.0;
    // records are in trial order, so the sums do not depend on scheduling
    for (const auto& r : records) {
        if (!r.estimate.detected) continue;
        ++p.n_detected;
        se_r += r.range_error * r.range_error;
        se_v += r.velocity_error * r.velocity_error;
    }
    if (p.n_detected > 0) {
        p.rmse_range = std::sqrt(se_r / static_cast<double>(p.n_detected));
        p.rmse_velocity = std::sqrt(se_v / static_cast<double>(p.n_detected));
    }
    return p;
}

/// Range/velocity RMSE versus SNR for every pilot pattern (LOS blocked).
inline std::vector<RmsePoint> run_rmse_sweep(const ExperimentConfig& c) {
    std::vector<RmsePoint> out;
    for (const auto& pattern : c.patterns) {
        const FrameConfig cfg = c.frame_config(pattern);
        const double kappa = unit_threshold(c, cfg);
        for (double snr : c.snr_db) {
            const auto records = run_trials(cfg, c.detector, c.trials, c.threads, [&](SensingReceiver& rx, std::uint64_t t) {
                return run_nlos_trial(rx, c, snr, kappa, t);
            });
            out.push_back(aggregate(snr, pattern.label(), records));
        }
    }
    return out;
}

/// Range RMSE after LOS cancellation versus NLOS-to-LOS power ratio.
inline std::vector<RmsePoint> run_ratio_sweep(const ExperimentConfig& c) {
    std::vector<RmsePoint> out;
    for (const auto& pattern : c.patterns) {
        const FrameConfig cfg = c.frame_config(pattern);
        const double kappa = unit_threshold(c, cfg);
        for (double ratio : c.ratio_db) {
            const auto records = run_trials(cfg, c.detector, c.trials, c.threads, [&](SensingReceiver& rx, std::uint64_t t) {
                return run_los_trial(rx, c, ratio, kappa, t);
            });
            out.push_back(aggregate(ratio, pattern.label(), records));
        }
    }
    return out;
}

struct AoaCell {
    double snr_db = 0.0;
    double aoa_error_deg = 0.0;
    std::size_t n_trials = 0;
    std::size_t n_detected = 0;
    std::optional<double> rmse_velocity;
};

/// Velocity RMSE with the receive beam mis-pointed by each listed error. The
/// pointing error only enters the geometry solver, so every error is evaluated
/// on the same detections.
inline std::vector<AoaCell> run_aoa_study(const ExperimentConfig& c, const std::vector<double>& aoa_errors_deg) {
    const FrameConfig cfg = c.frame_config(c.aoa_pattern);
    const double kappa = unit_threshold(c, cfg);
    std::vector<AoaCell> out;
    for (double snr : c.aoa_snr_db) {
        const auto records = run_trials(cfg, c.detector, c.trials, c.threads, [&](SensingReceiver& rx, std::uint64_t t) {
            return run_nlos_trial(rx, c, snr, kappa, t);
        });
        for (double err : aoa_errors_deg) {
            AoaCell cell;
            cell.snr_db = snr;
            cell.aoa_error_deg = err;
            cell.n_trials = records.size();
            double se = 0.0;
            for (const auto& r : records) {
                if (!r.estimate.detected) continue;
                ++cell.n_detected;
                const GeometryEstimate g = estimate_geometry(r.estimate.delay, r.estimate.doppler_hz, cfg,
                                                             r.truth.baseline, arrival_angle(r.scene) + deg_to_rad(err));
                const double e = g.bistatic_velocity - r.truth.bistatic_velocity;
                se += e * e;
            }
            if (cell.n_detected > 0) cell.rmse_velocity = std::sqrt(se / static_cast<double>(cell.n_detected));
            out.push_back(cell);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Brute-force oracle

struct OracleResult {
    double delay = 0.0;   // tau*, s
    double doppler = 0.0; // f_D*, Hz
    double peak = 0.0;    // |correlation|^2 at the maximum
    double reference_energy = 0.0; // sum_k |s_pilot(k Ts - tau*)|^2
    std::size_t delay_index = 0;
    std::size_t doppler_index = 0;
    bool at_boundary = false; // maximum on the edge of either grid
};

struct OracleOptions {
    // Correlate only where the hypothesized echo is in the useful (post-CP)
    // part of a symbol. There the unknown data subcarriers are orthogonal to
    // the pilot reference; across the CP they are not, and the residual
    // data-pilot cross terms bias the Doppler maximum by several Hz.
    bool skip_cyclic_prefix = true;
};

/// Matched filter against the pilot-only transmit signal:
///   maximize |sum_k r[k] conj(s_p(k Ts - tau)) exp(-j 2 pi f_D k Ts)|^2
/// over the supplied grids. Shares nothing with the windowed-DFT receiver.
inline OracleResult brute_force_oracle(const SampleStream& stream, const FrameSymbols& frame, const FrameConfig& cfg,
                                       const std::vector<double>& delay_grid, const std::vector<double>& doppler_grid,
                                       OracleOptions options = {}) {
    if (delay_grid.empty() || doppler_grid.empty()) throw std::invalid_argument("brute_force_oracle: empty search grid");
    const FrameSymbols pilots = pilots_only(cfg, frame);
    const std::size_t n = stream.samples.size();
    const double ts = cfg.sample_period();
    std::vector<cplx> rotor(doppler_grid.size() * n);
    for (std::size_t d = 0; d < doppler_grid.size(); ++d)
        for (std::size_t k = 0; k < n; ++k)
            rotor[d * n + k] = std::polar(1.0, -kTwoPi * doppler_grid[d] * static_cast<double>(k) * ts);

    OracleResult best;
    best.peak = -1.0;
    std::vector<cplx> y(n);
    for (std::size_t i = 0; i < delay_grid.size(); ++i) {
        double energy = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double t = static_cast<double>(k) * ts - delay_grid[i];
            cplx ref = eval_baseband(cfg, pilots, t);
            if (options.skip_cyclic_prefix) {
                const double into_symbol = t - static_cast<double>(symbol_index_at(cfg, t)) * cfg.symbol_duration();
                if (into_symbol < cfg.cp_duration() - 1e-9 * cfg.sample_period()) ref = 0.0;
            }
            energy += std::norm(ref);
            y[k] = stream.samples[k] * std::conj(ref);
        }
        for (std::size_t d = 0; d < doppler_grid.size(); ++d) {
            cplx acc{0.0, 0.0};
            const cplx* w = rotor.data() + d * n;
            for (std::size_t k = 0; k < n; ++k) acc += y[k] * w[k];
            const double v = std::norm(acc);
            if (v > best.peak) {
                best.peak = v;
                best.delay = delay_grid[i];
                best.doppler = doppler_grid[d];
                best.delay_index = i;
                best.doppler_index = d;
                best.reference_energy = energy;
            }
        }
    }
    best.at_boundary = best.delay_index == 0 || best.delay_index + 1 == delay_grid.size() ||
                       best.doppler_index == 0 || best.doppler_index + 1 == doppler_grid.size();
    return best;
}

inline std::vector<double> linear_grid(double centre, double half_width, double step) {
    if (!(step > 0.0) || half_width < 0.0) throw std::invalid_argument("linear_grid: invalid step or width");
    const auto half = static_cast<long long>(std::floor(half_width / step + 1e-9));
    std::vector<double> g;
    g.reserve(static_cast<std::size_t>(2 * half + 1));
    for (long long i = -half; i <= half; ++i) g.push_back(centre + static_cast<double>(i) * step);
    return g;
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_number(double v) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(10) << v;
    return os.str();
}

inline void write_rmse_csv(std::ostream& os, const std::vector<RmsePoint>& points) {
    os << "x,pattern,n_trials,n_detected,rmse_range_m,rmse_velocity_mps\n";
    for (const auto& p : points) {
        os << format_number(p.x) << ',' << p.pattern << ',' << p.n_trials << ',' << p.n_detected << ','
           << (p.rmse_range ? format_number(*p.rmse_range) : "") << ','
           << (p.rmse_velocity ? format_number(*p.rmse_velocity) : "") << '\n';
    }
}

inline void write_aoa_csv(std::ostream& os, const std::vector<AoaCell>& cells) {
    os << "snr_db,aoa_error_deg,n_trials,n_detected,rmse_velocity_mps\n";
    for (const auto& c : cells) {
        os << format_number(c.snr_db) << ',' << format_number(c.aoa_error_deg) << ',' << c.n_trials << ','
           << c.n_detected << ',' << (c.rmse_velocity ? format_number(*c.rmse_velocity) : "") << '\n';
    }
}

/// (p, q, P) rows for |p - p0| <= half_doppler, |q - q0| <= half_delay around
/// the peak; negative half-widths dump the whole axis.
inline void write_periodogram_csv(std::ostream& os, const DelayDopplerMap& map, int half_doppler = -1,
                                  int half_delay = -1) {
    os << "p,q,power\n";
    const int p_lo = half_doppler < 0 ? -map.doppler_size / 2 : map.peak_doppler - half_doppler;
    const int p_hi = half_doppler < 0 ? map.doppler_size / 2 - 1 : map.peak_doppler + half_doppler;
    const int q_lo = half_delay < 0 ? 0 : map.peak_delay - half_delay;
    const int q_hi = half_delay < 0 ? map.delay_size - 1 : map.peak_delay + half_delay;
    for (int p = p_lo; p <= p_hi; ++p) {
        const int pw = DelayDopplerMap::wrap(p + map.doppler_size / 2, map.doppler_size) - map.doppler_size / 2;
        for (int q = q_lo; q <= q_hi; ++q)
            os << pw << ',' << DelayDopplerMap::wrap(q, map.delay_size) << ',' << format_number(map.at(p, q)) << '\n';
    }
}

} // namespace bisense
