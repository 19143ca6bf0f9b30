// SPDX-License-Identifier: Apache-2.0
#include "bisense/detector.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <limits>
#include <random>

using namespace bisense;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Same sample period and CP as Table I, but 20 symbols and small transforms so
// Monte-Carlo checks finish quickly.
FrameConfig short_frame() {
    FrameConfig::Params p;
    p.num_symbols = 20;
    return FrameConfig(p);
}

DetectorSettings small_fft() {
    DetectorSettings s;
    s.doppler_fft = 64;
    s.delay_fft = 64;
    return s;
}

struct Case {
    Scene scene;
    Propagation prop;
    FrameSymbols frame;
    SampleStream stream;
};

Case noiseless(const FrameConfig& cfg, Vec2 target, double speed, double phi, std::uint64_t seed) {
    Case c;
    c.scene.target = target;
    c.scene.speed = speed;
    c.scene.velocity_angle = phi;
    c.prop = derive_propagation(c.scene, cfg);
    c.frame = generate_frame(cfg, 42, seed);
    c.stream = synthesize_rx(cfg, c.frame, c.prop, Scenario::LosBlocked, NoiseModel{0.0}, 0);
    return c;
}

// d_tx is formed as R - d_rx, so the sum returns R up to one rounding
bool sums_to_range(const GeometryEstimate& g) {
    return std::abs(g.d_tx + g.d_rx - g.bistatic_range) <= 2.0 * std::numeric_limits<double>::epsilon() * g.bistatic_range;
}

} // namespace

TEST_CASE("hypothesis count", "[detector]") {
    const FrameConfig cfg = FrameConfig::table1();
    CHECK(hypothesis_count(cfg, 3000.0) == 10);
    CHECK(hypothesis_count(cfg, 300.0) == 1);
    CHECK(hypothesis_count(cfg, 301.0) == 2);
    CHECK(hypothesis_count(cfg, 1.0) == 1);
}

TEST_CASE("fine search anchors", "[detector]") {
    const FrameConfig cfg = FrameConfig::table1();
    const auto [begin, end] = fine_search_anchors(cfg, 7, 2);
    CHECK(begin == 84);
    CHECK(end == 112);
    CHECK(end - begin == 28);
    const auto one = fine_search_anchors(cfg, 1, 1);
    CHECK(one.first == 0);
    CHECK(one.second == 14);
    CHECK_THROWS_AS(fine_search_anchors(cfg, 0, 2), std::invalid_argument);
    CHECK_THROWS_AS(fine_search_anchors(cfg, 3, 0), std::invalid_argument);
}

TEST_CASE("first crossing with and without the relative gate", "[detector]") {
    const FrameConfig cfg = FrameConfig::table1();
    HypothesisSweep s;
    s.blocks = 5;
    s.metrics = {1.0, 5.0, 9.0, 10.0, 3.0};
    CHECK(s.argmax() == 4);
    CHECK(s.strongest() == 10.0);

    DetectorSettings literal;
    literal.relative_gate = 0.0;
    CHECK(SensingReceiver(cfg, literal).first_crossing(s, 4.0) == 2);

    DetectorSettings gated; // 0.8 of the strongest metric
    CHECK(SensingReceiver(cfg, gated).first_crossing(s, 4.0) == 3);
    CHECK(SensingReceiver(cfg, gated).first_crossing(s, 11.0) == 0);

    HypothesisSweep tie;
    tie.blocks = 3;
    tie.metrics = {2.0, 7.0, 7.0};
    CHECK(tie.argmax() == 2);
}

TEST_CASE("detector settings validation", "[detector]") {
    DetectorSettings s;
    s.doppler_fft = 1000;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = {};
    s.window_blocks = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = {};
    s.relative_gate = 1.5;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = small_fft();
    s.delay_fft = 16; // fewer delay bins than pilot columns
    CHECK_THROWS_AS(SensingReceiver(FrameConfig::table1(), s), std::invalid_argument);
}

TEST_CASE("geometry solver", "[detector]") {
    const FrameConfig cfg = FrameConfig::table1();
    SECTION("symmetric geometry") {
        Scene s;
        const Propagation p = derive_propagation(s, cfg);
        const GeometryEstimate g = estimate_geometry(p.tau_nlos, 0.0, cfg, p.baseline, arrival_angle(s));
        CHECK_THAT(g.d_rx, WithinAbs(1414.2136, 1e-4));
        CHECK_THAT(g.d_tx, WithinAbs(1414.2136, 1e-4));
        CHECK_THAT(rad_to_deg(g.bistatic_angle), WithinAbs(90.0, 1e-9));
        CHECK(g.bistatic_velocity == 0.0);
        CHECK(g.geometry_stable);
    }
    SECTION("exact inputs recover the scene") {
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> ux(-1000.0, 1000.0), uy(-1000.0, -500.0), uv(0.0, 30.0);
        for (int i = 0; i < 100; ++i) {
            Scene s;
            s.target = {ux(rng), uy(rng)};
            s.speed = uv(rng);
            const Propagation p = derive_propagation(s, cfg);
            const GeometryEstimate g = estimate_geometry(p.tau_nlos, p.doppler_hz, cfg, p.baseline, arrival_angle(s));
            REQUIRE(g.geometry_stable);
            REQUIRE(sums_to_range(g));
            REQUIRE_THAT(g.d_rx, WithinRel(p.d_rx, 1e-9));
            REQUIRE_THAT(g.bistatic_angle, WithinAbs(p.bistatic_angle, 1e-9));
            REQUIRE_THAT(g.bistatic_velocity, WithinAbs(p.bistatic_velocity, 1e-9));
        }
    }
    SECTION("degenerate inputs are flagged") {
        // range not exceeding the baseline
        const GeometryEstimate a = estimate_geometry(2000.0 / kSpeedOfLight, 100.0, cfg, 2000.0, 0.5);
        CHECK_FALSE(a.geometry_stable);
        CHECK_FALSE(a.velocity_estimable);
        // target behind the receiver on the baseline extension: R = 2 d_rx + D, aoa = pi
        const GeometryEstimate b = estimate_geometry(3000.0 / kSpeedOfLight, 100.0, cfg, 2000.0, kPi);
        CHECK(b.geometry_stable);
        CHECK_THAT(b.d_rx, WithinRel(500.0, 1e-12));
        CHECK_THAT(b.bistatic_angle, WithinAbs(0.0, 1e-6));
    }
}

TEST_CASE("noiseless sweep peaks around the true block", "[detector]") {
    const FrameConfig cfg = FrameConfig::table1();
    // R = 2300 m puts the delay in [7 Tcp, 8 Tcp), i.e. block 8
    const double y = -std::sqrt(1150.0 * 1150.0 - 1000.0 * 1000.0);
    const Case c = noiseless(cfg, {0.0, y}, 12.0, 0.0, 7);
    REQUIRE(static_cast<int>(std::floor(c.prop.tau_nlos / cfg.cp_duration())) + 1 == 8);
    const HypothesisSweep s = sweep_hypotheses(c.stream, c.frame, cfg, DetectorSettings{});
    CHECK(s.blocks == 10);
    CHECK(s.argmax() >= 7);
    CHECK(s.argmax() <= 9);
    for (double eta : s.metrics) CHECK(eta >= 0.0);
}

TEST_CASE("noiseless detection invariants", "[detector]") {
    const FrameConfig cfg = FrameConfig::table1();
    SensingReceiver rx(cfg, DetectorSettings{});
    const std::vector<Vec2> targets{{-700.0, -600.0}, {0.0, -1000.0}, {420.0, -830.0}, {910.0, -510.0}};
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const Case c = noiseless(cfg, targets[i], 7.0 + 5.0 * i, deg_to_rad(-4.0 + 2.0 * i), i);
        const TargetEstimate e = rx.detect(c.stream, c.frame, 0.0, c.prop.baseline, arrival_angle(c.scene));
        REQUIRE(e.detected);
        REQUIRE(e.fine_metrics.size() == 28);
        const double ts = cfg.sample_period();
        // the anchor brackets the delay, with one sample of slack for fractional delays
        CHECK(e.anchor * ts <= e.delay + 1.0 * ts);
        CHECK(e.delay < e.anchor * ts + cfg.cp_duration());
        CHECK(sums_to_range(e.geometry));
        CHECK(std::abs(e.geometry.bistatic_range - c.prop.bistatic_range) <= 0.05);
        CHECK(std::abs(e.geometry.bistatic_velocity - c.prop.bistatic_velocity) <= 0.02);
    }
}

TEST_CASE("free-function detection matches the receiver object", "[detector]") {
    const FrameConfig cfg = FrameConfig::table1();
    const Case c = noiseless(cfg, {-300.0, -720.0}, 20.0, 0.05, 3);
    const DetectorSettings settings;
    const HypothesisSweep s = sweep_hypotheses(c.stream, c.frame, cfg, settings);
    const TargetEstimate a = detect_and_localize(s, c.stream, c.frame, cfg, settings, 0.0, c.prop.baseline,
                                                 arrival_angle(c.scene));
    SensingReceiver rx(cfg, settings);
    const TargetEstimate b = rx.detect(c.stream, c.frame, 0.0, c.prop.baseline, arrival_angle(c.scene));
    CHECK(a.anchor == b.anchor);
    CHECK(a.delay == b.delay);
    CHECK(a.geometry.bistatic_velocity == b.geometry.bistatic_velocity);
}

TEST_CASE("metrics scale quadratically and ignore a global phase", "[detector]") {
    const FrameConfig cfg = FrameConfig::table1();
    SensingReceiver rx(cfg, DetectorSettings{});
    Case c = noiseless(cfg, {150.0, -880.0}, 18.0, 0.02, 9);
    // unit path gain and unit noise, with a threshold near the P_f = 1e-2 level
    for (auto& v : c.stream.samples) v /= std::abs(c.prop.alpha_nlos);
    add_noise(c.stream.samples, 1.0, 5);
    const double kappa = 6.2e4;
    const HypothesisSweep base = rx.sweep(c.stream, c.frame);
    const TargetEstimate e0 = rx.localize(base, c.stream, c.frame, kappa);
    REQUIRE(e0.detected);

    const double gain = 3.0;
    SampleStream scaled = c.stream;
    for (auto& v : scaled.samples) v *= gain;
    const HypothesisSweep s1 = rx.sweep(scaled, c.frame);
    for (int l = 0; l < base.blocks; ++l) REQUIRE_THAT(s1.metrics[l], WithinRel(gain * gain * base.metrics[l], 1e-4));
    const TargetEstimate e1 = rx.localize(s1, scaled, c.frame, kappa * gain * gain);
    CHECK(s1.argmax() == base.argmax());
    CHECK(e1.first_crossing == e0.first_crossing);
    CHECK(e1.anchor == e0.anchor);
    CHECK_THAT(e1.delay, WithinAbs(e0.delay, 1e-15));

    SampleStream rotated = c.stream;
    for (auto& v : rotated.samples) v *= std::polar(1.0, -1.3);
    const HypothesisSweep s2 = rx.sweep(rotated, c.frame);
    const TargetEstimate e2 = rx.localize(s2, rotated, c.frame, kappa);
    CHECK(e2.detected == e0.detected);
    CHECK(e2.first_crossing == e0.first_crossing);
    CHECK(e2.anchor == e0.anchor);
}

TEST_CASE("no crossing means no target", "[detector]") {
    const FrameConfig cfg = short_frame();
    SensingReceiver rx(cfg, small_fft());
    const FrameSymbols x = generate_frame(cfg, 1, 2);
    const SampleStream noise = noise_stream(cfg, 1.0, 3);
    const TargetEstimate e = rx.detect(noise, x, 1e12, 2000.0, 0.5);
    CHECK_FALSE(e.detected);
    CHECK(e.first_crossing == 0);
}

TEST_CASE("threshold calibration", "[detector]") {
    const FrameConfig cfg = short_frame();
    const DetectorSettings settings = small_fft();

    SECTION("median at P_f = 0.5 and determinism") {
        const ThresholdCalibration a = calibrate_threshold(cfg, settings, 0.5, 40, 11);
        const ThresholdCalibration b = calibrate_threshold(cfg, settings, 0.5, 40, 11);
        CHECK(a.kappa == b.kappa);
        CHECK(a.max_metrics == b.max_metrics);
        CHECK(std::is_sorted(a.max_metrics.begin(), a.max_metrics.end()));
        CHECK(a.kappa == a.max_metrics[20]);
        CHECK(a.exceedance(a.kappa) == 0.5);
        const ThresholdCalibration c = calibrate_threshold(cfg, settings, 0.5, 40, 12);
        CHECK(c.kappa != a.kappa);
    }
    SECTION("threads do not change the statistics") {
        const auto one = noise_only_statistics(cfg, settings, 12, 5, 1.0, 1);
        const auto three = noise_only_statistics(cfg, settings, 12, 5, 1.0, 3);
        CHECK(one == three);
        // trial i is reproducible on its own
        const auto tail = noise_only_statistics(cfg, settings, 4, 5, 1.0, 1, 8);
        CHECK(std::equal(tail.begin(), tail.end(), one.begin() + 8));
    }
    SECTION("thresholds scale with the noise variance") {
        const ThresholdCalibration unit = calibrate_threshold(cfg, settings, 0.5, 20, 3, 1.0);
        const ThresholdCalibration hot = calibrate_threshold(cfg, settings, 0.5, 20, 3, 4.0);
        CHECK_THAT(hot.kappa, WithinRel(4.0 * unit.kappa, 1e-9));
        CHECK_THAT(unit.kappa_for(4.0), WithinRel(hot.kappa, 1e-9));
    }
    SECTION("too few trials") {
        CHECK(minimum_calibration_trials(1e-2) == 1000);
        CHECK(minimum_calibration_trials(1e-3) == 10000);
        CHECK_THROWS_AS(calibrate_threshold(cfg, settings, 1e-2, 999, 1), std::invalid_argument);
        CHECK_THROWS_AS(calibrate_threshold(cfg, settings, 0.0, 1000, 1), std::invalid_argument);
    }
    SECTION("empirical quantile") {
        std::vector<double> v(100);
        for (int i = 0; i < 100; ++i) v[i] = i;
        CHECK(empirical_threshold(v, 0.01) == 99.0);
        CHECK(empirical_threshold(v, 0.1) == 90.0);
        CHECK_THROWS_AS(empirical_threshold(v, 0.001), std::invalid_argument);
    }
}

TEST_CASE("calibrated false-alarm rate on fresh noise", "[detector]") {
    const FrameConfig cfg = short_frame();
    const DetectorSettings settings = small_fft();
    const double pf = 0.1;
    const ThresholdCalibration cal = calibrate_threshold(cfg, settings, pf, 1000, 21);
    // independent trials: a different root seed
    const auto fresh = noise_only_statistics(cfg, settings, 1000, 22, 2.5);
    std::size_t alarms = 0;
    for (double m : fresh) alarms += m >= cal.kappa_for(2.5);
    // calibration and validation each carry sd sqrt(0.09 / 1000); 3 sd of both
    const double rate = static_cast<double>(alarms) / 1000.0;
    CHECK(rate > pf - 0.04);
    CHECK(rate < pf + 0.04);
}

TEST_CASE("calibration cache", "[detector]") {
    const auto path = std::filesystem::temp_directory_path() / "bisense_cache_test.txt";
    std::filesystem::remove(path);
    const FrameConfig cfg = FrameConfig::table1();
    const std::string key = calibration_key(cfg, DetectorSettings{}, 1e-2, 10000, 1);
    CHECK(key.find("L=10") != std::string::npos);
    CHECK(key != calibration_key(FrameConfig::table1(2, 4), DetectorSettings{}, 1e-2, 10000, 1));
    {
        CalibrationCache cache(path.string());
        CHECK_FALSE(cache.find(key));
        cache.store(key, 61749.123456789);
    }
    CalibrationCache reloaded(path.string());
    REQUIRE(reloaded.find(key));
    CHECK(*reloaded.find(key) == 61749.123456789);
    CHECK(reloaded.size() == 1);
    std::filesystem::remove(path);
}

TEST_CASE("LOS gain model names", "[detector]") {
    for (auto m : {LosGainModel::FreeSpace, LosGainModel::FreeSpaceCompat, LosGainModel::LeastSquares, LosGainModel::Oracle})
        CHECK(los_gain_model_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(los_gain_model_from_string("magic"), std::invalid_argument);
}

TEST_CASE("LOS cancellation on the pilot grid", "[detector]") {
    const FrameConfig cfg = FrameConfig::table1();
    SensingReceiver rx(cfg, DetectorSettings{});
    Scene s;
    s.tx = {-200.0, 0.0};
    s.rx = {200.0, 0.0};
    s.target = {50.0, -150.0};
    s.scenario = Scenario::LosPresent;
    Propagation p = derive_propagation(s, cfg);
    // put the LOS delay on the sample grid: 19 Ts
    p.tau_los = 19 * cfg.sample_period();
    p.alpha_los = free_space_los_gain(p.tau_los, cfg.carrier_frequency());
    const FrameSymbols x = generate_frame(cfg, 4, 5);
    const SampleStream los_only = synthesize_rx(cfg, x, p, Scenario::LosPresent, NoiseModel{0.0}, 0, PathSelection{false, true});

    // the free-space models rebuild the carrier phase from the delay estimate,
    // which a picosecond error already spoils, so they are not held to -40 dB
    for (LosGainModel model : {LosGainModel::Oracle, LosGainModel::LeastSquares}) {
        LosOptions opt;
        opt.model = model;
        opt.oracle_gain = p.alpha_los;
        opt.oracle_delay = p.tau_los;
        const LosCancellation c = detect_and_cancel_los(rx, los_only, x, 1e-30, opt);
        REQUIRE(c.los_detected);
        CHECK(c.anchor >= 18);
        CHECK(c.anchor <= 19);
        const double residual_db = linear_to_db(grid_energy(c.cleaned) / grid_energy(c.raw));
        INFO("model " << to_string(model) << " residual " << residual_db << " dB");
        CHECK(residual_db <= -40.0);
    }
}

TEST_CASE("LOS cancellation leaves noise only when the target is absent", "[detector]") {
    const FrameConfig cfg = short_frame();
    const DetectorSettings settings = small_fft();
    const double pf = 0.1;
    const double kappa_unit = calibrate_threshold(cfg, settings, pf, 1000, 31).kappa;
    SensingReceiver rx(cfg, settings);
    Scene s;
    s.tx = {-200.0, 0.0};
    s.rx = {200.0, 0.0};
    s.target = {0.0, -150.0};
    Propagation p = derive_propagation(s, cfg);
    p.alpha_nlos = 0.0;
    const double sigma2 = std::norm(p.alpha_los) / db_to_linear(10.0);
    const FrameSymbols x = generate_frame(cfg, 7, 8);
    std::size_t false_targets = 0, los_found = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        const SampleStream r = synthesize_rx(cfg, x, p, Scenario::LosPresent, NoiseModel{sigma2}, 1000 + t);
        const LosCancellation c = detect_and_cancel_los(rx, r, x, kappa_unit * sigma2, LosOptions{});
        los_found += c.los_detected;
        const TargetEstimate e = localize_after_cancellation(rx, c, r, x, kappa_unit * sigma2, p.baseline, 0.7);
        false_targets += e.detected;
    }
    CHECK(los_found == static_cast<std::size_t>(trials));
    // one-sided 95% binomial bound for P_f = 0.1 over 200 trials
    CHECK(static_cast<double>(false_targets) / trials <= pf + 1.645 * std::sqrt(pf * (1 - pf) / trials));
}
