// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sliding-window target detection beyond the CP limit.
//
// Hypothesis l (1 <= l <= L) places the echo delay in [(l-1) Tcp, l Tcp); the
// window serving it starts at sample l*Ncp. Each hypothesis is scored by the
// peak of its delay-Doppler periodogram. The first hypothesis crossing the
// threshold opens a fine search over W CP blocks of per-sample anchors, and the
// anchor with the strongest peak is used for range/velocity estimation.

#include "bisense/channel.hpp"
#include "bisense/common.hpp"
#include "bisense/parallel.hpp"
#include "bisense/receiver.hpp"
#include "bisense/scene.hpp"
#include "bisense/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bisense {

struct DetectorSettings {
    int doppler_fft = 1024; // M_per
    int delay_fft = 1024;   // N_per
    int window_blocks = 2;  // W
    double max_range = 3000.0;
    // A hypothesis only opens the fine search if its metric also reaches this
    // fraction of the strongest metric in the sweep. Windows misaligned by more
    // than one CP block keep at most (1 - Tcp/Td)^2 of the peak power (0.64 for
    // Table I numerology), so any value above that keeps the fine search on the
    // true block at high SNR. 0 restores the plain first-crossing rule.
    double relative_gate = 0.8;

    void validate() const {
        if (!fft::is_power_of_two(doppler_fft) || !fft::is_power_of_two(delay_fft))
            throw std::invalid_argument("DetectorSettings: FFT sizes must be powers of two");
        if (window_blocks < 1) throw std::invalid_argument("DetectorSettings: window_blocks must be >= 1");
        if (!(max_range > 0.0)) throw std::invalid_argument("DetectorSettings: max_range must be positive");
        if (relative_gate < 0.0 || relative_gate > 1.0)
            throw std::invalid_argument("DetectorSettings: relative_gate must lie in [0, 1]");
    }
};

/// L = ceil(R_max / (c Tcp)).
inline int hypothesis_count(const FrameConfig& cfg, double max_range) {
    const double blocks = max_range / (kSpeedOfLight * cfg.cp_duration());
    return std::max(1, static_cast<int>(std::ceil(blocks - 1e-9)));
}

/// Fine-search anchors [begin, end) for first crossing h and W blocks:
/// {(h-1) Ncp, ..., (h+W-1) Ncp - 1}.
inline std::pair<std::size_t, std::size_t> fine_search_anchors(const FrameConfig& cfg, int h, int window_blocks) {
    if (h < 1 || window_blocks < 1) throw std::invalid_argument("fine_search_anchors: h and W must be >= 1");
    const auto ncp = static_cast<std::size_t>(cfg.cp_samples());
    return {static_cast<std::size_t>(h - 1) * ncp, static_cast<std::size_t>(h + window_blocks - 1) * ncp};
}

struct HypothesisSweep {
    int blocks = 0;              // L
    std::vector<double> metrics; // metrics[l-1] = eta_l
    double strongest() const { return metrics.empty() ? 0.0 : *std::max_element(metrics.begin(), metrics.end()); }
    /// argmax over l (1-based), lowest index on ties.
    int argmax() const {
        return metrics.empty() ? 0 : static_cast<int>(std::max_element(metrics.begin(), metrics.end()) - metrics.begin()) + 1;
    }
};

struct GeometryEstimate {
    double bistatic_range = 0.0;
    double d_rx = 0.0;
    double d_tx = 0.0;
    double bistatic_angle = 0.0;
    double bistatic_velocity = 0.0;
    bool velocity_estimable = true;
    bool geometry_stable = true;
};

/// Range, distances, bistatic angle and bistatic velocity from a delay and
/// Doppler estimate, the known baseline and the receive beam direction
/// (measured from the baseline towards the transmitter).
inline GeometryEstimate estimate_geometry(double delay_s, double doppler_hz, const FrameConfig& cfg, double baseline,
                                          double aoa) {
    GeometryEstimate g;
    g.bistatic_range = kSpeedOfLight * delay_s;
    const double r = g.bistatic_range;
    const double denom = 2.0 * (r - baseline * std::cos(aoa));
    if (std::abs(denom) < 1e-9 * std::max(r, 1.0) || r <= baseline) g.geometry_stable = false;
    g.d_rx = g.geometry_stable ? (r * r - baseline * baseline) / denom : 0.5 * r;
    g.d_tx = r - g.d_rx;
    if (g.d_rx <= 0.0 || g.d_tx <= 0.0) g.geometry_stable = false;
    if (g.geometry_stable) {
        g.bistatic_angle = bistatic_angle(g.d_tx, g.d_rx, baseline);
    } else {
        g.bistatic_angle = kPi;
    }
    const double half_cos = std::cos(g.bistatic_angle / 2.0);
    g.velocity_estimable = g.geometry_stable && half_cos >= 1e-6;
    g.bistatic_velocity =
        g.velocity_estimable ? doppler_hz * cfg.wavelength() / (2.0 * half_cos) : 0.0;
    return g;
}

struct TargetEstimate {
    bool detected = false;
    int first_crossing = 0;       // h
    std::size_t anchor = 0;       // k_hat: delay assumed in [k Ts, k Ts + Tcp)
    std::vector<double> fine_metrics;
    PeakSummary peak;             // at the winning anchor
    InterpolatedPeak bins;
    double delay = 0.0;           // s
    double doppler_hz = 0.0;
    GeometryEstimate geometry;
};

/// Per-worker receiver state: demodulator kernel plus two periodogram engines
/// (single precision for the metric sweeps, double for the final estimate).
class SensingReceiver {
public:
    SensingReceiver(const FrameConfig& cfg, const DetectorSettings& settings)
        : cfg_(cfg), settings_(settings), demod_(cfg, cfg.pilot_spacing_time(), cfg.pilot_spacing_freq()),
          metric_engine_(settings.doppler_fft, settings.delay_fft),
          fine_engine_(settings.doppler_fft, settings.delay_fft) {
        settings_.validate();
        if (cfg.pilot_rows() > settings.doppler_fft || cfg.pilot_cols() > settings.delay_fft)
            throw std::invalid_argument("SensingReceiver: FFT sizes smaller than the pilot lattice");
    }

    const FrameConfig& config() const { return cfg_; }
    const DetectorSettings& settings() const { return settings_; }
    int blocks() const { return hypothesis_count(cfg_, settings_.max_range); }

    bool window_fits(const std::vector<cplx>& samples, std::size_t offset) const {
        return usable_symbols(cfg_, samples.size(), offset) >= 1;
    }

    LsGrid ls_grid(const std::vector<cplx>& samples, const FrameSymbols& frame, std::size_t offset) {
        return ls_estimates(demod_(samples, offset), frame, cfg_);
    }

    /// Peak metric of the window at `offset`; 0 when no symbol fits.
    double metric(const std::vector<cplx>& samples, const FrameSymbols& frame, std::size_t offset) {
        if (!window_fits(samples, offset)) return 0.0;
        return metric_engine_.peak(ls_grid(samples, frame, offset)).value;
    }

    PeakSummary fine_peak(const LsGrid& grid) { return fine_engine_.peak(grid); }
    DelayDopplerMap fine_map(const LsGrid& grid) { return fine_engine_.map(grid); }

    HypothesisSweep sweep(const SampleStream& stream, const FrameSymbols& frame) {
        HypothesisSweep s;
        s.blocks = blocks();
        s.metrics.resize(static_cast<std::size_t>(s.blocks));
        for (int l = 1; l <= s.blocks; ++l)
            s.metrics[static_cast<std::size_t>(l - 1)] =
                metric(stream.samples, frame, static_cast<std::size_t>(l) * cfg_.cp_samples());
        return s;
    }

    /// First hypothesis passing both the absolute threshold and the relative
    /// gate; 0 when none passes (no target).
    int first_crossing(const HypothesisSweep& sweep, double kappa) const {
        const double gate = settings_.relative_gate * sweep.strongest();
        for (int l = 1; l <= sweep.blocks; ++l) {
            const double eta = sweep.metrics[static_cast<std::size_t>(l - 1)];
            if (eta >= kappa && eta >= gate) return l;
        }
        return 0;
    }

    /// Detection and delay/Doppler estimation, without geometry.
    TargetEstimate localize(const HypothesisSweep& sweep, const SampleStream& stream, const FrameSymbols& frame,
                            double kappa) {
        TargetEstimate est;
        bool any = false;
        for (double eta : sweep.metrics) any = any || eta >= kappa;
        if (!any) return est;
        est.first_crossing = first_crossing(sweep, kappa);
        const auto [begin, end] = fine_search_anchors(cfg_, est.first_crossing, settings_.window_blocks);
        est.fine_metrics.assign(end - begin, 0.0);
        double best = -1.0;
        for (std::size_t a = begin; a < end; ++a) {
            const double eta = metric(stream.samples, frame, window_offset_for_anchor(cfg_, a));
            est.fine_metrics[a - begin] = eta;
            if (eta > best) {
                best = eta;
                est.anchor = a;
            }
        }
        const std::size_t offset = window_offset_for_anchor(cfg_, est.anchor);
        if (!window_fits(stream.samples, offset)) return est;
        est.detected = true;
        est.peak = fine_peak(ls_grid(stream.samples, frame, offset));
        est.bins = interpolate_peak(est.peak);
        est.delay = absolute_delay(est.bins.delay_bin, offset, cfg_, settings_.delay_fft);
        est.doppler_hz = doppler_from_bin(est.bins.doppler_bin, cfg_, settings_.doppler_fft);
        return est;
    }

    TargetEstimate detect(const SampleStream& stream, const FrameSymbols& frame, double kappa, double baseline,
                          double aoa) {
        const HypothesisSweep s = sweep(stream, frame);
        TargetEstimate est = localize(s, stream, frame, kappa);
        if (est.detected) est.geometry = estimate_geometry(est.delay, est.doppler_hz, cfg_, baseline, aoa);
        return est;
    }

private:
    FrameConfig cfg_;
    DetectorSettings settings_;
    Demodulator demod_;
    PeriodogramEngine<float> metric_engine_;
    PeriodogramEngine<double> fine_engine_;
};

inline HypothesisSweep sweep_hypotheses(const SampleStream& stream, const FrameSymbols& frame, const FrameConfig& cfg,
                                        const DetectorSettings& settings) {
    SensingReceiver rx(cfg, settings);
    return rx.sweep(stream, frame);
}

inline TargetEstimate detect_and_localize(const HypothesisSweep& sweep, const SampleStream& stream,
                                          const FrameSymbols& frame, const FrameConfig& cfg,
                                          const DetectorSettings& settings, double kappa, double baseline, double aoa) {
    SensingReceiver rx(cfg, settings);
    TargetEstimate est = rx.localize(sweep, stream, frame, kappa);
    if (est.detected) est.geometry = estimate_geometry(est.delay, est.doppler_hz, cfg, baseline, aoa);
    return est;
}

// ---------------------------------------------------------------------------
// Threshold calibration

/// Empirical distribution of max_l eta_l over noise-only frames at a reference
/// noise variance. Periodogram values are quadratic in the samples, so the
/// threshold for any other noise variance is a plain rescaling.
struct ThresholdCalibration {
    double false_alarm = 0.0;
    double kappa = 0.0;          // at reference_variance
    double reference_variance = 1.0;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    std::vector<double> max_metrics; // sorted ascending

    double kappa_for(double noise_variance) const { return kappa * noise_variance / reference_variance; }

    /// Fraction of the calibration statistics at or above `threshold`.
    double exceedance(double threshold) const {
        const auto it = std::lower_bound(max_metrics.begin(), max_metrics.end(), threshold);
        return static_cast<double>(max_metrics.end() - it) / static_cast<double>(max_metrics.size());
    }
};

/// Threshold crossed by exactly floor(P_f * n) of n sorted statistics.
inline double empirical_threshold(const std::vector<double>& sorted, double false_alarm) {
    const auto n = sorted.size();
    const auto exceed = static_cast<std::size_t>(std::floor(false_alarm * static_cast<double>(n)));
    if (exceed < 1 || exceed >= n) throw std::invalid_argument("empirical_threshold: quantile outside the sample");
    return sorted[n - exceed];
}

inline std::size_t minimum_calibration_trials(double false_alarm) {
    return static_cast<std::size_t>(std::ceil(10.0 / false_alarm - 1e-9));
}

inline constexpr std::uint64_t kCalibrationStream = 0xca11b7a7e;

/// Noise-only statistics max_l eta_l, one per trial, in trial order.
inline std::vector<double> noise_only_statistics(const FrameConfig& cfg, const DetectorSettings& settings,
                                                 std::size_t trials, std::uint64_t seed, double noise_variance,
                                                 int threads = 1, std::size_t first_trial = 0) {
    const FrameSymbols frame = generate_frame(cfg, derive_seed(seed, kCalibrationStream, ~0ULL), 0);
    std::vector<double> stats(trials);
    std::vector<std::unique_ptr<SensingReceiver>> workers(static_cast<std::size_t>(std::max(threads, 1)));
    parallel_for(trials, threads, [&](std::size_t w, std::size_t i) {
        if (!workers[w]) workers[w] = std::make_unique<SensingReceiver>(cfg, settings);
        const SampleStream noise =
            noise_stream(cfg, noise_variance, derive_seed(seed, kCalibrationStream, first_trial + i));
        stats[i] = workers[w]->sweep(noise, frame).strongest();
    });
    return stats;
}

inline ThresholdCalibration calibrate_threshold(const FrameConfig& cfg, const DetectorSettings& settings,
                                                double false_alarm, std::size_t trials, std::uint64_t seed,
                                                double noise_variance = 1.0, int threads = 1) {
    if (!(false_alarm > 0.0 && false_alarm < 1.0))
        throw std::invalid_argument("calibrate_threshold: false-alarm probability must lie in (0, 1)");
    if (trials < minimum_calibration_trials(false_alarm))
        throw std::invalid_argument("calibrate_threshold: need at least " +
                                    std::to_string(minimum_calibration_trials(false_alarm)) +
                                    " trials for the requested false-alarm probability");
    ThresholdCalibration cal;
    cal.false_alarm = false_alarm;
    cal.reference_variance = noise_variance;
    cal.trials = trials;
    cal.seed = seed;
    cal.max_metrics = noise_only_statistics(cfg, settings, trials, seed, noise_variance, threads);
    std::sort(cal.max_metrics.begin(), cal.max_metrics.end());
    cal.kappa = empirical_threshold(cal.max_metrics, false_alarm);
    return cal;
}

/// Key identifying a calibration: numerology, sweep geometry, FFT sizes and
/// the Monte-Carlo settings that produced it.
inline std::string calibration_key(const FrameConfig& cfg, const DetectorSettings& settings, double false_alarm,
                                   std::size_t trials, std::uint64_t seed) {
    std::ostringstream os;
    os.precision(12);
    os << cfg.fingerprint() << ",L=" << hypothesis_count(cfg, settings.max_range) << ",M=" << settings.doppler_fft
       << ",N=" << settings.delay_fft << ",pf=" << false_alarm << ",trials=" << trials << ",seed=" << seed;
    return os.str();
}

/// Text cache of calibrated thresholds, one `key = kappa` record per line,
/// kappa referenced to unit noise variance.
class CalibrationCache {
public:
    CalibrationCache() = default;
    explicit CalibrationCache(std::string path) : path_(std::move(path)) { load(); }

    std::optional<double> find(const std::string& key) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void store(const std::string& key, double kappa_unit) {
        entries_[key] = kappa_unit;
        if (!path_.empty()) save();
    }

    std::size_t size() const { return entries_.size(); }

private:
    void load() {
        std::ifstream in(path_);
        if (!in) return;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.rfind(" = ");
            if (eq == std::string::npos) throw std::runtime_error("calibration cache: malformed line: " + line);
            entries_[line.substr(0, eq)] = std::stod(line.substr(eq + 3));
        }
    }

    void save() const {
        std::ofstream out(path_);
        if (!out) throw std::runtime_error("calibration cache: cannot write " + path_);
        out.precision(17);
        out << "# threshold cache: <fingerprint> = <kappa at unit noise variance>\n";
        for (const auto& [k, v] : entries_) out << k << " = " << v << "\n";
    }

    std::string path_;
    std::map<std::string, double> entries_;
};

// ---------------------------------------------------------------------------
// LOS detection and cancellation

enum class LosGainModel {
    FreeSpace,       // lambda / (4 pi tau c) with carrier phase exp(-j 2 pi fc tau)
    FreeSpaceCompat, // lambda / (pi tau c): the alternative magnitude normalization
    LeastSquares,    // project the pilot grid onto the LOS signature at the estimated delay
    Oracle,          // true gain and delay supplied by the caller
};

inline const char* to_string(LosGainModel m) {
    switch (m) {
    case LosGainModel::FreeSpace: return "free_space";
    case LosGainModel::FreeSpaceCompat: return "free_space_compat";
    case LosGainModel::LeastSquares: return "least_squares";
    case LosGainModel::Oracle: return "oracle";
    }
    return "?";
}

inline LosGainModel los_gain_model_from_string(const std::string& s) {
    if (s == "free_space") return LosGainModel::FreeSpace;
    if (s == "free_space_compat") return LosGainModel::FreeSpaceCompat;
    if (s == "least_squares") return LosGainModel::LeastSquares;
    if (s == "oracle") return LosGainModel::Oracle;
    throw std::invalid_argument("unknown LOS gain model: " + s);
}

struct LosOptions {
    LosGainModel model = LosGainModel::LeastSquares;
    cplx oracle_gain{};
    double oracle_delay = 0.0;
};

struct LosCancellation {
    TargetEstimate los;     // LOS detection through the target machinery
    bool los_detected = false;
    double delay = 0.0;     // tau_LOS estimate used for cancellation
    cplx gain{};            // alpha_LOS estimate
    std::size_t anchor = 0; // w = floor(tau / Ts)
    LsGrid raw;             // LS grid at the LOS-anchored window
    LsGrid cleaned;         // after subtracting the LOS contribution
};

/// LOS term of an LS grid taken in the window at `grid.offset`.
inline cplx los_signature(const FrameConfig& cfg, std::size_t offset, double delay, int nu) {
    const double n = static_cast<double>(nu) * cfg.pilot_spacing_freq();
    return std::polar(1.0, -kTwoPi * n * cfg.subcarrier_spacing() * (delay - delay_reference(cfg, offset)));
}

inline void subtract_los(LsGrid& grid, const FrameConfig& cfg, cplx gain, double delay) {
    for (int nu = 0; nu < grid.cols; ++nu) {
        const cplx term = gain * los_signature(cfg, grid.offset, delay, nu);
        for (int mu = 0; mu < grid.rows; ++mu) grid(mu, nu) -= term;
    }
}

inline cplx fit_los_gain(const LsGrid& grid, const FrameConfig& cfg, double delay) {
    cplx acc{};
    for (int nu = 0; nu < grid.cols; ++nu) {
        const cplx a = std::conj(los_signature(cfg, grid.offset, delay, nu));
        for (int mu = 0; mu < grid.rows; ++mu) acc += grid(mu, nu) * a;
    }
    return acc / static_cast<double>(grid.size());
}

inline double grid_energy(const LsGrid& g) {
    double e = 0.0;
    for (const auto& v : g.values) e += std::norm(v);
    return e;
}

inline LosCancellation detect_and_cancel_los(SensingReceiver& rx, const SampleStream& stream,
                                             const FrameSymbols& frame, double kappa, const LosOptions& opt) {
    const FrameConfig& cfg = rx.config();
    LosCancellation out;
    if (opt.model == LosGainModel::Oracle) {
        out.los_detected = true;
        out.delay = opt.oracle_delay;
    } else {
        out.los = rx.localize(rx.sweep(stream, frame), stream, frame, kappa);
        out.los_detected = out.los.detected;
        out.delay = out.los.delay;
    }
    if (!out.los_detected) return out;

    out.anchor = static_cast<std::size_t>(std::max(0.0, std::floor(out.delay / cfg.sample_period())));
    const std::size_t offset = window_offset_for_anchor(cfg, out.anchor);
    if (!rx.window_fits(stream.samples, offset)) {
        out.los_detected = false;
        return out;
    }
    out.raw = rx.ls_grid(stream.samples, frame, offset);
    const double tau = out.delay;
    switch (opt.model) {
    case LosGainModel::FreeSpace: out.gain = free_space_los_gain(tau, cfg.carrier_frequency()); break;
    case LosGainModel::FreeSpaceCompat: out.gain = 4.0 * free_space_los_gain(tau, cfg.carrier_frequency()); break;
    case LosGainModel::LeastSquares: out.gain = fit_los_gain(out.raw, cfg, tau); break;
    case LosGainModel::Oracle: out.gain = opt.oracle_gain; break;
    }
    out.cleaned = out.raw;
    subtract_los(out.cleaned, cfg, out.gain, tau);
    return out;
}

/// NLOS target estimate from the LOS-cleaned grid. The NLOS delay is assumed
/// to lie within one CP of the LOS, i.e. inside the LOS-anchored window.
/// Without a detected LOS the plain single-path processing is used.
inline TargetEstimate localize_after_cancellation(SensingReceiver& rx, const LosCancellation& cancel,
                                                  const SampleStream& stream, const FrameSymbols& frame, double kappa,
                                                  double baseline, double aoa) {
    if (!cancel.los_detected) return rx.detect(stream, frame, kappa, baseline, aoa);
    const FrameConfig& cfg = rx.config();
    TargetEstimate est;
    est.anchor = cancel.anchor;
    est.peak = rx.fine_peak(cancel.cleaned);
    if (est.peak.value < kappa) return est;
    est.detected = true;
    est.bins = interpolate_peak(est.peak);
    est.delay = absolute_delay(est.bins.delay_bin, cancel.cleaned.offset, cfg, rx.settings().delay_fft);
    est.doppler_hz = doppler_from_bin(est.bins.doppler_bin, cfg, rx.settings().doppler_fft);
    est.geometry = estimate_geometry(est.delay, est.doppler_hz, cfg, baseline, aoa);
    return est;
}

} // namespace bisense
