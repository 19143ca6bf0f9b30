// SPDX-License-Identifier: Apache-2.0
#pragma once

// Received sample stream for the LOS-blocked and LOS-present scenarios:
//   r[k] = a_nlos s(kTs - tau_nlos) exp(j 2 pi fD kTs) [+ a_los s(kTs - tau_los)] + z[k].
// Delays are applied by evaluating s() analytically, never by grid snapping.

#include "bisense/common.hpp"
#include "bisense/scene.hpp"
#include "bisense/waveform.hpp"

#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace bisense {

struct NoiseModel {
    double variance = 0.0; // sigma^2 per complex sample, W

    /// sigma^2 = N0 * B * NF with N0 in dBm/Hz and NF in dB.
    static NoiseModel from_psd(double n0_dbm_per_hz, double bandwidth_hz, double noise_figure_db) {
        const double n0_w = db_to_linear(n0_dbm_per_hz) * 1e-3;
        return {n0_w * bandwidth_hz * db_to_linear(noise_figure_db)};
    }

    static NoiseModel table1(const FrameConfig& cfg) {
        return from_psd(-174.0, cfg.num_subcarriers() * cfg.subcarrier_spacing(), 8.0);
    }

    double variance_dbm() const { return linear_to_db(variance * 1e3); }
};

/// Rescales the noise so that |alpha_nlos|^2 / sigma^2 equals the target SNR.
inline NoiseModel set_snr(const Propagation& prop, double target_snr_db) {
    const double power = std::norm(prop.alpha_nlos);
    if (!(power > 0.0)) throw std::invalid_argument("set_snr: NLOS path gain must be non-zero");
    return {power / db_to_linear(target_snr_db)};
}

inline double snr_db(const Propagation& prop, const NoiseModel& noise) {
    return linear_to_db(std::norm(prop.alpha_nlos) / noise.variance);
}

struct SampleStream {
    std::vector<cplx> samples;
    double sample_period = 0.0;
    double noise_variance = 0.0;
    Scenario scenario = Scenario::LosBlocked;
    std::uint64_t seed = 0;
    bool echo_outside_frame = false; // the NLOS echo starts after the last sample

    std::size_t size() const { return samples.size(); }
};

/// Adds gain * s(k Ts - delay) * exp(j 2 pi doppler k Ts) to every sample.
inline void add_path(std::vector<cplx>& out, const FrameConfig& cfg, const FrameSymbols& frame, cplx gain,
                     double delay, double doppler_hz) {
    if (gain == cplx{0.0, 0.0}) return;
    const double ts = cfg.sample_period();
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double t = static_cast<double>(k) * ts;
        const cplx s = eval_baseband(cfg, frame, t - delay);
        if (s == cplx{0.0, 0.0}) continue;
        out[k] += gain * s * std::polar(1.0, kTwoPi * doppler_hz * t);
    }
}

inline void add_noise(std::vector<cplx>& out, double variance, std::uint64_t seed) {
    if (!(variance > 0.0)) return;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, std::sqrt(variance / 2.0));
    for (auto& v : out) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        v += cplx{re, im};
    }
}

/// Path contributions can be switched off individually, which the
/// cancellation and linearity checks rely on.
struct PathSelection {
    bool nlos = true;
    bool los = true;
};

inline SampleStream synthesize_rx(const FrameConfig& cfg, const FrameSymbols& frame, const Propagation& prop,
                                  Scenario scenario, const NoiseModel& noise, std::uint64_t seed,
                                  PathSelection paths = {}) {
    if (frame.num_symbols() != cfg.num_symbols() || frame.num_subcarriers() != cfg.num_subcarriers())
        throw std::invalid_argument("synthesize_rx: frame grid does not match the configuration");
    if (noise.variance < 0.0) throw std::invalid_argument("synthesize_rx: negative noise variance");

    SampleStream stream;
    stream.samples.assign(cfg.frame_samples(), cplx{0.0, 0.0});
    stream.sample_period = cfg.sample_period();
    stream.noise_variance = noise.variance;
    stream.scenario = scenario;
    stream.seed = seed;
    stream.echo_outside_frame = prop.tau_nlos >= static_cast<double>(cfg.frame_samples()) * cfg.sample_period();

    if (paths.nlos && !stream.echo_outside_frame)
        add_path(stream.samples, cfg, frame, prop.alpha_nlos, prop.tau_nlos, prop.doppler_hz);
    if (paths.los && scenario == Scenario::LosPresent)
        add_path(stream.samples, cfg, frame, prop.alpha_los, prop.tau_los, 0.0);
    add_noise(stream.samples, noise.variance, seed);
    return stream;
}

/// Noise-only stream of a full frame.
inline SampleStream noise_stream(const FrameConfig& cfg, double variance, std::uint64_t seed) {
    SampleStream stream;
    stream.samples.assign(cfg.frame_samples(), cplx{0.0, 0.0});
    stream.sample_period = cfg.sample_period();
    stream.noise_variance = variance;
    stream.seed = seed;
    add_noise(stream.samples, variance, seed);
    return stream;
}

/// Raw dump: little-endian interleaved float64 I/Q in `path`, plus a text
/// sidecar `path + ".txt"` with sample rate, noise variance and scenario.
inline void write_samples(const std::string& path, const SampleStream& stream) {
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + path);
    static_assert(sizeof(double) == 8);
    for (const auto& v : stream.samples) {
        const double iq[2] = {v.real(), v.imag()};
        // little-endian hosts only; the byte order is part of the file format
        bin.write(reinterpret_cast<const char*>(iq), sizeof iq);
    }
    std::ofstream meta(path + ".txt");
    if (!meta) throw std::runtime_error("cannot open " + path + ".txt");
    meta.precision(17);
    meta << "format = cf64le\n"
         << "samples = " << stream.samples.size() << "\n"
         << "sample_rate_hz = " << 1.0 / stream.sample_period << "\n"
         << "noise_variance_w = " << stream.noise_variance << "\n"
         << "scenario = " << to_string(stream.scenario) << "\n"
         << "seed = " << stream.seed << "\n"
         << "echo_outside_frame = " << (stream.echo_outside_frame ? "true" : "false") << "\n";
}

inline std::vector<cplx> read_samples(const std::string& path) {
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + path);
    std::vector<cplx> out;
    double iq[2];
    while (bin.read(reinterpret_cast<char*>(iq), sizeof iq)) out.emplace_back(iq[0], iq[1]);
    return out;
}

} // namespace bisense
