// SPDX-License-Identifier: Apache-2.0
#pragma once

// OFDM frame definition and analytic baseband synthesis.
//
// The transmit signal keeps a globally continuous phase on every subcarrier,
//   s(t) = 1/sqrt(N) * sum_m sum_n X[m,n] exp(j 2 pi n df t) u(t - m Tsym),
// with u(t) the rectangular symbol window of length Tsym = Tcp + Td. Because
// every subcarrier is Td-periodic, the first Tcp of each symbol replicates its
// tail, i.e. the cyclic prefix is implicit in the analytic form.

#include "bisense/common.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bisense {

/// OFDM numerology plus the periodic pilot lattice spacing.
class FrameConfig {
public:
    struct Params {
        double carrier_frequency_hz = 30e9;
        double subcarrier_spacing_hz = 200e3;
        double cp_duration_s = 1e-6;
        int num_subcarriers = 70;
        int num_symbols = 100;
        int pilot_spacing_freq = 2;
        int pilot_spacing_time = 1;
    };

    FrameConfig() : FrameConfig(Params{}) {}

    explicit FrameConfig(const Params& p) : params_(p) {
        if (!(p.carrier_frequency_hz > 0.0) || !(p.subcarrier_spacing_hz > 0.0) || !(p.cp_duration_s > 0.0))
            throw std::invalid_argument("FrameConfig: frequencies and CP duration must be positive");
        if (p.num_subcarriers < 1 || p.num_symbols < 1)
            throw std::invalid_argument("FrameConfig: need at least one subcarrier and one symbol");
        if (p.pilot_spacing_freq < 1 || p.pilot_spacing_freq > p.num_subcarriers)
            throw std::invalid_argument("FrameConfig: pilot_spacing_freq must lie in [1, num_subcarriers]");
        if (p.pilot_spacing_time < 1 || p.pilot_spacing_time > p.num_symbols)
            throw std::invalid_argument("FrameConfig: pilot_spacing_time must lie in [1, num_symbols]");

        data_duration_ = 1.0 / p.subcarrier_spacing_hz;
        symbol_duration_ = p.cp_duration_s + data_duration_;
        sample_period_ = data_duration_ / p.num_subcarriers;
        // round half away from zero
        cp_samples_ = static_cast<int>(std::lround(p.cp_duration_s / sample_period_));
        if (cp_samples_ < 1)
            throw std::invalid_argument("FrameConfig: CP shorter than half a sample (N_cp = 0)");
        // The pilot lattice samples the channel every n_p subcarriers, so the
        // residual delay is only unambiguous over 1/(n_p df). A CP block must fit.
        if (!(p.cp_duration_s < alias_free_delay_span()))
            throw std::invalid_argument("FrameConfig: CP duration exceeds the alias-free delay span 1/(n_p df)");
    }

    /// Table I numerology with a chosen pilot pattern.
    static FrameConfig table1(int pilot_spacing_freq = 2, int pilot_spacing_time = 1) {
        Params p;
        p.pilot_spacing_freq = pilot_spacing_freq;
        p.pilot_spacing_time = pilot_spacing_time;
        return FrameConfig(p);
    }

    const Params& params() const { return params_; }
    double carrier_frequency() const { return params_.carrier_frequency_hz; }
    double subcarrier_spacing() const { return params_.subcarrier_spacing_hz; }
    double cp_duration() const { return params_.cp_duration_s; }
    int num_subcarriers() const { return params_.num_subcarriers; }
    int num_symbols() const { return params_.num_symbols; }
    int pilot_spacing_freq() const { return params_.pilot_spacing_freq; }
    int pilot_spacing_time() const { return params_.pilot_spacing_time; }

    double data_duration() const { return data_duration_; }
    double symbol_duration() const { return symbol_duration_; }
    double sample_period() const { return sample_period_; }
    double wavelength() const { return kSpeedOfLight / params_.carrier_frequency_hz; }
    int cp_samples() const { return cp_samples_; }
    int samples_per_symbol() const { return params_.num_subcarriers + cp_samples_; }
    std::size_t frame_samples() const {
        return static_cast<std::size_t>(params_.num_symbols) * static_cast<std::size_t>(samples_per_symbol());
    }

    /// Pilot lattice extent for a full frame.
    int pilot_rows() const { return (params_.num_symbols - 1) / params_.pilot_spacing_time + 1; }
    int pilot_cols() const { return (params_.num_subcarriers - 1) / params_.pilot_spacing_freq + 1; }

    double alias_free_delay_span() const { return 1.0 / (params_.pilot_spacing_freq * params_.subcarrier_spacing_hz); }
    double alias_free_doppler_span() const { return 1.0 / (params_.pilot_spacing_time * symbol_duration_); }

    std::string fingerprint() const {
        char buf[256];
        std::snprintf(buf, sizeof buf, "fc=%.9g,df=%.9g,tcp=%.9g,nsc=%d,msym=%d,np=%d,mp=%d",
                      params_.carrier_frequency_hz, params_.subcarrier_spacing_hz, params_.cp_duration_s,
                      params_.num_subcarriers, params_.num_symbols, params_.pilot_spacing_freq,
                      params_.pilot_spacing_time);
        return buf;
    }

private:
    Params params_;
    double data_duration_ = 0.0;
    double symbol_duration_ = 0.0;
    double sample_period_ = 0.0;
    int cp_samples_ = 0;
};

struct PilotPattern {
    std::vector<std::pair<int, int>> positions; // (m, n), symbol-major order
    std::size_t count = 0;
    double ratio = 0.0;
};

inline bool is_pilot(const FrameConfig& cfg, int m, int n) {
    return m % cfg.pilot_spacing_time() == 0 && n % cfg.pilot_spacing_freq() == 0;
}

inline PilotPattern build_pilot_pattern(const FrameConfig& cfg) {
    PilotPattern pattern;
    pattern.positions.reserve(static_cast<std::size_t>(cfg.pilot_rows()) * cfg.pilot_cols());
    for (int m = 0; m < cfg.num_symbols(); m += cfg.pilot_spacing_time())
        for (int n = 0; n < cfg.num_subcarriers(); n += cfg.pilot_spacing_freq())
            pattern.positions.emplace_back(m, n);
    pattern.count = pattern.positions.size();
    pattern.ratio = static_cast<double>(pattern.count) /
                    (static_cast<double>(cfg.num_subcarriers()) * cfg.num_symbols());
    return pattern;
}

/// Largest echo range that stays inside the CP: c Tcp / 2 for a co-located
/// receiver, c Tcp for a bistatic one (range measured as d_tx + d_rx).
inline double monostatic_isi_free_range(double cp_duration_s) { return 0.5 * kSpeedOfLight * cp_duration_s; }
inline double bistatic_isi_free_range(double cp_duration_s) { return kSpeedOfLight * cp_duration_s; }

/// Unit-modulus QPSK grid, row-major over (symbol m, subcarrier n).
class FrameSymbols {
public:
    FrameSymbols() = default;
    FrameSymbols(int num_symbols, int num_subcarriers)
        : rows_(num_symbols), cols_(num_subcarriers),
          values_(static_cast<std::size_t>(num_symbols) * num_subcarriers, cplx{1.0, 0.0}) {}

    int num_symbols() const { return rows_; }
    int num_subcarriers() const { return cols_; }
    cplx operator()(int m, int n) const { return values_[static_cast<std::size_t>(m) * cols_ + n]; }
    cplx& operator()(int m, int n) { return values_[static_cast<std::size_t>(m) * cols_ + n]; }
    const cplx* symbol(int m) const { return values_.data() + static_cast<std::size_t>(m) * cols_; }
    const std::vector<cplx>& values() const { return values_; }

    friend bool operator==(const FrameSymbols&, const FrameSymbols&) = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<cplx> values_;
};

inline cplx qpsk_symbol(unsigned bits) {
    constexpr double a = std::numbers::sqrt2 / 2.0;
    return {(bits & 1U) ? -a : a, (bits & 2U) ? -a : a};
}

/// Pilots are drawn from pilot_seed in lattice order, data from data_seed in
/// grid order, so the two streams never interact.
inline FrameSymbols generate_frame(const FrameConfig& cfg, std::uint64_t pilot_seed, std::uint64_t data_seed) {
    FrameSymbols grid(cfg.num_symbols(), cfg.num_subcarriers());
    std::mt19937_64 pilot_rng(pilot_seed);
    std::mt19937_64 data_rng(data_seed);
    for (int m = 0; m < cfg.num_symbols(); ++m) {
        for (int n = 0; n < cfg.num_subcarriers(); ++n) {
            auto& rng = is_pilot(cfg, m, n) ? pilot_rng : data_rng;
            grid(m, n) = qpsk_symbol(static_cast<unsigned>(rng() >> 62));
        }
    }
    return grid;
}

/// Copy of the frame with every data symbol set to zero (pilot-only reference).
inline FrameSymbols pilots_only(const FrameConfig& cfg, const FrameSymbols& frame) {
    FrameSymbols out = frame;
    for (int m = 0; m < cfg.num_symbols(); ++m)
        for (int n = 0; n < cfg.num_subcarriers(); ++n)
            if (!is_pilot(cfg, m, n)) out(m, n) = cplx{0.0, 0.0};
    return out;
}

/// Sum_n coeffs[n] z^n by Horner's rule.
inline cplx horner(const cplx* coeffs, int count, cplx z) {
    cplx acc{0.0, 0.0};
    for (int n = count - 1; n >= 0; --n) acc = acc * z + coeffs[n];
    return acc;
}

/// Symbol index containing t. Instants within 1e-9 of a symbol boundary are
/// snapped onto the later symbol so sample-grid instants such as 84*Ts land on
/// the symbol start despite rounding in Ts.
inline long long symbol_index_at(const FrameConfig& cfg, double t) {
    return static_cast<long long>(std::floor(t / cfg.symbol_duration() + 1e-9));
}

/// Exact evaluation of the transmit signal at time t; zero outside the frame.
inline cplx eval_baseband(const FrameConfig& cfg, const FrameSymbols& frame, double t) {
    const long long m = symbol_index_at(cfg, t);
    if (m < 0 || m >= cfg.num_symbols()) return {0.0, 0.0};
    const cplx z = std::polar(1.0, kTwoPi * cfg.subcarrier_spacing() * t);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.num_subcarriers()));
    return scale * horner(frame.symbol(static_cast<int>(m)), cfg.num_subcarriers(), z);
}

} // namespace bisense
