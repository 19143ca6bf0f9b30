// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sensing receiver front end: windowed CP removal + DFT at an arbitrary sample
// offset, LS estimates on the pilot lattice, the zero-padded delay-Doppler
// periodogram, and parabolic peak refinement.
//
// Delay reference. For a window whose first DFT sample is `offset`, the kernel
// exp(-j 2 pi (k - Ncp) n / N) advances the phase by Ncp samples, so a path of
// delay tau shows up on subcarrier n as exp(-j 2 pi n df (tau - (offset + Ncp) Ts)).
// The pilot lattice only resolves that delay modulo 1/(n_p df); it is unwrapped
// against the ISI-free span (offset Ts - Tcp, offset Ts] of the window.

#include "bisense/channel.hpp"
#include "bisense/common.hpp"
#include "bisense/fft.hpp"
#include "bisense/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

namespace bisense {

class InsufficientSamples : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Number of whole symbols whose N-sample DFT window fits after `offset`.
inline int usable_symbols(const FrameConfig& cfg, std::size_t stream_length, std::size_t offset) {
    const auto n = static_cast<std::size_t>(cfg.num_subcarriers());
    if (offset + n > stream_length) return 0;
    const std::size_t m = (stream_length - offset - n) / static_cast<std::size_t>(cfg.samples_per_symbol()) + 1;
    return static_cast<int>(std::min<std::size_t>(m, static_cast<std::size_t>(cfg.num_symbols())));
}

/// Demodulated values R[m, n] on a (row_stride x col_stride) sub-lattice.
struct WindowedDemod {
    std::size_t offset = 0;
    int symbols = 0; // usable symbols M
    int row_stride = 1;
    int col_stride = 1;
    int rows = 0;
    int cols = 0;
    std::vector<cplx> values; // rows x cols, row-major

    /// R at symbol m, subcarrier n; both must lie on the stored sub-lattice.
    cplx at(int m, int n) const {
        return values[static_cast<std::size_t>(m / row_stride) * cols + static_cast<std::size_t>(n / col_stride)];
    }
};

/// CP removal and N-point DFT at an arbitrary window offset:
///   R[m, n] = (1/sqrt(N)) sum_k r[m Nsam + offset + k] exp(-j 2 pi (k - Ncp) n / N),
/// evaluated as a batched FFT followed by the exp(+j 2 pi Ncp n / N) rotation.
/// Only the (row_stride x col_stride) sub-lattice is kept. Holds FFT buffers,
/// so one instance per worker.
class Demodulator {
public:
    Demodulator(const FrameConfig& cfg, int row_stride = 1, int col_stride = 1)
        : cfg_(cfg), row_stride_(row_stride), col_stride_(col_stride),
          max_rows_((cfg.num_symbols() - 1) / std::max(row_stride, 1) + 1),
          in_(static_cast<std::size_t>(max_rows_) * cfg.num_subcarriers()),
          out_(static_cast<std::size_t>(max_rows_) * cfg.num_subcarriers()) {
        if (row_stride < 1 || col_stride < 1) throw std::invalid_argument("Demodulator: strides must be >= 1");
        const int n_sc = cfg.num_subcarriers();
        cols_ = (n_sc - 1) / col_stride + 1;
        plan_ = fft::Plan<double>(n_sc, max_rows_, in_, 1, n_sc, out_, 1, n_sc, FFTW_FORWARD);
        rotation_.resize(static_cast<std::size_t>(cols_));
        const double scale = 1.0 / std::sqrt(static_cast<double>(n_sc));
        for (int c = 0; c < cols_; ++c) {
            const long long idx = (static_cast<long long>(cfg.cp_samples()) * c * col_stride) % n_sc;
            rotation_[static_cast<std::size_t>(c)] = std::polar(scale, kTwoPi * static_cast<double>(idx) / n_sc);
        }
    }

    const FrameConfig& config() const { return cfg_; }

    WindowedDemod operator()(const std::vector<cplx>& samples, std::size_t offset) {
        const int symbols = usable_symbols(cfg_, samples.size(), offset);
        if (symbols < 1) throw InsufficientSamples("demod_window: no complete symbol fits after the window offset");
        WindowedDemod out;
        out.offset = offset;
        out.symbols = symbols;
        out.row_stride = row_stride_;
        out.col_stride = col_stride_;
        out.rows = (symbols - 1) / row_stride_ + 1;
        out.cols = cols_;
        const auto n_sc = static_cast<std::size_t>(cfg_.num_subcarriers());
        const auto n_sam = static_cast<std::size_t>(cfg_.samples_per_symbol());
        for (int r = 0; r < out.rows; ++r) {
            const cplx* src = samples.data() + static_cast<std::size_t>(r) * row_stride_ * n_sam + offset;
            std::copy(src, src + n_sc, in_.begin() + static_cast<std::size_t>(r) * n_sc);
        }
        plan_.execute();
        out.values.resize(static_cast<std::size_t>(out.rows) * cols_);
        for (int r = 0; r < out.rows; ++r) {
            const cplx* spec = out_.begin() + static_cast<std::size_t>(r) * n_sc;
            cplx* row = out.values.data() + static_cast<std::size_t>(r) * cols_;
            for (int c = 0; c < cols_; ++c)
                row[c] = spec[static_cast<std::size_t>(c) * col_stride_] * rotation_[static_cast<std::size_t>(c)];
        }
        return out;
    }

private:
    FrameConfig cfg_;
    int row_stride_;
    int col_stride_;
    int max_rows_;
    int cols_ = 0;
    fft::Buffer<double> in_;
    fft::Buffer<double> out_;
    fft::Plan<double> plan_;
    std::vector<cplx> rotation_;
};

inline WindowedDemod demod_window(const SampleStream& stream, const FrameConfig& cfg, std::size_t offset) {
    Demodulator demod(cfg);
    return demod(stream.samples, offset);
}

/// LS channel estimates on the pilot lattice: h[mu, nu] = H[mu m_p, nu n_p].
struct LsGrid {
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0; // demod window offset the estimates refer to
    std::vector<cplx> values;

    cplx operator()(int mu, int nu) const { return values[static_cast<std::size_t>(mu) * cols + nu]; }
    cplx& operator()(int mu, int nu) { return values[static_cast<std::size_t>(mu) * cols + nu]; }
    std::size_t size() const { return values.size(); }
};

/// exp(-j 2 pi n df m Tsym): removes the symbol-start phase that the globally
/// continuous subcarrier phase of the transmit signal puts on symbol m.
inline cplx symbol_phase_compensation(const FrameConfig& cfg, int m, int n) {
    // n df m Tsym = n m (1 + df Tcp); the integer part drops out
    const double cycles = std::fmod(static_cast<double>(n) * m * cfg.subcarrier_spacing() * cfg.cp_duration(), 1.0);
    return std::polar(1.0, -kTwoPi * cycles);
}

inline LsGrid ls_estimates(const WindowedDemod& demod, const FrameSymbols& frame, const FrameConfig& cfg) {
    const int mp = cfg.pilot_spacing_time();
    const int np = cfg.pilot_spacing_freq();
    if (mp % demod.row_stride != 0 || np % demod.col_stride != 0)
        throw std::invalid_argument("ls_estimates: demodulated lattice does not contain the pilot lattice");
    LsGrid grid;
    grid.rows = (demod.symbols - 1) / mp + 1;
    grid.cols = cfg.pilot_cols();
    grid.offset = demod.offset;
    grid.values.resize(static_cast<std::size_t>(grid.rows) * grid.cols);
    for (int mu = 0; mu < grid.rows; ++mu) {
        const int m = mu * mp;
        for (int nu = 0; nu < grid.cols; ++nu) {
            const int n = nu * np;
            grid(mu, nu) = demod.at(m, n) * std::conj(frame(m, n)) * symbol_phase_compensation(cfg, m, n);
        }
    }
    return grid;
}

/// Delay-Doppler periodogram
///   P(p, q) = | sum_nu ( sum_mu h[mu, nu] e^{-j 2 pi mu p / M} ) e^{+j 2 pi nu q / N} |^2
/// with p in [-M/2, M/2) on the Doppler axis and q in [0, N) on the delay axis.
/// Power is stored with p in FFT order (p mod M).
struct DelayDopplerMap {
    int doppler_size = 0; // M_per
    int delay_size = 0;   // N_per
    std::vector<double> power;
    double peak = 0.0;    // eta
    int peak_doppler = 0; // p_hat, signed
    int peak_delay = 0;   // q_hat
    std::size_t offset = 0;
    std::size_t lattice_points = 0;

    static int wrap(int i, int n) { return ((i % n) + n) % n; }
    double at(int p, int q) const {
        return power[static_cast<std::size_t>(wrap(p, doppler_size)) * delay_size + wrap(q, delay_size)];
    }
};

/// Peak of a periodogram together with its four axis neighbours, all that the
/// estimators need.
struct PeakSummary {
    double value = 0.0;
    int doppler = 0; // signed
    int delay = 0;
    double doppler_prev = 0.0, doppler_next = 0.0;
    double delay_prev = 0.0, delay_next = 0.0;
    std::size_t offset = 0;
};

struct InterpolatedPeak {
    double doppler_bin = 0.0; // p~
    double delay_bin = 0.0;   // q~
    bool doppler_degenerate = false;
    bool delay_degenerate = false;
};

/// Vertex of the parabola through (-1, left), (0, center), (1, right).
/// Returns 0 and sets `degenerate` when the triple has no curvature.
inline double parabolic_offset(double left, double center, double right, bool* degenerate = nullptr) {
    const double denom = 2.0 * (2.0 * center - right - left);
    if (!(denom > 0.0)) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    if (degenerate) *degenerate = false;
    return (right - left) / denom;
}

inline InterpolatedPeak interpolate_peak(const PeakSummary& s) {
    InterpolatedPeak out;
    out.doppler_bin = s.doppler + parabolic_offset(s.doppler_prev, s.value, s.doppler_next, &out.doppler_degenerate);
    out.delay_bin = s.delay + parabolic_offset(s.delay_prev, s.value, s.delay_next, &out.delay_degenerate);
    return out;
}

inline PeakSummary summarize(const DelayDopplerMap& map) {
    PeakSummary s;
    s.value = map.peak;
    s.doppler = map.peak_doppler;
    s.delay = map.peak_delay;
    s.doppler_prev = map.at(s.doppler - 1, s.delay);
    s.doppler_next = map.at(s.doppler + 1, s.delay);
    s.delay_prev = map.at(s.doppler, s.delay - 1);
    s.delay_next = map.at(s.doppler, s.delay + 1);
    s.offset = map.offset;
    return s;
}

inline InterpolatedPeak interpolate_peak(const DelayDopplerMap& map) { return interpolate_peak(summarize(map)); }

/// Zero-padded 2-D transform of an LS grid. Real selects the FFT precision;
/// single precision is accurate enough for detection metrics and roughly halves
/// the cost of a 1024 x 1024 map. Not thread-safe: use one engine per worker.
template <typename Real>
class PeriodogramEngine {
public:
    PeriodogramEngine(int doppler_size, int delay_size)
        : m_(doppler_size), n_(delay_size),
          grid_(static_cast<std::size_t>(doppler_size) * delay_size),
          out_(static_cast<std::size_t>(doppler_size) * delay_size) {
        if (!fft::is_power_of_two(doppler_size) || !fft::is_power_of_two(delay_size))
            throw std::invalid_argument("PeriodogramEngine: FFT sizes must be powers of two");
        // delay-axis transforms: one per Doppler row, e^{+j} kernel
        delay_plan_ = fft::Plan<Real>(n_, m_, grid_, 1, n_, out_, 1, n_, FFTW_BACKWARD, FFTW_MEASURE);
        std::fill(grid_.begin(), grid_.end(), std::complex<Real>{});
    }

    int doppler_size() const { return m_; }
    int delay_size() const { return n_; }

    /// Peak value and location without materializing the power map.
    PeakSummary peak(const LsGrid& ls) {
        transform(ls);
        PeakSummary s;
        s.offset = ls.offset;
        // per-row maxima first (vectorizable), then the winning row in signed
        // Doppler order so that ties resolve to the lowest (p, q)
        for (int r = 0; r < m_; ++r) row_max_[static_cast<std::size_t>(r)] = row_peak(r);
        int best_row = m_ / 2;
        for (int k = 1; k < m_; ++k) {
            const int r = (m_ / 2 + k) % m_;
            if (row_max_[static_cast<std::size_t>(r)] > row_max_[static_cast<std::size_t>(best_row)]) best_row = r;
        }
        const auto* row_data = out_.begin() + static_cast<std::size_t>(best_row) * n_;
        int best_col = 0;
        Real best = power(row_data[0]);
        for (int q = 1; q < n_; ++q) {
            const Real v = power(row_data[q]);
            if (v > best) {
                best = v;
                best_col = q;
            }
        }
        const std::size_t best_idx = static_cast<std::size_t>(best_row) * n_ + best_col;
        const int row = static_cast<int>(best_idx / n_);
        s.delay = static_cast<int>(best_idx % n_);
        s.doppler = row >= m_ / 2 ? row - m_ : row;
        s.value = static_cast<double>(best);
        s.doppler_prev = power_at(s.doppler - 1, s.delay);
        s.doppler_next = power_at(s.doppler + 1, s.delay);
        s.delay_prev = power_at(s.doppler, s.delay - 1);
        s.delay_next = power_at(s.doppler, s.delay + 1);
        return s;
    }

    DelayDopplerMap map(const LsGrid& ls) {
        const PeakSummary s = peak(ls);
        DelayDopplerMap out;
        out.doppler_size = m_;
        out.delay_size = n_;
        out.offset = ls.offset;
        out.lattice_points = ls.size();
        out.power.resize(out_.size());
        for (std::size_t i = 0; i < out_.size(); ++i) out.power[i] = static_cast<double>(power(out_[i]));
        out.peak = s.value;
        out.peak_doppler = s.doppler;
        out.peak_delay = s.delay;
        return out;
    }

private:
    // |z|^2 without the hypot that std::norm falls back to
    static Real power(const std::complex<Real>& z) { return z.real() * z.real() + z.imag() * z.imag(); }

    Real row_peak(int r) const {
        constexpr int kLanes = 16;
        const Real* data = reinterpret_cast<const Real*>(out_.begin() + static_cast<std::size_t>(r) * n_);
        Real lane[kLanes] = {};
        for (int i = 0; i + kLanes <= n_; i += kLanes) {
            for (int j = 0; j < kLanes; ++j) {
                const Real re = data[2 * (i + j)];
                const Real im = data[2 * (i + j) + 1];
                const Real v = re * re + im * im;
                lane[j] = v > lane[j] ? v : lane[j];
            }
        }
        Real best = 0;
        for (int j = 0; j < kLanes; ++j) best = lane[j] > best ? lane[j] : best;
        for (int i = n_ - n_ % kLanes; i < n_; ++i) {
            const Real v = power(out_[static_cast<std::size_t>(r) * n_ + i]);
            best = v > best ? v : best;
        }
        return best;
    }

    double power_at(int p, int q) const {
        const int row = DelayDopplerMap::wrap(p, m_);
        const int col = DelayDopplerMap::wrap(q, n_);
        return static_cast<double>(power(out_[static_cast<std::size_t>(row) * n_ + col]));
    }

    void transform(const LsGrid& ls) {
        if (ls.rows > m_ || ls.cols > n_)
            throw std::invalid_argument("periodogram: FFT sizes must cover the LS grid dimensions");
        auto it = doppler_plans_.find(ls.cols);
        if (it == doppler_plans_.end()) {
            // column buffer [nu][mu]; forward transform along mu written
            // straight into the first `cols` entries of every grid row
            columns_.emplace(ls.cols, fft::Buffer<Real>(static_cast<std::size_t>(m_) * ls.cols));
            auto& col = columns_.at(ls.cols);
            it = doppler_plans_.emplace(ls.cols, fft::Plan<Real>(m_, ls.cols, col, 1, m_, grid_, n_, 1, FFTW_FORWARD))
                     .first;
            // columns >= cols stay zero for the lifetime of the engine
            std::fill(grid_.begin(), grid_.end(), std::complex<Real>{});
            prepared_cols_ = ls.cols;
        }
        if (prepared_cols_ != ls.cols) {
            std::fill(grid_.begin(), grid_.end(), std::complex<Real>{});
            prepared_cols_ = ls.cols;
        }
        auto& col = columns_.at(ls.cols);
        std::fill(col.begin(), col.end(), std::complex<Real>{});
        for (int mu = 0; mu < ls.rows; ++mu)
            for (int nu = 0; nu < ls.cols; ++nu) {
                const cplx v = ls(mu, nu);
                col[static_cast<std::size_t>(nu) * m_ + mu] =
                    std::complex<Real>(static_cast<Real>(v.real()), static_cast<Real>(v.imag()));
            }
        it->second.execute();
        delay_plan_.execute();
    }

    int m_;
    int n_;
    fft::Buffer<Real> grid_; // [p][nu], zero-padded along nu
    fft::Buffer<Real> out_;  // [p][q]
    fft::Plan<Real> delay_plan_;
    std::map<int, fft::Buffer<Real>> columns_;
    std::map<int, fft::Plan<Real>> doppler_plans_;
    int prepared_cols_ = -1;
    std::vector<Real> row_max_ = std::vector<Real>(static_cast<std::size_t>(m_));
};

inline DelayDopplerMap periodogram(const LsGrid& ls, int doppler_size, int delay_size) {
    PeriodogramEngine<double> engine(doppler_size, delay_size);
    return engine.map(ls);
}

/// Residual delay encoded by a (fractional) delay bin.
inline double residual_delay(double delay_bin, const FrameConfig& cfg, int delay_size) {
    return delay_bin / (cfg.pilot_spacing_freq() * cfg.subcarrier_spacing() * delay_size);
}

inline double doppler_from_bin(double doppler_bin, const FrameConfig& cfg, int doppler_size) {
    return doppler_bin / (cfg.pilot_spacing_time() * cfg.symbol_duration() * doppler_size);
}

/// Instant that the LS delay phase of a window at `offset` is referenced to.
inline double delay_reference(const FrameConfig& cfg, std::size_t offset) {
    return static_cast<double>(offset + static_cast<std::size_t>(cfg.cp_samples())) * cfg.sample_period();
}

/// Absolute delay for a delay bin measured in the window at `offset`, unwrapped
/// onto the alias interval centred on the window's ISI-free span.
inline double absolute_delay(double delay_bin, std::size_t offset, const FrameConfig& cfg, int delay_size) {
    const double span = cfg.alias_free_delay_span();
    double tau = delay_reference(cfg, offset) + residual_delay(delay_bin, cfg, delay_size);
    const double centre = static_cast<double>(offset) * cfg.sample_period() - 0.5 * cfg.cp_duration();
    tau += span * std::round((centre - tau) / span);
    return tau;
}

/// Window offset whose ISI-free span starts at `anchor`, i.e. the window that
/// assumes the delay lies in [anchor Ts, anchor Ts + Tcp).
inline std::size_t window_offset_for_anchor(const FrameConfig& cfg, std::size_t anchor) {
    return anchor + static_cast<std::size_t>(cfg.cp_samples());
}

} // namespace bisense
