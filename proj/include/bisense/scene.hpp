// SPDX-License-Identifier: Apache-2.0
#pragma once

// Planar bistatic geometry and the propagation quantities it implies.

#include "bisense/common.hpp"
#include "bisense/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bisense {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

enum class Scenario { LosBlocked, LosPresent };

inline const char* to_string(Scenario s) { return s == Scenario::LosBlocked ? "los_blocked" : "los_present"; }

struct Scene {
    Vec2 tx{-1000.0, 0.0};
    Vec2 rx{1000.0, 0.0};
    Vec2 target{0.0, -1000.0};
    double speed = 0.0;          // |v|, m/s
    double velocity_angle = 0.0; // phi, rad from the bistatic bisector
    double rcs = 1.0;            // m^2
    Scenario scenario = Scenario::LosBlocked;
    double aod_pointing_error = 0.0; // theta_T_hat - theta_T, rad
    double aoa_pointing_error = 0.0; // theta_R_hat - theta_R, rad
    int tx_elements = 1;
    int rx_elements = 1;

    void validate() const {
        if (!(distance(tx, target) > 0.0) || !(distance(rx, target) > 0.0) || !(distance(tx, rx) > 0.0))
            throw std::invalid_argument("Scene: transmitter, receiver and target must be distinct points");
        if (!(rcs > 0.0)) throw std::invalid_argument("Scene: RCS must be positive");
        if (tx_elements < 1 || rx_elements < 1) throw std::invalid_argument("Scene: element counts must be >= 1");
    }
};

/// Angle at vertex between the rays towards a and b, in [0, pi].
inline double vertex_angle(Vec2 vertex, Vec2 a, Vec2 b) {
    const Vec2 u = a - vertex;
    const Vec2 w = b - vertex;
    const double c = dot(u, w) / (norm(u) * norm(w));
    return std::acos(std::clamp(c, -1.0, 1.0));
}

/// Angle of arrival at the receiver, measured from the baseline direction
/// (towards the transmitter) to the target direction.
inline double arrival_angle(const Scene& s) { return vertex_angle(s.rx, s.tx, s.target); }

/// Angle of departure at the transmitter, measured from the baseline direction
/// (towards the receiver) to the target direction.
inline double departure_angle(const Scene& s) { return vertex_angle(s.tx, s.rx, s.target); }

/// Bistatic angle from the three side lengths (law of cosines).
inline double bistatic_angle(double d_tx, double d_rx, double baseline) {
    const double c = (d_tx * d_tx + d_rx * d_rx - baseline * baseline) / (2.0 * d_tx * d_rx);
    return std::acos(std::clamp(c, -1.0, 1.0));
}

struct Propagation {
    double d_tx = 0.0;
    double d_rx = 0.0;
    double baseline = 0.0;
    double bistatic_range = 0.0;
    double tau_nlos = 0.0;
    double tau_los = 0.0;
    double bistatic_angle = 0.0;
    double doppler_hz = 0.0;
    double bistatic_velocity = 0.0;
    cplx alpha_nlos{};
    cplx alpha_los{};
    double wavelength = 0.0;
    bool velocity_observable = true; // false when cos(beta/2) vanishes (target on the baseline)
};

inline cplx free_space_los_gain(double tau, double carrier_hz) {
    const double lambda = kSpeedOfLight / carrier_hz;
    return std::polar(lambda / (4.0 * kPi * tau * kSpeedOfLight), -kTwoPi * carrier_hz * tau);
}

inline Propagation derive_propagation(const Scene& scene, const FrameConfig& cfg) {
    scene.validate();
    Propagation p;
    p.d_tx = distance(scene.tx, scene.target);
    p.d_rx = distance(scene.target, scene.rx);
    p.baseline = distance(scene.tx, scene.rx);
    p.bistatic_range = p.d_tx + p.d_rx;
    p.tau_nlos = p.bistatic_range / kSpeedOfLight;
    p.tau_los = p.baseline / kSpeedOfLight;
    p.bistatic_angle = bistatic_angle(p.d_tx, p.d_rx, p.baseline);
    p.wavelength = cfg.wavelength();
    p.bistatic_velocity = scene.speed * std::cos(scene.velocity_angle);
    const double half_cos = std::cos(p.bistatic_angle / 2.0);
    p.velocity_observable = half_cos >= 1e-6;
    p.doppler_hz = 2.0 * scene.speed / p.wavelength * std::cos(scene.velocity_angle) * half_cos;

    const double fc = cfg.carrier_frequency();
    const double nlos_mag = p.wavelength * std::sqrt(scene.rcs) / (std::pow(4.0 * kPi, 1.5) * p.d_tx * p.d_rx);
    p.alpha_nlos = std::polar(nlos_mag, -kTwoPi * fc * p.tau_nlos);
    p.alpha_los = std::polar(p.wavelength / (4.0 * kPi * p.baseline), -kTwoPi * fc * p.tau_los);
    return p;
}

/// Half-wavelength ULA response with 1/sqrt(N) normalization:
/// a_H(theta_hat) a(theta) = 1/N sum_l exp(j pi l (sin theta - sin theta_hat)).
inline cplx array_match(double theta, double theta_hat, int elements) {
    cplx acc{0.0, 0.0};
    const double psi = kPi * (std::sin(theta) - std::sin(theta_hat));
    for (int l = 0; l < elements; ++l) acc += std::polar(1.0, psi * l);
    return acc / static_cast<double>(elements);
}

/// Combined transmit/receive beamforming gain f_R^H W f_T for beams steered to
/// theta_hat while the path leaves at theta_T and arrives at theta_R.
inline cplx beamforming_gain(double theta_t, double theta_t_hat, double theta_r, double theta_r_hat,
                             int tx_elements, int rx_elements) {
    if (tx_elements < 1 || rx_elements < 1) throw std::invalid_argument("beamforming_gain: element counts must be >= 1");
    return array_match(theta_r, theta_r_hat, rx_elements) * std::conj(array_match(theta_t, theta_t_hat, tx_elements));
}

inline cplx beamforming_gain(const Scene& s) {
    const double tt = departure_angle(s);
    const double tr = arrival_angle(s);
    return beamforming_gain(tt, tt + s.aod_pointing_error, tr, tr + s.aoa_pointing_error, s.tx_elements,
                            s.rx_elements);
}

} // namespace bisense
