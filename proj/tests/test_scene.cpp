// SPDX-License-Identifier: Apache-2.0
#include "bisense/scene.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace bisense;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("symmetric bistatic geometry", "[scene]") {
    Scene s; // tx [-1000, 0], rx [1000, 0], target [0, -1000]
    const Propagation p = derive_propagation(s, FrameConfig::table1());
    CHECK_THAT(p.d_tx, WithinAbs(1414.2136, 1e-4));
    CHECK_THAT(p.d_rx, WithinAbs(1414.2136, 1e-4));
    CHECK_THAT(p.bistatic_range, WithinAbs(2828.4271, 1e-4));
    CHECK_THAT(rad_to_deg(p.bistatic_angle), WithinAbs(90.0, 1e-9));
    // the angle at the target, computed from the position vectors
    CHECK_THAT(p.bistatic_angle, WithinAbs(vertex_angle(s.target, s.tx, s.rx), 1e-12));
    CHECK_THAT(p.tau_nlos, WithinRel(p.bistatic_range / 3e8, 1e-15));
    CHECK_THAT(p.tau_los, WithinRel(2000.0 / 3e8, 1e-15));
    CHECK_THAT(rad_to_deg(arrival_angle(s)), WithinAbs(45.0, 1e-9));
}

TEST_CASE("monostatic Doppler limit", "[scene]") {
    // co-located tx and rx are not a valid scene, so check the formula at
    // beta -> 0 with a receiver next to the transmitter far from the target
    Scene s;
    s.tx = {0.0, 0.0};
    s.rx = {1e-3, 0.0};
    s.target = {0.0, -1e6};
    s.speed = 30.0;
    const Propagation p = derive_propagation(s, FrameConfig::table1());
    CHECK_THAT(p.doppler_hz, WithinRel(6000.0, 1e-9));
    CHECK_THAT(p.bistatic_velocity, WithinRel(30.0, 1e-15));
}

TEST_CASE("LOS gain magnitude", "[scene]") {
    const Propagation p = derive_propagation(Scene{}, FrameConfig::table1());
    CHECK_THAT(std::abs(p.alpha_los), WithinRel(3.9789e-7, 1e-4));
    CHECK_THAT(std::abs(p.alpha_los), WithinRel(0.01 / (4.0 * std::numbers::pi * 2000.0), 1e-12));
    CHECK_THAT(std::abs(free_space_los_gain(p.tau_los, 30e9)), WithinRel(std::abs(p.alpha_los), 1e-12));
}

TEST_CASE("NLOS gain follows the radar equation", "[scene]") {
    Scene s;
    s.rcs = 4.0;
    const Propagation p = derive_propagation(s, FrameConfig::table1());
    const double expected = 0.01 * 2.0 / (std::pow(4.0 * std::numbers::pi, 1.5) * p.d_tx * p.d_rx);
    CHECK_THAT(std::abs(p.alpha_nlos), WithinRel(expected, 1e-12));
    // carrier phase exp(-j 2 pi fc tau)
    const cplx unit = p.alpha_nlos / std::abs(p.alpha_nlos);
    const cplx ref = std::polar(1.0, -2.0 * std::numbers::pi * std::fmod(30e9 * p.tau_nlos, 1.0));
    CHECK(std::abs(unit - ref) < 1e-6);
}

TEST_CASE("scene validation", "[scene]") {
    Scene s;
    s.target = s.tx;
    CHECK_THROWS_AS(derive_propagation(s, FrameConfig::table1()), std::invalid_argument);
    s = Scene{};
    s.rcs = 0.0;
    CHECK_THROWS_AS(derive_propagation(s, FrameConfig::table1()), std::invalid_argument);
}

TEST_CASE("target on the baseline segment", "[scene]") {
    Scene s;
    s.target = {250.0, 0.0};
    s.speed = 10.0;
    const Propagation p = derive_propagation(s, FrameConfig::table1());
    CHECK(p.bistatic_angle == std::numbers::pi);
    CHECK_FALSE(p.velocity_observable);
    CHECK_THAT(p.doppler_hz, WithinAbs(0.0, 1e-6));
}

TEST_CASE("Doppler is even in the velocity angle", "[scene]") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        Scene s;
        s.target = {1000.0 * u(rng), -500.0 + 450.0 * u(rng)};
        s.speed = 15.0 * (1.0 + u(rng));
        s.velocity_angle = 1.5 * u(rng);
        const Propagation a = derive_propagation(s, FrameConfig::table1());
        s.velocity_angle = -s.velocity_angle;
        const Propagation b = derive_propagation(s, FrameConfig::table1());
        REQUIRE(a.doppler_hz == b.doppler_hz);
        REQUIRE(a.bistatic_velocity == b.bistatic_velocity);
    }
}

TEST_CASE("bistatic range is constant on an ellipse", "[scene]") {
    // foci at tx and rx, semi-major axis a = R / 2
    const double range = 3000.0;
    const double a = range / 2.0;
    const double c = 1000.0;
    const double b = std::sqrt(a * a - c * c);
    Scene s;
    for (int i = 0; i < 10; ++i) {
        const double t = -0.1 - 2.9 * i / 9.0;
        s.target = {a * std::cos(t), b * std::sin(t)};
        const Propagation p = derive_propagation(s, FrameConfig::table1());
        REQUIRE_THAT(p.bistatic_range, WithinRel(range, 1e-12));
        REQUIRE_THAT(p.tau_nlos, WithinRel(range / 3e8, 1e-12));
    }
}

TEST_CASE("propagation invariants over random geometries", "[scene]") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-2000.0, 2000.0);
    for (int i = 0; i < 200; ++i) {
        Scene s;
        s.tx = {u(rng), u(rng)};
        s.rx = {u(rng), u(rng)};
        s.target = {u(rng), u(rng)};
        const Propagation p = derive_propagation(s, FrameConfig::table1());
        REQUIRE(p.bistatic_range >= p.baseline * (1.0 - 1e-15));
        REQUIRE(p.tau_nlos >= p.tau_los * (1.0 - 1e-15));
        REQUIRE(p.bistatic_angle >= 0.0);
        REQUIRE(p.bistatic_angle <= std::numbers::pi);
        REQUIRE_THAT(p.bistatic_angle, WithinAbs(vertex_angle(s.target, s.tx, s.rx), 1e-6));
    }
}

TEST_CASE("NLOS gain decreases with either leg", "[scene]") {
    const FrameConfig cfg = FrameConfig::table1();
    Scene s;
    s.target = {0.0, -800.0};
    const double base = std::abs(derive_propagation(s, cfg).alpha_nlos);
    // push one site outward along its own ray so only that leg grows
    for (double step : {1.0, 10.0, 100.0}) {
        Scene far_tx = s;
        far_tx.tx = s.target + (1.0 + step / distance(s.tx, s.target)) * (s.tx - s.target);
        const Propagation a = derive_propagation(far_tx, cfg);
        REQUIRE_THAT(a.d_rx, WithinRel(distance(s.target, s.rx), 1e-12));
        REQUIRE(std::abs(a.alpha_nlos) < base);

        Scene far_rx = s;
        far_rx.rx = s.target + (1.0 + step / distance(s.rx, s.target)) * (s.rx - s.target);
        const Propagation b = derive_propagation(far_rx, cfg);
        REQUIRE_THAT(b.d_tx, WithinRel(distance(s.target, s.tx), 1e-12));
        REQUIRE(std::abs(b.alpha_nlos) < base);
    }
}

TEST_CASE("beamforming gain", "[scene]") {
    SECTION("matched beams") {
        for (int n : {1, 4, 16, 64}) {
            const cplx g = beamforming_gain(0.3, 0.3, -0.7, -0.7, n, n);
            REQUIRE_THAT(std::abs(g), WithinAbs(1.0, 1e-12));
        }
    }
    SECTION("single elements ignore pointing") {
        const cplx g = beamforming_gain(0.3, 1.1, -0.7, 0.2, 1, 1);
        CHECK(g == cplx{1.0, 0.0});
    }
    SECTION("first receive null") {
        // Dirichlet kernel of N elements vanishes at pi (sin t - sin t_hat) = 2 pi / N
        const int n = 16;
        const double theta_hat = std::asin(2.0 / n);
        const cplx g = beamforming_gain(0.0, 0.0, 0.0, theta_hat, 1, n);
        CHECK(std::abs(g) < 1e-12);
    }
    SECTION("scene overload uses the pointing errors") {
        Scene s;
        s.rx_elements = 8;
        CHECK_THAT(std::abs(beamforming_gain(s)), WithinAbs(1.0, 1e-12));
        s.aoa_pointing_error = deg_to_rad(5.0);
        CHECK(std::abs(beamforming_gain(s)) < 1.0);
    }
}
