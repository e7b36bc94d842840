#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "catch_amalgamated.hpp"
#include "ftl/atomization.hpp"
#include "ftl/model.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ftl::ModelSpec model_for(const ftl::InitialDatum& datum) {
    return ftl::make_model(ftl::preset_phi_pm(1.0), ftl::preset_velocity_saturating(1.0),
                           ftl::preset_kernel_gaussian(1.0, datum.domain_length),
                           datum.domain_length, datum.mass());
}

// Points inside (a, b) where |datum - r| may fail to be smooth.
using KinkFinder = std::function<std::vector<double>(double r, double a, double b)>;

KinkFinder jumps_at(std::vector<double> jumps) {
    return [jumps = std::move(jumps)](double, double a, double b) {
        std::vector<double> out;
        for (const double j : jumps) {
            if (j > a && j < b) out.push_back(j);
        }
        return out;
    };
}

// 0.5 (cos(4 pi x) + 1) = r at x = +-acos(2r - 1) / (4 pi) + k / 2
std::vector<double> sine_crossings(double r, double a, double b) {
    std::vector<double> out;
    if (r <= 0.0 || r >= 1.0) return out;
    const double base = std::acos(2.0 * r - 1.0) / (4.0 * std::numbers::pi);
    for (int k = static_cast<int>(std::floor(2.0 * a)) - 1; k <= static_cast<int>(std::ceil(2.0 * b)) + 1; ++k) {
        for (const double c : {base + 0.5 * k, -base + 0.5 * k}) {
            if (c > a && c < b) out.push_back(c);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// L1 distance between the datum and the cell densities sigma/(N gap_i):
// Gauss-Kronrod on each cell, split where the integrand has a kink or jump.
double l1_to_datum(const ftl::InitialDatum& datum, const ftl::ParticleState& s,
                   const KinkFinder& kinks) {
    using boost::math::quadrature::gauss_kronrod;
    const auto& x = s.positions;
    const double cell = s.mass / static_cast<double>(x.size() - 1);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        const double r = cell / (x[i + 1] - x[i]);
        std::vector<double> cuts{x[i]};
        for (const double c : kinks(r, x[i], x[i + 1])) cuts.push_back(c);
        cuts.push_back(x[i + 1]);
        for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
            total += gauss_kronrod<double, 31>::integrate(
                [&](double p) { return std::abs(datum.evaluate(p) - r); }, cuts[k], cuts[k + 1],
                10, 1e-14);
        }
    }
    return total;
}

}  // namespace

TEST_CASE("constant datum gives equispaced particles", "[atomization]") {
    const auto datum = ftl::preset_initial_constant(0.7);
    const auto s = ftl::atomize(datum, model_for(datum), 10);
    REQUIRE(s.positions.size() == 11);
    CHECK(s.particle_count() == 10);
    for (std::size_t i = 0; i <= 10; ++i) CHECK_THAT(s.positions[i], WithinAbs(i / 10.0, 1e-15));
    CHECK(s.positions.front() == 0.0);
    CHECK(s.positions.back() == 1.0);
    const auto r = ftl::local_densities(s);
    const double m = datum.lower_bound, M = datum.upper_bound, sigma = datum.mass();
    for (std::size_t i = 0; i < 10; ++i) {
        const double gap = s.positions[i + 1] - s.positions[i];
        CHECK_THAT(gap, WithinAbs(0.1, 1e-15));
        CHECK(gap >= sigma / (M * 10) * (1 - 1e-14));
        CHECK(gap <= sigma / (m * 10) * (1 + 1e-14));
        CHECK_THAT(r[i], WithinRel(0.7, 1e-14));
    }
}

TEST_CASE("two-step datum inverts in closed form", "[atomization]") {
    const auto datum = ftl::preset_initial_two_step(1.0, 0.5, 0.5);
    const auto s = ftl::atomize(datum, model_for(datum), 3);
    REQUIRE(s.positions.size() == 4);
    CHECK_THAT(s.positions[0], WithinAbs(0.0, 0.0));
    CHECK_THAT(s.positions[1], WithinAbs(0.25, 1e-15));
    CHECK_THAT(s.positions[2], WithinAbs(0.5, 1e-15));
    CHECK(s.positions[3] == 1.0);
    const auto r = ftl::local_densities(s);
    CHECK_THAT(r[0], WithinRel(1.0, 1e-14));
    CHECK_THAT(r[1], WithinRel(1.0, 1e-14));
    CHECK_THAT(r[2], WithinRel(0.5, 1e-14));
}

TEST_CASE("bisection matches the closed-form inverse", "[atomization]") {
    auto datum = ftl::preset_initial_two_step(0.5, 0.3, 0.37);
    const auto spec = model_for(datum);
    const auto exact = ftl::atomize(datum, spec, 97);
    datum.inverse_cumulative = nullptr;
    const auto bisected = ftl::atomize(datum, spec, 97);
    for (std::size_t i = 0; i < exact.positions.size(); ++i) {
        CHECK_THAT(bisected.positions[i], WithinAbs(exact.positions[i], 1e-12));
    }
}

TEST_CASE("atomized particles carry equal mass", "[atomization]") {
    for (const auto& datum : {ftl::preset_initial_two_step(1.0, 0.5, 0.5),
                              ftl::preset_initial_two_step(0.2, 0.9, 0.61),
                              ftl::preset_initial_sine()}) {
        const auto spec = model_for(datum);
        for (const std::size_t N : {2u, 7u, 64u, 301u}) {
            const auto s = ftl::atomize(datum, spec, N);
            const double sigma = spec.mass;
            for (std::size_t i = 0; i < N; ++i) {
                CHECK(std::abs(datum.cumulative(s.positions[i]) - sigma * i / N) <= 1e-12 * sigma);
            }
            CHECK(s.positions.back() == spec.domain_length);
            if (datum.lower_bound > 0.0) {
                for (std::size_t i = 0; i < N; ++i) {
                    const double gap = s.positions[i + 1] - s.positions[i];
                    CHECK(gap >= sigma / (datum.upper_bound * N) * (1 - 1e-12));
                    CHECK(gap <= sigma / (datum.lower_bound * N) * (1 + 1e-12));
                }
            }
        }
    }
}

TEST_CASE("atomization error halves as N doubles", "[atomization]") {
    const std::vector<std::pair<ftl::InitialDatum, KinkFinder>> cases = {
        {ftl::preset_initial_two_step(1.0, 0.5, 0.5), jumps_at({0.5})},
        {ftl::preset_initial_two_step(0.5, 0.3, 0.5), jumps_at({0.5})},
        {ftl::preset_initial_sine(), sine_crossings}};
    for (const auto& [datum, jumps] : cases) {
        const auto spec = model_for(datum);
        double prev = -1.0;
        for (const std::size_t N : {25u, 50u, 100u, 200u}) {
            const double err = l1_to_datum(datum, ftl::atomize(datum, spec, N), jumps);
            // the 1e-14 allowance absorbs rounding when the ratio is exactly 3/4
            if (prev > 0.0) CHECK(err <= 0.75 * prev + 1e-14);
            prev = err;
        }
    }
    const auto flat = ftl::preset_initial_constant(0.7);
    for (const std::size_t N : {25u, 50u, 100u, 200u}) {
        CHECK(l1_to_datum(flat, ftl::atomize(flat, model_for(flat), N), jumps_at({})) <= 1e-12);
    }
}

TEST_CASE("local densities of an arbitrary state", "[atomization]") {
    const ftl::ParticleState s{0.0, {0.0, 0.25, 0.5, 1.0}, 0.75};
    const auto r = ftl::local_densities(s);
    CHECK_THAT(r[0], WithinRel(1.0, 1e-15));
    CHECK_THAT(r[1], WithinRel(1.0, 1e-15));
    CHECK_THAT(r[2], WithinRel(0.5, 1e-15));

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t N = 3 + trial * 7;
        std::vector<double> x(N + 1, 0.0);
        for (std::size_t i = 1; i <= N; ++i) x[i] = x[i - 1] + u(rng);
        const double sigma = u(rng);
        const ftl::ParticleState st{0.0, x, sigma};
        const auto rr = ftl::local_densities(st);
        long double total = 0.0L;
        for (std::size_t i = 0; i < N; ++i) {
            CHECK(rr[i] > 0.0);
            total += static_cast<long double>(rr[i]) * (x[i + 1] - x[i]);
        }
        CHECK(std::abs(static_cast<double>(total) - sigma) <= 1e-13 * sigma);
    }
}

TEST_CASE("corrupted states are rejected", "[atomization]") {
    CHECK_THROWS_AS(ftl::local_densities({0.0, {0.0, 0.5, 0.5, 1.0}, 1.0}), ftl::StateError);
    CHECK_THROWS_AS(ftl::check_state({0.0, {0.0, 0.6, 0.5, 1.0}, 1.0}), ftl::StateError);
    CHECK_THROWS_AS(ftl::check_state({0.0, {0.0, NAN, 1.0}, 1.0}), ftl::StateError);
    CHECK_THROWS_AS(ftl::check_state({0.0, {0.0, 1.0}, 1.0}), ftl::StateError);
    CHECK_NOTHROW(ftl::check_state({0.0, {0.0, 0.5, 1.0}, 1.0}));
}

TEST_CASE("atomization rejects inconsistent inputs", "[atomization]") {
    const auto datum = ftl::preset_initial_constant(0.7);
    auto spec = model_for(datum);
    CHECK_THROWS_AS(ftl::atomize(datum, spec, 1), ftl::AtomizationError);
    spec.mass = 0.8;
    CHECK_THROWS_AS(ftl::atomize(datum, spec, 10), ftl::AtomizationError);

    ftl::InitialDatum gap;
    gap.evaluate = [](double x) { return x < 0.4 || x > 0.6 ? 1.0 : 0.0; };
    gap.cumulative = [](double x) {
        x = std::clamp(x, 0.0, 1.0);
        return x < 0.4 ? x : (x < 0.6 ? 0.4 : 0.4 + (x - 0.6));
    };
    gap.domain_length = 1.0;
    const auto gspec = model_for(gap);
    CHECK_THROWS_AS(ftl::atomize(gap, gspec, 4), ftl::AtomizationError);
}
