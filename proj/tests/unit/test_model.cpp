#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "catch_amalgamated.hpp"
#include "ftl/model.hpp"
#include "oracles.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ftl::ModelSpec section4_model(double epsilon = 1.0) {
    return ftl::make_model(ftl::preset_phi_pm(epsilon), ftl::preset_velocity_saturating(1.0),
                           ftl::preset_kernel_gaussian(1.0, 1.0), 1.0, 0.7);
}

}  // namespace

TEST_CASE("porous medium preset values", "[model]") {
    const auto phi = ftl::preset_phi_pm(1.0);
    CHECK(phi(0.0) == 0.0);
    CHECK_THAT(phi(2.0), WithinRel(2.0, 1e-15));
    CHECK_THAT(ftl::preset_phi_pm(0.001)(0.7), WithinRel(0.000245, 1e-12));
    CHECK_THROWS_AS(ftl::preset_phi_pm(0.0), ftl::ModelError);
    CHECK_THROWS_AS(ftl::preset_phi_pm(-1.0), ftl::ModelError);
}

TEST_CASE("two-point degenerate preset values", "[model]") {
    const auto phi = ftl::preset_phi_tp(1.0, 2.0);
    CHECK(phi(0.0) == 0.0);
    CHECK_THAT(phi(1.0), WithinAbs(1.0 / 6.0, 1e-15));
    const double h = 1e-6;
    const double slope = (phi(1.0 + h) - phi(1.0 - h)) / (2.0 * h);
    CHECK(std::abs(slope) <= 1e-6);
    CHECK_THROWS_AS(ftl::preset_phi_tp(1.0, 1.5), ftl::ModelError);
    CHECK_THROWS_AS(ftl::preset_phi_tp(0.0, 2.0), ftl::ModelError);
}

TEST_CASE("strongly degenerate preset values", "[model]") {
    const auto phi = ftl::preset_phi_sd(1.0);
    CHECK_THAT(phi(0.4), WithinAbs(0.08, 1e-15));
    CHECK_THAT(phi(0.5), WithinAbs(0.08, 1e-15));
    CHECK(phi(0.0) == 0.0);
    // continuity at both branch points
    const double h = 1e-9;
    CHECK_THAT(phi(0.4 - h), WithinAbs(phi(0.4), 1e-8));
    CHECK_THAT(phi(0.6 - h), WithinAbs(phi(0.6), 1e-8));
    CHECK_THAT(phi(0.6 + h), WithinAbs(phi(0.6), 1e-8));
    for (double r = 0.4; r < 0.6; r += 0.01) CHECK(phi(r) == 2.0 / 25.0);
    CHECK_THROWS_AS(ftl::preset_phi_sd(0.0), ftl::ModelError);
}

TEST_CASE("every diffusion preset is nondecreasing from zero", "[model]") {
    const std::vector<ftl::DiffusionLaw> laws = {
        ftl::preset_phi_pm(1.0), ftl::preset_phi_pm(0.001), ftl::preset_phi_tp(1.0, 2.0),
        ftl::preset_phi_tp(0.5, 3.0), ftl::preset_phi_sd(1.0), ftl::preset_phi_sd(0.1)};
    const double M = 1.0;
    for (const auto& phi : laws) {
        CHECK(phi(0.0) == 0.0);
        double prev = 0.0;
        for (int k = 1; k < 1000; ++k) {
            const double rho = 2.0 * M * k / 999.0;
            const double cur = phi(rho);
            CHECK(cur >= prev);
            CHECK(std::abs(cur - prev) <= phi.lipschitz_bound * (2.0 * M / 999.0) * (1 + 1e-12));
            prev = cur;
        }
    }
}

TEST_CASE("saturating velocity preset", "[model]") {
    const auto v = ftl::preset_velocity_saturating(1.0);
    CHECK(v(1.0) == 0.0);
    CHECK(v(0.0) == 1.0);
    CHECK_THAT(v(0.25), WithinAbs(0.75, 1e-15));
    CHECK(v.v_max == 1.0);
    CHECK(v.saturation_density == 1.0);
    for (int k = 0; k < 100; ++k) CHECK(v(1.0 + 0.05 * k) == 0.0);
    const auto v2 = ftl::preset_velocity_saturating(2.0);
    CHECK_THAT(v2(1.0), WithinAbs(0.5, 1e-15));
    CHECK(v2(2.0) == 0.0);
    CHECK_THROWS_AS(ftl::preset_velocity_saturating(0.0), ftl::ModelError);
}

TEST_CASE("gaussian kernel preset", "[model]") {
    const auto K = ftl::preset_kernel_gaussian(1.0, 1.0);
    CHECK(K.Kprime(0.0) == 0.0);
    CHECK_THAT(K.Kprime(1.0), WithinAbs(0.735759, 1e-6));
    CHECK_THAT(K.Kprime(1.0), WithinRel(2.0 * std::exp(-1.0), 1e-15));
    CHECK(K.K(0.0) == 0.0);
    for (int k = 0; k < 1000; ++k) {
        const double x = -2.0 + 4.0 * k / 999.0;
        CHECK(K.Kprime(x) + K.Kprime(-x) == 0.0);
        CHECK_THAT(K.K(x), WithinAbs(1.0 - std::exp(-x * x), 1e-15));
        CHECK_THAT(K.Kprime(x), WithinAbs(2.0 * x * std::exp(-x * x), 1e-15));
    }
    CHECK_THROWS_AS(ftl::preset_kernel_gaussian(0.0, 1.0), ftl::ModelError);
}

TEST_CASE("kernel bound dominates K', K'' and K''' on [-2l, 2l]", "[model]") {
    for (const double strength : {0.5, 1.0, 3.0}) {
        for (const double ell : {0.5, 1.0, 2.0}) {
            const auto K = ftl::preset_kernel_gaussian(strength, ell);
            const double third = oracle::gaussian_third_sup(strength, 2.0 * ell);
            const double second = 2.0 * strength;  // attained at 0
            const double sup = std::max(second, third);
            CHECK(K.bound >= sup);
            CHECK(K.bound <= 1.06 * sup);
        }
    }
    // on [-2, 2] the third derivative is the largest of the three
    const auto K = ftl::preset_kernel_gaussian(1.0, 1.0);
    CHECK(oracle::gaussian_third_sup(1.0, 2.0) > 2.0);
    CHECK_THAT(K.bound, WithinRel(1.05 * oracle::gaussian_third_sup(1.0, 2.0), 1e-6));
}

TEST_CASE("batched K' agrees bitwise with pointwise K'", "[model]") {
    const auto K = ftl::preset_kernel_gaussian(1.7, 1.0);
    std::vector<double> d(1001), out(1001);
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = -3.0 + 6.0 * static_cast<double>(k) / 1000.0;
    K.Kprime(d, out);
    for (std::size_t k = 0; k < d.size(); ++k) CHECK(out[k] == K.Kprime(d[k]));
}

TEST_CASE("initial data presets have exact primitives", "[model]") {
    CHECK_THAT(ftl::preset_initial_constant(0.7).mass(), WithinAbs(0.7, 1e-15));
    CHECK_THAT(ftl::preset_initial_sine().mass(), WithinAbs(1.0, 1e-15));
    CHECK_THAT(ftl::preset_initial_two_step(1.0, 0.5, 0.5).mass(), WithinAbs(0.75, 1e-15));

    // each datum with the points where it jumps
    const std::vector<std::pair<ftl::InitialDatum, std::vector<double>>> data = {
        {ftl::preset_initial_constant(0.7), {}},
        {ftl::preset_initial_constant(0.5, 2.0), {}},
        {ftl::preset_initial_two_step(1.0, 0.5, 0.5), {0.5}},
        {ftl::preset_initial_two_step(0.5, 0.3, 0.37), {0.37}},
        {ftl::preset_initial_sine(), {}}};
    using boost::math::quadrature::gauss_kronrod;
    for (const auto& [d, jumps] : data) {
        const double sigma = d.mass();
        CHECK(d.cumulative(0.0) == 0.0);
        for (int k = 0; k <= 100; ++k) {
            const double x = d.domain_length * k / 100.0;
            std::vector<double> cuts{0.0};
            for (const double j : jumps) {
                if (j < x) cuts.push_back(j);
            }
            cuts.push_back(x);
            double q = 0.0;
            for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
                if (cuts[c + 1] > cuts[c]) {
                    q += gauss_kronrod<double, 61>::integrate(d.evaluate, cuts[c], cuts[c + 1], 15,
                                                              1e-14);
                }
            }
            CHECK(std::abs(d.cumulative(x) - q) <= 1e-10 * sigma);
        }
    }
}

TEST_CASE("invalid initial data parameters are rejected", "[model]") {
    CHECK_THROWS_AS(ftl::preset_initial_constant(0.0), ftl::ModelError);
    CHECK_THROWS_AS(ftl::preset_initial_two_step(1.0, -0.5, 0.5), ftl::ModelError);
    CHECK_THROWS_AS(ftl::preset_initial_two_step(1.0, 0.5, 1.0), ftl::ModelError);
    CHECK_THROWS_AS(ftl::make_model(ftl::preset_phi_pm(1.0), ftl::preset_velocity_saturating(1.0),
                                    ftl::preset_kernel_gaussian(1.0, 1.0), 0.0, 0.7),
                    ftl::ModelError);
}

TEST_CASE("validator accepts the reference presets", "[model]") {
    for (const double eps : {1.0, 0.1, 0.05, 0.001}) {
        const auto report = ftl::validate(section4_model(eps), ftl::preset_initial_constant(0.7));
        CHECK(report.admissible());
    }
    const auto sd_datum = ftl::preset_initial_two_step(0.5, 0.3, 0.5);
    const auto sd = ftl::make_model(ftl::preset_phi_sd(0.3), ftl::preset_velocity_saturating(1.0),
                                    ftl::preset_kernel_gaussian(1.0, 1.0), 1.0, sd_datum.mass());
    CHECK(ftl::validate(sd, sd_datum).admissible());
}

TEST_CASE("validator reports increasing velocity", "[model]") {
    auto spec = section4_model();
    spec.velocity.evaluate = [](double rho) { return rho; };
    spec.velocity.v_max = 0.0;
    const auto report = ftl::validate(spec, ftl::preset_initial_constant(0.7));
    CHECK(report.has("velocity"));
    bool monotone_flag = false;
    for (const auto& v : report.violations) {
        if (v.law == "velocity" && v.message.find("monoton") != std::string::npos) {
            monotone_flag = true;
        }
    }
    CHECK(monotone_flag);
}

TEST_CASE("validator reports a vanishing datum", "[model]") {
    ftl::InitialDatum zero;
    zero.name = "zero";
    zero.evaluate = [](double) { return 0.0; };
    zero.cumulative = [](double) { return 0.0; };
    zero.domain_length = 1.0;
    const auto report = ftl::validate(section4_model(), zero);
    CHECK(report.has("datum"));
    CHECK_FALSE(report.has("velocity"));
    CHECK_FALSE(report.has("kernel"));
}

TEST_CASE("validator flags the sine datum lower bound", "[model]") {
    const auto datum = ftl::preset_initial_sine();
    const auto spec = ftl::make_model(ftl::preset_phi_pm(1.0), ftl::preset_velocity_saturating(1.0),
                                      ftl::preset_kernel_gaussian(1.0, 2.0), 2.0, datum.mass());
    const auto report = ftl::validate(spec, datum);
    CHECK(report.has("datum"));
    CHECK(report.violations.size() >= 1);
    for (const auto& v : report.violations) CHECK(v.law == "datum");
}

TEST_CASE("validator reports a kernel bound that is too small", "[model]") {
    auto spec = section4_model();
    spec.kernel.bound = 1.0;
    CHECK(ftl::validate(spec, ftl::preset_initial_constant(0.7)).has("kernel"));
}

TEST_CASE("effective density ceiling", "[model]") {
    const auto spec = section4_model();
    const auto b = ftl::density_bounds(spec, ftl::preset_initial_constant(0.7));
    CHECK(b.lower == 0.7);
    CHECK(b.upper == 1.0);
}
