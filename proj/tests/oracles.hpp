#pragma once

// Independent reference implementations used by the unit and acceptance
// suites. Nothing here calls into the library's numerical kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

/// Closed-form laws of the porous-medium / saturating / Gaussian model.
struct PmModel {
    double epsilon = 1.0;
    double rho_max = 1.0;
    double strength = 1.0;

    long double phi(long double r) const { return 0.5L * epsilon * r * r; }
    long double v(long double r) const { return r < rho_max ? 1.0L - r / rho_max : 0.0L; }
    long double kprime(long double x) const { return 2.0L * strength * x * std::exp(-x * x); }
    long double k(long double x) const { return strength * (1.0L - std::exp(-x * x)); }
};

/// Term-by-term velocity of every particle in extended precision:
/// x_i' = N (phi(R_{i-1}) - phi(R_i)) - v(R_i)/N sum_{j>i} K'(x_i - x_j)
///        - v(R_{i-1})/N sum_{j<i} K'(x_i - x_j), zero at both ends.
template <class Model>
std::vector<double> naive_velocity(const std::vector<double>& x, double mass, const Model& m) {
    const std::size_t n = x.size() - 1;
    const long double N = static_cast<long double>(n);
    std::vector<long double> R(n);
    for (std::size_t i = 0; i < n; ++i) {
        R[i] = static_cast<long double>(mass) /
               (N * (static_cast<long double>(x[i + 1]) - static_cast<long double>(x[i])));
    }
    std::vector<double> out(n + 1, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
        long double diffusive = N * (m.phi(R[i - 1]) - m.phi(R[i]));
        long double right = 0.0L;
        for (std::size_t j = i + 1; j <= n; ++j) {
            right += m.kprime(static_cast<long double>(x[i]) - static_cast<long double>(x[j]));
        }
        long double left = 0.0L;
        for (std::size_t j = 0; j < i; ++j) {
            left += m.kprime(static_cast<long double>(x[i]) - static_cast<long double>(x[j]));
        }
        const long double nonlocal = -m.v(R[i]) / N * right - m.v(R[i - 1]) / N * left;
        out[i] = static_cast<double>(diffusive + nonlocal);
    }
    return out;
}

/// Random ordered positions on [0, length] with pinned ends; gaps are drawn
/// uniformly from [0.5, 1.5] times the mean gap and rescaled.
inline std::vector<double> random_positions(std::size_t n_cells, double length, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    std::vector<double> gaps(n_cells);
    double total = 0.0;
    for (auto& g : gaps) {
        g = u(rng);
        total += g;
    }
    std::vector<double> x(n_cells + 1);
    x[0] = 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < n_cells; ++i) {
        acc += gaps[i];
        x[i + 1] = length * acc / total;
    }
    x[n_cells] = length;
    return x;
}

/// Quantile of a piecewise-constant density at mass level z, located by a
/// linear walk from the left (independent of the library's pseudo-inverse).
struct QuantileWalker {
    const std::vector<double>* breaks;
    const std::vector<double>* values;
    std::size_t cell = 0;
    long double mass_before = 0.0L;

    double at(long double z) {
        const auto& b = *breaks;
        const auto& v = *values;
        while (cell + 1 < v.size()) {
            const long double m = static_cast<long double>(v[cell]) * (b[cell + 1] - b[cell]);
            if (mass_before + m >= z) break;
            mass_before += m;
            ++cell;
        }
        return static_cast<double>(b[cell] + (z - mass_before) / v[cell]);
    }
};

/// Midpoint rule for int_0^mass |X1(z) - X2(z)| dz on `points` quantile levels.
inline double brute_force_w1(const std::vector<double>& b1, const std::vector<double>& v1,
                             const std::vector<double>& b2, const std::vector<double>& v2,
                             double mass, std::size_t points = 1000000) {
    QuantileWalker w1{&b1, &v1};
    QuantileWalker w2{&b2, &v2};
    const long double h = static_cast<long double>(mass) / points;
    long double total = 0.0L;
    for (std::size_t k = 0; k < points; ++k) {
        const long double z = (k + 0.5L) * h;
        total += std::abs(static_cast<long double>(w1.at(z)) - w2.at(z));
    }
    return static_cast<double>(total * h);
}

/// Midpoint rule for int |rho1 - rho2| dx on a uniform grid of [a, b].
inline double brute_force_l1(const std::vector<double>& b1, const std::vector<double>& v1,
                             const std::vector<double>& b2, const std::vector<double>& v2,
                             std::size_t points = 1000000) {
    auto eval = [](const std::vector<double>& b, const std::vector<double>& v, double x) {
        if (x < b.front() || x >= b.back()) return 0.0;
        const auto it = std::upper_bound(b.begin(), b.end(), x);
        return v[static_cast<std::size_t>(it - b.begin()) - 1];
    };
    const double a = std::min(b1.front(), b2.front());
    const double c = std::max(b1.back(), b2.back());
    const double h = (c - a) / static_cast<double>(points);
    long double total = 0.0L;
    for (std::size_t k = 0; k < points; ++k) {
        const double x = a + (static_cast<double>(k) + 0.5) * h;
        total += std::abs(eval(b1, v1, x) - eval(b2, v2, x));
    }
    return static_cast<double>(total * h);
}

/// sup |K'''| of the Gaussian K = s (1 - exp(-x^2)) on [-a, a] by dense
/// sampling of the closed form 2 s (4x^3 - 6x) exp(-x^2) (extended precision).
inline double gaussian_third_sup(double s, double a, std::size_t samples = 200001) {
    long double best = 0.0L;
    for (std::size_t k = 0; k < samples; ++k) {
        const long double x = -a + 2.0L * a * k / (samples - 1);
        best = std::max(best, std::abs(2.0L * s * (4.0L * x * x * x - 6.0L * x) * std::exp(-x * x)));
    }
    return static_cast<double>(best);
}

}  // namespace oracle
