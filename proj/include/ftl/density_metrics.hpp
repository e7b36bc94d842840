#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "ftl/atomization.hpp"
#include "ftl/error.hpp"

namespace ftl {

/// Piecewise-constant density: values[i] on [breakpoints[i], breakpoints[i+1]).
struct DiscreteDensity {
    std::vector<double> breakpoints;
    std::vector<double> values;
    double mass = 0.0;

    std::size_t cells() const { return values.size(); }
    double operator()(double x) const {
        if (x < breakpoints.front() || x >= breakpoints.back()) return 0.0;
        const auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), x);
        return values[static_cast<std::size_t>(it - breakpoints.begin()) - 1];
    }

    bool operator==(const DiscreteDensity&) const = default;
};

/// Sum of value * width over all cells.
inline double integrated_mass(const DiscreteDensity& d) {
    double total = 0.0;
    for (std::size_t i = 0; i < d.cells(); ++i) {
        total += d.values[i] * (d.breakpoints[i + 1] - d.breakpoints[i]);
    }
    return total;
}

inline DiscreteDensity reconstruct_density(const ParticleState& state) {
    return DiscreteDensity{state.positions, local_densities(state), state.mass};
}

/// Quantile function of a discrete density: piecewise linear through the nodes
/// (mass_breakpoints[i], positions[i]) with slope 1 / values[i] on cell i.
struct PseudoInverse {
    std::vector<double> mass_breakpoints;
    std::vector<double> positions;

    double total_mass() const { return mass_breakpoints.back(); }

    double operator()(double z) const {
        const auto& zs = mass_breakpoints;
        if (z <= zs.front()) return positions.front();
        if (z >= zs.back()) return positions.back();
        // left-continuous at nodes; the map is continuous anyway
        const auto it = std::lower_bound(zs.begin(), zs.end(), z);
        const std::size_t i = static_cast<std::size_t>(it - zs.begin()) - 1;
        const double w = (z - zs[i]) / (zs[i + 1] - zs[i]);
        return positions[i] + w * (positions[i + 1] - positions[i]);
    }
};

/// Nodes are the cumulative masses of the cells; the last node is pinned to
/// the declared mass so two densities of equal mass share the interval
/// [0, mass] exactly.
inline PseudoInverse pseudo_inverse(const DiscreteDensity& d) {
    PseudoInverse X;
    const std::size_t n = d.cells();
    X.mass_breakpoints.resize(n + 1);
    X.positions = d.breakpoints;
    double z = 0.0;
    X.mass_breakpoints[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        z += d.values[i] * (d.breakpoints[i + 1] - d.breakpoints[i]);
        X.mass_breakpoints[i + 1] = z;
    }
    if (std::abs(z - d.mass) > 1e-10 * d.mass) {
        throw Error("density integrates to " + std::to_string(z) + ", declared mass " +
                    std::to_string(d.mass));
    }
    X.mass_breakpoints[n] = d.mass;
    return X;
}

namespace detail {

// Exact integral of |f| over [a, b] for f linear with end values fa, fb.
inline double abs_linear_integral(double fa, double fb, double width) {
    if ((fa >= 0.0 && fb >= 0.0) || (fa <= 0.0 && fb <= 0.0)) {
        return 0.5 * (std::abs(fa) + std::abs(fb)) * width;
    }
    const double sa = std::abs(fa);
    const double sb = std::abs(fb);
    return 0.5 * (sa * sa + sb * sb) / (sa + sb) * width;
}

}  // namespace detail

/// Scaled 1-Wasserstein distance: the L1([0, mass]) distance of the two
/// quantile functions, integrated exactly on the merged node grid with every
/// linear piece split at its sign change.
inline double wasserstein1(const DiscreteDensity& d1, const DiscreteDensity& d2) {
    if (std::abs(d1.mass - d2.mass) > 1e-10 * std::max(d1.mass, d2.mass)) {
        throw Error("wasserstein1 needs equal masses");
    }
    const PseudoInverse X1 = pseudo_inverse(d1);
    PseudoInverse X2 = pseudo_inverse(d2);
    X2.mass_breakpoints.back() = X1.mass_breakpoints.back();

    const auto& z1 = X1.mass_breakpoints;
    const auto& z2 = X2.mass_breakpoints;
    std::size_t i = 0;
    std::size_t j = 0;
    double z_prev = 0.0;
    double f_prev = X1.positions.front() - X2.positions.front();
    double total = 0.0;
    // each pass advances to the next node of either grid
    while (i + 1 < z1.size() && j + 1 < z2.size()) {
        const double za = z1[i + 1];
        const double zb = z2[j + 1];
        const double z = std::min(za, zb);
        auto eval = [&](const PseudoInverse& X, std::size_t k, double zz) {
            const auto& zs = X.mass_breakpoints;
            if (zz >= zs[k + 1]) return X.positions[k + 1];
            const double w = (zz - zs[k]) / (zs[k + 1] - zs[k]);
            return X.positions[k] + w * (X.positions[k + 1] - X.positions[k]);
        };
        const double f = eval(X1, i, z) - eval(X2, j, z);
        total += detail::abs_linear_integral(f_prev, f, z - z_prev);
        z_prev = z;
        f_prev = f;
        if (za <= z) ++i;
        if (zb <= z) ++j;
    }
    return total;
}

/// Exact L1 distance of two piecewise-constant densities on the same interval.
inline double l1_distance(const DiscreteDensity& d1, const DiscreteDensity& d2) {
    const double a1 = d1.breakpoints.front(), b1 = d1.breakpoints.back();
    const double a2 = d2.breakpoints.front(), b2 = d2.breakpoints.back();
    const double scale = std::max({std::abs(b1 - a1), std::abs(b2 - a2), 1.0});
    if (std::abs(a1 - a2) > 1e-12 * scale || std::abs(b1 - b2) > 1e-12 * scale) {
        throw Error("l1_distance needs densities on the same interval");
    }
    const auto& x1 = d1.breakpoints;
    const auto& x2 = d2.breakpoints;
    std::size_t i = 0;
    std::size_t j = 0;
    double left = std::min(a1, a2);
    double total = 0.0;
    while (i < d1.cells() && j < d2.cells()) {
        const double right = std::min(x1[i + 1], x2[j + 1]);
        if (right > left) total += std::abs(d1.values[i] - d2.values[j]) * (right - left);
        left = std::max(left, right);
        if (x1[i + 1] <= right) ++i;
        if (x2[j + 1] <= right) ++j;
    }
    return total;
}

/// Total variation of the density extended by zero outside its support:
/// R_0 + R_{N-1} + sum |R_{i+1} - R_i|.
inline double total_variation(const DiscreteDensity& d) {
    const auto& r = d.values;
    if (r.empty()) return 0.0;
    double tv = r.front() + r.back();
    for (std::size_t i = 0; i + 1 < r.size(); ++i) tv += std::abs(r[i + 1] - r[i]);
    return tv;
}

inline std::pair<double, double> min_max(const DiscreteDensity& d) {
    const auto [lo, hi] = std::minmax_element(d.values.begin(), d.values.end());
    return {*lo, *hi};
}

/// Largest jump between neighbouring cells, max |R_{i+1} - R_i|.
inline double max_jump(const DiscreteDensity& d) {
    double jump = 0.0;
    for (std::size_t i = 0; i + 1 < d.values.size(); ++i) {
        jump = std::max(jump, std::abs(d.values[i + 1] - d.values[i]));
    }
    return jump;
}

}  // namespace ftl
