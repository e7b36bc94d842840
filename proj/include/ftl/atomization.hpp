#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "ftl/error.hpp"
#include "ftl/model.hpp"

namespace ftl {

/// Ordered particle positions x_0 < ... < x_N carrying mass/N between
/// neighbours. The full state of the scheme.
struct ParticleState {
    double time = 0.0;
    std::vector<double> positions;
    double mass = 1.0;

    std::size_t particle_count() const { return positions.empty() ? 0 : positions.size() - 1; }
    double cell_mass() const { return mass / static_cast<double>(particle_count()); }

    bool operator==(const ParticleState&) const = default;
};

/// Throws StateError unless there are at least three positions, all finite and
/// strictly increasing, and the mass is positive.
inline void check_state(const ParticleState& state) {
    const auto& x = state.positions;
    if (x.size() < 3) throw StateError("a state needs at least N = 2 cells");
    if (!(state.mass > 0.0)) throw StateError("state mass must be positive");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i])) {
            throw StateError("non-finite position at index " + std::to_string(i));
        }
        if (i > 0 && !(x[i] > x[i - 1])) {
            throw StateError("positions not strictly increasing at index " + std::to_string(i));
        }
    }
}

inline double min_gap(const std::vector<double>& x, std::size_t* where = nullptr) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t at = 0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        const double g = x[i + 1] - x[i];
        if (g < best) {
            best = g;
            at = i;
        }
    }
    if (where) *where = at;
    return best;
}

/// R_i = mass / (N (x_{i+1} - x_i)), i = 0..N-1.
inline std::vector<double> local_densities(const ParticleState& state) {
    const auto& x = state.positions;
    const std::size_t n = state.particle_count();
    const double cell = state.cell_mass();
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double gap = x[i + 1] - x[i];
        if (!(gap > 0.0)) {
            throw StateError("non-positive gap at cell " + std::to_string(i));
        }
        r[i] = cell / gap;
    }
    return r;
}

namespace detail {

// Leftmost x in [lo, hi] with cumulative(x) >= level.
inline double bisect_level(const ScalarMap& cumulative, double level, double lo, double hi,
                           double tolerance) {
    while (hi - lo > tolerance) {
        const double mid = lo + 0.5 * (hi - lo);
        if (mid <= lo || mid >= hi) break;
        if (cumulative(mid) >= level) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

// Rightmost x in [lo, hi] with cumulative(x) <= level.
inline double bisect_plateau_end(const ScalarMap& cumulative, double level, double lo,
                                 double hi, double tolerance) {
    while (hi - lo > tolerance) {
        const double mid = lo + 0.5 * (hi - lo);
        if (mid <= lo || mid >= hi) break;
        if (cumulative(mid) <= level) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return lo;
}

}  // namespace detail

/// Splits the datum into N cells of equal mass: x_i is the leftmost point
/// where the cumulative mass reaches i * mass / N. Uses the datum's closed-form
/// inverse when it has one and bisection to 1e-13 * l otherwise. x_0 = 0 and
/// x_N = l are pinned.
inline ParticleState atomize(const InitialDatum& datum, const ModelSpec& spec, std::size_t N) {
    if (N < 2) throw AtomizationError("need at least N = 2 cells");
    const double ell = spec.domain_length;
    if (std::abs(datum.domain_length - ell) > 1e-12 * ell) {
        throw AtomizationError("datum domain length differs from the model domain");
    }
    const double sigma = spec.mass;
    const double total = datum.cumulative(ell);
    if (!(std::abs(total - sigma) <= 1e-10 * sigma)) {
        throw AtomizationError("cumulative(l) = " + std::to_string(total) +
                               " does not match the model mass " + std::to_string(sigma));
    }

    const double tolerance = 1e-13 * ell;
    ParticleState state;
    state.time = 0.0;
    state.mass = sigma;
    state.positions.resize(N + 1);
    auto& x = state.positions;
    x[0] = 0.0;
    x[N] = ell;
    const double cell = sigma / static_cast<double>(N);
    for (std::size_t i = 1; i < N; ++i) {
        const double level = cell * static_cast<double>(i);
        double xi;
        if (datum.inverse_cumulative) {
            xi = datum.inverse_cumulative(level);
        } else {
            xi = detail::bisect_level(datum.cumulative, level, x[i - 1], ell, tolerance);
            const double plateau_end =
                detail::bisect_plateau_end(datum.cumulative, level, xi, ell, tolerance);
            // Rounding makes the primitive look flat near isolated zeros of the
            // density; only a genuinely empty interval is an error.
            if (plateau_end - xi > 4.0 * tolerance &&
                !(datum.evaluate(0.5 * (xi + plateau_end)) > 0.0)) {
                throw AtomizationError(
                    "cumulative mass is flat at level " + std::to_string(level) +
                    " over a set of positive length: datum vanishes on an interval");
            }
        }
        if (!(xi > x[i - 1]) || !(xi < ell)) {
            throw AtomizationError("atomization produced coincident particles at index " +
                                   std::to_string(i));
        }
        x[i] = xi;
    }
    return state;
}

}  // namespace ftl
