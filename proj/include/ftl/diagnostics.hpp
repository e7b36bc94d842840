#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <future>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "ftl/atomization.hpp"
#include "ftl/density_metrics.hpp"
#include "ftl/detail/quadrature.hpp"
#include "ftl/error.hpp"
#include "ftl/integrator.hpp"
#include "ftl/model.hpp"

namespace ftl {

// ---------------------------------------------------------------------------
// Gap bracket

/// Growth constant of the upper gap bound: 1.01 times the threshold
/// 2 m v_max L l / mass, the smallest admissible choice up to the factor.
inline double bracket_constant(const ModelSpec& spec, const DensityBounds& bounds) {
    const double threshold = 2.0 * bounds.lower * spec.velocity.v_max * spec.kernel.bound *
                             spec.domain_length / spec.mass;
    return threshold > 0.0 ? 1.01 * threshold : std::numeric_limits<double>::min();
}

struct MinMaxRecord {
    double time = 0.0;
    double min_gap = 0.0;
    double max_gap = 0.0;
    double lower_bound = 0.0;  ///< mass / (M N)
    double upper_bound = 0.0;  ///< 2 exp(c t) mass / (m N)
    bool pass = false;
    std::size_t worst_index = 0;  ///< cell of the gap furthest outside (or closest to) the bracket
};

struct MinMaxEnvelope {
    double c = 0.0;
    std::vector<MinMaxRecord> records;

    std::size_t violations() const {
        return static_cast<std::size_t>(std::count_if(
            records.begin(), records.end(), [](const MinMaxRecord& r) { return !r.pass; }));
    }
    bool all_pass() const { return violations() == 0; }
};

/// Checks every snapshot against mass/(M N) <= gap <= 2 exp(c t) mass/(m N).
/// The comparison carries a 1e-12 relative allowance for the rounding of the
/// bound itself (equality holds exactly for uniform data with m = M).
inline MinMaxEnvelope check_minmax(const Trajectory& traj, const ModelSpec& spec,
                                   const DensityBounds& bounds) {
    if (!(bounds.lower > 0.0) || !(bounds.upper >= bounds.lower)) {
        throw Error("gap bracket needs 0 < m <= M");
    }
    MinMaxEnvelope env;
    env.c = bracket_constant(spec, bounds);
    for (const auto& s : traj.snapshots) {
        const auto& x = s.positions;
        const double N = static_cast<double>(s.particle_count());
        MinMaxRecord rec;
        rec.time = s.time;
        std::size_t at_min = 0, at_max = 0;
        rec.min_gap = std::numeric_limits<double>::infinity();
        rec.max_gap = 0.0;
        for (std::size_t i = 0; i + 1 < x.size(); ++i) {
            const double g = x[i + 1] - x[i];
            if (g < rec.min_gap) {
                rec.min_gap = g;
                at_min = i;
            }
            if (g > rec.max_gap) {
                rec.max_gap = g;
                at_max = i;
            }
        }
        rec.lower_bound = s.mass / (bounds.upper * N);
        rec.upper_bound = 2.0 * std::exp(env.c * s.time) * s.mass / (bounds.lower * N);
        const bool low_ok = rec.min_gap >= rec.lower_bound * (1.0 - 1e-12);
        const bool high_ok = rec.max_gap <= rec.upper_bound * (1.0 + 1e-12);
        rec.pass = low_ok && high_ok;
        rec.worst_index = !low_ok || high_ok ? at_min : at_max;
        env.records.push_back(rec);
    }
    return env;
}

// ---------------------------------------------------------------------------
// Total variation growth

struct TvEnvelope {
    std::vector<double> times;
    std::vector<double> tv;
    std::vector<double> envelope;
    std::vector<double> margin;  ///< envelope - tv
    double c1 = 0.0;
    double c2 = 0.0;
    double fit_end = 0.0;

    double min_margin() const { return *std::min_element(margin.begin(), margin.end()); }
    bool contained() const { return min_margin() >= 0.0; }
};

namespace detail {

// Solution of y' = c1 + c2 y, y(0) = tv0.
inline double gronwall(double tv0, double c1, double c2, double t) {
    if (c2 == 0.0) return tv0 + c1 * t;
    const double growth = std::expm1(c2 * t);
    return tv0 + tv0 * growth + c1 * growth / c2;
}

inline double gronwall_gain(double c2, double t) {
    return c2 == 0.0 ? t : std::expm1(c2 * t) / c2;
}

}  // namespace detail

/// TV history of the trajectory and a Gronwall-type envelope
/// TV(t) <= (TV(0) + C1/C2) exp(C2 t) - C1/C2 fitted on snapshots with
/// t <= fit_end. For each C2 the smallest C1 >= 0 that contains the fitted
/// points is used; C2 >= 0 then minimizes the squared misfit. Snapshots past
/// fit_end test the extrapolation.
inline TvEnvelope tv_envelope(const Trajectory& traj,
                              double fit_end = std::numeric_limits<double>::infinity()) {
    const auto& snaps = traj.snapshots;
    if (snaps.size() < 3) throw Error("tv_envelope needs at least three snapshots");
    TvEnvelope env;
    const double t0 = snaps.front().time;
    for (const auto& s : snaps) {
        env.times.push_back(s.time - t0);
        env.tv.push_back(total_variation(reconstruct_density(s)));
    }
    env.fit_end = std::min(fit_end, snaps.back().time) - t0;
    std::vector<std::size_t> fit;
    for (std::size_t k = 0; k < env.times.size(); ++k) {
        if (env.times[k] <= env.fit_end) fit.push_back(k);
    }
    const double tv0 = env.tv.front();
    const double span = std::max(env.fit_end, std::numeric_limits<double>::min());

    auto smallest_c1 = [&](double c2) {
        double c1 = 0.0;
        double gain_max = 0.0;
        for (std::size_t k : fit) {
            const double t = env.times[k];
            if (t <= 0.0) continue;
            const double gain = detail::gronwall_gain(c2, t);
            gain_max = std::max(gain_max, gain);
            c1 = std::max(c1, (env.tv[k] - detail::gronwall(tv0, 0.0, c2, t)) / gain);
        }
        // keep the binding point on the safe side of rounding
        if (c1 > 0.0 && gain_max > 0.0) c1 += 1e-12 * (tv0 + c1 * gain_max) / gain_max;
        return c1;
    };
    auto misfit = [&](double c2) {
        const double c1 = smallest_c1(c2);
        double sse = 0.0;
        for (std::size_t k : fit) {
            const double r = detail::gronwall(tv0, c1, c2, env.times[k]) - env.tv[k];
            sse += r * r;
        }
        return sse;
    };

    // coarse logarithmic scan in C2 * span, then golden-section refinement
    std::vector<double> grid{0.0};
    for (int k = 0; k <= 120; ++k) grid.push_back(1e-4 * std::pow(10.0, k / 20.0) / span);
    std::size_t best = 0;
    double best_sse = misfit(0.0);
    for (std::size_t k = 1; k < grid.size(); ++k) {
        const double sse = misfit(grid[k]);
        if (sse < best_sse) {
            best_sse = sse;
            best = k;
        }
    }
    double c2 = grid[best];
    if (best > 0) {
        double lo = grid[best - 1];
        double hi = best + 1 < grid.size() ? grid[best + 1] : grid[best];
        const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
        double a = hi - phi * (hi - lo);
        double b = lo + phi * (hi - lo);
        double fa = misfit(a), fb = misfit(b);
        for (int it = 0; it < 80; ++it) {
            if (fa < fb) {
                hi = b;
                b = a;
                fb = fa;
                a = hi - phi * (hi - lo);
                fa = misfit(a);
            } else {
                lo = a;
                a = b;
                fa = fb;
                b = lo + phi * (hi - lo);
                fb = misfit(b);
            }
        }
        const double cand = 0.5 * (lo + hi);
        if (misfit(cand) < best_sse) c2 = cand;
    }
    env.c2 = c2;
    env.c1 = smallest_c1(c2);
    for (std::size_t k = 0; k < env.times.size(); ++k) {
        env.envelope.push_back(detail::gronwall(tv0, env.c1, env.c2, env.times[k]));
        env.margin.push_back(env.envelope.back() - env.tv[k]);
    }
    return env;
}

// ---------------------------------------------------------------------------
// Time continuity in the Wasserstein distance

/// max over snapshot pairs of d_W1(rho(t), rho(s)) / |t - s|.
inline double w1_time_lipschitz(const Trajectory& traj) {
    const auto& snaps = traj.snapshots;
    if (snaps.size() < 2) throw Error("w1_time_lipschitz needs at least two snapshots");
    std::vector<DiscreteDensity> dens;
    dens.reserve(snaps.size());
    for (const auto& s : snaps) dens.push_back(reconstruct_density(s));
    double best = 0.0;
    for (std::size_t a = 0; a < dens.size(); ++a) {
        for (std::size_t b = a + 1; b < dens.size(); ++b) {
            const double dt = std::abs(snaps[b].time - snaps[a].time);
            if (dt <= 0.0) continue;
            best = std::max(best, wasserstein1(dens[a], dens[b]) / dt);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Weak formulation residual

/// Space-time test function with partial derivatives.
struct TestFunction {
    int mode = 1;
    double domain_length = 1.0;
    double t_final = 1.0;
    double bump_center = 0.5;      ///< b is supported in center +- half_width
    double bump_half_width = 0.4;
    std::function<double(double, double)> value;
    std::function<double(double, double)> dt;
    std::function<double(double, double)> dx;
    std::function<double(double, double)> dxx;
};

/// phi_k(t, x) = b(t) cos(k pi x / l), k = 1..modes, with the smooth bump
/// b(t) = exp(-1 / (1 - u^2)), u = (t - T/2) / (0.4 T), zero for |u| >= 1.
inline std::vector<TestFunction> make_test_functions(double ell, double T, int modes) {
    if (modes < 1) throw Error("need at least one test mode");
    const double center = 0.5 * T;
    const double half = 0.4 * T;
    auto bump = [=](double t) {
        const double u = (t - center) / half;
        if (std::abs(u) >= 1.0) return 0.0;
        return std::exp(-1.0 / (1.0 - u * u));
    };
    auto bump_dt = [=](double t) {
        const double u = (t - center) / half;
        if (std::abs(u) >= 1.0) return 0.0;
        const double w = 1.0 - u * u;
        return std::exp(-1.0 / w) * (-2.0 * u / (w * w)) / half;
    };
    std::vector<TestFunction> out;
    for (int k = 1; k <= modes; ++k) {
        const double q = k * std::numbers::pi / ell;
        TestFunction f;
        f.mode = k;
        f.domain_length = ell;
        f.t_final = T;
        f.bump_center = center;
        f.bump_half_width = half;
        f.value = [=](double t, double x) { return bump(t) * std::cos(q * x); };
        f.dt = [=](double t, double x) { return bump_dt(t) * std::cos(q * x); };
        f.dx = [=](double t, double x) { return -bump(t) * q * std::sin(q * x); };
        f.dxx = [=](double t, double x) { return -bump(t) * q * q * std::cos(q * x); };
        out.push_back(std::move(f));
    }
    return out;
}

/// Throws unless phi_x vanishes at both ends of the domain and phi vanishes at
/// t = 0 and t = T (sampled).
inline void check_test_function(const TestFunction& f) {
    const double ell = f.domain_length;
    const double T = f.t_final;
    double scale = 0.0;
    for (int a = 0; a <= 20; ++a) {
        for (int b = 0; b <= 20; ++b) {
            scale = std::max(scale, std::abs(f.dx(T * a / 20.0, ell * b / 20.0)));
        }
    }
    const double tol = 1e-12 * std::max(1.0, scale);
    for (int a = 0; a <= 20; ++a) {
        const double t = T * a / 20.0;
        if (std::abs(f.dx(t, 0.0)) > tol || std::abs(f.dx(t, ell)) > tol) {
            throw Error("test function violates phi_x = 0 at the boundary (t = " +
                        std::to_string(t) + ")");
        }
    }
    for (int b = 0; b <= 20; ++b) {
        const double x = ell * b / 20.0;
        if (f.value(0.0, x) != 0.0 || f.value(T, x) != 0.0) {
            throw Error("test function is not compactly supported in time");
        }
    }
}

/// Which equation the weak residual is measured against.
///
/// The particle system with total mass sigma moves x_i with
/// N (Phi(R_{i-1}) - Phi(R_i)) ~ -sigma Phi(rho)_x / rho and
/// -(v / N) sum K' ~ -(v / sigma) K' * rho, so it discretizes
///   rho_t = (sigma Phi(rho))_xx + (rho v(rho) (K' * rho) / sigma)_x.
/// `scheme` uses these coefficients; `unit_mass` drops them and matches the
/// scheme only when sigma = 1.
enum class WeakForm { scheme, unit_mass };

/// Value at one time of the spatial integrand of the weak form,
///   int rho phi_t + a Phi(rho) phi_xx - b rho v(rho) (K' * rho) phi_x dx,
/// with (a, b) = (sigma, 1 / sigma) or (1, 1) according to `form`,
/// Gauss-Legendre quadrature per cell and the convolution summed exactly
/// cell by cell: (K' * rho)(x) = sum_j R_j (K(x - x_j) - K(x - x_{j+1})).
inline double weak_form_integrand(const ParticleState& state, const ModelSpec& spec,
                                  const TestFunction& test, const detail::GaussRule& rule,
                                  WeakForm form = WeakForm::scheme) {
    const double diffusion_coef = form == WeakForm::scheme ? state.mass : 1.0;
    const double drift_coef = form == WeakForm::scheme ? 1.0 / state.mass : 1.0;
    const auto& x = state.positions;
    const auto r = local_densities(state);
    const std::size_t n = r.size();
    std::vector<double> kv(n + 1);
    double total = 0.0;
    const double t = state.time;
    for (std::size_t i = 0; i < n; ++i) {
        const double mid = 0.5 * (x[i] + x[i + 1]);
        const double half = 0.5 * (x[i + 1] - x[i]);
        const double rho = r[i];
        const double phi_rho = diffusion_coef * spec.diffusion(rho);
        const double mobility = drift_coef * rho * spec.velocity(rho);
        double cell = 0.0;
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            const double xq = mid + half * rule.nodes[q];
            double conv = 0.0;
            if (mobility != 0.0) {
                for (std::size_t j = 0; j <= n; ++j) kv[j] = spec.kernel.K(xq - x[j]);
                for (std::size_t j = 0; j < n; ++j) conv += r[j] * (kv[j] - kv[j + 1]);
            }
            const double integrand = rho * test.dt(t, xq) + phi_rho * test.dxx(t, xq) -
                                     mobility * conv * test.dx(t, xq);
            cell += rule.weights[q] * integrand;
        }
        total += half * cell;
    }
    return total;
}

/// Space-time weak residual of the trajectory against one test function:
/// spatial quadrature per snapshot, trapezoid rule over snapshot times.
inline double weak_residual(const Trajectory& traj, const ModelSpec& spec,
                            const TestFunction& test, std::size_t gauss_nodes = 5,
                            WeakForm form = WeakForm::scheme) {
    check_test_function(test);
    const auto& snaps = traj.snapshots;
    if (snaps.size() < 2) throw Error("weak_residual needs at least two snapshots");
    const auto rule = detail::gauss_legendre(gauss_nodes);
    std::vector<double> f(snaps.size());
    for (std::size_t k = 0; k < snaps.size(); ++k) {
        const double t = snaps[k].time;
        const double u = (t - test.bump_center) / test.bump_half_width;
        f[k] = std::abs(u) >= 1.0 ? 0.0 : weak_form_integrand(snaps[k], spec, test, rule, form);
    }
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < snaps.size(); ++k) {
        total += 0.5 * (f[k] + f[k + 1]) * (snaps[k + 1].time - snaps[k].time);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Self-convergence across particle numbers

struct ConvergenceRow {
    std::size_t n_coarse = 0;
    std::size_t n_fine = 0;
    double l1 = 0.0;
    double w1 = 0.0;
};

struct ConvergenceStudy {
    std::vector<std::size_t> particle_counts;
    std::vector<DiscreteDensity> final_densities;
    std::vector<StepLog> step_logs;
    std::vector<ConvergenceRow> rows;
};

/// Runs atomize + integrate for each N (concurrently) and tabulates L1 and W1
/// distances of the final densities between consecutive entries of N_list.
inline ConvergenceStudy self_convergence(const ModelSpec& spec, const InitialDatum& datum,
                                         const std::vector<std::size_t>& N_list, double T,
                                         IntegratorConfig config = {}) {
    if (N_list.size() < 3) throw Error("self_convergence needs at least three particle counts");
    for (std::size_t k = 0; k < N_list.size(); ++k) {
        if (N_list[k] < 2) throw Error("particle counts must be >= 2");
        if (k > 0 && N_list[k] <= N_list[k - 1]) throw Error("particle counts must increase");
    }
    config.t_final = T;
    config.snapshot_times = {0.0, T};
    std::vector<std::future<Trajectory>> runs;
    for (std::size_t N : N_list) {
        runs.push_back(std::async(std::launch::async, [&spec, &datum, N, config] {
            return integrate(atomize(datum, spec, N), spec, config);
        }));
    }
    ConvergenceStudy study;
    study.particle_counts = N_list;
    for (auto& run : runs) {
        Trajectory traj = run.get();
        study.final_densities.push_back(reconstruct_density(traj.snapshots.back()));
        study.step_logs.push_back(std::move(traj.step_log));
    }
    for (std::size_t k = 0; k + 1 < N_list.size(); ++k) {
        const auto& a = study.final_densities[k];
        const auto& b = study.final_densities[k + 1];
        study.rows.push_back({N_list[k], N_list[k + 1], l1_distance(a, b), wasserstein1(a, b)});
    }
    return study;
}

// ---------------------------------------------------------------------------
// Aggregate report

struct DiagnosticsOptions {
    bool minmax = true;
    bool tv = true;
    double tv_fit_fraction = 0.5;  ///< fit the TV envelope on [0, fraction * T]
    bool w1 = true;
    int test_modes = 3;  ///< 0 disables the weak residual
    std::size_t gauss_nodes = 5;
};

struct DiagnosticsReport {
    bool minmax_checked = false;
    MinMaxEnvelope minmax;
    bool tv_checked = false;
    TvEnvelope tv;
    double w1_lipschitz = 0.0;
    std::vector<double> weak_residuals;
    double c_used = 0.0;
    double max_mass_error = 0.0;  ///< max over snapshots |sum R_i gap_i - mass| / mass
    double final_min_density = 0.0;
    double final_max_density = 0.0;
    double final_max_jump = 0.0;

    bool pass() const {
        return (!minmax_checked || minmax.all_pass()) && (!tv_checked || tv.contained()) &&
               max_mass_error <= 1e-12;
    }
};

inline DiagnosticsReport diagnose(const Trajectory& traj, const ModelSpec& spec,
                                  const DensityBounds& bounds,
                                  const DiagnosticsOptions& options = {}) {
    DiagnosticsReport report;
    report.c_used = bracket_constant(spec, bounds);
    for (const auto& s : traj.snapshots) {
        const double m = integrated_mass(reconstruct_density(s));
        report.max_mass_error = std::max(report.max_mass_error, std::abs(m - s.mass) / s.mass);
    }
    const auto final_density = reconstruct_density(traj.snapshots.back());
    std::tie(report.final_min_density, report.final_max_density) = min_max(final_density);
    report.final_max_jump = max_jump(final_density);
    if (options.minmax && bounds.lower > 0.0) {
        report.minmax = check_minmax(traj, spec, bounds);
        report.minmax_checked = true;
    }
    const double T = traj.snapshots.back().time;
    if (options.tv && traj.snapshots.size() >= 3) {
        report.tv = tv_envelope(traj, options.tv_fit_fraction * T);
        report.tv_checked = true;
    }
    if (options.w1 && traj.snapshots.size() >= 2) {
        report.w1_lipschitz = w1_time_lipschitz(traj);
    }
    if (options.test_modes > 0 && traj.snapshots.size() >= 2) {
        const auto tests = make_test_functions(spec.domain_length, T, options.test_modes);
        for (const auto& f : tests) {
            report.weak_residuals.push_back(weak_residual(traj, spec, f, options.gauss_nodes));
        }
    }
    return report;
}

}  // namespace ftl
