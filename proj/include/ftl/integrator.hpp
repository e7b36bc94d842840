#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "ftl/atomization.hpp"
#include "ftl/dynamics.hpp"
#include "ftl/error.hpp"
#include "ftl/model.hpp"

namespace ftl {

struct IntegratorConfig {
    double t_final = 1.0;
    double abs_tolerance = 1e-8;  ///< max-norm bound on the local error, position units
    double safety_factor = 0.8;
    double max_step = 0.0;        ///< 0 selects t_final / 100
    double min_step = 0.0;        ///< 0 selects 1e-12 * t_final
    std::vector<double> snapshot_times;  ///< empty selects 101 uniform times
    /// M used for the gap floor mass / (2 M N). 0 selects the larger of the
    /// saturation density and the largest initial cell density.
    double density_ceiling = 0.0;
    AssemblyOptions assembly;
};

inline std::vector<double> uniform_times(double t_final, std::size_t count) {
    std::vector<double> t(count);
    for (std::size_t k = 0; k < count; ++k) {
        t[k] = k + 1 == count ? t_final
                              : t_final * static_cast<double>(k) / static_cast<double>(count - 1);
    }
    return t;
}

struct StepLog {
    std::size_t accepted = 0;
    std::size_t rejected = 0;      ///< error-estimate rejections
    std::size_t gap_rejected = 0;  ///< trial states below the gap floor
    std::size_t rhs_evaluations = 0;
    std::vector<double> accepted_steps;
};

struct Trajectory {
    std::vector<ParticleState> snapshots;
    StepLog step_log;
};

namespace detail {

struct Dopri5Tableau {
    static constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
    static constexpr double a21 = 1.0 / 5.0;
    static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
    static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
    static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                            a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
    static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0,
                            a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                            a65 = -5103.0 / 18656.0;
    static constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                            a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;
    static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                            e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
    static constexpr double d1 = -12715105075.0 / 11282082432.0,
                            d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0,
                            d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0,
                            d7 = 69997945.0 / 29380423.0;
};

/// Dormand-Prince 5(4) stage machinery on a flat position vector. Endpoint
/// velocities are zero, so x_0 and x_N are carried through unchanged.
class Dopri5 {
public:
    Dopri5(const ModelSpec& spec, double mass, AssemblyOptions options)
        : assembler_(spec, options), mass_(mass) {}

    void rhs(const std::vector<double>& x, std::vector<double>& out) {
        out.resize(x.size());
        assembler_.evaluate(x, mass_, out);
        ++evaluations_;
    }

    /// One trial step from (x, k1). Leaves the candidate in `next`, its
    /// derivative in `next_derivative`, and returns max |local error|. Returns
    /// infinity when a stage state or the candidate loses particle ordering.
    double trial(const std::vector<double>& x, const std::vector<double>& k1, double h) {
        try {
            return trial_stages(x, k1, h);
        } catch (const StateError&) {
            ordered_ = false;
            return std::numeric_limits<double>::infinity();
        }
    }

    /// False when the last trial crossed particles at some stage.
    bool ordered() const { return ordered_; }

    /// Dense output of the last trial step at theta in [0, 1].
    void interpolate(const std::vector<double>& x, double h, double theta,
                     std::vector<double>& out) const {
        using T = Dopri5Tableau;
        const auto& k1 = *k1_;
        const std::size_t n = x.size();
        out.resize(n);
        const double theta1 = 1.0 - theta;
        for (std::size_t i = 0; i < n; ++i) {
            const double ydiff = next_[i] - x[i];
            const double bspl = h * k1[i] - ydiff;
            const double r4 = ydiff - h * k7_[i] - bspl;
            const double r5 = h * (T::d1 * k1[i] + T::d3 * k3_[i] + T::d4 * k4_[i] +
                                   T::d5 * k5_[i] + T::d6 * k6_[i] + T::d7 * k7_[i]);
            out[i] = x[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
        }
        out.front() = x.front();
        out.back() = x.back();
    }

    const std::vector<double>& next() const { return next_; }
    const std::vector<double>& next_derivative() const { return k7_; }
    std::size_t evaluations() const { return evaluations_; }

private:
    double trial_stages(const std::vector<double>& x, const std::vector<double>& k1, double h) {
        using T = Dopri5Tableau;
        const std::size_t n = x.size();
        for (auto* v : {&y_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &next_}) v->resize(n);
        k1_ = &k1;
        ordered_ = true;
        for (std::size_t i = 0; i < n; ++i) y_[i] = x[i] + h * (T::a21 * k1[i]);
        rhs(y_, k2_);
        for (std::size_t i = 0; i < n; ++i) y_[i] = x[i] + h * (T::a31 * k1[i] + T::a32 * k2_[i]);
        rhs(y_, k3_);
        for (std::size_t i = 0; i < n; ++i)
            y_[i] = x[i] + h * (T::a41 * k1[i] + T::a42 * k2_[i] + T::a43 * k3_[i]);
        rhs(y_, k4_);
        for (std::size_t i = 0; i < n; ++i)
            y_[i] = x[i] + h * (T::a51 * k1[i] + T::a52 * k2_[i] + T::a53 * k3_[i] +
                                T::a54 * k4_[i]);
        rhs(y_, k5_);
        for (std::size_t i = 0; i < n; ++i)
            y_[i] = x[i] + h * (T::a61 * k1[i] + T::a62 * k2_[i] + T::a63 * k3_[i] +
                                T::a64 * k4_[i] + T::a65 * k5_[i]);
        rhs(y_, k6_);
        for (std::size_t i = 0; i < n; ++i)
            next_[i] = x[i] + h * (T::a71 * k1[i] + T::a73 * k3_[i] + T::a74 * k4_[i] +
                                   T::a75 * k5_[i] + T::a76 * k6_[i]);
        next_.front() = x.front();
        next_.back() = x.back();
        rhs(next_, k7_);
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = h * (T::e1 * k1[i] + T::e3 * k3_[i] + T::e4 * k4_[i] +
                                  T::e5 * k5_[i] + T::e6 * k6_[i] + T::e7 * k7_[i]);
            err = std::max(err, std::abs(e));
        }
        return err;
    }

    bool ordered_ = true;
    ForceAssembler assembler_;
    double mass_;
    std::size_t evaluations_ = 0;
    const std::vector<double>* k1_ = nullptr;
    std::vector<double> y_, k2_, k3_, k4_, k5_, k6_, k7_, next_;
};

inline double max_density(const std::vector<double>& x, double mass) {
    const double cell = mass / static_cast<double>(x.size() - 1);
    return cell / min_gap(x);
}

}  // namespace detail

/// Why step_once refused a step.
struct StepRejection {
    enum class Reason { error_estimate, gap_floor };
    Reason reason;
    double error_estimate;  ///< max |local error| / abs_tolerance
    double min_gap;         ///< smallest gap of the candidate state
};

using StepResult = std::variant<ParticleState, StepRejection>;

/// One Dormand-Prince 5(4) step of size dt. Accepts when the embedded error
/// estimate is within `abs_tolerance` and every gap stays above `gap_floor`.
inline StepResult step_once(const ParticleState& state, const ModelSpec& spec, double dt,
                            double abs_tolerance = 1e-8, double gap_floor = 0.0,
                            AssemblyOptions options = {}) {
    if (!(dt > 0.0)) throw Error("step size must be positive");
    check_state(state);
    detail::Dopri5 method(spec, state.mass, options);
    std::vector<double> k1;
    method.rhs(state.positions, k1);
    const double err = method.trial(state.positions, k1, dt) / abs_tolerance;
    const double gap = method.ordered() ? min_gap(method.next()) : 0.0;
    if (!method.ordered() || !(gap > gap_floor)) {
        return StepRejection{StepRejection::Reason::gap_floor, err, gap};
    }
    if (!(err <= 1.0)) {
        return StepRejection{StepRejection::Reason::error_estimate, err, gap};
    }
    ParticleState out{state.time + dt, method.next(), state.mass};
    return out;
}

/// Integrates the particle system from `initial` to t_final and records
/// snapshots by dense output.
///
/// Step size follows a PI controller on the embedded error estimate. A trial
/// state with any gap below mass / (2 M N) is rejected and retried with half
/// the step. Throws IntegrationError when the step drops below min_step or the
/// right-hand side stops being finite.
///
/// `traj` is filled in place, so on failure it keeps every snapshot recorded
/// before the error.
inline void integrate_into(const ParticleState& initial, const ModelSpec& spec,
                           const IntegratorConfig& config, Trajectory& traj) {
    check_state(initial);
    const double T = config.t_final;
    if (!(T > 0.0)) throw Error("t_final must be positive");
    if (!(config.abs_tolerance > 0.0)) throw Error("abs_tolerance must be positive");
    if (!(config.safety_factor > 0.0 && config.safety_factor <= 1.0)) {
        throw Error("safety factor must lie in (0, 1]");
    }
    const double max_step = config.max_step > 0.0 ? config.max_step : T / 100.0;
    const double min_step = config.min_step > 0.0 ? config.min_step : 1e-12 * T;
    if (!(min_step <= max_step && max_step <= T)) {
        throw Error("need 0 < min_step <= max_step <= t_final");
    }

    std::vector<double> times =
        config.snapshot_times.empty() ? uniform_times(T, 101) : config.snapshot_times;
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (!(times[k] >= 0.0 && times[k] <= T)) throw Error("snapshot time outside [0, T]");
        if (k > 0 && !(times[k] > times[k - 1])) throw Error("snapshot times must increase");
    }
    if (times.empty() || times.front() > 0.0) times.insert(times.begin(), 0.0);

    const std::size_t N = initial.particle_count();
    const double mass = initial.mass;
    const double ceiling = config.density_ceiling > 0.0
                               ? config.density_ceiling
                               : std::max(spec.velocity.saturation_density,
                                          detail::max_density(initial.positions, mass));
    const double gap_floor = mass / (2.0 * ceiling * static_cast<double>(N));

    traj = Trajectory{};
    auto& log = traj.step_log;
    traj.snapshots.reserve(times.size());

    detail::Dopri5 method(spec, mass, config.assembly);
    double t = initial.time;
    std::vector<double> x = initial.positions;
    std::vector<double> k1;
    method.rhs(x, k1);

    std::size_t next_snapshot = 0;
    while (next_snapshot < times.size() && times[next_snapshot] <= t) {
        traj.snapshots.push_back(ParticleState{times[next_snapshot], x, mass});
        ++next_snapshot;
    }

    const double lip = spec.diffusion.lipschitz_bound;
    const double g0 = min_gap(x);
    double h = lip > 0.0 ? std::min(max_step, 0.25 * g0 * g0 / lip) : max_step;
    h = std::max(h, min_step);

    // PI control constants (Hairer & Wanner, DOPRI5)
    constexpr double beta = 0.04;
    constexpr double expo = 0.2 - beta * 0.75;
    constexpr double fac_min = 0.2;
    constexpr double fac_max = 10.0;
    const double safe = config.safety_factor;
    double err_old = 1e-4;
    bool rejected_last = false;

    std::vector<double> dense;
    while (t < T) {
        log.rhs_evaluations = method.evaluations();
        bool last = false;
        if (t + h >= T || T - (t + h) < 1e-14 * T) {
            h = T - t;
            last = true;
        }
        double raw;
        try {
            raw = method.trial(x, k1, h);
        } catch (const StateError&) {
            throw;
        } catch (const Error& e) {
            throw IntegrationError(std::string("right-hand side failed: ") + e.what(), t,
                                   min_gap(x), 0);
        }
        std::size_t gap_at = 0;
        const double gap = method.ordered() ? min_gap(method.next(), &gap_at) : 0.0;
        if (!method.ordered() || !(gap >= gap_floor)) {
            ++log.gap_rejected;
            rejected_last = true;
            h *= 0.5;
            if (h < min_step) {
                throw IntegrationError("step size underflow: gap floor " +
                                           std::to_string(gap_floor) + " not maintained",
                                       t, gap, gap_at);
            }
            continue;
        }
        if (!std::isfinite(raw)) {
            throw IntegrationError("non-finite error estimate", t, gap, gap_at);
        }
        const double err = raw / config.abs_tolerance;
        if (err <= 1.0) {
            const double t_new = last ? T : t + h;
            while (next_snapshot < times.size() && times[next_snapshot] <= t_new) {
                const double ts = times[next_snapshot];
                if (ts == t_new) {
                    traj.snapshots.push_back(ParticleState{ts, method.next(), mass});
                } else {
                    method.interpolate(x, h, (ts - t) / h, dense);
                    if (!(min_gap(dense) > 0.0)) {
                        throw IntegrationError("dense output lost particle ordering", ts,
                                               min_gap(dense), 0);
                    }
                    traj.snapshots.push_back(ParticleState{ts, dense, mass});
                }
                ++next_snapshot;
            }
            ++log.accepted;
            log.accepted_steps.push_back(h);
            x = method.next();
            k1 = method.next_derivative();
            t = t_new;

            const double fac11 = std::pow(std::max(err, 1e-300), expo);
            double fac = fac11 / std::pow(err_old, beta);
            fac = std::clamp(fac / safe, 1.0 / fac_max, 1.0 / fac_min);
            double h_new = h / fac;
            if (rejected_last) h_new = std::min(h_new, h);
            err_old = std::max(err, 1e-4);
            rejected_last = false;
            h = std::min(h_new, max_step);
        } else {
            ++log.rejected;
            rejected_last = true;
            const double fac11 = std::pow(err, expo);
            h = h / std::min(1.0 / fac_min, fac11 / safe);
            if (h < min_step) {
                throw IntegrationError("step size underflow", t, gap, gap_at);
            }
        }
    }
    log.rhs_evaluations = method.evaluations();
}

inline Trajectory integrate(const ParticleState& initial, const ModelSpec& spec,
                            const IntegratorConfig& config) {
    Trajectory traj;
    integrate_into(initial, spec, config, traj);
    return traj;
}

}  // namespace ftl
