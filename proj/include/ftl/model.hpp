#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ftl/detail/vector_exp.hpp"
#include "ftl/error.hpp"

namespace ftl {

using ScalarMap = std::function<double(double)>;

/// Nonlinear diffusion phi. Nondecreasing, Lipschitz, phi(0) = 0.
struct DiffusionLaw {
    std::string name;
    ScalarMap evaluate;
    double lipschitz_bound = 0.0;

    double operator()(double rho) const { return evaluate(rho); }
};

/// Mobility velocity v. Nonincreasing, v(0) = v_max and v = 0 from the
/// saturation density on.
struct VelocityLaw {
    std::string name;
    ScalarMap evaluate;
    double saturation_density = 1.0;
    double v_max = 1.0;

    double operator()(double rho) const { return evaluate(rho); }
};

/// Evaluates K' on a batch of displacements; out.size() == displacement.size().
using BatchMap = std::function<void(std::span<const double>, std::span<double>)>;

/// Attractive, radially symmetric interaction potential K.
///
/// `second` and `third` are optional closed forms for K'' and K''', used only
/// to compute the bound L. `derivative_batch` is the hot path of force assembly;
/// when empty, `derivative` is called point by point. A batch implementation
/// must agree bitwise with `derivative` element by element.
struct InteractionKernel {
    std::string name;
    ScalarMap potential;
    ScalarMap derivative;
    ScalarMap second;
    ScalarMap third;
    BatchMap derivative_batch;
    double bound = 0.0;  ///< L = max(L1, L2, L3) over [-2l, 2l]

    double K(double x) const { return potential(x); }
    double Kprime(double x) const { return derivative(x); }

    void Kprime(std::span<const double> displacement, std::span<double> out) const {
        if (derivative_batch) {
            derivative_batch(displacement, out);
            return;
        }
        for (std::size_t k = 0; k < displacement.size(); ++k) {
            out[k] = derivative(displacement[k]);
        }
    }
};

/// One PDE instance: laws, domain [0, domain_length] and total mass.
struct ModelSpec {
    DiffusionLaw diffusion;
    VelocityLaw velocity;
    InteractionKernel kernel;
    double domain_length = 1.0;
    double mass = 1.0;
};

inline ModelSpec make_model(DiffusionLaw diffusion, VelocityLaw velocity,
                            InteractionKernel kernel, double domain_length,
                            double mass) {
    if (!(domain_length > 0.0) || !std::isfinite(domain_length)) {
        throw ModelError("domain length must be positive and finite");
    }
    if (!(mass > 0.0) || !std::isfinite(mass)) {
        throw ModelError("mass must be positive and finite");
    }
    return ModelSpec{std::move(diffusion), std::move(velocity), std::move(kernel),
                     domain_length, mass};
}

/// Initial density on [0, domain_length] with its exact primitive.
struct InitialDatum {
    std::string name;
    ScalarMap evaluate;
    ScalarMap cumulative;
    /// Closed-form inverse of `cumulative` on [0, mass]; empty when the
    /// primitive has no convenient inverse (atomization then bisects).
    ScalarMap inverse_cumulative;
    double lower_bound = 0.0;  ///< m
    double upper_bound = 0.0;  ///< M
    double total_variation = 0.0;
    double domain_length = 1.0;

    double mass() const { return cumulative(domain_length); }
};

/// The (m, M) pair used by the gap bracket.
struct DensityBounds {
    double lower = 0.0;
    double upper = 0.0;
};

/// m comes from the datum. M is the larger of the datum's upper bound and the
/// saturation density: the bracket argument needs v(M) = 0, and any M above
/// sup of the datum is an admissible choice.
inline DensityBounds density_bounds(const ModelSpec& spec, const InitialDatum& datum) {
    return {datum.lower_bound,
            std::max(datum.upper_bound, spec.velocity.saturation_density)};
}

// ---------------------------------------------------------------------------
// Diffusion presets

/// phi(rho) = (eps/2) rho^2. The Lipschitz bound is eps * density_cap, valid on
/// [0, density_cap].
inline DiffusionLaw preset_phi_pm(double epsilon, double density_cap = 2.0) {
    if (!(epsilon > 0.0)) throw ModelError("porous-medium epsilon must be positive");
    if (!(density_cap > 0.0)) throw ModelError("density cap must be positive");
    return {"porous_medium",
            [epsilon](double rho) { return 0.5 * epsilon * rho * rho; },
            epsilon * density_cap};
}

/// phi(rho) = eps * int_0^rho z^(m-1) (1 - z)_+ dz: the closed form
/// (eps/m) rho^m - (eps/(m+1)) rho^(m+1) up to rho = 1 and its value at 1 beyond,
/// where the mobility factor (1 - z)_+ vanishes.
inline DiffusionLaw preset_phi_tp(double epsilon, double m_exp) {
    if (!(epsilon > 0.0)) throw ModelError("two-point epsilon must be positive");
    if (!(m_exp >= 2.0)) throw ModelError("two-point exponent must be >= 2");
    auto closed = [epsilon, m_exp](double rho) {
        return epsilon / m_exp * std::pow(rho, m_exp) -
               epsilon / (m_exp + 1.0) * std::pow(rho, m_exp + 1.0);
    };
    const double plateau = closed(1.0);
    const double peak = (m_exp - 1.0) / m_exp;
    const double lipschitz = epsilon * std::pow(peak, m_exp - 1.0) * (1.0 - peak);
    return {"two_point",
            [closed, plateau](double rho) { return rho < 1.0 ? closed(rho) : plateau; },
            lipschitz};
}

/// Strongly degenerate phi: flat at 2 eps/25 on [2/5, 3/5). Branches are
/// closed on the left.
inline DiffusionLaw preset_phi_sd(double epsilon, double density_cap = 2.0) {
    if (!(epsilon > 0.0)) throw ModelError("strongly degenerate epsilon must be positive");
    if (!(density_cap > 0.0)) throw ModelError("density cap must be positive");
    constexpr double lo = 2.0 / 5.0;
    constexpr double hi = 3.0 / 5.0;
    auto eval = [epsilon](double rho) {
        if (rho < lo) return 0.5 * epsilon * rho * rho;
        if (rho < hi) return 2.0 * epsilon / 25.0;
        const double d = rho - hi;
        return 2.0 * epsilon / 25.0 + 0.5 * epsilon * d * d;
    };
    return {"strongly_degenerate", eval, epsilon * std::max(lo, density_cap - hi)};
}

/// phi == 0. Not an admissible diffusion in the strict sense of the theory, but
/// handy for pure-transport runs and stationary fixtures.
inline DiffusionLaw zero_diffusion() {
    return {"none", [](double) { return 0.0; }, 0.0};
}

// ---------------------------------------------------------------------------
// Velocity presets

/// v(rho) = (1 - rho / rho_max)_+.
inline VelocityLaw preset_velocity_saturating(double rho_max) {
    if (!(rho_max > 0.0)) throw ModelError("saturation density must be positive");
    return {"saturating",
            [rho_max](double rho) { return rho < rho_max ? 1.0 - rho / rho_max : 0.0; },
            rho_max, 1.0};
}

/// v == 1 below rho_max and 0 from rho_max on.
inline VelocityLaw constant_velocity(double rho_max = std::numeric_limits<double>::max()) {
    return {"constant", [rho_max](double rho) { return rho < rho_max ? 1.0 : 0.0; },
            rho_max, 1.0};
}

// ---------------------------------------------------------------------------
// Kernels

/// L = 1.05 * max(L1, L2, L3) sampled on `samples` points of [-2l, 2l]. L1 is
/// the largest difference quotient of K'; L2, L3 are sup |K''|, sup |K'''|
/// from closed forms when given, from finite differences of K' otherwise.
inline double estimate_kernel_bound(const InteractionKernel& kernel, double domain_length,
                                    std::size_t samples = 10000) {
    const double a = -2.0 * domain_length;
    const double h = 4.0 * domain_length / static_cast<double>(samples - 1);
    std::vector<double> kp(samples);
    for (std::size_t k = 0; k < samples; ++k) {
        kp[k] = kernel.derivative(a + h * static_cast<double>(k));
    }
    double l1 = 0.0;
    for (std::size_t k = 0; k + 1 < samples; ++k) {
        l1 = std::max(l1, std::abs(kp[k + 1] - kp[k]) / h);
    }
    double l2 = 0.0;
    double l3 = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
        const double x = a + h * static_cast<double>(k);
        if (kernel.second) {
            l2 = std::max(l2, std::abs(kernel.second(x)));
        } else if (k > 0 && k + 1 < samples) {
            l2 = std::max(l2, std::abs(kp[k + 1] - kp[k - 1]) / (2.0 * h));
        }
        if (kernel.third) {
            l3 = std::max(l3, std::abs(kernel.third(x)));
        } else if (k > 0 && k + 1 < samples) {
            l3 = std::max(l3, std::abs(kp[k + 1] - 2.0 * kp[k] + kp[k - 1]) / (h * h));
        }
    }
    return 1.05 * std::max({l1, l2, l3});
}

/// K(x) = strength * (1 - exp(-x^2)).
inline InteractionKernel preset_kernel_gaussian(double strength, double domain_length) {
    if (!(strength > 0.0)) throw ModelError("kernel strength must be positive");
    if (!(domain_length > 0.0)) throw ModelError("domain length must be positive");
    const double s = strength;
    InteractionKernel kernel;
    kernel.name = "gaussian";
    kernel.potential = [s](double x) { return s * (1.0 - detail::exp_nonpositive(-x * x)); };
    kernel.derivative = [s](double x) {
        return 2.0 * s * x * detail::exp_nonpositive(-x * x);
    };
    kernel.second = [s](double x) {
        return 2.0 * s * (1.0 - 2.0 * x * x) * std::exp(-x * x);
    };
    kernel.third = [s](double x) {
        return 2.0 * s * (4.0 * x * x * x - 6.0 * x) * std::exp(-x * x);
    };
    kernel.derivative_batch = [s](std::span<const double> d, std::span<double> out) {
        const double* __restrict in = d.data();
        double* __restrict res = out.data();
        const std::size_t n = d.size();
        for (std::size_t k = 0; k < n; ++k) {
            const double x = in[k];
            res[k] = 2.0 * s * x * detail::exp_nonpositive(-x * x);
        }
    };
    kernel.bound = estimate_kernel_bound(kernel, domain_length);
    return kernel;
}

/// K == 0. Violates the strict attraction condition; used for stationary
/// fixtures and pure-diffusion runs.
inline InteractionKernel zero_kernel() {
    InteractionKernel kernel;
    kernel.name = "none";
    kernel.potential = [](double) { return 0.0; };
    kernel.derivative = [](double) { return 0.0; };
    kernel.second = [](double) { return 0.0; };
    kernel.third = [](double) { return 0.0; };
    kernel.bound = 0.0;
    return kernel;
}

// ---------------------------------------------------------------------------
// Initial data

inline InitialDatum preset_initial_constant(double value, double length = 1.0) {
    if (!(value > 0.0)) throw ModelError("constant datum must be positive");
    if (!(length > 0.0)) throw ModelError("domain length must be positive");
    InitialDatum d;
    d.name = "constant";
    d.evaluate = [value](double) { return value; };
    d.cumulative = [value, length](double x) { return value * std::clamp(x, 0.0, length); };
    d.inverse_cumulative = [value](double z) { return z / value; };
    d.lower_bound = value;
    d.upper_bound = value;
    d.total_variation = 2.0 * value;
    d.domain_length = length;
    return d;
}

/// v_left on [0, split), v_right on [split, length].
inline InitialDatum preset_initial_two_step(double v_left, double v_right, double split,
                                            double length = 1.0) {
    if (!(v_left > 0.0) || !(v_right > 0.0)) {
        throw ModelError("two-step values must be positive");
    }
    if (!(length > 0.0) || !(split > 0.0) || !(split < length)) {
        throw ModelError("two-step split must lie strictly inside the domain");
    }
    const double left_mass = v_left * split;
    InitialDatum d;
    d.name = "two_step";
    d.evaluate = [=](double x) { return x < split ? v_left : v_right; };
    d.cumulative = [=](double x) {
        x = std::clamp(x, 0.0, length);
        return x < split ? v_left * x : left_mass + v_right * (x - split);
    };
    d.inverse_cumulative = [=](double z) {
        return z < left_mass ? z / v_left : split + (z - left_mass) / v_right;
    };
    d.lower_bound = std::min(v_left, v_right);
    d.upper_bound = std::max(v_left, v_right);
    d.total_variation = v_left + v_right + std::abs(v_left - v_right);
    d.domain_length = length;
    return d;
}

/// rho(x) = (cos(4 pi x) + 1) / 2 on [0, 2]. Touches zero, so the lower bound
/// is 0 and the validator flags it.
inline InitialDatum preset_initial_sine() {
    constexpr double pi = std::numbers::pi;
    InitialDatum d;
    d.name = "sine";
    d.evaluate = [](double x) { return 0.5 * (std::cos(4.0 * pi * x) + 1.0); };
    d.cumulative = [](double x) {
        x = std::clamp(x, 0.0, 2.0);
        return 0.5 * x + std::sin(4.0 * pi * x) / (8.0 * pi);
    };
    d.lower_bound = 0.0;
    d.upper_bound = 1.0;
    // four full oscillations plus the two boundary jumps of height 1
    d.total_variation = 10.0;
    d.domain_length = 2.0;
    return d;
}

// ---------------------------------------------------------------------------
// Admissibility by dense sampling

struct Violation {
    std::string law;  ///< "diffusion", "velocity", "kernel", "datum", "model"
    std::string message;
    double at = 0.0;  ///< sample location (density, displacement or position)
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool admissible() const { return violations.empty(); }
    bool has(const std::string& law) const {
        return std::any_of(violations.begin(), violations.end(),
                           [&](const Violation& v) { return v.law == law; });
    }
};

/// Samples every law on `grid_points` points and records each hypothesis that
/// fails. Densities are sampled on [0, 2M] with M from density_bounds();
/// displacements on [-2l, 2l]; the datum on [0, l]. At most one entry is
/// recorded per (law, condition) pair.
inline ValidationReport validate(const ModelSpec& spec, const InitialDatum& datum,
                                 std::size_t grid_points = 1000) {
    ValidationReport report;
    if (grid_points < 2) grid_points = 2;
    auto flag = [&](std::string law, std::string message, double at) {
        report.violations.push_back({std::move(law), std::move(message), at});
    };
    const DensityBounds bounds = density_bounds(spec, datum);
    const double rho_top = 2.0 * std::max(bounds.upper, spec.velocity.saturation_density);
    const double drho = rho_top / static_cast<double>(grid_points - 1);
    auto rho_at = [&](std::size_t k) { return drho * static_cast<double>(k); };

    if (!(spec.domain_length > 0.0)) flag("model", "domain length must be positive", 0.0);
    if (!(spec.mass > 0.0)) flag("model", "mass must be positive", 0.0);

    // diffusion
    {
        const auto& phi = spec.diffusion;
        if (phi(0.0) != 0.0) flag("diffusion", "phi(0) != 0", 0.0);
        bool mono = true, lip = true, finite = true;
        double prev = phi(0.0);
        for (std::size_t k = 1; k < grid_points; ++k) {
            const double rho = rho_at(k);
            const double cur = phi(rho);
            if (!std::isfinite(cur) && finite) {
                flag("diffusion", "non-finite value", rho);
                finite = false;
            }
            if (cur < prev && mono) {
                flag("diffusion", "phi decreases", rho);
                mono = false;
            }
            const double slope = std::abs(cur - prev) / drho;
            if (slope > phi.lipschitz_bound * (1.0 + 1e-12) + 1e-15 && lip) {
                flag("diffusion", "difference quotient exceeds the declared Lipschitz bound",
                     rho);
                lip = false;
            }
            prev = cur;
        }
    }

    // velocity
    {
        const auto& v = spec.velocity;
        if (v(0.0) != v.v_max) flag("velocity", "v(0) differs from v_max", 0.0);
        bool mono = true, sat = true, range = true;
        double prev = v(0.0);
        for (std::size_t k = 0; k < grid_points; ++k) {
            const double rho = rho_at(k);
            const double cur = v(rho);
            if (k > 0 && cur > prev && mono) {
                flag("velocity", "v increases (monotonicity violated)", rho);
                mono = false;
            }
            if (rho >= v.saturation_density && cur != 0.0 && sat) {
                flag("velocity", "v nonzero above the saturation density", rho);
                sat = false;
            }
            if ((cur < 0.0 || cur > v.v_max) && range) {
                flag("velocity", "v outside [0, v_max]", rho);
                range = false;
            }
            prev = cur;
        }
    }

    // kernel
    {
        const auto& K = spec.kernel;
        const double ell = spec.domain_length;
        if (K.Kprime(0.0) != 0.0) flag("kernel", "K'(0) != 0", 0.0);
        const double dx = 2.0 * ell / static_cast<double>(grid_points - 1);
        bool odd = true, sign = true, lip = true;
        double prev = K.Kprime(-2.0 * ell);
        for (std::size_t k = 0; k < 2 * grid_points - 1; ++k) {
            const double x = -2.0 * ell + dx * static_cast<double>(k);
            const double kp = K.Kprime(x);
            if (k > 0 && std::abs(kp - prev) > K.bound * dx * (1.0 + 1e-12) && lip) {
                flag("kernel", "K' difference quotient exceeds the declared bound L", x);
                lip = false;
            }
            prev = kp;
            if (x > 0.0) {
                const double mirrored = K.Kprime(-x);
                if (std::abs(kp + mirrored) > 1e-14 * std::max(1.0, std::abs(kp)) && odd) {
                    flag("kernel", "K' is not odd", x);
                    odd = false;
                }
                if (!(kp > 0.0) && sign) {
                    flag("kernel", "K'(x) <= 0 for x > 0 (not attractive)", x);
                    sign = false;
                }
            }
        }
    }

    // datum
    {
        const double ell = datum.domain_length;
        if (std::abs(ell - spec.domain_length) > 1e-12 * spec.domain_length) {
            flag("datum", "datum domain differs from the model domain", ell);
        }
        if (!(datum.lower_bound > 0.0)) {
            flag("datum", "lower bound m is not positive (no strict separation from vacuum)",
                 datum.lower_bound);
        }
        if (datum.upper_bound < datum.lower_bound) {
            flag("datum", "upper bound M below lower bound m", datum.upper_bound);
        }
        if (datum.cumulative(0.0) != 0.0) flag("datum", "cumulative(0) != 0", 0.0);
        const double total = datum.cumulative(ell);
        if (std::abs(total - spec.mass) > 1e-10 * spec.mass) {
            flag("datum", "cumulative(l) differs from the model mass", ell);
        }
        const double h = ell / static_cast<double>(grid_points - 1);
        bool below = true, above = true, mono = true;
        double prev = 0.0;
        for (std::size_t k = 0; k < grid_points; ++k) {
            const double x = h * static_cast<double>(k);
            const double rho = datum.evaluate(x);
            if (rho < datum.lower_bound && below) {
                flag("datum", "datum below its lower bound m", x);
                below = false;
            }
            if (!(rho > 0.0) && below) {
                flag("datum", "datum not strictly positive", x);
                below = false;
            }
            if (rho > datum.upper_bound && above) {
                flag("datum", "datum above its upper bound M", x);
                above = false;
            }
            const double c = datum.cumulative(x);
            if (c < prev && mono) {
                flag("datum", "cumulative decreases", x);
                mono = false;
            }
            prev = c;
        }
    }
    return report;
}

}  // namespace ftl
