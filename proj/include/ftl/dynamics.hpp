#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ftl/atomization.hpp"
#include "ftl/error.hpp"
#include "ftl/model.hpp"

namespace ftl {

/// Particle velocities split into diffusive and nonlocal parts.
struct VelocityField {
    std::vector<double> total;
    std::vector<double> diffusive_part;
    std::vector<double> nonlocal_part;
};

struct AssemblyOptions {
    /// Worker threads for the kernel sums. 1 runs the serial half-pair sweep;
    /// larger values split particles across threads. Results are bitwise
    /// identical for every value.
    int threads = 1;
    /// Neumaier-compensated kernel sums. Switched on automatically above
    /// `compensation_threshold` particles.
    bool compensated = false;
    std::size_t compensation_threshold = 10000;
};

namespace detail {

struct Accumulator {
    double sum = 0.0;
    double carry = 0.0;

    void add(double v, bool compensated) {
        if (!compensated) {
            sum += v;
            return;
        }
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v)) {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    double value(bool compensated) const { return compensated ? sum + carry : sum; }
};

}  // namespace detail

/// Right-hand side of the particle system with reusable scratch buffers.
///
/// For each interior particle i the one-sided kernel sums
///   S_right(i) = sum_{j>i} K'(x_i - x_j),   S_left(i) = sum_{j<i} K'(x_i - x_j)
/// are accumulated in ascending j. The left terms are formed as -K'(x_j - x_i),
/// which equals K'(x_i - x_j) for an odd kernel, so the serial sweep can reuse
/// every pair evaluation once for both particles.
class ForceAssembler {
public:
    explicit ForceAssembler(const ModelSpec& spec, AssemblyOptions options = {})
        : spec_(&spec), options_(options) {}

    const AssemblyOptions& options() const { return options_; }

    /// Fills `total` (size N+1). The optional parts receive the diffusive and
    /// nonlocal contributions.
    void evaluate(std::span<const double> x, double mass, std::span<double> total,
                  std::span<double> diffusive = {}, std::span<double> nonlocal = {}) {
        const std::size_t n_cells = x.size() - 1;
        const double N = static_cast<double>(n_cells);
        const double cell = mass / N;
        const bool compensated =
            options_.compensated || n_cells > options_.compensation_threshold;

        phi_.resize(n_cells);
        vel_.resize(n_cells);
        for (std::size_t i = 0; i < n_cells; ++i) {
            const double gap = x[i + 1] - x[i];
            if (!(gap > 0.0)) {
                throw StateError("non-positive gap at cell " + std::to_string(i));
            }
            const double r = cell / gap;
            phi_[i] = spec_->diffusion(r);
            vel_[i] = spec_->velocity(r);
            if (!std::isfinite(phi_[i]) || !std::isfinite(vel_[i])) {
                throw Error("non-finite model evaluation at cell " + std::to_string(i));
            }
        }

        kernel_sums(x, compensated);

        const double inv_n = 1.0 / N;
        total[0] = 0.0;
        total[n_cells] = 0.0;
        if (!diffusive.empty()) diffusive[0] = diffusive[n_cells] = 0.0;
        if (!nonlocal.empty()) nonlocal[0] = nonlocal[n_cells] = 0.0;
        for (std::size_t i = 1; i < n_cells; ++i) {
            const double d = N * (phi_[i - 1] - phi_[i]);
            const double nl = -(vel_[i] * inv_n) * right_[i] - (vel_[i - 1] * inv_n) * left_[i];
            const double v = d + nl;
            if (!std::isfinite(v)) {
                throw Error("non-finite velocity at particle " + std::to_string(i));
            }
            total[i] = v;
            if (!diffusive.empty()) diffusive[i] = d;
            if (!nonlocal.empty()) nonlocal[i] = nl;
        }
    }

private:
    void kernel_sums(std::span<const double> x, bool compensated) {
        const std::size_t n = x.size();
        right_.assign(n, 0.0);
        left_.assign(n, 0.0);
        const auto& K = spec_->kernel;
#ifdef _OPENMP
        const int threads = options_.threads;
#else
        const int threads = 1;
#endif
        if (threads <= 1) {
            serial_sums(x, K, compensated);
            return;
        }
#ifdef _OPENMP
        const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(n) - 1;
#pragma omp parallel num_threads(threads)
        {
            std::vector<double> d(n);
            std::vector<double> k(n);
#pragma omp for schedule(static)
            for (std::ptrdiff_t ii = 1; ii < last; ++ii) {
                const auto i = static_cast<std::size_t>(ii);
                // j < i: -K'(x_j - x_i)
                for (std::size_t j = 0; j < i; ++j) d[j] = x[j] - x[i];
                K.Kprime(std::span<const double>(d.data(), i), std::span<double>(k.data(), i));
                detail::Accumulator acc_left;
                for (std::size_t j = 0; j < i; ++j) acc_left.add(-k[j], compensated);
                left_[i] = acc_left.value(compensated);
                // j > i: K'(x_i - x_j)
                const std::size_t m = n - i - 1;
                for (std::size_t j = 0; j < m; ++j) d[j] = x[i] - x[i + 1 + j];
                K.Kprime(std::span<const double>(d.data(), m), std::span<double>(k.data(), m));
                detail::Accumulator acc_right;
                for (std::size_t j = 0; j < m; ++j) acc_right.add(k[j], compensated);
                right_[i] = acc_right.value(compensated);
            }
        }
#endif
    }

    void serial_sums(std::span<const double> x, const InteractionKernel& K, bool compensated) {
        const std::size_t n = x.size();
        d_.resize(n);
        k_.resize(n);
        if (!compensated) {
            for (std::size_t i = 0; i + 1 < n; ++i) {
                const std::size_t m = n - i - 1;
                const double xi = x[i];
                for (std::size_t j = 0; j < m; ++j) d_[j] = xi - x[i + 1 + j];
                K.Kprime(std::span<const double>(d_.data(), m), std::span<double>(k_.data(), m));
                double acc = 0.0;
                double* __restrict lft = left_.data() + i + 1;
                const double* __restrict kk = k_.data();
                for (std::size_t j = 0; j < m; ++j) {
                    acc += kk[j];
                    lft[j] += -kk[j];
                }
                right_[i] = acc;
            }
            return;
        }
        left_carry_.assign(n, 0.0);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const std::size_t m = n - i - 1;
            for (std::size_t j = 0; j < m; ++j) d_[j] = x[i] - x[i + 1 + j];
            K.Kprime(std::span<const double>(d_.data(), m), std::span<double>(k_.data(), m));
            detail::Accumulator acc;
            for (std::size_t j = 0; j < m; ++j) {
                acc.add(k_[j], true);
                detail::Accumulator l{left_[i + 1 + j], left_carry_[i + 1 + j]};
                l.add(-k_[j], true);
                left_[i + 1 + j] = l.sum;
                left_carry_[i + 1 + j] = l.carry;
            }
            right_[i] = acc.value(true);
        }
        for (std::size_t j = 0; j < n; ++j) left_[j] = left_[j] + left_carry_[j];
    }

    const ModelSpec* spec_;
    AssemblyOptions options_;
    std::vector<double> phi_, vel_, right_, left_, left_carry_, d_, k_;
};

/// Velocity of every particle: zero at both ends, diffusive plus nonlocal in
/// between.
inline VelocityField assemble_velocity(const ParticleState& state, const ModelSpec& spec,
                                       AssemblyOptions options = {}) {
    check_state(state);
    const std::size_t n = state.positions.size();
    VelocityField field{std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)};
    ForceAssembler assembler(spec, options);
    assembler.evaluate(state.positions, state.mass, field.total, field.diffusive_part,
                       field.nonlocal_part);
    return field;
}

/// dR_i/dt = -(N R_i^2 / sigma) (v_{i+1} - v_i) for the velocities in `field`.
inline std::vector<double> density_rate(const ParticleState& state, const VelocityField& field) {
    const std::size_t n = state.particle_count();
    if (field.total.size() != state.positions.size()) {
        throw StateError("velocity field and state sizes differ");
    }
    const auto r = local_densities(state);
    const double N = static_cast<double>(n);
    std::vector<double> rate(n);
    for (std::size_t i = 0; i < n; ++i) {
        rate[i] = -N * r[i] * r[i] * (field.total[i + 1] - field.total[i]) / state.mass;
    }
    return rate;
}

}  // namespace ftl
