#pragma once
// Probe-absorption observables: maps multipole sets / trajectories to the
// scalar absorption exponent measured by circular and linear probes, and the
// quadrupole-to-dipole amplitude ratio eta_br.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "serfsim/multipole.hpp"

namespace serfsim {

enum class ProbePolarization { circular_plus, circular_minus, linear_pi };

struct ChiKey {
    int L = 0;
    int M = 0;
    HalfInt F;
    HalfInt Fp;
    int i = 0;  // Cartesian indices of the susceptibility tensor
    int j = 0;
    friend auto operator<=>(const ChiKey&, const ChiKey&) = default;
};

struct ProbeConfig {
    ProbePolarization polarization = ProbePolarization::circular_plus;
    std::optional<Eigen::Vector3cd> jones;  // explicit polarization vector (unit norm)
    std::map<ChiKey, cplx> chi_weights;     // empty = direct multipole extraction
    double path_scale = 1.0;
};

inline Eigen::Vector3cd jones_vector(const ProbeConfig& probe) {
    if (probe.jones) {
        const double n2 = probe.jones->squaredNorm();
        if (std::abs(n2 - 1.0) > 1e-9)
            throw std::invalid_argument("ProbeConfig: Jones vector must have unit norm");
        return *probe.jones;
    }
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    switch (probe.polarization) {
        case ProbePolarization::circular_plus:
            return {inv_sqrt2, cplx(0.0, inv_sqrt2), 0.0};
        case ProbePolarization::circular_minus:
            return {inv_sqrt2, cplx(0.0, -inv_sqrt2), 0.0};
        case ProbePolarization::linear_pi:
        default:
            return {0.0, 0.0, 1.0};
    }
}

namespace detail {

inline HalfInt highest_F(const MultipoleSet& ms) {
    HalfInt f_hi(0);
    for (const auto& [key, amp] : ms)
        if (key.F > f_hi) f_hi = key.F;
    return f_hi;
}

inline cplx multipole_at(const MultipoleSet& ms, int L, int M, HalfInt F, HalfInt Fp) {
    const auto it = ms.find({L, M, F, Fp});
    if (it == ms.end())
        throw std::invalid_argument("absorption_exponent: multipole set lacks the (L=" +
                                    std::to_string(L) + ", M=" + std::to_string(M) +
                                    ") probe component");
    return it->second;
}

}  // namespace detail

// Scalar absorption exponent for one state. With a weight table: the probe
// quadratic form over the susceptibility built from the table. Without one:
// the probed multipole component is read off directly — circular probes see
// the dipole coefficient (L=1, M=+-1) and the linear pi probe sees the
// quadrupole coefficient (L=2, M=+2), each on the highest-F manifold. These
// direct components carry the same frequencies and decay rates that any
// positive weight table would produce.
inline double absorption_exponent(const MultipoleSet& ms, const ProbeConfig& probe) {
    const HalfInt f_hi = detail::highest_F(ms);

    if (probe.chi_weights.empty()) {
        switch (probe.polarization) {
            case ProbePolarization::circular_plus:
                return detail::multipole_at(ms, 1, 1, f_hi, f_hi).real() * probe.path_scale;
            case ProbePolarization::circular_minus:
                return detail::multipole_at(ms, 1, -1, f_hi, f_hi).real() * probe.path_scale;
            case ProbePolarization::linear_pi:
            default:
                return detail::multipole_at(ms, 2, 2, f_hi, f_hi).real() * probe.path_scale;
        }
    }

    // Completeness: every non-negligible multipole must be weighted.
    for (const auto& [key, amp] : ms) {
        if (std::abs(amp) <= 1e-15) continue;
        bool covered = false;
        for (int i = 0; i < 3 && !covered; ++i)
            for (int j = 0; j < 3 && !covered; ++j)
                covered = probe.chi_weights.count({key.L, key.M, key.F, key.Fp, i, j}) > 0;
        if (!covered)
            throw std::invalid_argument(
                "absorption_exponent: weight table incomplete — no entry for (L=" +
                std::to_string(key.L) + ", M=" + std::to_string(key.M) + ", F=" +
                to_string(key.F) + ", F'=" + to_string(key.Fp) + ")");
    }

    Eigen::Matrix3cd chi = Eigen::Matrix3cd::Zero();
    for (const auto& [key, weight] : probe.chi_weights) {
        if (key.i < 0 || key.i > 2 || key.j < 0 || key.j > 2)
            throw std::invalid_argument("absorption_exponent: Cartesian index out of range");
        const auto it = ms.find({key.L, key.M, key.F, key.Fp});
        if (it == ms.end())
            throw std::invalid_argument(
                "absorption_exponent: weight table references a multipole absent from the set");
        chi(key.i, key.j) += weight * it->second;
    }
    const Eigen::Vector3cd e = jones_vector(probe);
    cplx form = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) form += std::conj(e(i)) * chi(i, j).imag() * e(j);
    return probe.path_scale * form.real();
}

struct FidSignal {
    std::vector<double> times;   // s
    std::vector<double> values;
};

// Per-sample absorption exponent along a trajectory; with `intensity` set the
// transmitted intensity exp(-exponent) is returned instead.
inline FidSignal synth_fid(const Trajectory& traj, const ProbeConfig& probe,
                           const std::vector<TensorOperator>& basis, bool intensity = false) {
    FidSignal sig;
    sig.times = traj.times;
    sig.values.reserve(traj.states.size());
    for (const auto& state : traj.states) {
        const double expo = absorption_exponent(decompose(state, basis), probe);
        sig.values.push_back(intensity ? std::exp(-expo) : expo);
    }
    return sig;
}

// Quadrupole-to-dipole amplitude ratio |rho_{2,+2}| / |rho_{1,+1}| on the
// highest-F manifold, from envelope magnitudes averaged over one local
// precession period starting at t0.
inline double eta_br(const Trajectory& traj, const std::vector<TensorOperator>& basis,
                     double t0) {
    if (traj.times.empty() || t0 < traj.times.front() || t0 > traj.times.back())
        throw std::invalid_argument("eta_br: t0 outside the trajectory span");
    HalfInt f_hi(0);
    for (const auto& op : basis)
        if (op.F > f_hi) f_hi = op.F;

    const auto z1 = component_series(traj, basis, 1, 1, f_hi, f_hi);
    const auto z2 = component_series(traj, basis, 2, 2, f_hi, f_hi);

    std::size_t i0 = 0;
    while (i0 + 1 < traj.times.size() && traj.times[i0] < t0) ++i0;

    // Window covering one local period of the dipole phase (falls back to the
    // remaining samples when the phase never completes a turn).
    std::size_t iend = i0;
    double turned = 0.0;
    while (iend + 1 < z1.size() && turned < 2.0 * std::numbers::pi) {
        const cplx a = z1[iend], b = z1[iend + 1];
        if (std::abs(a) > 0.0 && std::abs(b) > 0.0) turned += std::abs(std::arg(b / a));
        ++iend;
    }

    double env1 = 0.0, env2 = 0.0;
    for (std::size_t i = i0; i <= iend; ++i) {
        env1 += std::abs(z1[i]);
        env2 += std::abs(z2[i]);
    }
    env1 /= static_cast<double>(iend - i0 + 1);
    env2 /= static_cast<double>(iend - i0 + 1);

    if (env1 < 1e-14)
        throw std::domain_error("eta_br: vanishing dipole amplitude (unpolarized input)");
    return env2 / env1;
}

}  // namespace serfsim
