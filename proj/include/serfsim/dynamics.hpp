#pragma once
// Equation of motion for the vapor density matrix — magnetic precession,
// spin-exchange collisions (with their polarization-dependent nonlinear
// term), and electron-spin destruction — plus a fixed-step RK4 integrator.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "serfsim/hilbert.hpp"

namespace serfsim {

inline constexpr double default_gamma_e = 2.0 * std::numbers::pi * 28.024;  // rad/s per nT

struct SimParams {
    double omega_B = 0.0;   // rad/s, bare electron precession frequency (gamma_e * B)
    double R_SE = 1e4;      // 1/s, spin-exchange collision rate
    double R_SD = 147.0;    // 1/s, electron-spin destruction rate
    double A_hfs = 0.0;     // rad/s, hyperfine coupling; matters only with projection off
    bool project_hyperfine = true;
    double gamma_e = default_gamma_e;
    bool nonlinear = true;  // include the 4 R_SE alpha (S.<S>) collision term
};

inline void validate_params(const SimParams& p) {
    if (!(p.R_SE >= 0.0) || !(p.R_SD >= 0.0))
        throw std::invalid_argument("SimParams: R_SE and R_SD must be non-negative");
    if (!std::isfinite(p.omega_B)) throw std::invalid_argument("SimParams: omega_B must be finite");
}

namespace detail {

// d(rho)/dt without input validation; `rho` need not be exactly Hermitian
// (RK4 stage matrices are fed through here).
inline Mat rhs_raw(const Mat& rho, const SpinSystem& sys, const SimParams& p) {
    const Mat alpha = nuclear_part(rho, sys);
    const cplx minus_i(0.0, -1.0);

    Mat out = minus_i * p.omega_B * (sys.Sz() * rho - rho * sys.Sz());
    if (!p.project_hyperfine && p.A_hfs != 0.0)
        out += minus_i * p.A_hfs * (sys.IS * rho - rho * sys.IS);
    out += (p.R_SE + p.R_SD) * (alpha - rho);
    if (p.nonlinear && p.R_SE != 0.0) {
        cplx sx = (rho * sys.Sx()).trace(), sy = (rho * sys.Sy()).trace(),
             sz = (rho * sys.Sz()).trace();
        out += 4.0 * p.R_SE *
               (alpha * (sx * sys.Sx() + sy * sys.Sy() + sz * sys.Sz()));
    }
    return p.project_hyperfine ? project_block_diagonal(out, sys) : out;
}

}  // namespace detail

// Time derivative of the state. Rejects non-Hermitian input; the result is
// traceless and Hermitian.
inline Mat liouville_rhs(const Mat& rho, const SpinSystem& sys, const SimParams& p) {
    validate_params(p);
    if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("liouville_rhs: non-Hermitian input state");
    return detail::rhs_raw(rho, sys, p);
}

inline Mat liouville_rhs(const DensityMatrix& rho, const SpinSystem& sys, const SimParams& p) {
    return liouville_rhs(rho.rho, sys, p);
}

struct Trajectory {
    std::vector<double> times;           // s, strictly increasing
    std::vector<DensityMatrix> states;   // validated at sampling time
    SimParams params;
};

// Largest stable step for the explicit integrator under these parameters.
inline double max_stable_dt(const SimParams& p) {
    const double fastest = std::max({p.R_SE, std::abs(p.omega_B), p.R_SD});
    return fastest > 0.0 ? 0.1 / fastest : std::numeric_limits<double>::infinity();
}

// Classical fixed-step RK4 integration of the equation of motion. States are
// re-Hermitized after every step; the trajectory is sampled at step indices
// divisible by sample_every (the initial state included).
inline Trajectory evolve(const DensityMatrix& rho0, const SpinSystem& sys, const SimParams& p,
                         double t_end, double dt, int sample_every = 1) {
    validate_params(p);
    if (!(dt > 0.0) || !(t_end > 0.0))
        throw std::invalid_argument("evolve: dt and t_end must be positive");
    if (sample_every < 1) throw std::invalid_argument("evolve: sample_every must be >= 1");
    if (const double dt_max = max_stable_dt(p); dt > dt_max) {
        std::ostringstream msg;
        msg << "evolve: dt = " << dt << " s violates the stability guard; require dt <= "
            << dt_max << " s for these rates";
        throw std::invalid_argument(msg.str());
    }
    if (!p.project_hyperfine && dt * std::abs(p.A_hfs) > 0.1)
        throw std::invalid_argument(
            "evolve: with hyperfine projection off, dt * A_hfs must be <= 0.1");

    const auto nsteps = static_cast<long long>(std::llround(t_end / dt));
    if (nsteps < 1) throw std::invalid_argument("evolve: t_end shorter than one step");

    Trajectory traj;
    traj.params = p;
    Mat rho = rho0.rho;
    for (long long step = 0; step <= nsteps; ++step) {
        if (step % sample_every == 0) {
            traj.times.push_back(static_cast<double>(step) * dt);
            traj.states.push_back(DensityMatrix::make(rho));
        }
        if (step == nsteps) break;

        const Mat k1 = detail::rhs_raw(rho, sys, p);
        const Mat k2 = detail::rhs_raw(rho + (dt / 2.0) * k1, sys, p);
        const Mat k3 = detail::rhs_raw(rho + (dt / 2.0) * k2, sys, p);
        const Mat k4 = detail::rhs_raw(rho + dt * k3, sys, p);
        rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        rho = (rho + rho.adjoint()) / 2.0;

        if (const double drift = std::abs(rho.trace() - cplx(1.0, 0.0)); drift > 1e-6) {
            std::ostringstream msg;
            msg << "evolve: trace drift " << drift << " at t = "
                << static_cast<double>(step + 1) * dt << " s; integration aborted";
            throw std::runtime_error(msg.str());
        }
    }
    return traj;
}

}  // namespace serfsim
