// Probe absorption signals and the quadrupole-to-dipole ratio eta_br.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include <serfsim/dynamics.hpp>
#include <serfsim/observables.hpp>

using namespace serfsim;

namespace {

const SpinSystem& sys32() {
    static const SpinSystem sys = build_system(HalfInt(3));
    return sys;
}

Trajectory short_traj(double B_nT, double P, double t_end = 2e-3, int stride = 20) {
    SimParams p;
    p.omega_B = default_gamma_e * B_nT;
    const auto rho0 = spin_temperature_state(sys32(), P, {1, 0, 0});
    return evolve(rho0, sys32(), p, t_end, 2e-6, stride);
}

}  // namespace

TEST_CASE("jones_vector labels and validation") {
    ProbeConfig probe;
    probe.polarization = ProbePolarization::circular_plus;
    const auto e_plus = jones_vector(probe);
    CHECK(e_plus.squaredNorm() == Catch::Approx(1.0));
    CHECK(std::abs(e_plus(1) - cplx(0.0, 1.0 / std::sqrt(2.0))) < 1e-15);

    probe.polarization = ProbePolarization::linear_pi;
    CHECK(std::abs(jones_vector(probe)(2) - cplx(1.0)) < 1e-15);

    probe.jones = Eigen::Vector3cd(1.0, 1.0, 0.0);  // not unit norm
    CHECK_THROWS_AS(jones_vector(probe), std::invalid_argument);
}

TEST_CASE("default probe modes read the designated multipole components") {
    const auto& sys = sys32();
    const auto basis = tensor_basis(sys);
    const auto rho = spin_temperature_state(sys, 0.2, {1, 0, 1});
    const auto ms = decompose(rho, basis);

    ProbeConfig probe;
    probe.polarization = ProbePolarization::circular_plus;
    CHECK(absorption_exponent(ms, probe) ==
          Catch::Approx(ms.at({1, 1, HalfInt(4), HalfInt(4)}).real()));

    probe.polarization = ProbePolarization::circular_minus;
    CHECK(absorption_exponent(ms, probe) ==
          Catch::Approx(ms.at({1, -1, HalfInt(4), HalfInt(4)}).real()));

    probe.polarization = ProbePolarization::linear_pi;
    CHECK(absorption_exponent(ms, probe) ==
          Catch::Approx(ms.at({2, 2, HalfInt(4), HalfInt(4)}).real()));

    probe.path_scale = 2.5;
    CHECK(absorption_exponent(ms, probe) ==
          Catch::Approx(2.5 * ms.at({2, 2, HalfInt(4), HalfInt(4)}).real()));

    // Longitudinal polarization has no transverse dipole: circular signal 0.
    const auto ms_z = decompose(spin_temperature_state(sys, 0.3, {0, 0, 1}), basis);
    probe = ProbeConfig{};
    CHECK(std::abs(absorption_exponent(ms_z, probe)) < 1e-12);
}

TEST_CASE("absorption_exponent is linear in the multipole set") {
    const auto& sys = sys32();
    const auto basis = tensor_basis(sys);
    const auto ms1 = decompose(spin_temperature_state(sys, 0.2, {1, 0, 0}), basis);
    const auto ms2 = decompose(spin_temperature_state(sys, 0.4, {0, 1, 1}), basis);

    MultipoleSet combo;
    const double a = 0.7, b = -1.3;
    for (const auto& [key, amp] : ms1) combo[key] = a * amp + b * ms2.at(key);

    for (auto pol : {ProbePolarization::circular_plus, ProbePolarization::linear_pi}) {
        ProbeConfig probe;
        probe.polarization = pol;
        const double lhs = absorption_exponent(combo, probe);
        const double rhs =
            a * absorption_exponent(ms1, probe) + b * absorption_exponent(ms2, probe);
        CHECK(std::abs(lhs - rhs) < 1e-12);
    }
}

TEST_CASE("weight-table mode") {
    // Hand-built multipole set with two nonzero entries.
    MultipoleSet ms;
    ms[{1, 1, HalfInt(4), HalfInt(4)}] = cplx(0.2, 0.1);
    ms[{0, 0, HalfInt(4), HalfInt(4)}] = cplx(0.5, 0.0);

    ProbeConfig probe;
    probe.jones = Eigen::Vector3cd(1.0, 0.0, 0.0);
    probe.path_scale = 3.0;

    SECTION("quadratic form over the assembled susceptibility") {
        probe.chi_weights[{1, 1, HalfInt(4), HalfInt(4), 0, 0}] = cplx(2.0, 0.0);
        probe.chi_weights[{0, 0, HalfInt(4), HalfInt(4), 0, 0}] = cplx(0.0, 4.0);
        // chi_00 = 2*(0.2+0.1i) + 4i*0.5 = 0.4 + 2.2i; Im = 2.2; |e_0|^2 = 1.
        CHECK(absorption_exponent(ms, probe) == Catch::Approx(3.0 * 2.2));
    }

    SECTION("zero weight on L=0 of an unpolarized set gives zero") {
        MultipoleSet unpol;
        unpol[{0, 0, HalfInt(4), HalfInt(4)}] = cplx(5.0 / std::sqrt(5.0) / 8.0, 0.0);
        unpol[{0, 0, HalfInt(2), HalfInt(2)}] = cplx(3.0 / std::sqrt(3.0) / 8.0, 0.0);
        ProbeConfig zero_probe;
        zero_probe.jones = Eigen::Vector3cd(0.0, 0.0, 1.0);
        zero_probe.chi_weights[{0, 0, HalfInt(4), HalfInt(4), 2, 2}] = cplx(0.0, 0.0);
        zero_probe.chi_weights[{0, 0, HalfInt(2), HalfInt(2), 2, 2}] = cplx(0.0, 0.0);
        CHECK(absorption_exponent(unpol, zero_probe) == 0.0);
    }

    SECTION("incomplete table rejected") {
        probe.chi_weights[{1, 1, HalfInt(4), HalfInt(4), 0, 0}] = cplx(1.0, 0.0);
        // (0,0) entry of ms is uncovered.
        CHECK_THROWS_AS(absorption_exponent(ms, probe), std::invalid_argument);
    }

    SECTION("table referencing an absent multipole rejected") {
        probe.chi_weights[{1, 1, HalfInt(4), HalfInt(4), 0, 0}] = cplx(1.0, 0.0);
        probe.chi_weights[{0, 0, HalfInt(4), HalfInt(4), 0, 0}] = cplx(1.0, 0.0);
        probe.chi_weights[{3, 0, HalfInt(4), HalfInt(4), 0, 0}] = cplx(1.0, 0.0);
        CHECK_THROWS_AS(absorption_exponent(ms, probe), std::invalid_argument);
    }

    SECTION("out-of-range Cartesian index rejected") {
        probe.chi_weights[{1, 1, HalfInt(4), HalfInt(4), 0, 5}] = cplx(1.0, 0.0);
        probe.chi_weights[{0, 0, HalfInt(4), HalfInt(4), 0, 0}] = cplx(1.0, 0.0);
        probe.chi_weights[{1, 1, HalfInt(4), HalfInt(4), 0, 0}] = cplx(1.0, 0.0);
        CHECK_THROWS_AS(absorption_exponent(ms, probe), std::invalid_argument);
    }
}

TEST_CASE("synth_fid maps trajectories to signals") {
    const auto& sys = sys32();
    const auto basis = tensor_basis(sys);
    const auto traj = short_traj(10.0, 0.1, 1e-3, 50);

    ProbeConfig circ;
    const auto sig = synth_fid(traj, circ, basis);
    REQUIRE(sig.times.size() == traj.times.size());
    for (std::size_t i = 0; i < sig.times.size(); ++i) {
        const auto ms = decompose(traj.states[i], basis);
        CHECK(sig.values[i] == Catch::Approx(absorption_exponent(ms, circ)).margin(1e-15));
    }

    const auto intensity = synth_fid(traj, circ, basis, true);
    for (std::size_t i = 0; i < sig.values.size(); ++i)
        CHECK(intensity.values[i] == Catch::Approx(std::exp(-sig.values[i])));

    // Constant trajectory -> constant signal.
    Trajectory flat;
    flat.times = {0.0, 1e-5, 2e-5};
    const auto mixed = DensityMatrix::make(Mat::Identity(8, 8) / 8.0);
    flat.states = {mixed, mixed, mixed};
    const auto flat_sig = synth_fid(flat, circ, basis);
    CHECK(flat_sig.values[0] == flat_sig.values[1]);
    CHECK(flat_sig.values[1] == flat_sig.values[2]);
}

TEST_CASE("eta_br") {
    const auto& sys = sys32();
    const auto basis = tensor_basis(sys);

    SECTION("grows with polarization (second-order origin of the quadrupole)") {
        const double t0 = 3e-4;
        const double lo = eta_br(short_traj(10.0, 0.1), basis, t0);
        const double hi = eta_br(short_traj(10.0, 0.3), basis, t0);
        CHECK(lo > 0.0);
        CHECK(hi > lo);
    }

    SECTION("t0 outside the trajectory span is rejected") {
        const auto traj = short_traj(10.0, 0.1, 1e-3, 50);
        CHECK_THROWS_AS(eta_br(traj, basis, 2e-3), std::invalid_argument);
        CHECK_THROWS_AS(eta_br(traj, basis, -1e-4), std::invalid_argument);
    }

    SECTION("unpolarized trajectory is flagged") {
        Trajectory flat;
        flat.times = {0.0, 1e-5, 2e-5, 3e-5};
        const auto mixed = DensityMatrix::make(Mat::Identity(8, 8) / 8.0);
        flat.states = {mixed, mixed, mixed, mixed};
        CHECK_THROWS_AS(eta_br(flat, basis, 1e-5), std::domain_error);
    }
}
