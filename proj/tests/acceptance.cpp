// End-to-end acceptance gate. Runs eleven numbered checks covering the
// physics (doubled decay and frequency of the quadrupole line, shared
// narrowing threshold, quadratic approach, eigenvalue identity, selection
// rules, conservation laws, linear-theory consistency), the fitter
// round-trip, the quadrupole-to-dipole amplitude ratio, and byte-level
// determinism of the command-line sweep. Prints one PASS/FAIL line per
// check and exits nonzero if any fail.

#include <serfsim/serfsim.hpp>

#include <Eigen/Eigenvalues>

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace {

using namespace serfsim;
namespace fs = std::filesystem;

constexpr double kTEnd = 10e-3;    // s
constexpr double kDtOut = 1e-6;    // s, output sample spacing
constexpr double kT0 = 300e-6;     // s, fit window start

int g_fail_count = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
    if (!ok) ++g_fail_count;
    std::printf("%s %2d  %s  (%s)\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

SimParams params_at(double B_nT, bool nonlinear = true) {
    SimParams p;
    p.omega_B = default_gamma_e * B_nT;
    p.nonlinear = nonlinear;
    return p;
}

// Simulate with the default output spacing, halving the integrator step (and
// widening the sampling stride) until it clears the stability guard.
Trajectory simulate(const SpinSystem& sys, const SimParams& p, double P) {
    double dt = kDtOut;
    int stride = 1;
    const double cap = max_stable_dt(p);
    while (dt > cap) {
        dt *= 0.5;
        stride *= 2;
    }
    const DensityMatrix rho0 = spin_temperature_state(sys, P, {1.0, 0.0, 0.0});
    return evolve(rho0, sys, p, kTEnd, dt, stride);
}

struct ProbeFits {
    FitResult circ;
    FitResult lin;
};

ProbeFits fit_probes(const Trajectory& traj, const std::vector<TensorOperator>& basis) {
    ProbeFits out;
    ProbeConfig circ{ProbePolarization::circular_plus, std::nullopt, {}, 1.0};
    ProbeConfig lin{ProbePolarization::linear_pi, std::nullopt, {}, 1.0};
    out.circ = fit_fid(synth_fid(traj, circ, basis), kT0);
    out.lin = fit_fid(synth_fid(traj, lin, basis), kT0);
    return out;
}

// Single-mode complex decay exponent of a tensor-component series: linear
// least squares on log magnitude and unwrapped phase over the later half of
// the window above a relative floor of 1e-8.
std::optional<cplx> complex_log_rate(const std::vector<double>& times,
                                     const std::vector<cplx>& z, double t0) {
    std::size_t i0 = 0;
    while (i0 < times.size() && times[i0] < t0) ++i0;
    if (i0 >= z.size()) return std::nullopt;
    const double zmax = std::abs(z[i0]);
    std::size_t end = z.size();
    for (std::size_t i = i0; i < z.size(); ++i)
        if (std::abs(z[i]) < 1e-8 * zmax) {
            end = i;
            break;
        }
    const std::size_t lo = i0 + (end - i0) / 2;
    if (end < lo + 10) return std::nullopt;

    const auto n = static_cast<double>(end - lo);
    double t_mean = 0.0, a_mean = 0.0, p_mean = 0.0;
    std::vector<double> amp(end - lo), pha(end - lo);
    double acc = std::arg(z[lo]);
    for (std::size_t i = lo; i < end; ++i) {
        if (i > lo) {
            const cplx ratio = z[i] / z[i - 1];
            acc += std::arg(ratio);
        }
        amp[i - lo] = std::log(std::abs(z[i]));
        pha[i - lo] = acc;
        t_mean += times[i];
        a_mean += amp[i - lo];
        p_mean += pha[i - lo];
    }
    t_mean /= n;
    a_mean /= n;
    p_mean /= n;
    double var = 0.0, cov_a = 0.0, cov_p = 0.0;
    for (std::size_t i = lo; i < end; ++i) {
        const double dt = times[i] - t_mean;
        var += dt * dt;
        cov_a += dt * (amp[i - lo] - a_mean);
        cov_p += dt * (pha[i - lo] - p_mean);
    }
    if (var == 0.0) return std::nullopt;
    return cplx(cov_a / var, cov_p / var);
}

double model_value(double t, double A, double T1, double C, double G, double w, double ph) {
    return A * std::exp(-t / T1) + C * std::exp(-G * t) * std::cos(w * t + ph);
}

bool read_file(const fs::path& p, std::string& out) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return false;
    std::ostringstream ss;
    ss << in.rdbuf();
    out = ss.str();
    return true;
}

}  // namespace

int main() {
    const SpinSystem sys = build_system(HalfInt(3));
    const auto basis = block_diagonal_basis(sys);

    // ---- Checks 1, 2, 5, 7: four field points, shared trajectories ----
    const std::array<double, 4> fields{5.0, 10.0, 20.0, 28.0};
    std::array<Trajectory, 4> trajs;
    std::array<ProbeFits, 4> fits;
    const auto tick = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < fields.size(); ++i) {
        trajs[i] = simulate(sys, params_at(fields[i]), 0.1);
        fits[i] = fit_probes(trajs[i], basis);
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();

    {
        bool ok = elapsed < 30.0;
        std::string detail = "ratios";
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const double ratio = fits[i].lin.Gamma0 / fits[i].circ.Gamma0;
            ok = ok && fits[i].circ.converged && fits[i].lin.converged && ratio >= 1.8 &&
                 ratio <= 2.2;
            detail += " " + fmt(ratio);
        }
        detail += "; " + fmt(elapsed) + " s";
        report(1, ok, "quadrupole decay rate doubles the dipole rate at 5/10/20/28 nT", detail);
    }

    {
        bool ok = true;
        std::string detail = "ratios";
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const double ratio = fits[i].lin.omega0 / fits[i].circ.omega0;
            ok = ok && std::abs(ratio / 2.0 - 1.0) <= 0.02;
            detail += " " + fmt(ratio);
        }
        report(2, ok, "quadrupole frequency doubles the dipole frequency (within 2%)", detail);
    }

    // ---- Checks 3, 4: 24-point field sweep, threaded ----
    {
        const int count = 24;
        const double b_lo = 1.0, b_hi = 1000.0;
        std::vector<double> grid(count);
        for (int i = 0; i < count; ++i)
            grid[static_cast<std::size_t>(i)] =
                i == 0 ? b_lo
                       : (i == count - 1
                              ? b_hi
                              : std::exp(std::log(b_lo) + (std::log(b_hi) - std::log(b_lo)) *
                                                              static_cast<double>(i) /
                                                              (count - 1)));
        std::vector<ProbeFits> rows(grid.size());
        std::atomic<std::size_t> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
        const auto nworkers = static_cast<std::size_t>(std::min<unsigned>(hw, 12u));
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < nworkers; ++w)
            workers.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= grid.size()) return;
                    try {
                        const Trajectory traj = simulate(sys, params_at(grid[i]), 0.1);
                        rows[i] = fit_probes(traj, basis);
                    } catch (...) {
                        const std::lock_guard<std::mutex> lock(error_mutex);
                        if (!first_error) first_error = std::current_exception();
                        return;
                    }
                }
            });
        for (auto& w : workers) w.join();
        if (first_error) std::rethrow_exception(first_error);

        auto usable = [&](std::size_t i, bool linear) {
            const FitResult& r = linear ? rows[i].lin : rows[i].circ;
            return r.converged && !r.degenerate;
        };
        double thr[2] = {0.0, 0.0};
        double expo[2] = {0.0, 0.0};
        bool ok3 = true, ok4 = true;
        std::string det3, det4;
        for (int probe = 0; probe < 2; ++probe) {
            std::vector<std::pair<double, double>> pts;
            for (std::size_t i = 0; i < grid.size(); ++i)
                if (usable(i, probe == 1))
                    pts.emplace_back(grid[i],
                                     probe == 1 ? rows[i].lin.Gamma0 : rows[i].circ.Gamma0);
            const ThresholdCrossing cross = threshold_crossing(pts);
            thr[probe] = cross.B_threshold;
            ok3 = ok3 && std::isfinite(cross.B_threshold);
            std::vector<std::pair<double, double>> low;
            for (const auto& [b, g] : pts)
                if (b <= 0.5 * cross.B_threshold) low.emplace_back(b, g);
            const ThresholdFit qfit = quadratic_threshold_fit(low);
            expo[probe] = qfit.exponent;
            ok4 = ok4 && std::abs(qfit.exponent - 2.0) <= 0.2;
        }
        if (ok3) {
            const double factor = std::max(thr[0], thr[1]) / std::min(thr[0], thr[1]);
            ok3 = factor <= 1.3;
            det3 = "thresholds " + fmt(thr[0]) + " / " + fmt(thr[1]) + " nT, factor " +
                   fmt(factor);
        } else {
            det3 = "threshold not bracketed";
        }
        det4 = "exponents " + fmt(expo[0]) + " / " + fmt(expo[1]);
        report(3, ok3, "both probes share one narrowing threshold (within factor 1.3)", det3);
        report(4, ok4, "decay rates approach the low-field plateau quadratically", det4);
    }

    // ---- Check 5: fitted quadrupole line equals twice the slow dipole eigenvalue ----
    {
        const auto modes = eigenmodes(build_linear_mean_field(sys, params_at(10.0)), basis);
        const cplx lam = find_mode(modes, 1, 1).lambda;
        const double ref_g = -2.0 * lam.real();        // fitted rate is non-negative
        const double ref_w = 2.0 * std::abs(lam.imag());  // fitted frequency likewise
        const FitResult& br = fits[1].lin;  // B = 10 nT
        const double err_g = std::abs(br.Gamma0 - ref_g) / ref_g;
        const double err_w = std::abs(br.omega0 - ref_w) / ref_w;
        const bool ok = ref_g > 0.0 && err_g <= 0.05 && err_w <= 0.05;
        report(5, ok, "fitted quadrupole exponent matches twice the slow dipole eigenvalue",
               "rate err " + fmt(100 * err_g) + "%, freq err " + fmt(100 * err_w) + "%");
    }

    // ---- Check 6: scattering coupling selection rules ----
    {
        const auto modes = eigenmodes(build_linear_mean_field(sys, params_at(10.0)), basis);
        const QCoefficients q = q_coefficients(sys, basis, modes);
        double worst = 0.0;
        for (int k = -1; k <= 1; ++k)
            for (std::size_t src = 0; src < modes.size(); ++src)
                for (std::size_t tgt = 0; tgt < modes.size(); ++tgt) {
                    const bool forbidden = modes[src].L == 0 ||
                                           modes[tgt].M != modes[src].M + k;
                    if (forbidden)
                        worst = std::max(worst, std::abs(q.element(k, src, tgt)));
                }
        report(6, worst <= 1e-12,
               "rank-0 sources and projection-violating couplings vanish",
               "largest forbidden element " + fmt(worst));
    }

    // ---- Check 7: conservation suite ----
    {
        double worst_trace = 0.0, worst_herm = 0.0, worst_neg = 0.0;
        for (const auto& traj : trajs)
            for (const auto& state : traj.states) {
                worst_trace = std::max(worst_trace, std::abs(state.rho.trace().real() - 1.0));
                worst_herm = std::max(
                    worst_herm, (state.rho - state.rho.adjoint()).cwiseAbs().maxCoeff());
                const Eigen::SelfAdjointEigenSolver<Mat> es(state.rho);
                worst_neg = std::min(worst_neg, es.eigenvalues().minCoeff());
            }

        // Zero field, no spin destruction: collisions redistribute spin between
        // the electron and the nucleus but conserve the total. Start from an
        // electron-only polarized state so the redistribution actually runs.
        SimParams cons = params_at(0.0);
        cons.R_SD = 0.0;
        const Mat eye = Mat::Identity(sys.dim, sys.dim);
        const DensityMatrix rho_e = DensityMatrix::make(project_block_diagonal(
            (eye + 0.2 * sys.Sx()) / static_cast<double>(sys.dim), sys));
        const Trajectory traj0 = evolve(rho_e, sys, cons, kTEnd, kDtOut, 1);
        std::array<double, 3> f0{};
        double worst_f = 0.0;
        for (std::size_t s = 0; s < traj0.states.size(); ++s) {
            std::array<double, 3> f{};
            for (int c = 0; c < 3; ++c)
                f[static_cast<std::size_t>(c)] =
                    (traj0.states[s].rho * sys.F_ops[static_cast<std::size_t>(c)])
                        .trace()
                        .real();
            if (s == 0) {
                f0 = f;
                continue;
            }
            double d2 = 0.0, n2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const auto ci = static_cast<std::size_t>(c);
                d2 += (f[ci] - f0[ci]) * (f[ci] - f0[ci]);
                n2 += f0[ci] * f0[ci];
            }
            worst_f = std::max(worst_f, std::sqrt(d2 / n2));
        }
        const bool ok = worst_trace <= 1e-9 && worst_herm <= 1e-12 && worst_neg >= -1e-9 &&
                        worst_f <= 1e-8;
        report(7, ok, "trace, Hermiticity, positivity, and zero-field spin conservation",
               "trace " + fmt(worst_trace) + ", herm " + fmt(worst_herm) + ", min eig " +
                   fmt(worst_neg) + ", <F> drift " + fmt(worst_f));
    }

    // ---- Check 8: linear-only dynamics reproduce the bare spectrum ----
    {
        const SimParams lin_params = params_at(10.0, /*nonlinear=*/false);
        const Trajectory traj = simulate(sys, lin_params, 0.1);
        const auto modes = eigenmodes(build_linear(sys, lin_params), basis);
        double worst = 0.0;
        int fitted = 0;
        double br_decay = std::numeric_limits<double>::infinity();
        bool ok = true;
        for (const auto& slot : basis) {
            if (slot.L == 0) continue;
            const auto z = component_series(traj, basis, slot.L, slot.M, slot.F, slot.Fp);
            std::size_t i0 = 0;
            while (i0 < traj.times.size() && traj.times[i0] < kT0) ++i0;
            if (i0 >= z.size() || std::abs(z[i0]) < 1e-10) continue;
            const auto lam_fit = complex_log_rate(traj.times, z, kT0);
            if (!lam_fit) continue;
            ++fitted;
            double best = std::numeric_limits<double>::infinity();
            double rel = std::numeric_limits<double>::infinity();
            for (const auto& m : modes) {
                if (m.L != slot.L || m.M != slot.M) continue;
                const double d = std::abs(m.lambda - *lam_fit);
                if (d < best) {
                    best = d;
                    rel = d / std::abs(m.lambda);
                }
            }
            worst = std::max(worst, rel);
            ok = ok && rel <= 0.01;
            if (slot.L == 2 && std::abs(slot.M) == 2)
                br_decay = std::min(br_decay, -lam_fit->real());
        }
        ok = ok && fitted > 0 && br_decay >= 0.3 * lin_params.R_SE;
        report(8, ok, "without the nonlinear term every component decays at a bare eigenvalue",
               std::to_string(fitted) + " components, worst err " + fmt(100 * worst) +
                   "%, quadrupole decay " + fmt(br_decay) + " /s");
    }

    // ---- Check 9: fitter round-trip, noiseless and under 1% noise ----
    {
        const double A = 0.2, T1 = 5e-3, C = 1.0, G = 300.0;
        const double w = 2.0 * std::numbers::pi * 130.0, ph = 0.3;
        FidSignal sig;
        for (int i = 0; i <= 10000; ++i) {
            const double t = 1e-6 * i;
            sig.times.push_back(t);
            sig.values.push_back(model_value(t, A, T1, C, G, w, ph));
        }
        const FitResult clean = fit_fid(sig, 0.0);
        const double errs[6] = {
            std::abs(clean.A - A) / A,           std::abs(clean.T1 - T1) / T1,
            std::abs(clean.C - C) / C,           std::abs(clean.Gamma0 - G) / G,
            std::abs(clean.omega0 - w) / w,      std::abs(clean.phi - ph) / std::abs(ph)};
        double worst_clean = 0.0;
        for (double e : errs) worst_clean = std::max(worst_clean, e);
        bool ok = clean.converged && worst_clean <= 1e-3;

        double worst_noisy = 0.0;
        for (unsigned seed = 1; seed <= 20; ++seed) {
            std::mt19937 rng(seed);
            std::normal_distribution<double> noise(0.0, 0.01 * C);
            FidSignal noisy = sig;
            for (double& v : noisy.values) v += noise(rng);
            const FitResult r = fit_fid(noisy, 0.0);
            worst_noisy = std::max(worst_noisy, std::abs(r.Gamma0 - G) / G);
            worst_noisy = std::max(worst_noisy, std::abs(r.omega0 - w) / w);
            ok = ok && r.converged;
        }
        ok = ok && worst_noisy <= 0.02;
        report(9, ok, "fit round-trip: noiseless to 0.1%, rate and frequency to 2% under noise",
               "noiseless worst " + fmt(100 * worst_clean) + "%, noisy worst " +
                   fmt(100 * worst_noisy) + "%");
    }

    // ---- Check 10: quadrupole-to-dipole amplitude ratio is order unity ----
    {
        const Trajectory traj = simulate(sys, params_at(10.0), 0.5);
        const double eta = eta_br(traj, basis, kT0);
        report(10, eta >= 0.3 && eta <= 3.0,
               "quadrupole-to-dipole amplitude ratio at P = 0.5 is order unity",
               "eta " + fmt(eta));
    }

    // ---- Check 11: the sweep command is byte-deterministic ----
    {
        const fs::path base = fs::temp_directory_path() / "serfsim-acceptance";
        std::error_code ec;
        fs::remove_all(base, ec);
        fs::create_directories(base / "a");
        fs::create_directories(base / "b");
        const std::string common =
            std::string(SERFSIM_CLI_PATH) +
            " sweep --B-min-nT 5 --B-max-nT 500 --B-count 8 --jobs 4 --out-dir ";
        const int rc_a = std::system((common + (base / "a").string() + " > /dev/null").c_str());
        const int rc_b = std::system((common + (base / "b").string() + " > /dev/null").c_str());
        bool ok = rc_a == 0 && rc_b == 0;
        std::string detail = "exit " + std::to_string(rc_a) + "/" + std::to_string(rc_b);
        for (const char* name : {"sweep.csv", "sweep_summary.csv"}) {
            std::string ca, cb;
            const bool read_ok =
                read_file(base / "a" / name, ca) && read_file(base / "b" / name, cb);
            ok = ok && read_ok && !ca.empty() && ca == cb;
            detail += std::string(", ") + name + (read_ok && ca == cb ? " identical" : " DIFFER");
        }
        fs::remove_all(base, ec);
        report(11, ok, "repeated sweep runs produce byte-identical CSV output", detail);
    }

    if (g_fail_count == 0) {
        std::printf("acceptance: all 11 checks passed\n");
        return 0;
    }
    std::printf("acceptance: %d check(s) FAILED\n", g_fail_count);
    return 1;
}
