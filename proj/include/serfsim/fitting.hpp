#pragma once
// Deterministic nonlinear least squares for free-induction-decay signals:
//   f(t) = A exp(-t/T1) + C exp(-Gamma0 t) cos(omega0 t + phi)
// fitted over the window t >= t0 (times shifted so the window starts at 0).
// Initialization is fully deterministic — discrete-spectrum peak, a
// variable-projection grid scan over (decay, frequency), and a log-envelope
// line fit of the residual for the background term — followed by damped
// Gauss–Newton refinement. Also provides the plateau + c*B^p threshold-curve
// fit used on sweep results.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "serfsim/observables.hpp"

namespace serfsim {

struct FitResult {
    double A = 0.0;
    double T1 = 0.0;            // s
    double C = 0.0;
    double Gamma0 = 0.0;        // 1/s
    double omega0 = 0.0;        // rad/s, non-negative (sign folded into phi)
    double phi = 0.0;           // rad, wrapped to [-pi, pi)
    double residual_rms = 0.0;
    bool converged = false;
    int iterations = 0;
    bool degenerate = false;    // oscillation amplitude or frequency unresolvable
    std::vector<double> cost_trace;  // accepted costs of the final refinement
};

struct FitOptions {
    int max_iterations = 500;
};

namespace fitdetail {

using Arr = Eigen::ArrayXd;

// Internal parameter vector: (A, r1, C, G, w, ph) with r1 = 1/T1.
using Params = std::array<double, 6>;

inline Arr model_eval(const Arr& t, const Params& p) {
    return p[0] * (-p[1] * t).exp() + p[2] * (-p[3] * t).exp() * (p[4] * t + p[5]).cos();
}

// Frequency of the strongest non-DC bin of the Hann-windowed, mean-subtracted
// signal (decimated to at most 2048 samples), refined by log-parabolic
// interpolation between neighboring bins. Also reports the bin index.
inline std::pair<double, int> dft_peak(const Arr& t, const Arr& y) {
    const auto n = t.size();
    const auto dec = std::max<Eigen::Index>(1, (n + 2047) / 2048);
    const auto m = (n + dec - 1) / dec;
    Arr yd(m);
    for (Eigen::Index i = 0; i < m; ++i) yd(i) = y(i * dec);
    const double dt = (t((m - 1) * dec) - t(0)) / static_cast<double>(m - 1);

    const double mean = yd.mean();
    for (Eigen::Index i = 0; i < m; ++i) {
        const double hann =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                 static_cast<double>(m - 1));
        yd(i) = (yd(i) - mean) * hann;
    }

    const Eigen::Index nbins = m / 2 + 1;
    std::vector<double> sp(static_cast<std::size_t>(nbins));
    for (Eigen::Index k = 0; k < nbins; ++k) {
        const cplx wk = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) /
                                            static_cast<double>(m));
        cplx acc = 0.0, wcur = 1.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            acc += yd(j) * wcur;
            wcur *= wk;
        }
        sp[static_cast<std::size_t>(k)] = std::abs(acc);
    }

    Eigen::Index kpk = 1;
    for (Eigen::Index k = 2; k < nbins; ++k)
        if (sp[static_cast<std::size_t>(k)] > sp[static_cast<std::size_t>(kpk)]) kpk = k;

    double d = 0.0;
    if (kpk >= 1 && kpk < nbins - 1 && sp[static_cast<std::size_t>(kpk - 1)] > 0.0 &&
        sp[static_cast<std::size_t>(kpk + 1)] > 0.0) {
        const double la = std::log(sp[static_cast<std::size_t>(kpk - 1)]);
        const double lb = std::log(sp[static_cast<std::size_t>(kpk)]);
        const double lc = std::log(sp[static_cast<std::size_t>(kpk + 1)]);
        const double den = la - 2.0 * lb + lc;
        if (std::abs(den) > 1e-300) d = std::clamp(0.5 * (la - lc) / den, -0.5, 0.5);
    }
    const double w = 2.0 * std::numbers::pi * (static_cast<double>(kpk) + d) /
                     (static_cast<double>(m) * dt);
    return {w, static_cast<int>(kpk)};
}

struct LmOutcome {
    Params p{};
    double cost = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<double> cost_trace;
};

// Damped Gauss-Newton (Levenberg damping on the normal equations): steps that
// do not reduce the cost are rejected with the damping increased fourfold;
// accepted steps relax it. Converged when an accepted step changes the cost
// by <= 1e-12 relative or moves the parameters by <= 1e-10, or when no
// improving step exists at any damping.
inline LmOutcome lm_fit(const Arr& t, const Arr& y, const Params& p0, bool free_background,
                        int max_iter) {
    LmOutcome out;
    out.p = p0;
    const std::array<int, 6> act_all{0, 1, 2, 3, 4, 5};
    const std::array<int, 4> act_osc{2, 3, 4, 5};
    const int nact = free_background ? 6 : 4;
    auto act = [&](int i) { return free_background ? act_all[static_cast<std::size_t>(i)]
                                                   : act_osc[static_cast<std::size_t>(i)]; };

    Arr r = model_eval(t, out.p) - y;
    out.cost = r.matrix().squaredNorm();
    out.cost_trace.push_back(out.cost);
    double mu = 1e-3, nu = 2.0;

    for (int it = 0; it < max_iter; ++it) {
        ++out.iterations;
        const auto& [A, r1, C, G, w, ph] = out.p;
        const Arr e1 = ((-r1) * t).min(600.0).exp();
        const Arr e2 = ((-G) * t).min(600.0).exp();
        const Arr co = (w * t + ph).cos();
        const Arr si = (w * t + ph).sin();

        Eigen::MatrixXd jac(t.size(), nact);
        for (int c = 0; c < nact; ++c) {
            switch (act(c)) {
                case 0: jac.col(c) = e1.matrix(); break;
                case 1: jac.col(c) = (-A * t * e1).matrix(); break;
                case 2: jac.col(c) = (e2 * co).matrix(); break;
                case 3: jac.col(c) = (-C * t * e2 * co).matrix(); break;
                case 4: jac.col(c) = (-C * t * e2 * si).matrix(); break;
                case 5: jac.col(c) = (-C * e2 * si).matrix(); break;
                default: break;
            }
        }
        const Eigen::VectorXd g = jac.transpose() * r.matrix();
        const Eigen::MatrixXd jtj = jac.transpose() * jac;

        bool improved = false, converged_now = false;
        [[maybe_unused]] int rejects = 0;
        for (int attempt = 0; attempt < 60; ++attempt) {
            Eigen::MatrixXd damped = jtj;
            for (int c = 0; c < nact; ++c)
                damped(c, c) += mu * std::max(jtj(c, c), 1e-30);
            // The damped normal matrix is symmetric positive definite; a bad
            // step from a near-singular system is caught by the cost check.
            const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
            if (ldlt.info() != Eigen::Success) {
                ++rejects;
                mu *= nu;
                nu *= 2.0;
                if (mu > 1e18) break;
                continue;
            }
            const Eigen::VectorXd d = ldlt.solve(-g);
            Params pn = out.p;
            for (int c = 0; c < nact; ++c) pn[static_cast<std::size_t>(act(c))] += d(c);
            const Arr rn = model_eval(t, pn) - y;
            const double cn = rn.matrix().squaredNorm();
            if (std::isfinite(cn) && cn < out.cost) {
                const double rel = (out.cost - cn) / std::max(out.cost, 1e-300);
                // Gain ratio: actual cost drop over the drop predicted by the
                // local quadratic model. Underperforming steps raise the
                // damping even when accepted, which prevents slow undamped
                // zigzagging along curved valleys of misfit problems.
                double pred = 0.0;
                for (int c = 0; c < nact; ++c)
                    pred += d(c) * (mu * std::max(jtj(c, c), 1e-30) * d(c) - g(c));
                const double rho = (out.cost - cn) / std::max(pred, 1e-300);
                out.p = pn;
                r = rn;
                out.cost = cn;
                out.cost_trace.push_back(cn);
                const double shrink = std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3.0));
                mu = std::max(mu * shrink, 1e-12);
                nu = 2.0;
                improved = true;
                converged_now = rel <= 1e-12 || d.norm() <= 1e-10;
#ifdef SERFSIM_FIT_TRACE
                std::fprintf(stderr,
                             "lm it=%d rejects=%d mu=%.2e rho=%.2e rel=%.2e dnorm=%.2e cost=%.8e\n",
                             it, rejects, mu, rho, rel, d.norm(), cn);
#endif
                break;
            }
            ++rejects;
            mu *= nu;
            nu *= 2.0;
            if (mu > 1e18) break;
        }
        if (!improved || converged_now) {
            out.converged = true;
            break;
        }
    }
    return out;
}

struct ScanResult {
    double G = 0.0, w = 0.0, C = 0.0, ph = 0.0;
};

// Variable-projection grid scan: for every (decay, frequency) candidate the
// optimal cosine/sine amplitudes of the tail-mean-subtracted signal are
// solved in closed form; the lowest-cost candidate wins.
inline ScanResult varpro_scan(const Arr& t, const Arr& y, const std::vector<double>& g_grid,
                              const std::vector<double>& w_grid) {
    const auto n = t.size();
    double tail = 0.0;
    for (Eigen::Index i = 3 * n / 4; i < n; ++i) tail += y(i);
    tail /= static_cast<double>(n - 3 * n / 4);
    const Arr y2 = y - tail;

    std::vector<Arr> cos_w, sin_w;
    cos_w.reserve(w_grid.size());
    sin_w.reserve(w_grid.size());
    for (double w : w_grid) {
        cos_w.push_back((w * t).cos());
        sin_w.push_back((w * t).sin());
    }

    double best_cost = std::numeric_limits<double>::infinity();
    ScanResult best;
    double best_P = 0.0, best_Q = 0.0;
    for (double G : g_grid) {
        const Arr e2 = ((-G) * t).min(600.0).exp();
        for (std::size_t wi = 0; wi < w_grid.size(); ++wi) {
            const Arr co = e2 * cos_w[wi];
            const Arr si = e2 * sin_w[wi];
            const double a11 = co.matrix().squaredNorm();
            const double a12 = co.matrix().dot(si.matrix());
            const double a22 = si.matrix().squaredNorm();
            const double b1 = co.matrix().dot(y2.matrix());
            const double b2 = si.matrix().dot(y2.matrix());
            const double det = a11 * a22 - a12 * a12;
            double P, Q;
            if (det > 1e-12 * a11 * a22 + 1e-300) {
                P = (a22 * b1 - a12 * b2) / det;
                Q = (a11 * b2 - a12 * b1) / det;
            } else {  // near-collinear columns: project on the cosine alone
                P = a11 > 0.0 ? b1 / a11 : 0.0;
                Q = 0.0;
            }
            const double cost = (y2 - P * co - Q * si).matrix().squaredNorm();
            if (cost < best_cost) {
                best_cost = cost;
                best = {G, w_grid[wi], 0.0, 0.0};
                best_P = P;
                best_Q = Q;
            }
        }
    }
    best.C = std::hypot(best_P, best_Q);
    best.ph = std::atan2(-best_Q, best_P);
    return best;
}

// Deterministic (A, r1) estimate from the early residual: a line fit to the
// log of per-block envelope maxima over the first half of the window.
inline std::pair<double, double> resid_background(const Arr& t, const Arr& res) {
    const auto n = res.size();
    const double mx = res.abs().maxCoeff();
    if (mx <= 0.0) return {0.0, 1.0};
    const Eigen::Index blk = std::max<Eigen::Index>(4, (n / 2) / 16);
    std::vector<double> bt, bv;
    for (Eigen::Index i = 0; i + blk <= n / 2; i += blk) {
        Eigen::Index j = i;
        for (Eigen::Index q = i; q < i + blk; ++q)
            if (std::abs(res(q)) > std::abs(res(j))) j = q;
        if (std::abs(res(j)) > 1e-6 * mx) {
            bt.push_back(t(j));
            bv.push_back(std::log(std::abs(res(j))));
        }
    }
    if (bt.size() < 2) return {res(0), 1.0};
    const auto m = static_cast<double>(bt.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < bt.size(); ++i) {
        sx += bt[i];
        sy += bv[i];
        sxx += bt[i] * bt[i];
        sxy += bt[i] * bv[i];
    }
    const double den = m * sxx - sx * sx;
    if (den == 0.0) return {res(0), 1.0};
    const double slope = (m * sxy - sx * sy) / den;
    const double intercept = (sy - slope * sx) / m;
    const double sign = res(0) > 0.0 ? 1.0 : (res(0) < 0.0 ? -1.0 : 0.0);
    return {sign * std::exp(intercept), std::max(-slope, 1e-6)};
}

inline std::vector<double> geomspace(double a, double b, int n) {
    std::vector<double> out(static_cast<std::size_t>(n));
    const double la = std::log(a), lb = std::log(b);
    for (int i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] =
            std::exp(la + (lb - la) * static_cast<double>(i) / static_cast<double>(n - 1));
    return out;
}

}  // namespace fitdetail

inline FitResult fit_fid(const FidSignal& signal, double t0, const FitOptions& opts = {}) {
    using namespace fitdetail;
    if (signal.times.size() != signal.values.size())
        throw std::invalid_argument("fit_fid: times/values size mismatch");
    std::vector<double> tv, yv;
    for (std::size_t i = 0; i < signal.times.size(); ++i) {
        if (!std::isfinite(signal.values[i]) || !std::isfinite(signal.times[i]))
            throw std::invalid_argument("fit_fid: non-finite sample");
        if (signal.times[i] >= t0) {
            tv.push_back(signal.times[i] - t0);
            yv.push_back(signal.values[i]);
        }
    }
    const auto n = static_cast<Eigen::Index>(tv.size());
    if (n < 50) throw std::invalid_argument("fit_fid: need at least 50 samples past t0");
    Arr t = Eigen::Map<Arr>(tv.data(), n);
    Arr y = Eigen::Map<Arr>(yv.data(), n);
    const double t_win = t(n - 1);

    FitResult result;
    const double scale = (y - y.mean()).abs().maxCoeff();
    if (scale == 0.0) {
        result.A = y.mean();
        result.T1 = 100.0 * t_win;
        result.converged = true;
        result.degenerate = true;
        return result;
    }

    const auto [w_guess, k_peak] = dft_peak(t, y);

    const auto dec = std::max<Eigen::Index>(1, (n + 2047) / 2048);
    const auto m = (n + dec - 1) / dec;
    Arr td(m), yd(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        td(i) = t(i * dec);
        yd(i) = y(i * dec);
    }

    std::vector<double> dts(static_cast<std::size_t>(n - 1));
    for (Eigen::Index i = 0; i + 1 < n; ++i) dts[static_cast<std::size_t>(i)] = t(i + 1) - t(i);
    std::nth_element(dts.begin(), dts.begin() + static_cast<long>(dts.size() / 2), dts.end());
    const double nyq = std::numbers::pi / dts[dts.size() / 2];

    const auto g_grid = geomspace(0.2 / t_win, std::min(0.25 * nyq, 2.0e6), 24);
    const auto w_grid = geomspace(0.05 / t_win, 0.99 * nyq, 128);
    const std::vector<double> ladder =
        k_peak == 1
            ? std::vector<double>{w_guess / 16, w_guess / 8, w_guess / 4, w_guess / 2, w_guess}
            : std::vector<double>{w_guess / 2, w_guess, 2 * w_guess};
    const double r1_default = 1.0 / (100.0 * t_win);

    // Phase 1: grid scan plus ladder starts, refined on the decimated window
    // with the background frozen at zero.
    std::vector<double> w_all = w_grid;
    w_all.insert(w_all.end(), ladder.begin(), ladder.end());
    std::vector<Params> starts;
    {
        const auto s = varpro_scan(td, yd, g_grid, w_all);
        starts.push_back({0.0, r1_default, s.C, s.G, s.w, s.ph});
    }
    for (double wl : ladder) {
        const auto s = varpro_scan(td, yd, g_grid, {wl});
        starts.push_back({0.0, r1_default, s.C, s.G, s.w, s.ph});
    }
    Params p_best{};
    double cost_best = std::numeric_limits<double>::infinity();
    for (const auto& p0 : starts) {
        const auto lm = lm_fit(td, yd, p0, false, 200);
        if (lm.cost < cost_best) {
            cost_best = lm.cost;
            p_best = lm.p;
        }
    }

    // Phase 2a: full-window polish with the background still frozen.
    const auto frozen = lm_fit(t, y, p_best, false, opts.max_iterations);

    // Phase 2b: free-background refinement seeded from the frozen result plus
    // a background estimate from its residual, and from the tail mean. The
    // residual seed lets the A exp(-t/T1) term absorb fast early transients
    // instead of competing for the oscillation.
    const Arr res = y - model_eval(t, frozen.p);
    const auto [a_res, r1_res] = resid_background(t, res);
    double tail_mean = 0.0;
    for (Eigen::Index i = 3 * n / 4; i < n; ++i) tail_mean += y(i);
    tail_mean /= static_cast<double>(n - 3 * n / 4);

    LmOutcome free_best;
    free_best.cost = std::numeric_limits<double>::infinity();
    for (const auto& [a0, r10] :
         {std::pair(a_res, r1_res), std::pair(tail_mean, r1_default)}) {
        Params p0 = frozen.p;
        p0[0] = a0;
        p0[1] = std::max(r10, 1e-9);
        auto lm = lm_fit(t, y, p0, true, opts.max_iterations);
        if (lm.cost < free_best.cost) free_best = std::move(lm);
    }

    const bool use_free = free_best.cost < frozen.cost * (1.0 - 1e-9);
    const LmOutcome& sel = use_free ? free_best : frozen;
    auto [A, r1, C, G, w, ph] = sel.p;

    if (w < 0.0) {
        w = -w;
        ph = -ph;
    }
    if (C < 0.0) {
        C = -C;
        ph += std::numbers::pi;
    }
    ph = std::fmod(ph + std::numbers::pi, 2.0 * std::numbers::pi);
    if (ph < 0.0) ph += 2.0 * std::numbers::pi;
    ph -= std::numbers::pi;
    G = std::max(G, 0.0);

    result.A = A;
    result.T1 = 1.0 / std::max(r1, 1e-12);
    result.C = C;
    result.Gamma0 = G;
    result.omega0 = w;
    result.phi = ph;
    result.residual_rms = std::sqrt(sel.cost / static_cast<double>(n));
    result.converged = sel.converged;
    result.iterations = sel.iterations;
    result.degenerate = std::abs(C) < 1e-3 * std::abs(A) || w * t_win < 0.1;
    result.cost_trace = sel.cost_trace;
    return result;
}

struct ThresholdFit {
    double plateau = 0.0;    // low-field limit of the decay rate
    double curvature = 0.0;  // coefficient c of c * B^p
    double exponent = 0.0;   // p
    bool monotone = true;    // input decay rates non-decreasing in B
};

// Least-squares fit of Gamma0(B) = plateau + c * B^p on the given points,
// linear in (plateau, c) for each candidate p; p is located by a coarse scan
// over [1, 3] refined by golden-section search.
inline ThresholdFit quadratic_threshold_fit(std::vector<std::pair<double, double>> points) {
    if (points.size() < 5)
        throw std::invalid_argument("quadratic_threshold_fit: need at least 5 points");
    std::sort(points.begin(), points.end());
    for (const auto& [b, g] : points)
        if (!(b > 0.0) || !std::isfinite(g))
            throw std::invalid_argument("quadratic_threshold_fit: invalid point");

    ThresholdFit out;
    for (std::size_t i = 0; i + 1 < points.size(); ++i)
        if (points[i + 1].second < points[i].second) out.monotone = false;

    const auto np = static_cast<Eigen::Index>(points.size());
    Eigen::VectorXd b(np), g(np);
    for (Eigen::Index i = 0; i < np; ++i) {
        b(i) = points[static_cast<std::size_t>(i)].first;
        g(i) = points[static_cast<std::size_t>(i)].second;
    }

    auto solve_p = [&](double p) {
        Eigen::MatrixXd x(np, 2);
        x.col(0).setOnes();
        x.col(1) = b.array().pow(p).matrix();
        const Eigen::Vector2d sol = x.colPivHouseholderQr().solve(g);
        const double sse = (x * sol - g).squaredNorm();
        return std::tuple(sse, sol(0), sol(1));
    };

    double p_best = 1.0;
    double sse_best = std::numeric_limits<double>::infinity();
    for (double p = 1.0; p <= 3.0001; p += 0.002) {
        const auto [sse, pl, c] = solve_p(p);
        if (sse < sse_best) {
            sse_best = sse;
            p_best = p;
        }
    }

    double lo = std::max(1.0, p_best - 0.004), hi = std::min(3.0, p_best + 0.004);
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double c1 = hi - gr * (hi - lo), c2 = lo + gr * (hi - lo);
    double f1 = std::get<0>(solve_p(c1)), f2 = std::get<0>(solve_p(c2));
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        if (f1 <= f2) {
            hi = c2;
            c2 = c1;
            f2 = f1;
            c1 = hi - gr * (hi - lo);
            f1 = std::get<0>(solve_p(c1));
        } else {
            lo = c1;
            c1 = c2;
            f1 = f2;
            c2 = lo + gr * (hi - lo);
            f2 = std::get<0>(solve_p(c2));
        }
    }
    const double p_final = 0.5 * (lo + hi);
    const auto [sse, plateau, curvature] = solve_p(p_final);
    (void)sse;
    out.plateau = plateau;
    out.curvature = curvature;
    out.exponent = p_final;
    return out;
}

struct ThresholdCrossing {
    double plateau_low = 0.0;   // mean decay rate of the lowest-field points
    double plateau_high = 0.0;  // mean decay rate of the highest-field points
    double B_threshold = std::numeric_limits<double>::quiet_NaN();  // nT
};

// Field at which the decay-rate curve crosses the midpoint between its two
// plateaus, located by log-log interpolation between bracketing points.
inline ThresholdCrossing threshold_crossing(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 8)
        throw std::invalid_argument("threshold_crossing: need at least 8 points");
    ThresholdCrossing out;
    for (int i = 0; i < 4; ++i) {
        out.plateau_low += points[static_cast<std::size_t>(i)].second / 4.0;
        out.plateau_high += points[points.size() - 4 + static_cast<std::size_t>(i)].second / 4.0;
    }
    const double mid = 0.5 * (out.plateau_low + out.plateau_high);
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
        const double ga = points[i].second, gb = points[i + 1].second;
        if ((ga - mid) * (gb - mid) <= 0.0 && ga != gb && ga > 0.0 && gb > 0.0 && mid > 0.0) {
            const double f = (std::log(mid) - std::log(ga)) / (std::log(gb) - std::log(ga));
            out.B_threshold = std::exp(std::log(points[i].first) +
                                       f * (std::log(points[i + 1].first) - std::log(points[i].first)));
            break;
        }
    }
    return out;
}

}  // namespace serfsim
