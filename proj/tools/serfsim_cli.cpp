// Command-line front end for the spin-dynamics library: simulate probe
// free-induction decays, sweep the magnetic field and locate the
// narrowing threshold, diagonalize the linearized collision generator,
// predict the driven quadrupole line, and fit externally supplied signals.
//
// Exit codes: 0 success, 2 usage or malformed input, 3 numerical failure,
// 4 every requested fit degenerate, 5 sweep convergence quorum missed.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <complex>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <serfsim/serfsim.hpp>

namespace {

using namespace serfsim;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerics = 3;
constexpr int kExitDegenerate = 4;
constexpr int kExitQuorum = 5;

const std::vector<std::string> kFitHeader = {
    "probe", "A", "T1_s", "C", "Gamma0_per_s", "omega0_rad_s",
    "phi_rad", "residual_rms", "converged"};

struct Options {
    double B_nT = 10.0;
    double B_min_nT = 1.0;
    double B_max_nT = 1000.0;
    int B_count = 24;
    double P = 0.1;
    double t_end_ms = 10.0;
    double dt_us = 1.0;
    double t0_us = 300.0;
    double R_SE = 1.0e4;
    double R_SD = 147.0;
    int I_twice = 3;
    double gamma_e = default_gamma_e;
    bool bare_linear = false;
    bool no_nonlinear = false;
    std::string probe = "both";
    int jobs = 1;
    std::string out_dir = ".";
    std::string input;
    std::string config_path;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int parse_int(const std::string& s) {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw UsageError("malformed integer: " + s);
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "off" || s == "no") return false;
    throw UsageError("malformed boolean: " + s);
}

// Per-subcommand registry of configurable options. A config file is a flat
// key=value list using the long option names without dashes; values given on
// the command line take precedence.
class SubConfig {
  public:
    void add_double(CLI::App* sub, const std::string& name, double& v, const std::string& help) {
        reg(sub->add_option("--" + name, v, help), name,
            [&v](const std::string& s) { v = parse_double(s); });
    }
    CLI::Option* add_int(CLI::App* sub, const std::string& name, int& v,
                         const std::string& help) {
        auto* opt = sub->add_option("--" + name, v, help);
        reg(opt, name, [&v](const std::string& s) { v = parse_int(s); });
        return opt;
    }
    CLI::Option* add_string(CLI::App* sub, const std::string& name, std::string& v,
                            const std::string& help) {
        auto* opt = sub->add_option("--" + name, v, help);
        reg(opt, name, [&v](const std::string& s) { v = s; });
        return opt;
    }
    void add_flag(CLI::App* sub, const std::string& name, bool& v, const std::string& help) {
        reg(sub->add_flag("--" + name, v, help), name,
            [&v](const std::string& s) { v = parse_bool(s); });
    }

    void apply_file(const std::string& path) const {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot open config file: " + path);
        std::string line;
        const auto trim = [](std::string s) {
            const auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
            while (!s.empty() && issp(s.front())) s.erase(s.begin());
            while (!s.empty() && issp(s.back())) s.pop_back();
            return s;
        };
        while (std::getline(in, line)) {
            const std::string stripped = trim(line.substr(0, line.find('#')));
            if (stripped.empty()) continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos)
                throw UsageError("config line is not key=value: " + line);
            const std::string key = trim(stripped.substr(0, eq));
            const std::string value = trim(stripped.substr(eq + 1));
            const auto it = entries_.find(key);
            if (it == entries_.end()) throw UsageError("unknown config key: " + key);
            if (it->second.opt->count() > 0) continue;  // command line wins
            try {
                it->second.apply(value);
            } catch (const UsageError&) {
                throw;
            } catch (const std::exception&) {
                throw UsageError("bad config value for " + key + ": " + value);
            }
        }
    }

  private:
    struct Entry {
        CLI::Option* opt;
        std::function<void(const std::string&)> apply;
    };
    void reg(CLI::Option* opt, const std::string& name,
             std::function<void(const std::string&)> apply) {
        entries_[name] = {opt, std::move(apply)};
    }
    std::map<std::string, Entry> entries_;
};

void add_config_flag(CLI::App* sub, Options& o) {
    sub->add_option("--config", o.config_path,
                    "Read options from a key=value file (flags override)");
}

void add_output(CLI::App* sub, SubConfig& cfg, Options& o) {
    cfg.add_string(sub, "out-dir", o.out_dir, "Directory for output CSV files");
}

void add_physics(CLI::App* sub, SubConfig& cfg, Options& o) {
    cfg.add_double(sub, "P", o.P, "Initial spin polarization along x (0 <= P < 1)");
    cfg.add_double(sub, "R-SE", o.R_SE, "Spin-exchange collision rate (1/s)");
    cfg.add_double(sub, "R-SD", o.R_SD, "Spin-destruction collision rate (1/s)");
    cfg.add_int(sub, "I", o.I_twice, "Twice the nuclear spin (1, 2, 3, 5 or 7)");
    cfg.add_double(sub, "gamma-e", o.gamma_e, "Electron gyromagnetic ratio (rad/s per nT)");
    cfg.add_flag(sub, "no-nonlinear", o.no_nonlinear, "Disable the nonlinear scattering term");
}

void add_window(CLI::App* sub, SubConfig& cfg, Options& o) {
    cfg.add_double(sub, "t-end-ms", o.t_end_ms, "Simulation length (ms)");
    cfg.add_double(sub, "dt-us", o.dt_us,
                   "Output sample spacing (us); integration may subdivide");
    cfg.add_double(sub, "t0-us", o.t0_us, "Fit window start (us)");
}

bool check_common(const Options& o) {
    const auto fail = [](const std::string& msg) {
        std::cerr << "error: " << msg << "\n";
        return false;
    };
    if (!(o.P >= 0.0 && o.P < 1.0)) return fail("--P must satisfy 0 <= P < 1");
    if (!(o.t_end_ms > 0.0)) return fail("--t-end-ms must be positive");
    if (!(o.dt_us > 0.0)) return fail("--dt-us must be positive");
    if (!(o.t0_us >= 0.0)) return fail("--t0-us must be non-negative");
    if (o.t0_us + 50.0 * o.dt_us > o.t_end_ms * 1e3)
        return fail("fit window needs at least 50 samples: reduce --t0-us or --dt-us");
    if (!(o.R_SE >= 0.0) || !(o.R_SD >= 0.0)) return fail("rates must be non-negative");
    if (o.I_twice != 1 && o.I_twice != 2 && o.I_twice != 3 && o.I_twice != 5 && o.I_twice != 7)
        return fail("--I must be one of 1, 2, 3, 5, 7 (twice the nuclear spin)");
    if (!std::isfinite(o.gamma_e) || !std::isfinite(o.B_nT))
        return fail("field parameters must be finite");
    if (o.probe != "circular" && o.probe != "linear" && o.probe != "both")
        return fail("--probe must be circular, linear or both");
    return true;
}

SimParams params_for(const Options& o, double B_nT) {
    SimParams p;
    p.omega_B = o.gamma_e * B_nT;
    p.R_SE = o.R_SE;
    p.R_SD = o.R_SD;
    p.gamma_e = o.gamma_e;
    p.nonlinear = !o.no_nonlinear;
    return p;
}

std::vector<std::string> fit_row(const std::string& probe, const FitResult& r) {
    return {probe,
            format_double(r.A),
            format_double(r.T1),
            format_double(r.C),
            format_double(r.Gamma0),
            format_double(r.omega0),
            format_double(r.phi),
            format_double(r.residual_rms),
            r.converged ? "1" : "0"};
}

struct ProbeRun {
    std::string name;
    FidSignal signal;
    FitResult fit;
};

// Simulate one field point and fit the requested probe signals. Shared by
// the fid and sweep commands so a single-point sweep reproduces fid exactly.
std::vector<ProbeRun> run_point(const SpinSystem& sys, const std::vector<TensorOperator>& basis,
                                const Options& o, double B_nT) {
    const SimParams p = params_for(o, B_nT);
    const double t_end = o.t_end_ms * 1e-3;
    double dt = o.dt_us * 1e-6;
    std::size_t stride = 1;
    const double cap = max_stable_dt(p);
    while (dt > cap && stride < (std::size_t{1} << 24)) {
        dt *= 0.5;
        stride *= 2;
    }

    const auto rho0 = spin_temperature_state(sys, o.P, {1.0, 0.0, 0.0});
    const auto traj = evolve(rho0, sys, p, t_end, dt, stride);

    std::vector<ProbeRun> runs;
    const double t0 = o.t0_us * 1e-6;
    const auto add = [&](const std::string& name, ProbePolarization pol) {
        ProbeConfig probe;
        probe.polarization = pol;
        ProbeRun run;
        run.name = name;
        run.signal = synth_fid(traj, probe, basis);
        run.fit = fit_fid(run.signal, t0);
        runs.push_back(std::move(run));
    };
    if (o.probe == "both" || o.probe == "circular")
        add("circular", ProbePolarization::circular_plus);
    if (o.probe == "both" || o.probe == "linear") add("linear", ProbePolarization::linear_pi);
    return runs;
}

int cmd_fid(const Options& o) {
    const auto sys = build_system(HalfInt(o.I_twice));
    const auto basis = tensor_basis(sys);
    const auto runs = run_point(sys, basis, o, o.B_nT);

    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);

    std::vector<std::string> header = {"t_s"};
    for (const auto& run : runs) header.push_back(run.name);
    CsvWriter fid((dir / "fid.csv").string(), header);
    for (std::size_t i = 0; i < runs.front().signal.times.size(); ++i) {
        std::vector<std::string> row = {format_double(runs.front().signal.times[i])};
        for (const auto& run : runs) row.push_back(format_double(run.signal.values[i]));
        fid.write_row(row);
    }
    fid.close();

    CsvWriter fits((dir / "fid_fit.csv").string(), kFitHeader);
    for (const auto& run : runs) fits.write_row(fit_row(run.name, run.fit));
    fits.close();

    const bool all_degenerate =
        std::all_of(runs.begin(), runs.end(), [](const ProbeRun& r) { return r.fit.degenerate; });
    return all_degenerate ? kExitDegenerate : kExitOk;
}

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_sweep(const Options& o) {
    const auto fail = [](const std::string& msg) {
        std::cerr << "error: " << msg << "\n";
        return kExitUsage;
    };
    if (!(o.B_min_nT > 0.0) || !(o.B_max_nT >= o.B_min_nT))
        return fail("need 0 < --B-min-nT <= --B-max-nT");
    if (o.B_count < 1) return fail("--B-count must be at least 1");
    if (o.jobs < 1) return fail("--jobs must be at least 1");

    std::vector<double> grid;
    for (int i = 0; i < o.B_count; ++i) {
        if (i == 0) {
            grid.push_back(o.B_min_nT);
        } else if (i == o.B_count - 1) {
            grid.push_back(o.B_max_nT);
        } else {
            const double f = static_cast<double>(i) / (o.B_count - 1);
            grid.push_back(std::exp(std::log(o.B_min_nT) +
                                    f * (std::log(o.B_max_nT) - std::log(o.B_min_nT))));
        }
    }

    const auto sys = build_system(HalfInt(o.I_twice));
    const auto basis = tensor_basis(sys);

    std::vector<std::vector<ProbeRun>> results(grid.size());
    std::vector<std::exception_ptr> errors(grid.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < grid.size(); i = next.fetch_add(1)) {
            try {
                results[i] = run_point(sys, basis, o, grid[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t nthreads =
        std::min<std::size_t>(static_cast<std::size_t>(o.jobs), grid.size());
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k + 1 < nthreads; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (const auto& err : errors)
        if (err) std::rethrow_exception(err);

    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);

    CsvWriter sweep((dir / "sweep.csv").string(),
                    {"B_nT", "probe", "Gamma0_per_s", "omega0_rad_s", "converged"});
    std::size_t total = 0, converged = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (const auto& run : results[i]) {
            sweep.write_row({format_double(grid[i]), run.name, format_double(run.fit.Gamma0),
                             format_double(run.fit.omega0), run.fit.converged ? "1" : "0"});
            ++total;
            if (run.fit.converged) ++converged;
        }
    }
    sweep.close();

    // Per-probe threshold summaries over usable (converged, resolved) rows.
    struct Summary {
        std::vector<std::pair<double, double>> pts;  // (B, Gamma0)
        ThresholdCrossing crossing;
        double exponent = std::numeric_limits<double>::quiet_NaN();
    };
    std::vector<std::string> probe_names;
    for (const auto& run : results.front()) probe_names.push_back(run.name);
    std::vector<Summary> summaries(probe_names.size());
    for (std::size_t pi = 0; pi < probe_names.size(); ++pi) {
        auto& s = summaries[pi];
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const auto& fit = results[i][pi].fit;
            if (fit.converged && !fit.degenerate) s.pts.emplace_back(grid[i], fit.Gamma0);
        }
        try {
            s.crossing = threshold_crossing(s.pts);
        } catch (const std::invalid_argument&) {
            s.crossing.plateau_low = std::numeric_limits<double>::quiet_NaN();
            s.crossing.plateau_high = std::numeric_limits<double>::quiet_NaN();
        }
        if (std::isfinite(s.crossing.B_threshold)) {
            std::vector<std::pair<double, double>> low;
            for (const auto& pt : s.pts)
                if (pt.first <= 0.5 * s.crossing.B_threshold) low.push_back(pt);
            try {
                s.exponent = quadratic_threshold_fit(low).exponent;
            } catch (const std::invalid_argument&) {
            }
        }
    }

    // Median decay-rate ratio linear/circular over the deep low-field points
    // (below half of both probes' thresholds).
    double ratio_median = std::numeric_limits<double>::quiet_NaN();
    if (probe_names.size() == 2) {
        double b_cut = std::numeric_limits<double>::infinity();
        for (const auto& s : summaries) {
            if (!std::isfinite(s.crossing.B_threshold)) {
                b_cut = std::numeric_limits<double>::quiet_NaN();
                break;
            }
            b_cut = std::min(b_cut, 0.5 * s.crossing.B_threshold);
        }
        if (std::isfinite(b_cut)) {
            std::vector<double> ratios;
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const auto& fc = results[i][0].fit;
                const auto& fl = results[i][1].fit;
                if (grid[i] <= b_cut && fc.converged && !fc.degenerate && fl.converged &&
                    !fl.degenerate && fc.Gamma0 > 0.0)
                    ratios.push_back(fl.Gamma0 / fc.Gamma0);
            }
            ratio_median = median(std::move(ratios));
        }
    }

    CsvWriter summary((dir / "sweep_summary.csv").string(),
                      {"probe", "plateau_low_per_s", "plateau_high_per_s", "quad_exponent",
                       "threshold_B_nT", "gamma_ratio_median_serf"});
    for (std::size_t pi = 0; pi < probe_names.size(); ++pi) {
        const auto& s = summaries[pi];
        summary.write_row({probe_names[pi], format_double(s.crossing.plateau_low),
                           format_double(s.crossing.plateau_high), format_double(s.exponent),
                           format_double(s.crossing.B_threshold), format_double(ratio_median)});
    }
    summary.close();

    if (converged * 5 < total * 4) {
        std::cerr << "error: only " << converged << " of " << total << " fits converged\n";
        return kExitQuorum;
    }
    return kExitOk;
}

int cmd_eig(const Options& o) {
    const auto sys = build_system(HalfInt(o.I_twice));
    const auto slots = block_diagonal_basis(sys);
    const SimParams p = params_for(o, o.B_nT);
    const auto op = o.bare_linear ? build_linear(sys, p) : build_linear_mean_field(sys, p);
    const auto modes = eigenmodes(op, slots);

    fs::create_directories(o.out_dir);
    CsvWriter eig((fs::path(o.out_dir) / "eig.csv").string(),
                  {"L", "M", "branch", "re_lambda_per_s", "im_lambda_rad_s",
                   "classification_overlap"});
    for (const auto& m : modes)
        eig.write_row({std::to_string(m.L), std::to_string(m.M), std::string(1, m.branch),
                       format_double(m.lambda.real()), format_double(m.lambda.imag()),
                       format_double(m.classification_overlap)});
    eig.close();
    return kExitOk;
}

int cmd_perturb(const Options& o) {
    const auto sys = build_system(HalfInt(o.I_twice));
    const auto basis = tensor_basis(sys);
    const SimParams p = params_for(o, o.B_nT);
    const auto rho0 = spin_temperature_state(sys, o.P, {1.0, 0.0, 0.0});
    const double t0 = o.t0_us * 1e-6;

    const auto pred = perturbative_birefringent(sys, p, rho0, t0);

    // Simulated reference: fit the quadrupole probe over the same window.
    const auto runs = run_point(sys, basis, o, o.B_nT);
    const ProbeRun* linear = nullptr;
    for (const auto& run : runs)
        if (run.name == "linear") linear = &run;
    if (linear == nullptr) {
        std::cerr << "error: the perturb command requires the linear probe\n";
        return kExitUsage;
    }

    std::string warning;
    if (pred.high_polarization_warning) warning += "high-polarization";
    if (pred.degenerate_denominator) {
        if (!warning.empty()) warning += ";";
        warning += "degenerate-denominator";
    }

    const double g_pred = -pred.lambda_br_plus.real();
    const double w_pred = std::abs(pred.lambda_br_plus.imag());
    const double c_pred = std::abs(pred.component_amp_plus);
    const auto ratio = [](double obs, double predicted) {
        return predicted != 0.0 ? obs / predicted : std::numeric_limits<double>::quiet_NaN();
    };

    fs::create_directories(o.out_dir);
    CsvWriter out((fs::path(o.out_dir) / "perturb.csv").string(),
                  {"quantity", "predicted", "observed", "ratio", "warning"});
    out.write_row({"Gamma0_per_s", format_double(g_pred), format_double(linear->fit.Gamma0),
                   format_double(ratio(linear->fit.Gamma0, g_pred)), warning});
    out.write_row({"omega0_rad_s", format_double(w_pred), format_double(linear->fit.omega0),
                   format_double(ratio(linear->fit.omega0, w_pred)), warning});
    out.write_row({"amplitude", format_double(c_pred), format_double(linear->fit.C),
                   format_double(ratio(linear->fit.C, c_pred)), warning});
    out.close();

    return linear->fit.degenerate ? kExitDegenerate : kExitOk;
}

int cmd_fit(const Options& o) {
    CsvTable table;
    try {
        table = read_csv(o.input);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    if (table.header.empty() || table.header.front() != "t_s" || table.header.size() < 2) {
        std::cerr << "error: input must have a t_s column followed by signal columns\n";
        return kExitUsage;
    }

    std::vector<double> times;
    times.reserve(table.rows.size());
    std::vector<std::vector<double>> columns(table.header.size() - 1);
    try {
        for (const auto& row : table.rows) {
            times.push_back(parse_double(row[0]));
            for (std::size_t c = 1; c < row.size(); ++c)
                columns[c - 1].push_back(parse_double(row[c]));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    fs::create_directories(o.out_dir);
    CsvWriter out((fs::path(o.out_dir) / "fit.csv").string(), kFitHeader);
    bool all_degenerate = true;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        FidSignal sig;
        sig.times = times;
        sig.values = columns[c];
        FitResult res;
        try {
            res = fit_fid(sig, o.t0_us * 1e-6);
        } catch (const std::invalid_argument& e) {
            std::cerr << "error: column '" << table.header[c + 1] << "': " << e.what() << "\n";
            return kExitUsage;
        }
        all_degenerate = all_degenerate && res.degenerate;
        out.write_row(fit_row(table.header[c + 1], res));
    }
    out.close();
    return all_degenerate ? kExitDegenerate : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Alkali spin-dynamics simulator: probe decays, field sweeps, and fits"};
    app.require_subcommand(1);

    Options o;

    CLI::App* fid = app.add_subcommand("fid", "Simulate probe decays at one field point");
    SubConfig fid_cfg;
    fid_cfg.add_double(fid, "B-nT", o.B_nT, "Magnetic field (nT)");
    fid_cfg.add_string(fid, "probe", o.probe, "Probe selection")
        ->check(CLI::IsMember({"circular", "linear", "both"}));
    add_physics(fid, fid_cfg, o);
    add_window(fid, fid_cfg, o);
    add_output(fid, fid_cfg, o);
    add_config_flag(fid, o);

    CLI::App* sweep = app.add_subcommand("sweep", "Fit decay rates across a field sweep");
    SubConfig sweep_cfg;
    sweep_cfg.add_double(sweep, "B-min-nT", o.B_min_nT, "Lowest field (nT)");
    sweep_cfg.add_double(sweep, "B-max-nT", o.B_max_nT, "Highest field (nT)");
    sweep_cfg.add_int(sweep, "B-count", o.B_count,
                      "Number of geometrically spaced field points");
    sweep_cfg.add_int(sweep, "jobs", o.jobs, "Worker threads (output is order-independent)");
    add_physics(sweep, sweep_cfg, o);
    add_window(sweep, sweep_cfg, o);
    add_output(sweep, sweep_cfg, o);
    add_config_flag(sweep, o);

    CLI::App* eig = app.add_subcommand("eig", "Eigenvalues of the linearized generator");
    SubConfig eig_cfg;
    eig_cfg.add_double(eig, "B-nT", o.B_nT, "Magnetic field (nT)");
    eig_cfg.add_flag(eig, "bare-linear", o.bare_linear,
                     "Diagonalize the bare collision generator (no mean-field feedback)");
    add_physics(eig, eig_cfg, o);
    add_output(eig, eig_cfg, o);
    add_config_flag(eig, o);

    CLI::App* perturb =
        app.add_subcommand("perturb", "Predicted vs simulated driven quadrupole line");
    SubConfig perturb_cfg;
    perturb_cfg.add_double(perturb, "B-nT", o.B_nT, "Magnetic field (nT)");
    add_physics(perturb, perturb_cfg, o);
    add_window(perturb, perturb_cfg, o);
    add_output(perturb, perturb_cfg, o);
    add_config_flag(perturb, o);

    CLI::App* fit = app.add_subcommand("fit", "Fit damped-cosine parameters to a CSV signal");
    SubConfig fit_cfg;
    fit->add_option("--input", o.input, "CSV with a t_s column followed by signal columns")
        ->required();
    fit_cfg.add_double(fit, "t0-us", o.t0_us, "Fit window start (us)");
    add_output(fit, fit_cfg, o);
    add_config_flag(fit, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (!o.config_path.empty()) {
        const SubConfig* cfg = nullptr;
        if (app.got_subcommand(fid)) cfg = &fid_cfg;
        else if (app.got_subcommand(sweep)) cfg = &sweep_cfg;
        else if (app.got_subcommand(eig)) cfg = &eig_cfg;
        else if (app.got_subcommand(perturb)) cfg = &perturb_cfg;
        else if (app.got_subcommand(fit)) cfg = &fit_cfg;
        try {
            if (cfg != nullptr) cfg->apply_file(o.config_path);
        } catch (const UsageError& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kExitUsage;
        }
    }

    try {
        if (app.got_subcommand(fit)) return cmd_fit(o);
        if (!check_common(o)) return kExitUsage;
        if (app.got_subcommand(fid)) return cmd_fid(o);
        if (app.got_subcommand(sweep)) return cmd_sweep(o);
        if (app.got_subcommand(eig)) return cmd_eig(o);
        if (app.got_subcommand(perturb)) return cmd_perturb(o);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerics;
    }
    return kExitUsage;
}
