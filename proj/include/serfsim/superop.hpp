#pragma once
// Linear collision/precession superoperator on the block-diagonal operator
// space, its classified eigenmodes, the spherical coupling matrices Q{k} of
// the polarization-dependent collision term, and the driven-response
// prediction for the quadrupole (birefringent) coherences.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "serfsim/dynamics.hpp"
#include "serfsim/hilbert.hpp"

namespace serfsim {

// Tensor slots with F = F' — the coordinate system for vectorized
// block-diagonal operators (34 slots for I = 3/2).
inline std::vector<TensorOperator> block_diagonal_basis(const SpinSystem& sys) {
    std::vector<TensorOperator> slots;
    for (auto& op : tensor_basis(sys))
        if (op.F == op.Fp) slots.push_back(std::move(op));
    return slots;
}

inline Eigen::VectorXcd vectorize(const Mat& x, const std::vector<TensorOperator>& slots) {
    Eigen::VectorXcd v(static_cast<Eigen::Index>(slots.size()));
    for (std::size_t s = 0; s < slots.size(); ++s)
        v(static_cast<Eigen::Index>(s)) = (slots[s].matrix.adjoint() * x).trace();
    return v;
}

inline Mat unvectorize(const Eigen::VectorXcd& v, const std::vector<TensorOperator>& slots) {
    Mat x = Mat::Zero(slots.front().matrix.rows(), slots.front().matrix.cols());
    for (std::size_t s = 0; s < slots.size(); ++s)
        x += v(static_cast<Eigen::Index>(s)) * slots[s].matrix;
    return x;
}

inline std::size_t slot_index(const std::vector<TensorOperator>& slots, int L, int M, HalfInt F,
                              HalfInt Fp) {
    for (std::size_t s = 0; s < slots.size(); ++s)
        if (slots[s].L == L && slots[s].M == M && slots[s].F == F && slots[s].Fp == Fp) return s;
    throw std::invalid_argument("slot_index: no such tensor slot");
}

struct LinearSuperOp {
    Mat matrix;  // acts on slot coordinates; trace functional is a left null vector
    SimParams params;
};

namespace detail {

inline LinearSuperOp build_linear_impl(const SpinSystem& sys, const SimParams& p,
                                       bool mean_field) {
    validate_params(p);
    const auto slots = block_diagonal_basis(sys);
    const auto n = static_cast<Eigen::Index>(slots.size());
    LinearSuperOp sop{Mat::Zero(n, n), p};
    const cplx minus_i(0.0, -1.0);
    for (std::size_t j = 0; j < slots.size(); ++j) {
        const Mat& x = slots[j].matrix;
        const Mat ax = nuclear_part(x, sys);
        Mat dx = minus_i * p.omega_B * (sys.Sz() * x - x * sys.Sz());
        dx += p.R_SE * (ax - x) - p.R_SD * (x - ax);
        if (mean_field && p.R_SE != 0.0) {
            const double g = 4.0 * p.R_SE / static_cast<double>(sys.dim);
            for (int c = 0; c < 3; ++c)
                dx += g * (sys.S_ops[static_cast<std::size_t>(c)] * x).trace() *
                      sys.S_ops[static_cast<std::size_t>(c)];
        }
        sop.matrix.col(static_cast<Eigen::Index>(j)) =
            vectorize(project_block_diagonal(dx, sys), slots);
    }
    return sop;
}

}  // namespace detail

// Bare linear generator: precession + the isotropic collision relaxation
// (alpha - rho) terms, with no polarization feedback. This is exactly the
// dynamics obtained by switching the nonlinear collision term off.
inline LinearSuperOp build_linear(const SpinSystem& sys, const SimParams& p) {
    return detail::build_linear_impl(sys, p, false);
}

// Adds the low-polarization mean-field linearization of the nonlinear
// collision term, (4 R_SE / dim) sum_j S_j tr(S_j rho): the generator whose
// slow dipole eigenvalues describe the observed narrowed coherences.
inline LinearSuperOp build_linear_mean_field(const SpinSystem& sys, const SimParams& p) {
    return detail::build_linear_impl(sys, p, true);
}

struct EigenMode {
    cplx lambda;                          // 1/s
    int L = 0;                            // dominant tensor rank
    int M = 0;                            // dominant tensor projection
    char branch = '+';                    // '+' = smaller |Re lambda| within (L, M)
    bool mixed = false;                   // dominant squared overlap below 0.5
    double classification_overlap = 0.0;  // squared overlap of the dominant (L, M)
    Eigen::VectorXcd right_vec;           // unit norm
    Eigen::VectorXcd left_vec;            // row of the inverse: left_i . right_j = delta_ij
};

// Dense eigen-decomposition with (L, M) classification by dominant squared
// overlap with the tensor slots, and biorthonormal left/right vectors.
// Modes are returned sorted by (L, M, branch).
inline std::vector<EigenMode> eigenmodes(const LinearSuperOp& sop,
                                         const std::vector<TensorOperator>& slots) {
    const Eigen::Index n = sop.matrix.rows();
    if (static_cast<Eigen::Index>(slots.size()) != n)
        throw std::invalid_argument("eigenmodes: slot count does not match operator size");

    Eigen::ComplexEigenSolver<Mat> es(sop.matrix);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("eigenmodes: eigen-decomposition failed to converge");
    const Mat v = es.eigenvectors();
    Eigen::FullPivLU<Mat> lu(v);
    if (!lu.isInvertible())
        throw std::runtime_error("eigenmodes: defective operator (eigenvector matrix singular)");
    const Mat vi = lu.inverse();
    const double scale = std::max(sop.matrix.cwiseAbs().maxCoeff(), 1.0);
    const double recon =
        (v * es.eigenvalues().asDiagonal() * vi - sop.matrix).cwiseAbs().maxCoeff();
    if (recon > 1e-8 * scale)
        throw std::runtime_error("eigenmodes: operator not diagonalizable to tolerance");

    std::vector<EigenMode> modes(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        EigenMode& mode = modes[static_cast<std::size_t>(i)];
        mode.lambda = es.eigenvalues()(i);
        mode.right_vec = v.col(i);
        mode.left_vec = vi.row(i).transpose();

        std::map<std::pair<int, int>, double> weight;
        double total = 0.0;
        for (Eigen::Index s = 0; s < n; ++s) {
            const double w = std::norm(v(s, i));
            weight[{slots[static_cast<std::size_t>(s)].L, slots[static_cast<std::size_t>(s)].M}] +=
                w;
            total += w;
        }
        for (const auto& [lm, w] : weight)
            if (w > mode.classification_overlap * total) {
                mode.classification_overlap = w / total;
                mode.L = lm.first;
                mode.M = lm.second;
            }
        mode.mixed = mode.classification_overlap < 0.5;
    }

    // Branch assignment within each (L, M): slower-decaying mode is '+'.
    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < modes.size(); ++i) groups[{modes[i].L, modes[i].M}].push_back(i);
    for (auto& [lm, idx] : groups) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const double ra = std::abs(modes[a].lambda.real()), rb = std::abs(modes[b].lambda.real());
            if (ra != rb) return ra < rb;
            return modes[a].lambda.imag() < modes[b].lambda.imag();
        });
        for (std::size_t r = 0; r < idx.size(); ++r) modes[idx[r]].branch = r == 0 ? '+' : '-';
    }

    std::sort(modes.begin(), modes.end(), [](const EigenMode& a, const EigenMode& b) {
        if (a.L != b.L) return a.L < b.L;
        if (a.M != b.M) return a.M < b.M;
        if (a.branch != b.branch) return a.branch == '+';
        return a.lambda.imag() < b.lambda.imag();
    });
    return modes;
}

inline const EigenMode& find_mode(const std::vector<EigenMode>& modes, int L, int M,
                                  char branch = '+') {
    for (const auto& m : modes)
        if (m.L == L && m.M == M && m.branch == branch) return m;
    throw std::runtime_error("find_mode: no mode classified as (L=" + std::to_string(L) +
                             ", M=" + std::to_string(M) + ", " + std::string(1, branch) + ")");
}

// Spherical coupling matrices of the polarization-dependent collision term.
// Q_k maps a deviation sigma to 2 (alpha(sigma) - tr(sigma)/dim) S_k, block
// projected; the term itself is recovered as
//   2 R_SE sum_k Q_k(rho) tr(rho S_k^dagger) + (4 R_SE / dim) sum_j S_j tr(S_j rho).
// Elements between eigenmodes vanish for rank-0 sources and unless
// M(target) = m(source) + k.
struct QCoefficients {
    std::array<Mat, 3> slot_matrices;  // index k+1, acting on slot coordinates
    std::array<Mat, 3> mode_matrices;  // (target, source) elements between eigenmodes

    [[nodiscard]] cplx element(int k, std::size_t source, std::size_t target) const {
        return mode_matrices[static_cast<std::size_t>(k + 1)](static_cast<Eigen::Index>(target),
                                                              static_cast<Eigen::Index>(source));
    }
};

inline QCoefficients q_coefficients(const SpinSystem& sys,
                                    const std::vector<TensorOperator>& slots,
                                    const std::vector<EigenMode>& modes) {
    const auto n = static_cast<Eigen::Index>(slots.size());
    const auto sph = spherical_S(sys);
    const Mat eye = Mat::Identity(sys.dim, sys.dim);
    QCoefficients q;
    for (int k = -1; k <= 1; ++k) {
        Mat qk = Mat::Zero(n, n);
        for (std::size_t j = 0; j < slots.size(); ++j) {
            const Mat& x = slots[j].matrix;
            const Mat y =
                2.0 * (nuclear_part(x, sys) - x.trace() / static_cast<double>(sys.dim) * eye) *
                sph[static_cast<std::size_t>(k + 1)];
            qk.col(static_cast<Eigen::Index>(j)) = vectorize(project_block_diagonal(y, sys), slots);
        }
        const auto nm = static_cast<Eigen::Index>(modes.size());
        Mat qm(nm, nm);
        for (Eigen::Index src = 0; src < nm; ++src) {
            const Eigen::VectorXcd qr = qk * modes[static_cast<std::size_t>(src)].right_vec;
            for (Eigen::Index tgt = 0; tgt < nm; ++tgt)
                qm(tgt, src) = modes[static_cast<std::size_t>(tgt)].left_vec.transpose() * qr;
        }
        q.slot_matrices[static_cast<std::size_t>(k + 1)] = std::move(qk);
        q.mode_matrices[static_cast<std::size_t>(k + 1)] = std::move(qm);
    }
    return q;
}

struct BranchAmplitude {
    int M = 0;
    char branch = '+';
    cplx lambda_target;            // eigenvalue of the driven quadrupole mode
    cplx amplitude;                // modal coefficient of the driven response at t0
    bool degenerate_denominator = false;
};

struct PerturbativePrediction {
    cplx lambda_larmor_plus;       // slow dipole eigenvalue, M = +1
    cplx lambda_br_plus;           // driven quadrupole exponent for M = +2 (= 2x above)
    cplx lambda_br_minus;          // conjugate partner for M = -2
    std::vector<BranchAmplitude> branch_amplitudes;
    cplx component_amp_plus;       // predicted (L=2, M=+2, F=Fmax) coefficient at t0
    cplx component_amp_minus;
    double t0 = 0.0;
    bool degenerate_denominator = false;
    bool high_polarization_warning = false;
};

// Driven-response prediction for the quadrupole coherences: the slow dipole
// pair (coherence amplitude and mean electron spin), each evolving at the
// slow dipole eigenvalue, drive the M = +-2 quadrupole modes through Q{k};
// the response oscillates and decays at exactly twice the slow dipole
// eigenvalue. Pass t0 <= 0 to use the default 3/R_SE.
inline PerturbativePrediction perturbative_birefringent(const SpinSystem& sys,
                                                        const SimParams& params,
                                                        const DensityMatrix& rho0,
                                                        double t0 = -1.0) {
    validate_params(params);
    if (params.R_SE <= 0.0)
        throw std::invalid_argument("perturbative_birefringent: requires R_SE > 0");
    PerturbativePrediction out;
    out.t0 = t0 > 0.0 ? t0 : 3.0 / params.R_SE;

    double sx = (rho0.rho * sys.Sx()).trace().real();
    double sy = (rho0.rho * sys.Sy()).trace().real();
    double sz = (rho0.rho * sys.Sz()).trace().real();
    out.high_polarization_warning = 2.0 * std::sqrt(sx * sx + sy * sy + sz * sz) > 0.3;

    const auto slots = block_diagonal_basis(sys);
    const auto sop = build_linear_mean_field(sys, params);
    const auto modes = eigenmodes(sop, slots);
    const auto q = q_coefficients(sys, slots, modes);

    // Linear-theory state at t0 from the modal expansion of the initial
    // deviation about the unpolarized state.
    const Mat eye = Mat::Identity(sys.dim, sys.dim);
    const Mat sigma0 = project_block_diagonal(rho0.rho, sys) - eye / static_cast<double>(sys.dim);
    const Eigen::VectorXcd v0 = vectorize(sigma0, slots);
    std::vector<cplx> coord(modes.size());
    Eigen::VectorXcd vt0 = Eigen::VectorXcd::Zero(v0.size());
    for (std::size_t i = 0; i < modes.size(); ++i) {
        coord[i] = modes[i].left_vec.transpose() * v0;
        vt0 += coord[i] * std::exp(modes[i].lambda * out.t0) * modes[i].right_vec;
    }
    const Mat rho_lin_t0 = eye / static_cast<double>(sys.dim) + unvectorize(vt0, slots);
    const auto sph = spherical_S(sys);
    auto scatter_scalar = [&](int k) {  // tr(rho S_k^dagger) at t0
        return std::conj((rho_lin_t0 * sph[static_cast<std::size_t>(k + 1)]).trace());
    };

    const HalfInt f_hi = HalfInt(sys.I.twice + 1);
    const auto slot_plus = slot_index(slots, 2, 2, f_hi, f_hi);
    const auto slot_minus = slot_index(slots, 2, -2, f_hi, f_hi);

    out.lambda_larmor_plus = find_mode(modes, 1, 1).lambda;
    out.lambda_br_plus = 2.0 * out.lambda_larmor_plus;
    out.lambda_br_minus = 2.0 * find_mode(modes, 1, -1).lambda;

    for (const int m_target : {2, -2}) {
        const int k = m_target / 2;
        std::size_t src = modes.size();
        for (std::size_t i = 0; i < modes.size(); ++i)
            if (modes[i].L == 1 && modes[i].M == k && modes[i].branch == '+') src = i;
        if (src == modes.size())
            throw std::runtime_error("perturbative_birefringent: slow dipole mode not found");

        const cplx rho_src_t0 =
            coord[src] * std::exp(modes[src].lambda * out.t0);  // dipole coefficient at t0
        const cplx drive = 2.0 * params.R_SE * scatter_scalar(k) * rho_src_t0;
        cplx comp_amp = 0.0;
        for (std::size_t tgt = 0; tgt < modes.size(); ++tgt) {
            if (modes[tgt].L != 2 || modes[tgt].M != m_target) continue;
            BranchAmplitude ba;
            ba.M = m_target;
            ba.branch = modes[tgt].branch;
            ba.lambda_target = modes[tgt].lambda;
            const cplx denom = -modes[tgt].lambda + 2.0 * modes[src].lambda;
            ba.degenerate_denominator = std::abs(denom) < 1e-6 * params.R_SE;
            out.degenerate_denominator = out.degenerate_denominator || ba.degenerate_denominator;
            if (!ba.degenerate_denominator)
                ba.amplitude = drive * q.element(k, src, tgt) / denom;
            comp_amp += ba.amplitude *
                        modes[tgt].right_vec(static_cast<Eigen::Index>(
                            m_target > 0 ? slot_plus : slot_minus));
            out.branch_amplitudes.push_back(ba);
        }
        (m_target > 0 ? out.component_amp_plus : out.component_amp_minus) = comp_amp;
    }
    return out;
}

}  // namespace serfsim
