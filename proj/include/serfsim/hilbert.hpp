#pragma once
// Coupled ground-state Hilbert space for electron spin 1/2 + nuclear spin I:
// spin operators, density-matrix validation, spin-temperature states, and the
// nuclear/electronic decomposition rho = alpha + A.S.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "serfsim/angular.hpp"
#include "serfsim/half_int.hpp"

namespace serfsim {

using Mat = Eigen::MatrixXcd;
using cplx = std::complex<double>;

namespace detail {

// Angular momentum matrices for magnitude j (given as twice-value), in the
// m = -j..j ascending basis.
inline std::array<Mat, 3> spin_matrices(int twice_j) {
    const int n = twice_j + 1;
    Mat jz = Mat::Zero(n, n), jp = Mat::Zero(n, n);
    const double j = 0.5 * twice_j;
    for (int i = 0; i < n; ++i) {
        const double m = -j + i;
        jz(i, i) = m;
        if (i + 1 < n) jp(i + 1, i) = std::sqrt(j * (j + 1) - m * (m + 1));
    }
    const Mat jx = (jp + jp.adjoint()) / 2.0;
    const Mat jy = (jp - jp.adjoint()) / cplx(0.0, 2.0);
    return {jx, jy, jz};
}

}  // namespace detail

// Immutable description of the coupled space: operators are stored in the
// coupled |F,m> basis, F blocks in descending-F order with m ascending.
struct SpinSystem {
    HalfInt I;
    int dim = 0;
    std::vector<BasisState> basis_labels;
    Mat U;          // columns = coupled states expressed in the uncoupled (m_I, m_s) basis
    std::array<Mat, 3> S_ops;
    std::array<Mat, 3> I_ops;
    std::array<Mat, 3> F_ops;
    Mat IS;         // I.S, diagonal in the coupled basis
    std::vector<int> block_of;  // row index -> twice-F of its manifold

    [[nodiscard]] const Mat& Sx() const { return S_ops[0]; }
    [[nodiscard]] const Mat& Sy() const { return S_ops[1]; }
    [[nodiscard]] const Mat& Sz() const { return S_ops[2]; }
};

// Builds the coupled system for nuclear spin I in {1/2, 1, 3/2, 5/2, 7/2}.
inline SpinSystem build_system(HalfInt I) {
    constexpr int supported[] = {1, 2, 3, 5, 7};
    bool ok = false;
    for (int t : supported) ok = ok || (I.twice == t);
    if (!ok)
        throw std::invalid_argument("build_system: unsupported nuclear spin I = " + to_string(I) +
                                    " (supported: 1/2, 1, 3/2, 5/2, 7/2)");

    SpinSystem sys;
    sys.I = I;
    const int nn = I.twice + 1;  // nuclear dimension
    sys.dim = 2 * nn;

    // Coupled labels: F = I + 1/2 block first, then F = I - 1/2; m ascending.
    for (int tF : {I.twice + 1, I.twice - 1}) {
        if (tF < 0) continue;
        for (int tm = -tF; tm <= tF; tm += 2)
            sys.basis_labels.push_back({HalfInt(tF), HalfInt(tm)});
    }
    for (const auto& s : sys.basis_labels) sys.block_of.push_back(s.F.twice);

    // Uncoupled operators on (nuclear tensor electron), index u = iI*2 + iS.
    const auto nuc = detail::spin_matrices(I.twice);
    const auto ele = detail::spin_matrices(1);
    const Mat eyeN = Mat::Identity(nn, nn), eye2 = Mat::Identity(2, 2);
    auto kron = [](const Mat& a, const Mat& b) {
        Mat out(a.rows() * b.rows(), a.cols() * b.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j)
                out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        return out;
    };

    // Unitary change of basis from uncoupled products to coupled |F,m>.
    sys.U = Mat::Zero(sys.dim, sys.dim);
    for (std::size_t col = 0; col < sys.basis_labels.size(); ++col) {
        const auto [F, m] = sys.basis_labels[col];
        for (int iI = 0; iI < nn; ++iI) {
            const HalfInt mi(-I.twice + 2 * iI);
            for (int iS = 0; iS < 2; ++iS) {
                const HalfInt ms(-1 + 2 * iS);
                sys.U(iI * 2 + iS, static_cast<Eigen::Index>(col)) =
                    clebsch_gordan(I, HalfInt(1), mi, ms, F, m);
            }
        }
    }

    auto to_coupled = [&](const Mat& a) { return Mat(sys.U.adjoint() * a * sys.U); };
    for (int j = 0; j < 3; ++j) {
        sys.I_ops[j] = to_coupled(kron(nuc[j], eye2));
        sys.S_ops[j] = to_coupled(kron(eyeN, ele[j]));
        sys.F_ops[j] = sys.I_ops[j] + sys.S_ops[j];
    }
    sys.IS = sys.I_ops[0] * sys.S_ops[0] + sys.I_ops[1] * sys.S_ops[1] + sys.I_ops[2] * sys.S_ops[2];
    return sys;
}

// Returns an empty string when `m` satisfies the density-matrix invariants
// (Hermitian, unit trace, positive semidefinite), else a diagnostic.
inline std::string density_matrix_error(const Mat& m, double herm_tol = 1e-12,
                                        double trace_tol = 1e-12, double eig_floor = -1e-9) {
    if (m.rows() != m.cols()) return "density matrix must be square";
    const double herm = (m - m.adjoint()).cwiseAbs().maxCoeff();
    if (herm > herm_tol) return "density matrix not Hermitian (deviation " + std::to_string(herm) + ")";
    const double tr_err = std::abs(m.trace() - cplx(1.0, 0.0));
    if (tr_err > trace_tol) return "density matrix trace differs from 1 by " + std::to_string(tr_err);
    Eigen::SelfAdjointEigenSolver<Mat> es((m + m.adjoint()) / 2.0);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < eig_floor) return "density matrix has negative eigenvalue " + std::to_string(min_eig);
    return {};
}

// Validated Hermitian unit-trace positive-semidefinite state.
struct DensityMatrix {
    Mat rho;

    static DensityMatrix make(Mat m) {
        if (auto err = density_matrix_error(m); !err.empty())
            throw std::invalid_argument("DensityMatrix: " + err);
        return DensityMatrix{std::move(m)};
    }
};

// Zeroes every element between different F manifolds; idempotent and
// trace-preserving.
inline Mat project_block_diagonal(const Mat& x, const SpinSystem& sys) {
    Mat out = x;
    for (int a = 0; a < sys.dim; ++a)
        for (int b = 0; b < sys.dim; ++b)
            if (sys.block_of[static_cast<std::size_t>(a)] != sys.block_of[static_cast<std::size_t>(b)])
                out(a, b) = 0.0;
    return out;
}

// Nuclear part of rho: rho/4 + sum_j S_j rho S_j. Equals the electron-factor
// partial trace re-embedded with identity/2 on the electron factor (the
// depolarized-electron projection); decompose_alpha_A tests both routes.
inline Mat nuclear_part(const Mat& rho, const SpinSystem& sys) {
    return rho / 4.0 + sys.Sx() * rho * sys.Sx() + sys.Sy() * rho * sys.Sy() +
           sys.Sz() * rho * sys.Sz();
}

struct AlphaDecomposition {
    Mat alpha;                // nuclear part, embedded in the coupled space
    std::array<Mat, 3> A;     // electronic coefficient matrices, embedded likewise
};

// rho = alpha + sum_j A_j S_j with alpha = (1/2) Tr_e(rho) (x) 1_e and
// A_j = Tr_e(rho sigma_j) (x) 1_e, both mapped back to the coupled basis.
inline AlphaDecomposition decompose_alpha_A(const Mat& rho, const SpinSystem& sys,
                                            double herm_tol = 1e-12) {
    if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > herm_tol)
        throw std::invalid_argument("decompose_alpha_A: non-Hermitian input");

    const int nn = sys.dim / 2;
    const Mat rho_u = sys.U * rho * sys.U.adjoint();
    const auto pauli = detail::spin_matrices(1);  // sigma_j / 2

    auto partial_trace_e = [&](const Mat& x) {
        Mat nucm = Mat::Zero(nn, nn);
        for (int i = 0; i < nn; ++i)
            for (int j2 = 0; j2 < nn; ++j2)
                for (int s = 0; s < 2; ++s) nucm(i, j2) += x(i * 2 + s, j2 * 2 + s);
        return nucm;
    };
    auto embed = [&](const Mat& nucm) {
        Mat big = Mat::Zero(sys.dim, sys.dim);
        for (int i = 0; i < nn; ++i)
            for (int j2 = 0; j2 < nn; ++j2)
                for (int s = 0; s < 2; ++s) big(i * 2 + s, j2 * 2 + s) = nucm(i, j2);
        return Mat(sys.U.adjoint() * big * sys.U);
    };

    AlphaDecomposition out;
    out.alpha = embed(partial_trace_e(rho_u)) / 2.0;
    for (int j = 0; j < 3; ++j) {
        const Mat sigma_full = [&] {
            Mat s2 = 2.0 * pauli[static_cast<std::size_t>(j)];  // Pauli matrix
            Mat big = Mat::Zero(sys.dim, sys.dim);
            for (int i = 0; i < nn; ++i) big.block(i * 2, i * 2, 2, 2) = s2;
            return big;
        }();
        out.A[static_cast<std::size_t>(j)] = embed(partial_trace_e(rho_u * sigma_full));
    }
    return out;
}

// Spherical electron-spin components: S_0 = S_z, S_{+-1} = -+(S_x +- i S_y)/sqrt(2).
inline std::array<Mat, 3> spherical_S(const SpinSystem& sys) {
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    return {
        Mat((sys.Sx() - cplx(0, 1) * sys.Sy()) * inv_sqrt2),   // k = -1
        sys.Sz(),                                               // k =  0
        Mat(-(sys.Sx() + cplx(0, 1) * sys.Sy()) * inv_sqrt2),  // k = +1
    };
}

// <S_k> = tr(rho S_k) for k in {-1, 0, +1} (array index k+1).
inline std::array<cplx, 3> expect_S_spherical(const Mat& rho, const SpinSystem& sys) {
    const auto sph = spherical_S(sys);
    return {(rho * sph[0]).trace(), (rho * sph[1]).trace(), (rho * sph[2]).trace()};
}

// Spin-temperature state exp(beta F.n)/Z with beta solved by bisection so
// that 2<S.n> = P. P = 0 returns the maximally mixed state; P >= 1 rejected.
inline DensityMatrix spin_temperature_state(const SpinSystem& sys, double P,
                                            const Eigen::Vector3d& direction) {
    if (P < 0.0 || P >= 1.0)
        throw std::invalid_argument("spin_temperature_state: P must lie in [0, 1)");
    const double norm = direction.norm();
    if (norm <= 0.0) throw std::invalid_argument("spin_temperature_state: zero direction");
    const Eigen::Vector3d n = direction / norm;

    if (P == 0.0)
        return DensityMatrix{Mat::Identity(sys.dim, sys.dim) / static_cast<double>(sys.dim)};

    const Mat Fn = n.x() * sys.F_ops[0] + n.y() * sys.F_ops[1] + n.z() * sys.F_ops[2];
    const Mat Sn = n.x() * sys.S_ops[0] + n.y() * sys.S_ops[1] + n.z() * sys.S_ops[2];
    Eigen::SelfAdjointEigenSolver<Mat> es(Fn);
    const Eigen::VectorXd w = es.eigenvalues();
    const Mat V = es.eigenvectors();

    auto state_at = [&](double beta) {
        Eigen::VectorXd e = (beta * w.array()).exp();
        e /= e.sum();
        return Mat(V * e.asDiagonal() * V.adjoint());
    };
    auto pol_at = [&](double beta) { return 2.0 * (state_at(beta) * Sn).trace().real(); };

    double lo = 0.0, hi = 1.0;
    while (pol_at(hi) < P) {
        hi *= 2.0;
        if (hi > 1e6) throw std::runtime_error("spin_temperature_state: bisection bracket failed");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (pol_at(mid) < P ? lo : hi) = mid;
    }
    Mat rho = state_at(0.5 * (lo + hi));
    rho = (rho + rho.adjoint()) / 2.0;
    return DensityMatrix{std::move(rho)};
}

// Irreducible tensor basis spanning the system's coupled space.
inline std::vector<TensorOperator> tensor_basis(const SpinSystem& sys) {
    return tensor_basis_for_labels(sys.basis_labels);
}

}  // namespace serfsim
