#pragma once
// Projection of density matrices onto the irreducible tensor coefficients
// rho_LM(F,F') and reconstruction from them.

#include <complex>
#include <map>
#include <stdexcept>
#include <vector>

#include "serfsim/angular.hpp"
#include "serfsim/dynamics.hpp"

namespace serfsim {

struct MultipoleKey {
    int L = 0;
    int M = 0;
    HalfInt F;
    HalfInt Fp;
    friend auto operator<=>(const MultipoleKey&, const MultipoleKey&) = default;
};

// Coefficients of the tensor expansion rho = sum rho_LM(F,F') T_LM(F,F').
// For Hermitian rho they satisfy conj(rho_LM(F,F')) =
// (-1)^(F-F'+M) rho_L,-M(F',F), and sum |rho_LM|^2 = trace(rho^2).
using MultipoleSet = std::map<MultipoleKey, cplx>;

inline MultipoleSet decompose(const Mat& rho, const std::vector<TensorOperator>& basis) {
    MultipoleSet out;
    for (const auto& op : basis)
        out[{op.L, op.M, op.F, op.Fp}] = (op.matrix.adjoint() * rho).trace();
    return out;
}

inline MultipoleSet decompose(const DensityMatrix& rho, const std::vector<TensorOperator>& basis) {
    return decompose(rho.rho, basis);
}

// Resums the expansion; every basis slot must be present in `ms`. The result
// is a plain matrix — non-Hermitian coefficient sets (violating the reality
// constraint above) produce matrices that density_matrix_error flags.
inline Mat reconstruct(const MultipoleSet& ms, const std::vector<TensorOperator>& basis) {
    if (basis.empty()) throw std::invalid_argument("reconstruct: empty basis");
    Mat out = Mat::Zero(basis.front().matrix.rows(), basis.front().matrix.cols());
    for (const auto& op : basis) {
        const auto it = ms.find({op.L, op.M, op.F, op.Fp});
        if (it == ms.end())
            throw std::invalid_argument("reconstruct: missing entry for (L=" +
                                        std::to_string(op.L) + ", M=" + std::to_string(op.M) +
                                        ", F=" + to_string(op.F) + ", F'=" + to_string(op.Fp) +
                                        ")");
        out += it->second * op.matrix;
    }
    return out;
}

// Time series of one tensor coefficient along a trajectory.
inline std::vector<cplx> component_series(const Trajectory& traj,
                                          const std::vector<TensorOperator>& basis, int L, int M,
                                          HalfInt F, HalfInt Fp) {
    const TensorOperator* op = nullptr;
    for (const auto& cand : basis)
        if (cand.L == L && cand.M == M && cand.F == F && cand.Fp == Fp) {
            op = &cand;
            break;
        }
    if (op == nullptr)
        throw std::invalid_argument("component_series: (L=" + std::to_string(L) + ", M=" +
                                    std::to_string(M) + ", F=" + to_string(F) + ", F'=" +
                                    to_string(Fp) + ") is not a basis slot");
    std::vector<cplx> out;
    out.reserve(traj.states.size());
    const Mat op_dag = op->matrix.adjoint();
    for (const auto& state : traj.states) out.push_back((op_dag * state.rho).trace());
    return out;
}

}  // namespace serfsim
