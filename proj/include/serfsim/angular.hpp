#pragma once
// Exact angular-momentum algebra: Clebsch-Gordan coefficients (Racah sum with
// exact integer factorials, Condon-Shortley phases) and the orthonormal
// irreducible spherical tensor operators T_LM(F,F') on a coupled |F,m> basis.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "serfsim/half_int.hpp"

namespace serfsim {

namespace detail {

// Factorials as exact long doubles; n <= 32 covers the j <= 6 support range
// (largest argument is j1+j2+J+1 <= 25) while staying exactly representable
// in the 64-bit significand of x86 long double.
inline long double factorial_ld(int n) {
    static const std::array<long double, 33> table = [] {
        std::array<long double, 33> t{};
        t[0] = 1.0L;
        for (int i = 1; i <= 32; ++i) t[i] = t[i - 1] * static_cast<long double>(i);
        return t;
    }();
    return table.at(static_cast<std::size_t>(n));
}

// Factorial of a half-integer argument that must be a nonnegative whole number.
inline long double fact_twice(int twice) {
    if (twice < 0 || twice % 2 != 0)
        throw std::logic_error("internal: factorial of a non-whole half-integer");
    return factorial_ld(twice / 2);
}

}  // namespace detail

// <j1 m1 j2 m2 | J M> in the Condon-Shortley convention.
// Out-of-triangle, m1+m2 != M, |m| > j, or inconsistent integer/half-integer
// parity all return 0. Magnitudes above j = 6 are rejected (out of the
// supported range of the exact factorial table).
inline double clebsch_gordan(HalfInt j1, HalfInt j2, HalfInt m1, HalfInt m2, HalfInt J, HalfInt M) {
    require_magnitude(j1, "j1");
    require_magnitude(j2, "j2");
    require_magnitude(J, "J");
    if (j1.twice > 12 || j2.twice > 12 || J.twice > 24)
        throw std::invalid_argument("clebsch_gordan: magnitudes above j = 6 are unsupported");

    const int tj1 = j1.twice, tj2 = j2.twice, tJ = J.twice;
    const int tm1 = m1.twice, tm2 = m2.twice, tM = M.twice;
    if (tm1 + tm2 != tM) return 0.0;
    if (tJ < std::abs(tj1 - tj2) || tJ > tj1 + tj2) return 0.0;
    if ((tj1 + tj2 + tJ) % 2 != 0) return 0.0;
    if (std::abs(tm1) > tj1 || std::abs(tm2) > tj2 || std::abs(tM) > tJ) return 0.0;
    if ((tj1 + tm1) % 2 != 0 || (tj2 + tm2) % 2 != 0 || (tJ + tM) % 2 != 0) return 0.0;

    using detail::fact_twice;
    const long double pre = static_cast<long double>(tJ + 1) * fact_twice(tJ + tj1 - tj2) *
                            fact_twice(tJ - tj1 + tj2) * fact_twice(tj1 + tj2 - tJ) *
                            fact_twice(tJ + tM) * fact_twice(tJ - tM) * fact_twice(tj1 - tm1) *
                            fact_twice(tj1 + tm1) * fact_twice(tj2 - tm2) * fact_twice(tj2 + tm2);
    const long double den = fact_twice(tj1 + tj2 + tJ + 2);

    long double sum = 0.0L;
    for (int k = 0;; ++k) {
        const int t1 = tj1 + tj2 - tJ - 2 * k;
        const int t2 = tj1 - tm1 - 2 * k;
        const int t3 = tj2 + tm2 - 2 * k;
        const int t4 = tJ - tj2 + tm1 + 2 * k;
        const int t5 = tJ - tj1 - tm2 + 2 * k;
        if (k > 0 && (t1 < 0 || t2 < 0 || t3 < 0)) break;
        if (t1 < 0 || t2 < 0 || t3 < 0 || t4 < 0 || t5 < 0) continue;
        const long double term = 1.0L / (detail::factorial_ld(k) * fact_twice(t1) * fact_twice(t2) *
                                         fact_twice(t3) * fact_twice(t4) * fact_twice(t5));
        sum += (k % 2 == 0) ? term : -term;
    }
    return static_cast<double>(std::sqrt(pre / den) * sum);
}

// One coupled-basis state label.
struct BasisState {
    HalfInt F;
    HalfInt m;
};

// Irreducible spherical tensor operator T_LM(F,F') embedded in the full
// coupled space; nonzero only on the F-row x F'-column block.
struct TensorOperator {
    int L = 0;
    int M = 0;
    HalfInt F;
    HalfInt Fp;
    Eigen::MatrixXcd matrix;
};

// T_LM(F,F') = sum_{m,m'} (-1)^(F'-m') <F m; F' -m' | L M> |F m><F' m'|.
// Trace-orthonormal: tr(T'^dagger T) = delta on all labels.
inline TensorOperator tensor_operator(int L, int M, HalfInt F, HalfInt Fp,
                                      const std::vector<BasisState>& labels) {
    const auto dim = static_cast<Eigen::Index>(labels.size());
    TensorOperator T{L, M, F, Fp, Eigen::MatrixXcd::Zero(dim, dim)};
    for (Eigen::Index a = 0; a < dim; ++a) {
        if (labels[static_cast<std::size_t>(a)].F != F) continue;
        const HalfInt ma = labels[static_cast<std::size_t>(a)].m;
        for (Eigen::Index b = 0; b < dim; ++b) {
            if (labels[static_cast<std::size_t>(b)].F != Fp) continue;
            const HalfInt mb = labels[static_cast<std::size_t>(b)].m;
            const double c =
                clebsch_gordan(F, Fp, ma, -mb, HalfInt::whole(L), HalfInt::whole(M));
            if (c == 0.0) continue;
            const int phase_twice = Fp.twice - mb.twice;  // always even here
            const double sign = (phase_twice / 2) % 2 == 0 ? 1.0 : -1.0;
            T.matrix(a, b) += sign * c;
        }
    }
    return T;
}

// All T_LM(F,F') over both hyperfine manifolds, |F-F'| <= L <= F+F',
// -L <= M <= L, in deterministic order: (F,F') pairs with F then F'
// descending, L ascending, M ascending. Count is sum over pairs of
// (2F+1)(2F'+1) and the set spans the full operator space.
inline std::vector<TensorOperator> tensor_basis_for_labels(const std::vector<BasisState>& labels) {
    std::vector<HalfInt> manifolds;
    for (const auto& s : labels) {
        bool seen = false;
        for (auto F : manifolds) seen = seen || (F == s.F);
        if (!seen) manifolds.push_back(s.F);
    }
    std::sort(manifolds.begin(), manifolds.end(), [](HalfInt a, HalfInt b) { return a > b; });

    std::vector<TensorOperator> basis;
    for (auto F : manifolds) {
        for (auto Fp : manifolds) {
            const int Lmin = std::abs(F.twice - Fp.twice) / 2;
            const int Lmax = (F.twice + Fp.twice) / 2;
            for (int L = Lmin; L <= Lmax; ++L)
                for (int M = -L; M <= L; ++M) basis.push_back(tensor_operator(L, M, F, Fp, labels));
        }
    }
    return basis;
}

}  // namespace serfsim
