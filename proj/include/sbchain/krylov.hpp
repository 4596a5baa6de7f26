#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "sbchain/types.hpp"

namespace sbchain {

struct KrylovResult {
    int dimension = 0;
    double error_estimate = 0.0;
};

/// v <- exp(tau H) v for Hermitian H, by Lanczos with full reorthogonalisation.
///
/// `apply(x, y)` must write H x into y. Convergence is declared when the
/// standard a-posteriori estimate beta_{m+1} |[exp(tau T_m) e_1]_m| drops below
/// `tol` (relative to |v|), or on an invariant subspace.
template <typename Apply>
KrylovResult expm_krylov(Apply&& apply, VectorXcd& v, cplx tau, int max_dim, double tol) {
    const double beta0 = v.norm();
    KrylovResult result;
    if (beta0 == 0.0) return result;

    std::vector<VectorXcd> basis;
    basis.reserve(static_cast<std::size_t>(max_dim) + 1);
    basis.push_back(v / beta0);
    std::vector<double> alpha;
    std::vector<double> beta;
    VectorXcd w(v.size());
    VectorXcd coeffs;

    for (int j = 0; j < max_dim; ++j) {
        apply(basis.back(), w);
        const double a = std::real(basis.back().dot(w));
        alpha.push_back(a);
        w -= a * basis.back();
        if (j > 0) w -= beta.back() * basis[basis.size() - 2];
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& q : basis) w -= q.dot(w) * q;
        const double b = w.norm();

        const int m = j + 1;
        MatrixXd T = MatrixXd::Zero(m, m);
        for (int k = 0; k < m; ++k) T(k, k) = alpha[static_cast<std::size_t>(k)];
        for (int k = 0; k + 1 < m; ++k) T(k, k + 1) = T(k + 1, k) = beta[static_cast<std::size_t>(k)];
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(T);
        const VectorXcd phase = (tau * es.eigenvalues().cast<cplx>()).array().exp();
        coeffs = es.eigenvectors().cast<cplx>() * phase.cwiseProduct(es.eigenvectors().row(0).transpose().cast<cplx>());

        result.dimension = m;
        result.error_estimate = b * std::abs(coeffs[m - 1]);
        // an exhausted or invariant subspace makes the projection exact
        const bool exact = b <= 1e-13 * (std::abs(a) + 1.0) || static_cast<Eigen::Index>(m) >= v.size();
        if (exact || result.error_estimate < tol) {
            v.setZero();
            for (int k = 0; k < m; ++k) v += (beta0 * coeffs[k]) * basis[static_cast<std::size_t>(k)];
            return result;
        }
        beta.push_back(b);
        basis.push_back(w / b);
    }
    throw IntegratorError("Krylov exponential did not converge within the subspace budget", result.error_estimate);
}

}  // namespace sbchain
