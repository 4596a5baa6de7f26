#include "sbchain/observables.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace sbchain {

QubitMetrics qubit_metrics_from_rho(const MatrixXcd& rho_in) {
    if (rho_in.rows() != 2 || rho_in.cols() != 2) throw DomainError("qubit density matrix must be 2x2");
    QubitMetrics m;
    m.rho = 0.5 * (rho_in + rho_in.adjoint());
    const double tr = std::real(m.rho.trace());
    if (!(tr > 0.0)) throw DomainError("qubit density matrix has non-positive trace");
    m.rho /= tr;
    const cplx r01 = m.rho(0, 1);
    m.bloch = {2.0 * std::real(r01), -2.0 * std::imag(r01), std::real(m.rho(0, 0) - m.rho(1, 1))};
    m.coherence = m.bloch[0];
    m.purity = std::real((m.rho * m.rho).trace());
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(m.rho, Eigen::EigenvaluesOnly);
    m.entropy = 0.0;
    for (Eigen::Index k = 0; k < 2; ++k) {
        const double p = es.eigenvalues()[k];
        if (p > 0.0) m.entropy -= p * std::log(p);
    }
    return m;
}

QubitMetrics qubit_metrics(const Mps& state) {
    if (state.site(0).phys_dim() != 2) throw DomainError("site 0 is not a qubit");
    return qubit_metrics_from_rho(reduced_density_matrix(state, 0));
}

VectorXd chain_occupations(const Mps& state) {
    const auto pops = site_populations(state);
    VectorXd occ(static_cast<Eigen::Index>(pops.size()) - 1);
    for (std::size_t i = 1; i < pops.size(); ++i) {
        const VectorXd& p = pops[i];
        occ[static_cast<Eigen::Index>(i) - 1] = p.dot(VectorXd::LinSpaced(p.size(), 0.0, static_cast<double>(p.size() - 1)));
    }
    return occ;
}

double hopping_guide_velocity(const ChainCoefficients& coeffs) {
    if (coeffs.L() < 2 || coeffs.hops.empty()) throw DomainError("guide velocity needs at least two chain sites");
    double m = 0.0;
    for (double t : coeffs.hops) m = std::max(m, std::abs(t));
    return 2.0 * m;
}

double ipr_width(const VectorXcd& f) { return 1.0 / f.cwiseAbs2().cwiseAbs2().sum(); }

NaturalOrbital site_orbital(Eigen::Index L, Eigen::Index k) {
    if (k < 0 || k >= L) throw DomainError("site index out of range");
    NaturalOrbital o;
    o.f = VectorXcd::Zero(L);
    o.f[k] = 1.0;
    o.participation_width = 1.0;
    return o;
}

namespace {

Eigen::Index largest_component(const VectorXcd& f) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < f.size(); ++k)
        if (std::abs(f[k]) > std::abs(f[best]) + 1e-12) best = k;
    return best;
}

}  // namespace

NaturalOrbital leading_natural_orbital(const MatrixXcd& one_body, const std::optional<NaturalOrbital>& previous) {
    if (one_body.rows() != one_body.cols() || one_body.rows() < 1) throw DomainError("one-body matrix must be square");
    const MatrixXcd M = 0.5 * (one_body + one_body.adjoint());
    const double trace = std::real(M.trace());
    if (trace < 1e-14) throw DegenerateOrbitalError("one-body matrix is numerically zero; no leading orbital");
    const Eigen::Index L = M.rows();
    const bool use_prev = previous && previous->f.size() == L;

    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(M);
    const double top = es.eigenvalues()[L - 1];
    Eigen::Index k = 1;
    while (k < L && es.eigenvalues()[L - 1 - k] >= top - 1e-12) ++k;
    const MatrixXcd Q = es.eigenvectors().rightCols(k);

    VectorXcd f = Q.col(k - 1);
    if (k > 1) {
        VectorXcd proj = VectorXcd::Zero(L);
        if (use_prev) proj = Q * (Q.adjoint() * previous->f);
        if (proj.norm() < 1e-12) {
            const VectorXd weight = Q.cwiseAbs2().rowwise().sum();
            Eigen::Index j = 0;
            for (Eigen::Index i = 1; i < L; ++i)
                if (weight[i] > weight[j] + 1e-12) j = i;
            proj = Q * Q.row(j).adjoint();
        }
        f = proj;
    }
    f.normalize();

    cplx ov = use_prev ? previous->f.dot(f) : cplx(0.0);
    if (std::abs(ov) < 1e-14) ov = f[largest_component(f)];
    f *= std::conj(ov) / std::abs(ov);

    NaturalOrbital o;
    o.f = std::move(f);
    o.eigenvalue = std::max(0.0, top);
    o.leading_fraction = std::clamp(top / trace, 0.0, 1.0);
    o.participation_width = ipr_width(o.f);
    return o;
}

}  // namespace sbchain
