#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "dense_oracle.hpp"
#include "sbchain/wigner.hpp"

using namespace sbchain;

namespace {

constexpr double kPi = std::numbers::pi;

VectorXcd ket(Index d, Index n) {
    VectorXcd v = VectorXcd::Zero(d);
    v[n] = 1.0;
    return v;
}

VectorXcd coherent(Index d, cplx a) {
    VectorXcd v(d);
    for (Index n = 0; n < d; ++n)
        v[n] = std::exp(-0.5 * std::norm(a)) * std::pow(a, static_cast<double>(n)) / std::sqrt(std::tgamma(n + 1.0));
    return v;
}

VectorXcd unit_mode(std::initializer_list<cplx> c) {
    VectorXcd f(static_cast<Index>(c.size()));
    Index k = 0;
    for (cplx x : c) f[k++] = x;
    return f.normalized();
}

/// c_f^dag |0> = sum_k f_k^* |1_k> as a bond-2 MPS over bath sites of dimension d.
Mps single_excitation(const VectorXcd& f, Index d) {
    const Index L = f.size();
    std::vector<SiteTensor<cplx>> sites;
    for (Index k = 0; k < L; ++k) {
        const Index l = k == 0 ? 1 : 2;
        const Index r = k + 1 == L ? 1 : 2;
        SiteTensor<cplx> A(l, d, r);
        // bond state 0: no excitation placed yet, 1: placed
        if (k == 0 && L == 1) {
            A[1](0, 0) = std::conj(f[k]);
        } else if (k == 0) {
            A[0](0, 0) = 1.0;
            A[1](0, 1) = std::conj(f[k]);
        } else if (k + 1 == L) {
            A[0](1, 0) = 1.0;
            A[1](0, 0) = std::conj(f[k]);
        } else {
            A[0](0, 0) = 1.0;
            A[0](1, 1) = 1.0;
            A[1](0, 1) = std::conj(f[k]);
        }
        sites.push_back(std::move(A));
    }
    return Mps(std::move(sites));
}

/// Dense chi(lambda) = <psi| I_skip x prod_k D_k(lambda f_k^*) |psi> / <psi|psi>.
cplx dense_chi(const Mps& psi, const VectorXcd& f, cplx lambda, std::size_t first_mode) {
    const VectorXcd v = to_dense(psi);
    MatrixXcd op = MatrixXcd::Identity(1, 1);
    for (std::size_t i = 0; i < psi.size(); ++i) {
        const Index d = psi.site(i).phys_dim();
        const MatrixXcd local = i < first_mode ? MatrixXcd::Identity(d, d)
                                               : oracle::displacement_block(d, lambda * std::conj(f[static_cast<Index>(i - first_mode)]));
        op = Eigen::kroneckerProduct(op, local).eval();
    }
    return v.dot(op * v) / v.squaredNorm();
}

WignerFunction wigner_of(const Mps& psi, const VectorXcd& f, std::size_t first_mode, const LambdaGrid& lg = {},
                         const PhaseSpaceGrid& pg = {}) {
    return wigner_from_characteristic(characteristic_function(psi, f, lg, first_mode), lg, pg);
}

}  // namespace

TEST(Characteristic, VacuumAnyMode) {
    const auto psi = product_state<cplx>({ket(6, 0), ket(6, 0), ket(6, 0)});
    const VectorXcd f = unit_mode({cplx(0.3, 0.1), cplx(-0.5, 0.2), cplx(0.0, 0.7)});
    for (cplx lam : {cplx(0, 0), cplx(0.7, -0.2), cplx(-1.5, 2.0), cplx(3.0, 1.0)})
        EXPECT_NEAR(std::abs(characteristic_value(psi, f, lam, 0) - std::exp(-0.5 * std::norm(lam))), 0.0, 1e-12);
}

TEST(Characteristic, CoherentStateInMode) {
    // D_f(beta)|0> = prod_k D_k(beta f_k^*)|0>, a product of coherent states
    const VectorXcd f = unit_mode({cplx(0.6, 0.0), cplx(0.0, 0.5), cplx(-0.3, 0.4)});
    const cplx beta(0.8, -0.5);
    const Index d = 14;
    std::vector<VectorXcd> loc;
    for (Index k = 0; k < 3; ++k) loc.push_back(coherent(d, beta * std::conj(f[k])).normalized());
    const auto psi = product_state<cplx>(loc);
    for (cplx lam : {cplx(0.4, 0.3), cplx(-1.0, 0.5), cplx(1.2, -1.1)}) {
        const cplx expected = std::exp(-0.5 * std::norm(lam)) * std::exp(lam * std::conj(beta) - std::conj(lam) * beta);
        // single-mode dense oracle on 40 levels
        const VectorXcd c40 = coherent(40, beta);
        const cplx oracle40 = c40.dot(oracle::displacement_block(40, lam) * c40);
        EXPECT_NEAR(std::abs(oracle40 - expected), 0.0, 1e-10);
        EXPECT_NEAR(std::abs(characteristic_value(psi, f, lam, 0) - expected), 0.0, 1e-9);
    }
}

TEST(Characteristic, OriginIsOne) {
    const auto psi = oracle::random_mps({2, 4, 4, 3}, 4, 9);
    const VectorXcd f = unit_mode({1.0, cplx(0, 1), 0.5});
    EXPECT_NEAR(std::abs(characteristic_value(psi, f, 0.0, 1) - 1.0), 0.0, 1e-12);
}

TEST(Characteristic, HermiticityUnderInversion) {
    const auto psi = oracle::random_mps({2, 4, 5, 4}, 5, 13);
    const VectorXcd f = unit_mode({cplx(0.2, 0.5), cplx(-0.6, 0.1), cplx(0.3, -0.4)});
    for (cplx lam : {cplx(0.3, 0.9), cplx(-2.0, 0.4), cplx(1.1, -1.7)}) {
        const cplx a = characteristic_value(psi, f, lam, 1);
        const cplx b = characteristic_value(psi, f, -lam, 1);
        EXPECT_NEAR(std::abs(b - std::conj(a)), 0.0, 1e-8);
    }
}

TEST(Characteristic, MatchesDenseFockOracle) {
    for (unsigned seed = 1; seed <= 3; ++seed) {
        const std::vector<Index> dims{2, 5, 4, 6};
        const auto psi = oracle::random_mps(dims, 6, seed);
        const VectorXcd f = unit_mode({cplx(0.5, -0.2), cplx(0.1, 0.6), cplx(-0.4, 0.3)});
        for (cplx lam : {cplx(0.5, 0.25), cplx(-1.25, 0.75), cplx(2.0, -1.5)}) {
            EXPECT_NEAR(std::abs(characteristic_value(psi, f, lam, 1) - dense_chi(psi, f, lam, 1)), 0.0, 1e-9);
            // bath-only state, nothing traced out
            const auto bath = oracle::random_mps({5, 4, 6}, 5, seed + 10);
            EXPECT_NEAR(std::abs(characteristic_value(bath, f, lam, 0) - dense_chi(bath, f, lam, 0)), 0.0, 1e-9);
        }
    }
}

TEST(Characteristic, GridFillsHermitianPartners) {
    const auto psi = oracle::random_mps({2, 3, 3}, 3, 4);
    const VectorXcd f = unit_mode({0.6, cplx(0, 0.8)});
    const LambdaGrid g{3.0, 8};
    const MatrixXcd chi = characteristic_function(psi, f, g, 1);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            const cplx lam(g.coord(i), g.coord(j));
            EXPECT_NEAR(std::abs(chi(i, j) - characteristic_value(psi, f, lam, 1)), 0.0, 1e-12);
        }
}

TEST(Characteristic, RejectsBadModeVector) {
    const auto psi = product_state<cplx>({ket(3, 0), ket(3, 0)});
    EXPECT_THROW(characteristic_value(psi, VectorXcd::Ones(2), 0.1, 0), DomainError);
    EXPECT_THROW(characteristic_value(psi, VectorXcd::Ones(3).normalized(), 0.1, 0), DomainError);
    EXPECT_THROW(characteristic_value(psi, VectorXcd::Ones(2).normalized(), 0.1, 2), DomainError);
}

TEST(Wigner, Vacuum) {
    const auto psi = product_state<cplx>({ket(6, 0), ket(6, 0), ket(6, 0)});
    const VectorXcd f = unit_mode({0.3, cplx(0.2, 0.4), -0.5});
    const auto w = wigner_of(psi, f, 0);
    EXPECT_NEAR(w.integral, 1.0, 1e-3);
    EXPECT_LT(negativity_volume(w), 1e-6);
    EXPECT_NEAR(w.values(50, 50), 1.0 / kPi, 1e-4);
    EXPECT_LT(w.imag_residue, 1e-8);
    for (int a = 0; a < 101; a += 7)
        for (int b = 0; b < 101; b += 11) {
            const double q = w.grid.coord(a), p = w.grid.coord(b);
            EXPECT_NEAR(w.values(a, b), std::exp(-(q * q + p * p)) / kPi, 1e-6);
        }
}

TEST(Wigner, FockOneInArbitraryMode) {
    const VectorXcd f = unit_mode({cplx(0.4, 0.2), cplx(-0.3, 0.6), cplx(0.5, -0.1)});
    const auto psi = single_excitation(f, 4);
    // dense Fock-space oracle for chi on a few points: chi = e^{-|l|^2/2}(1 - |l|^2)
    for (cplx lam : {cplx(0.3, 0.2), cplx(-1.0, 0.8), cplx(1.5, -0.5)}) {
        const cplx exact = std::exp(-0.5 * std::norm(lam)) * (1.0 - std::norm(lam));
        EXPECT_NEAR(std::abs(dense_chi(psi, f, lam, 0) - exact), 0.0, 1e-10);
        EXPECT_NEAR(std::abs(characteristic_value(psi, f, lam, 0) - exact), 0.0, 1e-10);
    }
    const auto w = wigner_of(psi, f, 0);
    EXPECT_NEAR(negativity_volume(w), 2.0 * (2.0 * std::exp(-0.5) - 1.0), 1e-3);
    EXPECT_NEAR(negativity_volume(w), 0.42612, 1e-3);
    EXPECT_NEAR(w.values(50, 50), -1.0 / kPi, 1e-3);
    EXPECT_NEAR(w.integral, 1.0, 1e-3);
    EXPECT_NEAR(negativity_volume(w), absolute_integral(w) - w.integral, 1e-6);
    EXPECT_LE(w.values.cwiseAbs().maxCoeff(), 1.0 / kPi + 1e-3);
}

TEST(Wigner, FockOneWithQubitTracedOut) {
    // |+x> (x) c_f^dag|0>: the qubit factor traces out trivially
    const VectorXcd f = unit_mode({0.6, cplx(0, 0.8)});
    const auto bath = single_excitation(f, 3);
    std::vector<SiteTensor<cplx>> sites{SiteTensor<cplx>(1, 2, 1)};
    sites[0][0](0, 0) = sites[0][1](0, 0) = 1 / std::sqrt(2.0);
    for (const auto& s : bath.sites()) sites.push_back(s);
    const auto w = wigner_of(Mps(std::move(sites)), f, 1);
    EXPECT_NEAR(negativity_volume(w), 0.42612, 1e-3);
}

TEST(Wigner, DisplacedVacuumTranslates) {
    const VectorXcd f = unit_mode({0.8, cplx(0, 0.6)});
    const cplx beta(1.0, -0.7);
    std::vector<VectorXcd> loc;
    for (Index k = 0; k < 2; ++k) loc.push_back(coherent(16, beta * std::conj(f[k])).normalized());
    const auto w = wigner_of(product_state<cplx>(loc), f, 0);
    const double q0 = std::sqrt(2.0) * beta.real();
    const double p0 = std::sqrt(2.0) * beta.imag();
    double worst = 0.0;
    for (int a = 0; a < 101; ++a)
        for (int b = 0; b < 101; ++b) {
            const double q = w.grid.coord(a) - q0, p = w.grid.coord(b) - p0;
            worst = std::max(worst, std::abs(w.values(a, b) - std::exp(-(q * q + p * p)) / kPi));
        }
    EXPECT_LT(worst, 1e-5);
    EXPECT_LT(negativity_volume(w), 1e-6);
}

TEST(Wigner, GridConvergenceOfNegativity) {
    const VectorXcd f = unit_mode({cplx(0.4, 0.2), cplx(-0.3, 0.6), cplx(0.5, -0.1)});
    const auto psi = single_excitation(f, 4);
    const double base = negativity_volume(wigner_of(psi, f, 0));
    const double fine = negativity_volume(wigner_of(psi, f, 0, LambdaGrid{12.0, 128}, PhaseSpaceGrid{12.0, 201}));
    EXPECT_LT(std::abs(base - fine), 1e-3);
}

TEST(Wigner, TooSmallWindowIsReported) {
    const auto psi = product_state<cplx>({ket(4, 0)});
    const VectorXcd f = VectorXcd::Ones(1);
    EXPECT_THROW(wigner_of(psi, f, 0, LambdaGrid{}, PhaseSpaceGrid{1.5, 33}), GridConvergenceError);
}

TEST(Wigner, GridValidation) {
    EXPECT_THROW((PhaseSpaceGrid{6.0, 100}.validate()), DomainError);
    EXPECT_THROW((PhaseSpaceGrid{6.0, 31}.validate()), DomainError);
    EXPECT_THROW((LambdaGrid{0.0, 64}.validate()), DomainError);
    EXPECT_NO_THROW((PhaseSpaceGrid{6.0, 33}.validate()));
}

TEST(Wigner, AdaptiveGrids) {
    const auto g = adaptive_grids(LambdaGrid{}, PhaseSpaceGrid{}, 8.0);
    EXPECT_DOUBLE_EQ(g.scale, 2.0);
    EXPECT_DOUBLE_EQ(g.out.half_extent, 12.0);
    EXPECT_DOUBLE_EQ(g.lambda.half_extent, 3.0);
    EXPECT_EQ(g.out.n_points, 101);
    EXPECT_DOUBLE_EQ(adaptive_grids(LambdaGrid{}, PhaseSpaceGrid{}, 0.5).scale, 1.0);
}
