#include "sbchain/evolution.hpp"

#include <algorithm>
#include <cmath>

#include "sbchain/bosonic.hpp"
#include "sbchain/krylov.hpp"

namespace sbchain {

void EvolutionConfig::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("dt must be positive");
    if (!(t_max >= 0.0) || !std::isfinite(t_max)) throw DomainError("t_max must be non-negative");
    if (krylov_dim < 2) throw DomainError("krylov_dim must be >= 2");
    if (!(krylov_tol > 0.0)) throw DomainError("krylov_tol must be positive");
    if (observe_stride < 1) throw DomainError("observe_stride must be >= 1");
    trunc.validate();
}

Mpo build_mpo(const ChainModel& model, const std::vector<Index>& local_dims) {
    const auto& cc = model.coeffs;
    const std::size_t L = cc.L();
    if (L < 1) throw DomainError("chain needs at least one mode");
    if (cc.hops.size() + 1 < L) throw DomainError("chain coefficients have too few hoppings");
    if (local_dims.size() != L + 1) throw DomainError("local_dims must list the qubit and every mode");
    if (local_dims[0] != 2) throw DomainError("site 0 must be the qubit (dimension 2)");
    for (std::size_t k = 1; k <= L; ++k)
        if (local_dims[k] < 2) throw DomainError("Fock dimension must be >= 2");

    // channels: 0 nothing placed yet, 1 waiting for c (or c + c^dag after the
    // qubit), 2 waiting for c^dag, 3 complete
    std::vector<MpoTensor<cplx>> sites;
    sites.reserve(L + 1);

    MpoTensor<cplx> q(1, 4, 2);
    q.set(0, 0, MatrixXcd::Identity(2, 2));
    if (cc.g != 0.0) q.set(0, 1, cc.g * pauli_z());
    if (model.delta != 0.0) q.set(0, 3, model.delta * pauli_x());
    sites.push_back(std::move(q));

    for (std::size_t n = 0; n < L; ++n) {
        const Index d = local_dims[n + 1];
        const MatrixXcd I = MatrixXcd::Identity(d, d);
        const MatrixXcd c = annihilation(d).cast<cplx>();
        const MatrixXcd cd = creation(d).cast<cplx>();
        const MatrixXcd num = number_operator(d).cast<cplx>();
        const double w = cc.omegas[n];
        const MatrixXcd closing = n == 0 ? MatrixXcd(c + cd) : c;
        const bool last = n + 1 == L;

        if (last) {
            MpoTensor<cplx> W(4, 1, d);
            if (w != 0.0) W.set(0, 0, w * num);
            W.set(1, 0, closing);
            if (n >= 1) W.set(2, 0, cd);
            W.set(3, 0, I);
            sites.push_back(std::move(W));
            continue;
        }
        const double t = cc.hops[n];
        MpoTensor<cplx> W(4, 4, d);
        W.set(0, 0, I);
        if (t != 0.0) {
            W.set(0, 1, t * cd);
            W.set(0, 2, t * c);
        }
        if (w != 0.0) W.set(0, 3, w * num);
        W.set(1, 3, closing);
        if (n >= 1) W.set(2, 3, cd);
        W.set(3, 3, I);
        sites.push_back(std::move(W));
    }
    return Mpo(std::move(sites));
}

namespace {

// Local tensors are flattened with index order (l, s, r), l fastest. Viewed
// column-major this is the (Dl*d) x Dr left matrix and also a Dl x (d*Dr)
// matrix whose column is s + d*r, so both environments act by a single GEMM.

using StridedMap = Eigen::Map<MatrixXcd, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const MatrixXcd, 0, Eigen::OuterStride<>>;

MatrixXcd interleaved_right(const SiteTensor<cplx>& B) {
    const Index d = B.phys_dim();
    const Index Dr = B.right_dim();
    MatrixXcd M(B.left_dim(), d * Dr);
    for (Index r = 0; r < Dr; ++r)
        for (Index s = 0; s < d; ++s) M.col(s + d * r) = B[s].col(r);
    return M;
}

SiteTensor<cplx> from_interleaved_right(const MatrixXcd& M, Index d) {
    const Index Dr = M.cols() / d;
    SiteTensor<cplx> B(M.rows(), d, Dr);
    for (Index r = 0; r < Dr; ++r)
        for (Index s = 0; s < d; ++s) B[s].col(r) = M.col(s + d * r);
    return B;
}

VectorXcd merge_two_site(const SiteTensor<cplx>& A, const SiteTensor<cplx>& B) {
    const MatrixXcd M = A.left_matrix() * interleaved_right(B);
    return Eigen::Map<const VectorXcd>(M.data(), M.size());
}

VectorXcd flatten_site(const SiteTensor<cplx>& A) {
    const MatrixXcd M = A.left_matrix();
    return Eigen::Map<const VectorXcd>(M.data(), M.size());
}

SiteTensor<cplx> unflatten_site(const VectorXcd& v, Index Dl, Index d, Index Dr) {
    return SiteTensor<cplx>::from_left_matrix(Eigen::Map<const MatrixXcd>(v.data(), Dl * d, Dr), d);
}

std::vector<char> identity_channels(const std::vector<MatrixXcd>& env) {
    std::vector<char> eye(env.size(), 0);
    for (std::size_t a = 0; a < env.size(); ++a)
        eye[a] = env[a].size() != 0 && env[a].rows() == env[a].cols() && env[a].isIdentity(1e-12);
    return eye;
}

/// Environment blocks with identity channels flagged; canonical sides make the
/// start channel on the left and the done channel on the right exact identities.
struct Environment {
    const std::vector<MatrixXcd>* blocks;
    std::vector<char> eye;

    explicit Environment(const std::vector<MatrixXcd>& env) : blocks(&env), eye(identity_channels(env)) {}
    bool empty(Index a) const { return (*blocks)[static_cast<std::size_t>(a)].size() == 0; }
    bool identity(Index a) const { return eye[static_cast<std::size_t>(a)] != 0; }
    const MatrixXcd& operator[](Index a) const { return (*blocks)[static_cast<std::size_t>(a)]; }
};

// X[a] = E[a] T, with T viewed as Dl x (rest); identity channels alias T.
std::vector<const cplx*> left_products(const Environment& E, Index channels, const cplx* in, Index Dl, Index rest,
                                       std::vector<MatrixXcd>& storage) {
    std::vector<const cplx*> X(static_cast<std::size_t>(channels), nullptr);
    storage.resize(static_cast<std::size_t>(channels));
    Eigen::Map<const MatrixXcd> T(in, Dl, rest);
    for (Index a = 0; a < channels; ++a) {
        if (E.empty(a)) continue;
        if (E.identity(a)) {
            X[static_cast<std::size_t>(a)] = in;
            continue;
        }
        auto& Xa = storage[static_cast<std::size_t>(a)];
        Xa.noalias() = E[a] * T;
        X[static_cast<std::size_t>(a)] = Xa.data();
    }
    return X;
}

// out += sum_c Y[c] F[c], with Y[c] viewed as rows x Dr
void right_products(const Environment& F, const std::vector<MatrixXcd>& Y, Index rows, Index Dr, VectorXcd& out) {
    out.setZero(rows * Dr);
    Eigen::Map<MatrixXcd> O(out.data(), rows, Dr);
    for (std::size_t c = 0; c < Y.size(); ++c) {
        if (Y[c].size() == 0) continue;
        Eigen::Map<const MatrixXcd> Yc(Y[c].data(), rows, Dr);
        if (F.identity(static_cast<Index>(c)))
            O += Yc;
        else
            O.noalias() += Yc * F[static_cast<Index>(c)];
    }
}

void apply_two_site(const Environment& E, const MpoTensor<cplx>& W1, const MpoTensor<cplx>& W2, const Environment& F,
                    Index Dl, Index Dr, const VectorXcd& in, VectorXcd& out) {
    const Index d1 = W1.phys;
    const Index d2 = W2.phys;
    const Index rows1 = Dl * d1;

    std::vector<MatrixXcd> xs;
    const auto X = left_products(E, W1.left, in.data(), Dl, d1 * d2 * Dr, xs);

    // channels b of the middle bond that reach a non-empty right environment
    std::vector<char> live(static_cast<std::size_t>(W1.right), 0);
    for (Index b = 0; b < W2.left; ++b)
        for (Index c = 0; c < W2.right; ++c)
            if (W2.has(b, c) && !F.empty(c)) live[static_cast<std::size_t>(b)] = 1;

    // Z[b](l, s1', .) = sum_{a, s1} W1[a,b](s1', s1) X[a](l, s1, .)
    std::vector<MatrixXcd> Z(static_cast<std::size_t>(W1.right));
    for (Index a = 0; a < W1.left; ++a) {
        const cplx* Xa = X[static_cast<std::size_t>(a)];
        if (Xa == nullptr) continue;
        for (Index b = 0; b < W1.right; ++b) {
            if (!W1.has(a, b) || !live[static_cast<std::size_t>(b)]) continue;
            auto& Zb = Z[static_cast<std::size_t>(b)];
            if (Zb.size() == 0) Zb = MatrixXcd::Zero(rows1, d2 * Dr);
            const auto& op = W1.op(a, b);
            for (Index s = 0; s < d1; ++s) {
                const ConstStridedMap src(Xa + s * Dl, Dl, d2 * Dr, Eigen::OuterStride<>(rows1));
                for (Index sp = 0; sp < d1; ++sp) {
                    const cplx w = op(sp, s);
                    if (w == cplx(0)) continue;
                    StridedMap(Zb.data() + sp * Dl, Dl, d2 * Dr, Eigen::OuterStride<>(rows1)) += w * src;
                }
            }
        }
    }
    // Y[c](.., s2', r) = sum_{b, s2} W2[b,c](s2', s2) Z[b](.., s2, r)
    std::vector<MatrixXcd> Y(static_cast<std::size_t>(W2.right));
    for (Index b = 0; b < W2.left; ++b) {
        const auto& Zb = Z[static_cast<std::size_t>(b)];
        if (Zb.size() == 0) continue;
        for (Index c = 0; c < W2.right; ++c) {
            if (!W2.has(b, c) || F.empty(c)) continue;
            auto& Yc = Y[static_cast<std::size_t>(c)];
            if (Yc.size() == 0) Yc = MatrixXcd::Zero(rows1, d2 * Dr);
            const auto& op = W2.op(b, c);
            for (Index s = 0; s < d2; ++s) {
                const ConstStridedMap src(Zb.data() + s * rows1, rows1, Dr, Eigen::OuterStride<>(rows1 * d2));
                for (Index sp = 0; sp < d2; ++sp) {
                    const cplx w = op(sp, s);
                    if (w == cplx(0)) continue;
                    StridedMap(Yc.data() + sp * rows1, rows1, Dr, Eigen::OuterStride<>(rows1 * d2)) += w * src;
                }
            }
        }
    }
    right_products(F, Y, rows1 * d2, Dr, out);
}

void apply_one_site(const Environment& E, const MpoTensor<cplx>& W, const Environment& F, Index Dl, Index Dr,
                    const VectorXcd& in, VectorXcd& out) {
    const Index d = W.phys;
    const Index rows = Dl * d;

    std::vector<MatrixXcd> xs;
    const auto X = left_products(E, W.left, in.data(), Dl, d * Dr, xs);

    std::vector<MatrixXcd> Y(static_cast<std::size_t>(W.right));
    for (Index a = 0; a < W.left; ++a) {
        const cplx* Xa = X[static_cast<std::size_t>(a)];
        if (Xa == nullptr) continue;
        for (Index b = 0; b < W.right; ++b) {
            if (!W.has(a, b) || F.empty(b)) continue;
            auto& Yb = Y[static_cast<std::size_t>(b)];
            if (Yb.size() == 0) Yb = MatrixXcd::Zero(rows, Dr);
            const auto& op = W.op(a, b);
            for (Index s = 0; s < d; ++s) {
                const ConstStridedMap src(Xa + s * Dl, Dl, Dr, Eigen::OuterStride<>(rows));
                for (Index sp = 0; sp < d; ++sp) {
                    const cplx w = op(sp, s);
                    if (w == cplx(0)) continue;
                    StridedMap(Yb.data() + sp * Dl, Dl, Dr, Eigen::OuterStride<>(rows)) += w * src;
                }
            }
        }
    }
    right_products(F, Y, rows, Dr, out);
}

void apply_bond(const Environment& E, const Environment& F, Index Dl, Index Dr, const VectorXcd& in, VectorXcd& out) {
    const Index channels = static_cast<Index>(E.blocks->size());
    std::vector<MatrixXcd> xs;
    const auto X = left_products(E, channels, in.data(), Dl, Dr, xs);
    std::vector<MatrixXcd> Y(static_cast<std::size_t>(channels));
    for (Index a = 0; a < channels; ++a) {
        const cplx* Xa = X[static_cast<std::size_t>(a)];
        if (Xa == nullptr || F.empty(a)) continue;
        Y[static_cast<std::size_t>(a)] = Eigen::Map<const MatrixXcd>(Xa, Dl, Dr);
    }
    right_products(F, Y, Dl, Dr, out);
}

}  // namespace

Tdvp2::Tdvp2(Mpo hamiltonian, Mps state, const EvolutionConfig& config)
    : mpo_(std::move(hamiltonian)), psi_(std::move(state)), config_(config) {
    config_.validate();
    if (psi_.phys_dims() != mpo_.phys_dims()) throw DomainError("state and Hamiltonian dimensions disagree");
    const std::size_t n = psi_.size();
    canonicalize_in_place(psi_, 0);
    left_.assign(n + 1, {});
    right_.assign(n + 1, {});
    left_[0] = {MatrixXcd::Ones(1, 1)};
    right_[n] = {MatrixXcd::Ones(1, 1)};
    for (std::size_t i = n; i-- > 1;) right_[i] = mpo_transfer_right<cplx>(right_[i + 1], psi_.site(i), psi_.site(i), mpo_.site(i));
}

void Tdvp2::evolve_two_site(VectorXcd& theta, std::size_t i, cplx tau) {
    const Index Dl = psi_.site(i).left_dim();
    const Index Dr = psi_.site(i + 1).right_dim();
    const Environment E(left_[i]);
    const Environment F(right_[i + 2]);
    const auto& W1 = mpo_.site(i);
    const auto& W2 = mpo_.site(i + 1);
    const auto r = expm_krylov([&](const VectorXcd& x, VectorXcd& y) { apply_two_site(E, W1, W2, F, Dl, Dr, x, y); },
                               theta, tau, config_.krylov_dim, config_.krylov_tol);
    max_krylov_ = std::max(max_krylov_, r.dimension);
}

void Tdvp2::evolve_one_site(VectorXcd& theta, std::size_t i, cplx tau) {
    const Index Dl = psi_.site(i).left_dim();
    const Index Dr = psi_.site(i).right_dim();
    const Environment E(left_[i]);
    const Environment F(right_[i + 1]);
    const auto& W = mpo_.site(i);
    const auto r = expm_krylov([&](const VectorXcd& x, VectorXcd& y) { apply_one_site(E, W, F, Dl, Dr, x, y); }, theta,
                               tau, config_.krylov_dim, config_.krylov_tol);
    max_krylov_ = std::max(max_krylov_, r.dimension);
}

void Tdvp2::evolve_bond(MatrixXcd& C, std::size_t i, cplx tau) {
    const Index Dl = C.rows();
    const Index Dr = C.cols();
    const Environment E(left_[i]);
    const Environment F(right_[i]);
    VectorXcd v = Eigen::Map<const VectorXcd>(C.data(), C.size());
    const auto r = expm_krylov([&](const VectorXcd& x, VectorXcd& y) { apply_bond(E, F, Dl, Dr, x, y); }, v, tau,
                               config_.krylov_dim, config_.krylov_tol);
    max_krylov_ = std::max(max_krylov_, r.dimension);
    C = Eigen::Map<const MatrixXcd>(v.data(), Dl, Dr);
}

bool Tdvp2::saturated(std::size_t bond) const {
    if (!config_.one_site_when_saturated) return false;
    const auto& A = psi_.site(bond - 1);
    const auto& B = psi_.site(bond);
    const auto D = static_cast<std::size_t>(B.left_dim());
    // the isometries on both sides must be able to carry the bond
    return D >= config_.trunc.max_bond && A.left_dim() * A.phys_dim() >= B.left_dim() &&
           B.right_dim() * B.phys_dim() >= B.left_dim();
}

double Tdvp2::sweep(double dt) {
    const std::size_t n = psi_.size();
    const cplx fwd(0.0, -0.5 * dt);
    const cplx bwd(0.0, 0.5 * dt);
    double max_discarded = 0.0;

    if (n == 1) {
        VectorXcd v = flatten_site(psi_.site(0));
        evolve_one_site(v, 0, 2.0 * fwd);
        psi_.site(0) = unflatten_site(v, 1, psi_.site(0).phys_dim(), 1);
        return 0.0;
    }

    auto split = [&](std::size_t i, const VectorXcd& theta, bool center_right) {
        auto& A = psi_.site(i);
        auto& B = psi_.site(i + 1);
        const Index d1 = A.phys_dim();
        const Index d2 = B.phys_dim();
        const Index rows = A.left_dim() * d1;
        const MatrixXcd M = Eigen::Map<const MatrixXcd>(theta.data(), rows, theta.size() / rows);
        auto sv = truncated_svd<cplx>(M, config_.trunc);
        max_discarded = std::max(max_discarded, sv.discarded_weight);
        sv.S /= sv.S.norm();
        if (center_right) {
            A = SiteTensor<cplx>::from_left_matrix(sv.U, d1);
            B = from_interleaved_right(sv.S.asDiagonal() * sv.V.adjoint(), d2);
        } else {
            A = SiteTensor<cplx>::from_left_matrix(sv.U * sv.S.asDiagonal(), d1);
            B = from_interleaved_right(sv.V.adjoint(), d2);
        }
    };

    auto one_site = [&](std::size_t i) {
        auto& A = psi_.site(i);
        VectorXcd v = flatten_site(A);
        evolve_one_site(v, i, fwd);
        A = unflatten_site(v, A.left_dim(), A.phys_dim(), A.right_dim());
    };
    auto backward_site = [&](std::size_t i) {
        auto& A = psi_.site(i);
        VectorXcd v = flatten_site(A);
        evolve_one_site(v, i, bwd);
        A = unflatten_site(v, A.left_dim(), A.phys_dim(), A.right_dim());
    };

    // left to right; the centre moves from 0 to n-1
    for (std::size_t i = 0;;) {
        if (i + 1 == n) {
            one_site(i);
            break;
        }
        if (saturated(i + 1)) {
            one_site(i);
            auto& A = psi_.site(i);
            const Eigen::HouseholderQR<MatrixXcd> qr(A.left_matrix());
            const Index k = A.right_dim();
            const MatrixXcd Q = qr.householderQ() * MatrixXcd::Identity(qr.rows(), k);
            MatrixXcd C = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
            A = SiteTensor<cplx>::from_left_matrix(Q, A.phys_dim());
            left_[i + 1] = mpo_transfer_left<cplx>(left_[i], A, A, mpo_.site(i));
            evolve_bond(C, i + 1, bwd);
            auto& B = psi_.site(i + 1);
            for (auto& b : B.blocks) b = C * b;
            ++i;
            continue;
        }
        VectorXcd theta = merge_two_site(psi_.site(i), psi_.site(i + 1));
        evolve_two_site(theta, i, fwd);
        split(i, theta, true);
        left_[i + 1] = mpo_transfer_left<cplx>(left_[i], psi_.site(i), psi_.site(i), mpo_.site(i));
        if (i + 2 == n) break;
        backward_site(i + 1);
        ++i;
    }
    // right to left; the centre moves back to 0
    for (std::size_t i = n - 1;;) {
        if (i == 0) {
            one_site(0);
            break;
        }
        if (saturated(i)) {
            one_site(i);
            auto& B = psi_.site(i);
            const Index d = B.phys_dim();
            // B = C Q with Q row-orthonormal, from the QR of B^dag
            const Eigen::HouseholderQR<MatrixXcd> qr(interleaved_right(B).adjoint());
            const Index k = B.left_dim();
            const MatrixXcd Q = qr.householderQ() * MatrixXcd::Identity(qr.rows(), k);
            MatrixXcd C = MatrixXcd(qr.matrixQR().topRows(k).triangularView<Eigen::Upper>()).adjoint();
            B = from_interleaved_right(Q.adjoint(), d);
            right_[i] = mpo_transfer_right<cplx>(right_[i + 1], B, B, mpo_.site(i));
            evolve_bond(C, i, bwd);
            auto& A = psi_.site(i - 1);
            for (auto& a : A.blocks) a = a * C;
            --i;
            continue;
        }
        VectorXcd theta = merge_two_site(psi_.site(i - 1), psi_.site(i));
        evolve_two_site(theta, i - 1, fwd);
        split(i - 1, theta, false);
        right_[i] = mpo_transfer_right<cplx>(right_[i + 1], psi_.site(i), psi_.site(i), mpo_.site(i));
        if (i == 1) break;
        backward_site(i - 1);
        --i;
    }
    psi_.set_ortho_center(std::size_t{0});
    return max_discarded;
}

std::pair<Mps, double> tdvp2_sweep(Mps state, const Mpo& mpo, double dt, const EvolutionConfig& config) {
    Tdvp2 engine(mpo, std::move(state), config);
    const double w = engine.sweep(dt);
    return {std::move(engine).release(), w};
}

std::vector<ObservationPoint> evolve(Mps& state, const ChainModel& model, const EvolutionConfig& config,
                                     const std::vector<Observer>& observers) {
    config.validate();
    Mpo mpo = build_mpo(model, state.phys_dims());
    Tdvp2 engine(std::move(mpo), std::move(state), config);
    const std::size_t steps = config.steps();
    std::vector<ObservationPoint> records;

    auto record = [&](std::size_t k, double discarded) {
        if (observers.empty()) return;
        const auto& psi = engine.state();
        ObservationPoint p;
        p.step = k;
        p.time = static_cast<double>(k) * config.dt;
        p.max_discarded_weight = discarded;
        p.max_bond = psi.max_bond();
        // center at site 0: the norm is that of the first tensor
        double n2 = 0.0;
        for (const auto& b : psi.site(0).blocks) n2 += b.squaredNorm();
        p.norm_defect = std::abs(std::sqrt(n2) - 1.0);
        records.push_back(p);
        for (const auto& obs : observers) obs(p, psi);
    };

    record(0, 0.0);
    double pending = 0.0;
    for (std::size_t k = 1; k <= steps; ++k) {
        pending = std::max(pending, engine.sweep(config.dt));
        if (k % config.observe_stride == 0 || k == steps) {
            record(k, pending);
            pending = 0.0;
        }
    }
    state = std::move(engine).release();
    return records;
}

}  // namespace sbchain
