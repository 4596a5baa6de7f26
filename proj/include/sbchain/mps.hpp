#pragma once

// Matrix-product states and operators with dense Eigen blocks.
//
// A site tensor A[l, s, r] is stored as one (left x right) matrix per physical
// index s. Environments follow two conventions throughout:
//   left  E(bra, ket): E' = sum_{s',s} O(s',s) A^{s'}^dag E B^s
//   right F(ket, bra): F' = sum_{s',s} O(s',s) B^s F A^{s'}^dag
// so a full contraction is Tr(E F).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "sbchain/bosonic.hpp"
#include "sbchain/types.hpp"

namespace sbchain {

using Index = Eigen::Index;

struct TruncationPolicy {
    std::size_t max_bond = 100;
    double sv_cutoff = 1e-8;  ///< discarded-weight threshold, relative to the total weight

    void validate() const {
        if (max_bond < 1) throw DomainError("max_bond must be >= 1");
        if (!(sv_cutoff >= 0.0 && sv_cutoff < 1.0)) throw DomainError("sv_cutoff must lie in [0, 1)");
    }

    static TruncationPolicy exact() { return {std::numeric_limits<std::size_t>::max(), 0.0}; }
};

template <typename Scalar>
struct SiteTensor {
    std::vector<Matrix<Scalar>> blocks;

    SiteTensor() = default;
    SiteTensor(Index left, Index phys, Index right)
        : blocks(static_cast<std::size_t>(phys), Matrix<Scalar>::Zero(left, right)) {}

    Index phys_dim() const { return static_cast<Index>(blocks.size()); }
    Index left_dim() const { return blocks.empty() ? 0 : blocks.front().rows(); }
    Index right_dim() const { return blocks.empty() ? 0 : blocks.front().cols(); }

    Matrix<Scalar>& operator[](Index s) { return blocks[static_cast<std::size_t>(s)]; }
    const Matrix<Scalar>& operator[](Index s) const { return blocks[static_cast<std::size_t>(s)]; }

    /// (phys*left) x right, row index s*left + l.
    Matrix<Scalar> left_matrix() const {
        const Index Dl = left_dim();
        Matrix<Scalar> M(phys_dim() * Dl, right_dim());
        for (Index s = 0; s < phys_dim(); ++s) M.middleRows(s * Dl, Dl) = (*this)[s];
        return M;
    }

    /// left x (phys*right), column index s*right + r.
    Matrix<Scalar> right_matrix() const {
        const Index Dr = right_dim();
        Matrix<Scalar> M(left_dim(), phys_dim() * Dr);
        for (Index s = 0; s < phys_dim(); ++s) M.middleCols(s * Dr, Dr) = (*this)[s];
        return M;
    }

    static SiteTensor from_left_matrix(const Matrix<Scalar>& M, Index phys) {
        const Index Dl = M.rows() / phys;
        SiteTensor t;
        t.blocks.resize(static_cast<std::size_t>(phys));
        for (Index s = 0; s < phys; ++s) t[s] = M.middleRows(s * Dl, Dl);
        return t;
    }

    static SiteTensor from_right_matrix(const Matrix<Scalar>& M, Index phys) {
        const Index Dr = M.cols() / phys;
        SiteTensor t;
        t.blocks.resize(static_cast<std::size_t>(phys));
        for (Index s = 0; s < phys; ++s) t[s] = M.middleCols(s * Dr, Dr);
        return t;
    }
};

template <typename Scalar>
class MatrixProductState {
public:
    using scalar_type = Scalar;

    MatrixProductState() = default;
    explicit MatrixProductState(std::vector<SiteTensor<Scalar>> sites, std::optional<std::size_t> center = {})
        : sites_(std::move(sites)), center_(center) {
        validate();
    }

    std::size_t size() const noexcept { return sites_.size(); }
    SiteTensor<Scalar>& site(std::size_t i) { return sites_[i]; }
    const SiteTensor<Scalar>& site(std::size_t i) const { return sites_[i]; }
    std::vector<SiteTensor<Scalar>>& sites() { return sites_; }
    const std::vector<SiteTensor<Scalar>>& sites() const { return sites_; }

    std::optional<std::size_t> ortho_center() const noexcept { return center_; }
    void set_ortho_center(std::optional<std::size_t> c) noexcept { center_ = c; }

    std::vector<Index> phys_dims() const {
        std::vector<Index> d;
        d.reserve(size());
        for (const auto& t : sites_) d.push_back(t.phys_dim());
        return d;
    }

    /// size()+1 entries, boundaries included.
    std::vector<Index> bond_dims() const {
        std::vector<Index> b;
        if (sites_.empty()) return b;
        b.push_back(sites_.front().left_dim());
        for (const auto& t : sites_) b.push_back(t.right_dim());
        return b;
    }

    Index max_bond() const {
        Index m = 0;
        for (Index b : bond_dims()) m = std::max(m, b);
        return m;
    }

    void validate() const {
        if (sites_.empty()) throw DomainError("MPS needs at least one site");
        if (sites_.front().left_dim() != 1 || sites_.back().right_dim() != 1)
            throw DomainError("MPS boundary bonds must have dimension 1");
        for (std::size_t i = 0; i < sites_.size(); ++i) {
            const auto& t = sites_[i];
            if (t.phys_dim() < 1) throw DomainError("site with empty physical space");
            for (const auto& b : t.blocks)
                if (b.rows() != t.left_dim() || b.cols() != t.right_dim())
                    throw DomainError("inconsistent block shapes within a site tensor");
            if (i + 1 < sites_.size() && t.right_dim() != sites_[i + 1].left_dim())
                throw DomainError("adjacent bond dimensions disagree");
        }
        if (center_ && *center_ >= sites_.size()) throw DomainError("orthogonality center out of range");
    }

private:
    std::vector<SiteTensor<Scalar>> sites_;
    std::optional<std::size_t> center_;
};

using Mps = MatrixProductState<cplx>;

// ---------------------------------------------------------------------------
// Operators

/// One MPO site: a (left x right) grid of (phys x phys) operator blocks. An
/// empty block is an exact zero.
template <typename Scalar>
struct MpoTensor {
    Index left = 0;
    Index right = 0;
    Index phys = 0;
    std::vector<Matrix<Scalar>> ops;

    MpoTensor() = default;
    MpoTensor(Index l, Index r, Index d) : left(l), right(r), phys(d), ops(static_cast<std::size_t>(l * r)) {}

    bool has(Index a, Index b) const { return ops[static_cast<std::size_t>(a * right + b)].size() != 0; }
    const Matrix<Scalar>& op(Index a, Index b) const { return ops[static_cast<std::size_t>(a * right + b)]; }
    void set(Index a, Index b, Matrix<Scalar> m) {
        if (m.rows() != phys || m.cols() != phys) throw DomainError("MPO block has wrong physical dimension");
        ops[static_cast<std::size_t>(a * right + b)] = std::move(m);
    }
};

template <typename Scalar>
class MatrixProductOperator {
public:
    MatrixProductOperator() = default;
    explicit MatrixProductOperator(std::vector<MpoTensor<Scalar>> sites) : sites_(std::move(sites)) { validate(); }

    std::size_t size() const noexcept { return sites_.size(); }
    const MpoTensor<Scalar>& site(std::size_t i) const { return sites_[i]; }

    std::vector<Index> phys_dims() const {
        std::vector<Index> d;
        for (const auto& w : sites_) d.push_back(w.phys);
        return d;
    }

    void validate() const {
        if (sites_.empty()) throw DomainError("MPO needs at least one site");
        if (sites_.front().left != 1 || sites_.back().right != 1)
            throw DomainError("MPO boundary bonds must have dimension 1");
        for (std::size_t i = 0; i + 1 < sites_.size(); ++i)
            if (sites_[i].right != sites_[i + 1].left) throw DomainError("adjacent MPO bonds disagree");
    }

private:
    std::vector<MpoTensor<Scalar>> sites_;
};

using Mpo = MatrixProductOperator<cplx>;

// ---------------------------------------------------------------------------
// Environment transfers

/// sum_{s',s} O(s',s) bra^{s'}^dag E ket^s; `op == nullptr` means identity.
template <typename Scalar>
Matrix<Scalar> transfer_left(const Matrix<Scalar>& E, const SiteTensor<Scalar>& bra, const SiteTensor<Scalar>& ket,
                             const Matrix<Scalar>* op = nullptr) {
    const Index d = ket.phys_dim();
    Matrix<Scalar> out = Matrix<Scalar>::Zero(bra.right_dim(), ket.right_dim());
    if (!op) {
        for (Index s = 0; s < d; ++s) out.noalias() += bra[s].adjoint() * (E * ket[s]);
        return out;
    }
    std::vector<Matrix<Scalar>> EK(static_cast<std::size_t>(d));
    for (Index s = 0; s < d; ++s) EK[static_cast<std::size_t>(s)].noalias() = E * ket[s];
    Matrix<Scalar> K(E.rows(), ket.right_dim());
    for (Index sp = 0; sp < d; ++sp) {
        K.setZero();
        bool any = false;
        for (Index s = 0; s < d; ++s) {
            const Scalar w = (*op)(sp, s);
            if (w == Scalar(0)) continue;
            K += w * EK[static_cast<std::size_t>(s)];
            any = true;
        }
        if (any) out.noalias() += bra[sp].adjoint() * K;
    }
    return out;
}

/// sum_{s',s} O(s',s) ket^s F bra^{s'}^dag; `op == nullptr` means identity.
template <typename Scalar>
Matrix<Scalar> transfer_right(const Matrix<Scalar>& F, const SiteTensor<Scalar>& bra, const SiteTensor<Scalar>& ket,
                              const Matrix<Scalar>* op = nullptr) {
    const Index d = ket.phys_dim();
    Matrix<Scalar> out = Matrix<Scalar>::Zero(ket.left_dim(), bra.left_dim());
    if (!op) {
        for (Index s = 0; s < d; ++s) out.noalias() += (ket[s] * F) * bra[s].adjoint();
        return out;
    }
    std::vector<Matrix<Scalar>> KF(static_cast<std::size_t>(d));
    for (Index s = 0; s < d; ++s) KF[static_cast<std::size_t>(s)].noalias() = ket[s] * F;
    Matrix<Scalar> K(ket.left_dim(), F.cols());
    for (Index sp = 0; sp < d; ++sp) {
        K.setZero();
        bool any = false;
        for (Index s = 0; s < d; ++s) {
            const Scalar w = (*op)(sp, s);
            if (w == Scalar(0)) continue;
            K += w * KF[static_cast<std::size_t>(s)];
            any = true;
        }
        if (any) out.noalias() += K * bra[sp].adjoint();
    }
    return out;
}

/// MPO-dressed left environment: E'[b] = sum_a sum_{s',s} W[a,b](s',s) bra^{s'}^dag E[a] ket^s.
template <typename Scalar>
std::vector<Matrix<Scalar>> mpo_transfer_left(const std::vector<Matrix<Scalar>>& E, const SiteTensor<Scalar>& bra,
                                              const SiteTensor<Scalar>& ket, const MpoTensor<Scalar>& W) {
    const Index d = ket.phys_dim();
    std::vector<Matrix<Scalar>> out(static_cast<std::size_t>(W.right));
    std::vector<std::vector<Matrix<Scalar>>> K(static_cast<std::size_t>(W.right));
    std::vector<Matrix<Scalar>> EK(static_cast<std::size_t>(d));
    for (Index a = 0; a < W.left; ++a) {
        const auto& Ea = E[static_cast<std::size_t>(a)];
        if (Ea.size() == 0) continue;
        bool needed = false;
        for (Index b = 0; b < W.right; ++b) needed = needed || W.has(a, b);
        if (!needed) continue;
        for (Index s = 0; s < d; ++s) EK[static_cast<std::size_t>(s)].noalias() = Ea * ket[s];
        for (Index b = 0; b < W.right; ++b) {
            if (!W.has(a, b)) continue;
            auto& Kb = K[static_cast<std::size_t>(b)];
            if (Kb.empty()) Kb.assign(static_cast<std::size_t>(d), Matrix<Scalar>::Zero(Ea.rows(), ket.right_dim()));
            const auto& op = W.op(a, b);
            for (Index sp = 0; sp < d; ++sp)
                for (Index s = 0; s < d; ++s) {
                    const Scalar w = op(sp, s);
                    if (w != Scalar(0)) Kb[static_cast<std::size_t>(sp)] += w * EK[static_cast<std::size_t>(s)];
                }
        }
    }
    for (Index b = 0; b < W.right; ++b) {
        const auto& Kb = K[static_cast<std::size_t>(b)];
        if (Kb.empty()) continue;
        Matrix<Scalar> acc = Matrix<Scalar>::Zero(bra.right_dim(), ket.right_dim());
        for (Index sp = 0; sp < d; ++sp) acc.noalias() += bra[sp].adjoint() * Kb[static_cast<std::size_t>(sp)];
        out[static_cast<std::size_t>(b)] = std::move(acc);
    }
    return out;
}

/// MPO-dressed right environment: F'[a] = sum_b sum_{s',s} W[a,b](s',s) ket^s F[b] bra^{s'}^dag.
template <typename Scalar>
std::vector<Matrix<Scalar>> mpo_transfer_right(const std::vector<Matrix<Scalar>>& F, const SiteTensor<Scalar>& bra,
                                               const SiteTensor<Scalar>& ket, const MpoTensor<Scalar>& W) {
    const Index d = ket.phys_dim();
    std::vector<Matrix<Scalar>> out(static_cast<std::size_t>(W.left));
    std::vector<std::vector<Matrix<Scalar>>> K(static_cast<std::size_t>(W.left));
    std::vector<Matrix<Scalar>> KF(static_cast<std::size_t>(d));
    for (Index b = 0; b < W.right; ++b) {
        const auto& Fb = F[static_cast<std::size_t>(b)];
        if (Fb.size() == 0) continue;
        bool needed = false;
        for (Index a = 0; a < W.left; ++a) needed = needed || W.has(a, b);
        if (!needed) continue;
        for (Index s = 0; s < d; ++s) KF[static_cast<std::size_t>(s)].noalias() = ket[s] * Fb;
        for (Index a = 0; a < W.left; ++a) {
            if (!W.has(a, b)) continue;
            auto& Ka = K[static_cast<std::size_t>(a)];
            if (Ka.empty()) Ka.assign(static_cast<std::size_t>(d), Matrix<Scalar>::Zero(ket.left_dim(), Fb.cols()));
            const auto& op = W.op(a, b);
            for (Index sp = 0; sp < d; ++sp)
                for (Index s = 0; s < d; ++s) {
                    const Scalar w = op(sp, s);
                    if (w != Scalar(0)) Ka[static_cast<std::size_t>(sp)] += w * KF[static_cast<std::size_t>(s)];
                }
        }
    }
    for (Index a = 0; a < W.left; ++a) {
        const auto& Ka = K[static_cast<std::size_t>(a)];
        if (Ka.empty()) continue;
        Matrix<Scalar> acc = Matrix<Scalar>::Zero(ket.left_dim(), bra.left_dim());
        for (Index sp = 0; sp < d; ++sp) acc.noalias() += Ka[static_cast<std::size_t>(sp)] * bra[sp].adjoint();
        out[static_cast<std::size_t>(a)] = std::move(acc);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Construction and gauge

template <typename Scalar>
MatrixProductState<Scalar> product_state(const std::vector<Vector<Scalar>>& local_states) {
    if (local_states.empty()) throw DomainError("product state needs at least one site");
    std::vector<SiteTensor<Scalar>> sites;
    sites.reserve(local_states.size());
    for (const auto& v : local_states) {
        if (v.size() < 1) throw DomainError("empty local state");
        if (std::abs(v.norm() - 1.0) > 1e-10) throw DomainError("local state is not normalised");
        SiteTensor<Scalar> t(1, v.size(), 1);
        for (Index s = 0; s < v.size(); ++s) t[s](0, 0) = v[s];
        sites.push_back(std::move(t));
    }
    return MatrixProductState<Scalar>(std::move(sites), std::size_t{0});
}

/// <a|b>
template <typename Scalar>
Scalar overlap(const MatrixProductState<Scalar>& a, const MatrixProductState<Scalar>& b) {
    if (a.phys_dims() != b.phys_dims()) throw DomainError("overlap of states with different physical dimensions");
    Matrix<Scalar> E = Matrix<Scalar>::Ones(1, 1);
    for (std::size_t i = 0; i < a.size(); ++i) E = transfer_left<Scalar>(E, a.site(i), b.site(i));
    return E(0, 0);
}

template <typename Scalar>
double norm(const MatrixProductState<Scalar>& psi) {
    return std::sqrt(std::max(0.0, std::real(overlap(psi, psi))));
}

namespace detail {

template <typename Scalar>
void shift_center_right(MatrixProductState<Scalar>& psi, std::size_t i) {
    const auto& A = psi.site(i);
    const Matrix<Scalar> M = A.left_matrix();
    const Index k = std::min(M.rows(), M.cols());
    Eigen::HouseholderQR<Matrix<Scalar>> qr(M);
    const Matrix<Scalar> Q = qr.householderQ() * Matrix<Scalar>::Identity(M.rows(), k);
    const Matrix<Scalar> R = qr.matrixQR().topRows(k).template triangularView<Eigen::Upper>();
    const Index d = A.phys_dim();
    psi.site(i) = SiteTensor<Scalar>::from_left_matrix(Q, d);
    auto& next = psi.site(i + 1);
    for (auto& blk : next.blocks) blk = (R * blk).eval();
}

template <typename Scalar>
void shift_center_left(MatrixProductState<Scalar>& psi, std::size_t i) {
    const auto& A = psi.site(i);
    const Matrix<Scalar> M = A.right_matrix();
    const Index k = std::min(M.rows(), M.cols());
    const Matrix<Scalar> Mh = M.adjoint();
    Eigen::HouseholderQR<Matrix<Scalar>> qr(Mh);
    const Matrix<Scalar> Q = qr.householderQ() * Matrix<Scalar>::Identity(Mh.rows(), k);
    const Matrix<Scalar> R = qr.matrixQR().topRows(k).template triangularView<Eigen::Upper>();
    const Index d = A.phys_dim();
    psi.site(i) = SiteTensor<Scalar>::from_right_matrix(Q.adjoint(), d);
    auto& prev = psi.site(i - 1);
    const Matrix<Scalar> Rh = R.adjoint();
    for (auto& blk : prev.blocks) blk = (blk * Rh).eval();
}

}  // namespace detail

/// Moves the orthogonality center to `center` by QR sweeps. Sites whose gauge is
/// already known (ortho_center set) are not revisited.
template <typename Scalar>
void canonicalize_in_place(MatrixProductState<Scalar>& psi, std::size_t center) {
    if (center >= psi.size()) throw DomainError("canonicalization center out of range");
    const auto current = psi.ortho_center();
    if (!current) {
        for (std::size_t i = 0; i < center; ++i) detail::shift_center_right(psi, i);
        for (std::size_t i = psi.size() - 1; i > center; --i) detail::shift_center_left(psi, i);
    } else if (*current < center) {
        for (std::size_t i = *current; i < center; ++i) detail::shift_center_right(psi, i);
    } else {
        for (std::size_t i = *current; i > center; --i) detail::shift_center_left(psi, i);
    }
    psi.set_ortho_center(center);
}

template <typename Scalar>
MatrixProductState<Scalar> canonicalize(MatrixProductState<Scalar> psi, std::size_t center) {
    canonicalize_in_place(psi, center);
    return psi;
}

template <typename Scalar>
double left_isometry_residual(const SiteTensor<Scalar>& A) {
    Matrix<Scalar> G = Matrix<Scalar>::Zero(A.right_dim(), A.right_dim());
    for (const auto& b : A.blocks) G.noalias() += b.adjoint() * b;
    return (G - Matrix<Scalar>::Identity(G.rows(), G.cols())).norm();
}

template <typename Scalar>
double right_isometry_residual(const SiteTensor<Scalar>& A) {
    Matrix<Scalar> G = Matrix<Scalar>::Zero(A.left_dim(), A.left_dim());
    for (const auto& b : A.blocks) G.noalias() += b * b.adjoint();
    return (G - Matrix<Scalar>::Identity(G.rows(), G.cols())).norm();
}

// ---------------------------------------------------------------------------
// Truncation

/// M ~= U diag(S) V^dag after dropping the tail allowed by the policy.
template <typename Scalar>
struct SvdSplit {
    Matrix<Scalar> U;
    VectorXd S;
    Matrix<Scalar> V;
    double discarded_weight = 0.0;  ///< dropped sum s^2 / total sum s^2
};

template <typename Scalar>
SvdSplit<Scalar> truncated_svd(const Matrix<Scalar>& M, const TruncationPolicy& policy) {
    Eigen::BDCSVD<Matrix<Scalar>> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd& s = svd.singularValues();
    const Index n = s.size();
    const double total = s.squaredNorm();

    Index keep = n;
    while (keep > 1 && s[keep - 1] == 0.0) --keep;
    if (total > 0.0 && policy.sv_cutoff > 0.0) {
        double tail = 0.0;
        while (keep > 1) {
            const double next = tail + s[keep - 1] * s[keep - 1];
            if (next > policy.sv_cutoff * total) break;
            tail = next;
            --keep;
        }
    }
    keep = std::min<Index>(keep, static_cast<Index>(std::min<std::size_t>(policy.max_bond, static_cast<std::size_t>(n))));
    keep = std::max<Index>(keep, 1);

    SvdSplit<Scalar> out;
    out.U = svd.matrixU().leftCols(keep);
    out.S = s.head(keep);
    out.V = svd.matrixV().leftCols(keep);
    out.discarded_weight = total > 0.0 ? std::max(0.0, 1.0 - out.S.squaredNorm() / total) : 0.0;
    return out;
}

/// Compresses every bond by a right-to-left SVD sweep from a left-canonical form
/// and renormalises. Returns the summed normalised discarded weight.
template <typename Scalar>
std::pair<MatrixProductState<Scalar>, double> truncate(MatrixProductState<Scalar> psi, const TruncationPolicy& policy) {
    policy.validate();
    const std::size_t n = psi.size();
    canonicalize_in_place(psi, n - 1);
    double discarded = 0.0;
    for (std::size_t i = n - 1; i > 0; --i) {
        auto& A = psi.site(i);
        const Index d = A.phys_dim();
        const auto split = truncated_svd<Scalar>(A.right_matrix(), policy);
        discarded += split.discarded_weight;
        A = SiteTensor<Scalar>::from_right_matrix(split.V.adjoint(), d);
        const Matrix<Scalar> US = split.U * split.S.asDiagonal();
        for (auto& blk : psi.site(i - 1).blocks) blk = (blk * US).eval();
    }
    psi.set_ortho_center(std::size_t{0});
    const double nrm = norm(psi);
    if (nrm > 0.0)
        for (auto& blk : psi.site(0).blocks) blk /= nrm;
    return {std::move(psi), discarded};
}

// ---------------------------------------------------------------------------
// Expectation values

template <typename Scalar>
Scalar expectation(const MatrixProductState<Scalar>& psi, const MatrixProductOperator<Scalar>& H) {
    if (psi.phys_dims() != H.phys_dims()) throw DomainError("state and operator dimensions disagree");
    std::vector<Matrix<Scalar>> E{Matrix<Scalar>::Ones(1, 1)};
    for (std::size_t i = 0; i < psi.size(); ++i) E = mpo_transfer_left<Scalar>(E, psi.site(i), psi.site(i), H.site(i));
    return E[0].size() ? E[0](0, 0) : Scalar(0);
}

/// <psi| prod_k O_k |psi> for operators on distinct sites.
template <typename Scalar>
Scalar expectation(const MatrixProductState<Scalar>& psi, const std::map<std::size_t, Matrix<Scalar>>& ops) {
    for (const auto& [k, op] : ops) {
        if (k >= psi.size()) throw DomainError("operator site out of range");
        if (op.rows() != psi.site(k).phys_dim() || op.cols() != psi.site(k).phys_dim())
            throw DomainError("local operator dimension mismatch");
    }
    Matrix<Scalar> E = Matrix<Scalar>::Ones(1, 1);
    for (std::size_t i = 0; i < psi.size(); ++i) {
        const auto it = ops.find(i);
        E = transfer_left<Scalar>(E, psi.site(i), psi.site(i), it == ops.end() ? nullptr : &it->second);
    }
    return E(0, 0);
}

/// A'^s = sum_{s'} O(s, s') A^{s'} on every listed site. No truncation, no renormalisation.
template <typename Scalar>
MatrixProductState<Scalar> apply_site_operators(MatrixProductState<Scalar> psi,
                                                const std::map<std::size_t, Matrix<Scalar>>& ops) {
    for (const auto& [k, op] : ops) {
        if (k >= psi.size()) throw DomainError("operator site out of range");
        auto& A = psi.site(k);
        const Index d = A.phys_dim();
        if (op.rows() != d || op.cols() != d) throw DomainError("local operator dimension mismatch");
        SiteTensor<Scalar> B(A.left_dim(), d, A.right_dim());
        for (Index s = 0; s < d; ++s)
            for (Index sp = 0; sp < d; ++sp)
                if (op(s, sp) != Scalar(0)) B[s] += op(s, sp) * A[sp];
        A = std::move(B);
    }
    psi.set_ortho_center(std::nullopt);
    return psi;
}

/// Left environments E[i] = contraction of sites < i, and right environments
/// F[i] = contraction of sites >= i, for the norm.
template <typename Scalar>
void norm_environments(const MatrixProductState<Scalar>& psi, std::vector<Matrix<Scalar>>& left,
                       std::vector<Matrix<Scalar>>& right) {
    const std::size_t n = psi.size();
    left.assign(n + 1, Matrix<Scalar>());
    right.assign(n + 1, Matrix<Scalar>());
    left[0] = Matrix<Scalar>::Ones(1, 1);
    for (std::size_t i = 0; i < n; ++i) left[i + 1] = transfer_left<Scalar>(left[i], psi.site(i), psi.site(i));
    right[n] = Matrix<Scalar>::Ones(1, 1);
    for (std::size_t i = n; i-- > 0;) right[i] = transfer_right<Scalar>(right[i + 1], psi.site(i), psi.site(i));
}

/// rho(s, s') = <psi| (|s'><s|)_site |psi>: the reduced density matrix of one site
/// (not normalised by <psi|psi>).
template <typename Scalar>
Matrix<Scalar> reduced_density_matrix(const MatrixProductState<Scalar>& psi, std::size_t site) {
    std::vector<Matrix<Scalar>> left;
    std::vector<Matrix<Scalar>> right;
    norm_environments(psi, left, right);
    const auto& A = psi.site(site);
    const Index d = A.phys_dim();
    Matrix<Scalar> rho(d, d);
    for (Index s = 0; s < d; ++s) {
        const Matrix<Scalar> X = left[site] * A[s] * right[site + 1];
        for (Index sp = 0; sp < d; ++sp) rho(s, sp) = (A[sp].adjoint() * X).trace();
    }
    return rho;
}

/// Diagonal of every site's reduced density matrix (Fock populations for bosonic
/// sites), normalised by <psi|psi>.
template <typename Scalar>
std::vector<VectorXd> site_populations(const MatrixProductState<Scalar>& psi) {
    std::vector<Matrix<Scalar>> left;
    std::vector<Matrix<Scalar>> right;
    norm_environments(psi, left, right);
    const double nrm2 = std::real(right[0](0, 0));
    std::vector<VectorXd> pops;
    pops.reserve(psi.size());
    for (std::size_t i = 0; i < psi.size(); ++i) {
        const auto& A = psi.site(i);
        VectorXd p(A.phys_dim());
        for (Index s = 0; s < A.phys_dim(); ++s)
            p[s] = std::real((A[s].adjoint() * left[i] * A[s] * right[i + 1]).trace()) / nrm2;
        pops.push_back(std::move(p));
    }
    return pops;
}

/// M(j, k) = <c_j^dag c_k> over the bosonic sites first_mode .. size()-1,
/// normalised by <psi|psi>. Hermitian by construction.
template <typename Scalar>
Matrix<Scalar> one_body_matrix(const MatrixProductState<Scalar>& psi, std::size_t first_mode) {
    if (first_mode >= psi.size()) throw DomainError("no bosonic sites after first_mode");
    std::vector<Matrix<Scalar>> left;
    std::vector<Matrix<Scalar>> right;
    norm_environments(psi, left, right);
    const double nrm2 = std::real(right[0](0, 0));
    const std::size_t L = psi.size() - first_mode;
    Matrix<Scalar> M = Matrix<Scalar>::Zero(static_cast<Index>(L), static_cast<Index>(L));
    for (std::size_t j = 0; j < L; ++j) {
        const std::size_t sj = first_mode + j;
        const Index dj = psi.site(sj).phys_dim();
        const Matrix<Scalar> cdag = creation(dj).template cast<Scalar>();
        const Matrix<Scalar> n = number_operator(dj).template cast<Scalar>();
        const Matrix<Scalar> En = transfer_left<Scalar>(left[sj], psi.site(sj), psi.site(sj), &n);
        M(static_cast<Index>(j), static_cast<Index>(j)) = (En * right[sj + 1]).trace() / nrm2;
        Matrix<Scalar> G = transfer_left<Scalar>(left[sj], psi.site(sj), psi.site(sj), &cdag);
        for (std::size_t k = j + 1; k < L; ++k) {
            const std::size_t sk = first_mode + k;
            const Matrix<Scalar> c = annihilation(psi.site(sk).phys_dim()).template cast<Scalar>();
            const Matrix<Scalar> Gk = transfer_left<Scalar>(G, psi.site(sk), psi.site(sk), &c);
            const Scalar v = (Gk * right[sk + 1]).trace() / nrm2;
            M(static_cast<Index>(j), static_cast<Index>(k)) = v;
            M(static_cast<Index>(k), static_cast<Index>(j)) = Eigen::numext::conj(v);
            if (k + 1 < L) G = transfer_left<Scalar>(G, psi.site(sk), psi.site(sk));
        }
    }
    return M;
}

/// Full state vector; site 0 is the most significant index.
template <typename Scalar>
Vector<Scalar> to_dense(const MatrixProductState<Scalar>& psi) {
    // rows: accumulated physical index, columns: current right bond
    Matrix<Scalar> acc = Matrix<Scalar>::Ones(1, 1);
    for (std::size_t i = 0; i < psi.size(); ++i) {
        const auto& A = psi.site(i);
        const Index d = A.phys_dim();
        Matrix<Scalar> next(acc.rows() * d, A.right_dim());
        for (Index r = 0; r < acc.rows(); ++r)
            for (Index s = 0; s < d; ++s) next.row(r * d + s) = acc.row(r) * A[s];
        acc = std::move(next);
    }
    return acc.col(0);
}

/// Dense matrix of an MPO with the same index ordering as to_dense.
template <typename Scalar>
Matrix<Scalar> to_dense(const MatrixProductOperator<Scalar>& H) {
    // blocks[b] holds the partial operator with open right MPO index b
    std::vector<Matrix<Scalar>> acc{Matrix<Scalar>::Ones(1, 1)};
    for (std::size_t i = 0; i < H.size(); ++i) {
        const auto& W = H.site(i);
        Index dim = 0;
        for (const auto& m : acc)
            if (m.size()) dim = m.rows();
        std::vector<Matrix<Scalar>> next(static_cast<std::size_t>(W.right),
                                         Matrix<Scalar>::Zero(dim * W.phys, dim * W.phys));
        for (Index a = 0; a < W.left; ++a) {
            const auto& Pa = acc[static_cast<std::size_t>(a)];
            if (Pa.size() == 0) continue;
            for (Index b = 0; b < W.right; ++b) {
                if (!W.has(a, b)) continue;
                const auto& op = W.op(a, b);
                auto& out = next[static_cast<std::size_t>(b)];
                for (Index r = 0; r < dim; ++r)
                    for (Index c = 0; c < dim; ++c) {
                        const Scalar p = Pa(r, c);
                        if (p == Scalar(0)) continue;
                        out.block(r * W.phys, c * W.phys, W.phys, W.phys) += p * op;
                    }
            }
        }
        acc = std::move(next);
    }
    return acc[0];
}

}  // namespace sbchain
