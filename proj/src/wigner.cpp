#include "sbchain/wigner.hpp"

#include <algorithm>
#include <cmath>

#include "sbchain/bosonic.hpp"

namespace sbchain {

void LambdaGrid::validate() const {
    if (!(half_extent > 0.0)) throw DomainError("lambda grid half_extent must be positive");
    if (n_points < 2) throw DomainError("lambda grid needs at least 2 points per axis");
}

void PhaseSpaceGrid::validate() const {
    if (!(half_extent > 0.0)) throw DomainError("phase-space grid half_extent must be positive");
    if (n_points < 33 || n_points % 2 == 0) throw DomainError("phase-space grid needs an odd n_points >= 33");
}

namespace {

/// Sites outside [first, last] carry D(0) = I and are absorbed into fixed
/// environments; each lambda then costs two GEMMs per active site.
class CharacteristicEvaluator {
public:
    CharacteristicEvaluator(const Mps& state, const VectorXcd& f, std::size_t first_mode) : f_(f), first_mode_(first_mode) {
        if (first_mode >= state.size()) throw DomainError("no bosonic sites after first_mode");
        const std::size_t L = state.size() - first_mode;
        if (static_cast<std::size_t>(f.size()) != L) throw DomainError("mode vector length must equal the bath size");
        if (std::abs(f.norm() - 1.0) > 1e-8) throw DomainError("mode vector must be normalised");

        std::size_t lo = L;
        std::size_t hi = 0;
        for (std::size_t k = 0; k < L; ++k)
            if (f[static_cast<Index>(k)] != cplx(0.0)) {
                lo = std::min(lo, k);
                hi = k;
            }
        first_ = first_mode + lo;
        last_ = first_mode + hi;

        std::vector<MatrixXcd> left, right;
        norm_environments(state, left, right);
        norm2_ = std::real(right[0](0, 0));
        if (!(norm2_ > 0.0)) throw DomainError("state has zero norm");
        left0_ = left[first_];
        right0_ = right[last_ + 1];
        for (std::size_t i = first_; i <= last_; ++i) {
            const auto& A = state.site(i);
            sites_.push_back({A.right_matrix(), A.left_matrix().adjoint(), A.phys_dim(), A.left_dim(), A.right_dim()});
        }
    }

    cplx operator()(cplx lambda) const {
        MatrixXcd E = left0_;
        for (std::size_t i = first_; i <= last_; ++i) {
            const Site& s = sites_[i - first_];
            const cplx fk = f_[static_cast<Index>(i - first_mode_)];
            const MatrixXcd O = displacement(s.d, lambda * std::conj(fk));
            E = s.left_adj * vertical(E * s.right, O, s);
        }
        return (E * right0_).trace() / norm2_;
    }

private:
    struct Site {
        MatrixXcd right;     // Dl x d*Dr
        MatrixXcd left_adj;  // Dr x d*Dl
        Index d, Dl, Dr;
    };

    // EK = [E A^0, ..., E A^{d-1}] -> stack of K_{s'} = sum_s O(s', s) E A^s
    static MatrixXcd vertical(const MatrixXcd& EK, const MatrixXcd& O, const Site& s) {
        Eigen::Map<const MatrixXcd> blocks(EK.data(), s.Dl * s.Dr, s.d);
        const MatrixXcd K = blocks * O.transpose();
        MatrixXcd V(s.d * s.Dl, s.Dr);
        for (Index sp = 0; sp < s.d; ++sp) V.middleRows(sp * s.Dl, s.Dl) = Eigen::Map<const MatrixXcd>(K.col(sp).data(), s.Dl, s.Dr);
        return V;
    }

    VectorXcd f_;
    std::size_t first_mode_;
    std::size_t first_ = 0;
    std::size_t last_ = 0;
    double norm2_ = 1.0;
    MatrixXcd left0_;
    MatrixXcd right0_;
    std::vector<Site> sites_;
};

}  // namespace

cplx characteristic_value(const Mps& state, const VectorXcd& f, cplx lambda, std::size_t first_mode) {
    return CharacteristicEvaluator(state, f, first_mode)(lambda);
}

MatrixXcd characteristic_function(const Mps& state, const VectorXcd& f, const LambdaGrid& grid, std::size_t first_mode) {
    grid.validate();
    const CharacteristicEvaluator chi(state, f, first_mode);
    const int n = grid.n_points;
    MatrixXcd out(n, n);
    // chi(-lambda) = chi(lambda)^*: evaluate one member of every (p, n^2-1-p) pair
    const long total = static_cast<long>(n) * n;
    for (long p = 0; p < total; ++p) {
        const long q = total - 1 - p;
        if (p > q) break;
        const int i = static_cast<int>(p / n);
        const int j = static_cast<int>(p % n);
        const cplx v = chi(cplx(grid.coord(i), grid.coord(j)));
        out(i, j) = v;
        out(n - 1 - i, n - 1 - j) = std::conj(v);
    }
    return out;
}

WignerFunction wigner_from_characteristic(const MatrixXcd& chi, const LambdaGrid& lambda, const PhaseSpaceGrid& out,
                                          double max_norm_defect) {
    lambda.validate();
    out.validate();
    const int n = lambda.n_points;
    if (chi.rows() != n || chi.cols() != n) throw DomainError("characteristic function does not match the lambda grid");
    const int m = out.n_points;
    const double r2 = std::sqrt(2.0);

    // W(a, b) = c * sum_{i,j} exp(-i sqrt2 q_a y_j) chi(i, j) exp(i sqrt2 p_b x_i)
    MatrixXcd Qy(m, n), Px(m, n);
    for (int a = 0; a < m; ++a)
        for (int j = 0; j < n; ++j) {
            Qy(a, j) = std::polar(1.0, -r2 * out.coord(a) * lambda.coord(j));
            Px(a, j) = std::polar(1.0, r2 * out.coord(a) * lambda.coord(j));
        }
    const double h = lambda.spacing();
    const MatrixXcd W = (h * h / (2.0 * pi * pi)) * (Qy * chi.transpose() * Px.transpose());

    WignerFunction w;
    w.grid = out;
    w.values = W.real();
    w.imag_residue = W.imag().cwiseAbs().maxCoeff();
    const double dq = out.spacing();
    w.integral = w.values.sum() * dq * dq;
    w.norm_defect = std::abs(w.integral - 1.0);
    if (w.norm_defect > max_norm_defect)
        throw GridConvergenceError("Wigner function does not integrate to 1; enlarge the phase-space extent or resolution",
                                   w.norm_defect);
    return w;
}

double negativity_volume(const WignerFunction& w) {
    const double dq = w.grid.spacing();
    double acc = 0.0;
    for (Index k = 0; k < w.values.size(); ++k) {
        const double v = w.values.data()[k];
        if (v < 0.0) acc -= v;
    }
    return 2.0 * acc * dq * dq;
}

double absolute_integral(const WignerFunction& w) {
    const double dq = w.grid.spacing();
    return w.values.cwiseAbs().sum() * dq * dq;
}

WignerGrids adaptive_grids(const LambdaGrid& lambda, const PhaseSpaceGrid& out, double occupation) {
    WignerGrids g{lambda, out, std::max(1.0, std::sqrt(std::max(occupation, 0.0) / 2.0))};
    g.out.half_extent *= g.scale;
    g.lambda.half_extent /= g.scale;
    return g;
}

}  // namespace sbchain
