#include "sbchain/conditional.hpp"

#include <algorithm>
#include <cmath>

namespace sbchain {

namespace {

ConditionalBathState postselect(const Mps& joint, double sign) {
    if (joint.size() < 2) throw DomainError("postselection needs a qubit and at least one bath site");
    if (joint.site(0).phys_dim() != 2) throw DomainError("site 0 is not a qubit");
    Mps psi = joint;
    canonicalize_in_place(psi, 0);

    const double amp = 1.0 / std::sqrt(2.0);
    const auto& Q = psi.site(0);
    const MatrixXcd row = amp * (Q[0] + sign * Q[1]);
    SiteTensor<cplx> head = psi.site(1);
    for (auto& blk : head.blocks) blk = (row * blk).eval();

    double p = 0.0;
    for (const auto& blk : head.blocks) p += blk.squaredNorm();
    if (p < 1e-12) throw NullBranchError("postselected branch has vanishing probability");
    const double scale = 1.0 / std::sqrt(p);
    for (auto& blk : head.blocks) blk *= scale;

    std::vector<SiteTensor<cplx>> sites;
    sites.reserve(psi.size() - 1);
    sites.push_back(std::move(head));
    for (std::size_t i = 2; i < psi.size(); ++i) sites.push_back(std::move(psi.site(i)));

    ConditionalBathState out;
    out.state = Mps(std::move(sites), std::size_t{0});
    out.raw_probability = p;
    out.probability = std::clamp(p, 0.0, 1.0);
    return out;
}

}  // namespace

ConditionalBathState postselect_plus_x(const Mps& joint) { return postselect(joint, 1.0); }
ConditionalBathState postselect_minus_x(const Mps& joint) { return postselect(joint, -1.0); }

double mode_occupation(const MatrixXcd& one_body, const VectorXcd& f) {
    if (f.size() != one_body.rows()) throw DomainError("mode vector and one-body matrix disagree");
    return std::real(f.dot(one_body * f));
}

double conditional_mode_occupation(const ConditionalBathState& cond, const NaturalOrbital& f) {
    return mode_occupation(one_body_matrix(cond.state, 0), f.f);
}

}  // namespace sbchain
