#include "sbchain/spectral_chain.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace sbchain {

namespace {

constexpr int graded_levels = 40;

double log_zero_t_density(double alpha, double s, double omega_c, double omega) {
    return std::log(2.0 * alpha) + (1.0 - s) * std::log(omega_c) + s * std::log(omega) - omega / omega_c;
}

// log J_T(w) for w != 0. Uses J_T(w) = J(|w|) / (1 - e^{-|w|/theta}) * (w < 0 ? e^{-|w|/theta} : 1),
// which is algebraically the sign(w) J(|w|)/2 [1 + coth(w/2theta)] form without cancellation.
double log_thermal_density(double alpha, double s, double omega_c, double theta, double omega) {
    const double a = std::abs(omega);
    double v = log_zero_t_density(alpha, s, omega_c, a) - std::log(-std::expm1(-a / theta));
    if (omega < 0.0) v -= a / theta;
    return v;
}

struct GridBuilder {
    int order;
    VectorXd gl_nodes;
    VectorXd gl_weights;
    std::vector<double> nodes;
    std::vector<double> log_weights;

    explicit GridBuilder(int order_) : order(order_) { gauss_legendre(order, gl_nodes, gl_weights); }

    void panel(double lo, double hi, double sign, const std::function<double(double)>& log_rho) {
        const double half = 0.5 * (hi - lo);
        const double mid = 0.5 * (hi + lo);
        for (int i = 0; i < order; ++i) {
            const double w = sign * (mid + half * gl_nodes[i]);
            nodes.push_back(w);
            log_weights.push_back(std::log(half * gl_weights[i]) + log_rho(w));
        }
    }

    // [0, eps] with w = eps u^c, c = 1/(p+1): the factor w^p dw becomes smooth in u.
    void singular_panel(double eps, double p, double sign, const std::function<double(double)>& log_rho) {
        const double c = 1.0 / (p + 1.0);
        for (int i = 0; i < order; ++i) {
            const double u = 0.5 * (1.0 + gl_nodes[i]);
            const double w = sign * eps * std::pow(u, c);
            nodes.push_back(w);
            log_weights.push_back(std::log(0.5 * gl_weights[i]) + std::log(eps * c) + (c - 1.0) * std::log(u) +
                                  log_rho(w));
        }
    }

    // One side of the support, [0, extent] mapped by `sign`.
    void side(double extent, double anchor, int uniform_panels, double p, double sign,
              const std::function<double(double)>& log_rho) {
        anchor = std::min(anchor, extent);
        const double eps = std::ldexp(anchor, -graded_levels);
        singular_panel(eps, p, sign, log_rho);
        for (int k = graded_levels - 1; k >= 0; --k)
            panel(std::ldexp(anchor, -k - 1), std::ldexp(anchor, -k), sign, log_rho);
        if (extent > anchor) {
            const double h = (extent - anchor) / uniform_panels;
            for (int j = 0; j < uniform_panels; ++j) panel(anchor + j * h, anchor + (j + 1) * h, sign, log_rho);
        }
    }

    DiscreteMeasure finish() const {
        DiscreteMeasure m;
        m.nodes.resize(static_cast<Eigen::Index>(nodes.size()));
        m.sqrt_weights.resize(m.nodes.size());
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            m.nodes[static_cast<Eigen::Index>(i)] = nodes[i];
            m.sqrt_weights[static_cast<Eigen::Index>(i)] = std::exp(0.5 * log_weights[i]);
        }
        return m;
    }
};

struct SideSpec {
    double extent;
    double sign;
};

struct MeasureSpec {
    double omega_c;
    double singular_exponent;
    std::vector<SideSpec> sides;
    std::function<double(double)> log_rho;
    int min_nodes;
};

DiscreteMeasure discretize(const MeasureSpec& spec, int order, int refinement) {
    GridBuilder grid(order);
    const double anchor = spec.omega_c;
    const int fixed_panels = graded_levels + 1;
    for (const auto& side : spec.sides) {
        const double span = std::max(side.extent - anchor, 0.0);
        int base = static_cast<int>(std::ceil(span / (0.5 * spec.omega_c)));
        const int per_side_nodes = spec.min_nodes / static_cast<int>(spec.sides.size());
        base = std::max(base, (per_side_nodes + order - 1) / order - fixed_panels);
        base = std::max(base, 1);
        grid.side(side.extent, anchor, base << refinement, spec.singular_exponent, side.sign, spec.log_rho);
    }
    return grid.finish();
}

ChainCoefficients map_measure(const MeasureSpec& spec, std::size_t L, double alpha, const QuadratureConfig& quad) {
    if (L < 1) throw DomainError("chain length must be >= 1");
    if (quad.order < 2) throw DomainError("quadrature order must be >= 2");

    ChainCoefficients out;
    std::vector<double> prev_a;
    std::vector<double> prev_b;
    double prev_mu0 = 0.0;
    double change = std::numeric_limits<double>::infinity();

    for (int r = 0; r <= quad.max_refinements + 1; ++r) {
        const DiscreteMeasure m = discretize(spec, quad.order, r);
        std::vector<double> a;
        std::vector<double> b;
        lanczos_recurrence(m, L, a, b);
        const double mu0 = m.zeroth_moment();

        if (r > 0) {
            change = std::abs(mu0 - prev_mu0) / std::max(std::abs(mu0), std::numeric_limits<double>::min());
            for (std::size_t n = 0; n < a.size(); ++n)
                change = std::max(change, std::abs(a[n] - prev_a[n]) / std::max(std::abs(a[n]), spec.omega_c));
            for (std::size_t n = 0; n < b.size(); ++n)
                change = std::max(change, std::abs(b[n] - prev_b[n]) / std::max(std::abs(b[n]), spec.omega_c));
        }
        prev_a = std::move(a);
        prev_b = std::move(b);
        prev_mu0 = mu0;

        out.quadrature.nodes = static_cast<int>(m.nodes.size());
        out.quadrature.refinements = r;
        if (r > 0 && change <= quad.tolerance) break;
    }
    if (!(change <= quad.tolerance))
        throw ConvergenceError("chain recurrence did not converge under quadrature refinement", change);

    out.omegas = std::move(prev_a);
    out.hops = std::move(prev_b);
    out.g = alpha > 0.0 ? std::sqrt(prev_mu0 / pi) : 0.0;
    out.quadrature.order = quad.order;
    out.quadrature.tolerance = quad.tolerance;
    out.quadrature.achieved = change;
    return out;
}

}  // namespace

void SpectralDensity::validate() const {
    if (!(alpha >= 0.0)) throw DomainError("alpha must be >= 0");
    if (!(s > 0.0)) throw DomainError("spectral exponent s must be > 0");
    if (!(omega_c > 0.0)) throw DomainError("omega_c must be > 0");
}

double SpectralDensity::zeroth_moment() const {
    return 2.0 * alpha * omega_c * omega_c * std::tgamma(s + 1.0);
}

double eval_density(const SpectralDensity& density, double omega) {
    density.validate();
    if (omega < 0.0) throw DomainError("spectral density evaluated at negative frequency");
    if (omega == 0.0 || density.alpha == 0.0) return 0.0;
    return std::exp(log_zero_t_density(density.alpha, density.s, density.omega_c, omega));
}

void ThermalExtendedDensity::validate() const {
    base.validate();
    if (!(theta > 0.0)) throw DomainError("theta must be > 0 for the thermal density");
    if (!(omega_max > 0.0)) throw DomainError("omega_max must be > 0");
}

double eval_thermal_density(const ThermalExtendedDensity& density, double omega) {
    density.validate();
    if (std::abs(omega) > density.omega_max) throw DomainError("|omega| exceeds the thermal support omega_max");
    const auto& b = density.base;
    if (b.alpha == 0.0) return 0.0;
    if (omega == 0.0) {
        // lim J(|w|) theta / |w| ~ w^{s-1}
        if (b.s > 1.0) return 0.0;
        if (b.s == 1.0) return 2.0 * b.alpha * density.theta;
        return std::numeric_limits<double>::infinity();
    }
    return std::exp(log_thermal_density(b.alpha, b.s, b.omega_c, density.theta, omega));
}

double exact_measure_extent(double omega_c, std::size_t L) {
    // Largest zero of the degree-L Laguerre polynomial sits near 4L omega_c; the
    // cap keeps sqrt(weight) above the double underflow threshold.
    return omega_c * std::min(1400.0, 40.0 + 5.0 * static_cast<double>(L));
}

void gauss_legendre(int n, VectorXd& nodes, VectorXd& weights) {
    if (n < 1) throw DomainError("Gauss-Legendre order must be >= 1");
    nodes.resize(n);
    weights.resize(n);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0;
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        // recompute derivative at the converged root
        double p0 = 1.0;
        double p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n == 1 ? 1.0 : n * (x * p1 - p0) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
}

void lanczos_recurrence(const DiscreteMeasure& measure, std::size_t n, std::vector<double>& diagonal,
                        std::vector<double>& off_diagonal) {
    const Eigen::Index N = measure.nodes.size();
    if (static_cast<Eigen::Index>(n) > N) throw DomainError("more recurrence coefficients requested than nodes");
    const double norm0 = measure.sqrt_weights.norm();
    if (!(norm0 > 0.0)) throw DomainError("measure has zero mass");

    diagonal.assign(n, 0.0);
    off_diagonal.assign(n > 0 ? n - 1 : 0, 0.0);

    MatrixXd Q(N, static_cast<Eigen::Index>(n));
    Q.col(0) = measure.sqrt_weights / norm0;
    VectorXd z(N);
    for (std::size_t k = 0; k < n; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        z = measure.nodes.cwiseProduct(Q.col(kk));
        diagonal[k] = Q.col(kk).dot(z);
        if (k + 1 == n) break;
        for (int pass = 0; pass < 2; ++pass) {
            const VectorXd h = Q.leftCols(kk + 1).transpose() * z;
            z.noalias() -= Q.leftCols(kk + 1) * h;
        }
        const double beta = z.norm();
        if (!(beta > 1e-300))
            throw ConvergenceError("Lanczos breakdown: measure supports fewer points than requested", beta);
        off_diagonal[k] = beta;
        Q.col(kk + 1) = z / beta;
    }
}

ChainCoefficients chain_coefficients(const SpectralDensity& density, std::size_t L, const QuadratureConfig& quad) {
    density.validate();
    // The recurrence is invariant under scaling of the measure, so alpha = 0 maps
    // the unit-alpha shape and reports g = 0.
    const double alpha_shape = density.alpha > 0.0 ? density.alpha : 1.0;
    const double extent = quad.support_factor ? *quad.support_factor * density.omega_c
                                              : exact_measure_extent(density.omega_c, L);
    if (!(extent > 0.0)) throw DomainError("support extent must be > 0");

    MeasureSpec spec;
    spec.omega_c = density.omega_c;
    spec.singular_exponent = density.s;
    spec.sides = {{extent, 1.0}};
    spec.log_rho = [=](double w) { return log_zero_t_density(alpha_shape, density.s, density.omega_c, w); };
    spec.min_nodes = quad.nodes_per_mode.value_or(50) * static_cast<int>(L);

    ChainCoefficients out = map_measure(spec, L, density.alpha, quad);
    out.measure = {density.alpha, density.s, density.omega_c, 0.0, 0.0, extent};
    return out;
}

ChainCoefficients chain_coefficients(const ThermalExtendedDensity& density, std::size_t L,
                                     const QuadratureConfig& quad) {
    density.validate();
    const auto& b = density.base;
    const double alpha_shape = b.alpha > 0.0 ? b.alpha : 1.0;
    const double theta = density.theta;

    MeasureSpec spec;
    spec.omega_c = b.omega_c;
    spec.singular_exponent = b.s - 1.0;
    spec.sides = {{density.omega_max, -1.0}, {density.omega_max, 1.0}};
    spec.log_rho = [=](double w) { return log_thermal_density(alpha_shape, b.s, b.omega_c, theta, w); };
    spec.min_nodes = quad.nodes_per_mode.value_or(100) * static_cast<int>(L);

    ChainCoefficients out = map_measure(spec, L, b.alpha, quad);
    out.measure = {b.alpha, b.s, b.omega_c, theta, -density.omega_max, density.omega_max};
    return out;
}

}  // namespace sbchain
