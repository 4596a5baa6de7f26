#include "sbchain/bosonic.hpp"

#include <cmath>
#include <vector>

namespace sbchain {

MatrixXd annihilation(Eigen::Index d) {
    if (d < 1) throw DomainError("local dimension must be >= 1");
    MatrixXd a = MatrixXd::Zero(d, d);
    for (Eigen::Index n = 1; n < d; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
    return a;
}

MatrixXd creation(Eigen::Index d) { return annihilation(d).transpose(); }

MatrixXd number_operator(Eigen::Index d) {
    if (d < 1) throw DomainError("local dimension must be >= 1");
    MatrixXd n = MatrixXd::Zero(d, d);
    for (Eigen::Index k = 0; k < d; ++k) n(k, k) = static_cast<double>(k);
    return n;
}

MatrixXcd pauli_x() {
    MatrixXcd m(2, 2);
    m << 0.0, 1.0, 1.0, 0.0;
    return m;
}

MatrixXcd pauli_y() {
    MatrixXcd m(2, 2);
    m << 0.0, cplx(0.0, -1.0), cplx(0.0, 1.0), 0.0;
    return m;
}

MatrixXcd pauli_z() {
    MatrixXcd m(2, 2);
    m << 1.0, 0.0, 0.0, -1.0;
    return m;
}

MatrixXcd displacement(Eigen::Index d, cplx z) {
    if (d < 1) throw DomainError("local dimension must be >= 1");
    MatrixXcd D = MatrixXcd::Zero(d, d);
    const double x = std::norm(z);
    const double envelope = std::exp(-0.5 * x);
    if (x == 0.0) return MatrixXcd::Identity(d, d);

    // <m|D|n> = sqrt(n!/m!) z^{m-n} e^{-x/2} L_n^{(m-n)}(x)      for m >= n
    //         = sqrt(m!/n!) (-z*)^{n-m} e^{-x/2} L_m^{(n-m)}(x)  for m < n
    std::vector<double> lag(static_cast<std::size_t>(d));
    for (Eigen::Index k = 0; k < d; ++k) {
        // generalised Laguerre L_j^{(k)}(x), j = 0..d-1-k, by upward recurrence
        const double a = static_cast<double>(k);
        lag[0] = 1.0;
        if (d - k > 1) lag[1] = 1.0 + a - x;
        for (Eigen::Index j = 1; j + 1 < d - k; ++j)
            lag[j + 1] = ((2.0 * j + 1.0 + a - x) * lag[j] - (j + a) * lag[j - 1]) / (j + 1.0);

        for (Eigen::Index n = 0; n + k < d; ++n) {
            const Eigen::Index m = n + k;
            // sqrt(n!/m!) = 1/sqrt((n+1)(n+2)...(m))
            double ratio = 1.0;
            for (Eigen::Index j = n + 1; j <= m; ++j) ratio /= std::sqrt(static_cast<double>(j));
            const double base = ratio * envelope * lag[static_cast<std::size_t>(n)];
            D(m, n) = base * std::pow(z, static_cast<int>(k));
            if (k > 0) D(n, m) = base * std::pow(-std::conj(z), static_cast<int>(k));
        }
    }
    return D;
}

}  // namespace sbchain
