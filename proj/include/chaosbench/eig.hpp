#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "chaosbench/tensor.hpp"

namespace chaosbench {

namespace detail {

// Eigenvalues of a real 2x2 matrix, complex pair allowed.
inline std::pair<std::complex<double>, std::complex<double>> eig2x2(double a, double b, double c,
                                                                    double d) {
    const double tr = a + d, det = a * d - b * c;
    const double disc = tr * tr / 4.0 - det;
    if (disc >= 0.0) {
        const double s = std::sqrt(disc);
        return {tr / 2.0 + s, tr / 2.0 - s};
    }
    const double s = std::sqrt(-disc);
    return {{tr / 2.0, s}, {tr / 2.0, -s}};
}

// rho(J) via Frobenius norms of repeated squarings: (1/k) log ||J^k|| -> log rho.
// Slow but assumption-free; used when power iteration cannot certify a result.
inline double spectral_radius_squaring(const Tensor& J, int squarings = 40) {
    const std::int64_t n = J.dim(0);
    EigenMatrix B = J.cmat(n, n);
    double log_rho = 0.0;
    double weight = 1.0;
    for (int m = 1; m <= squarings; ++m) {
        EigenMatrix B2 = B * B;
        const double s = B2.norm();
        weight *= 0.5;
        if (!(s > 0.0) || !std::isfinite(s)) return 0.0;
        log_rho += weight * std::log(s);
        B = B2 / s;
    }
    // remaining mass: weight * log||B_m|| with ||B_m|| = 1 by construction
    return std::exp(log_rho);
}

}  // namespace detail

// Spectral radius of a square real matrix. Primary path: power iteration with
// a 2-D invariant-subspace extraction so dominant complex pairs converge too;
// the answer is accepted only after an explicit residual certificate. When
// certification fails (equal-modulus clusters, nilpotent parts) fall back to
// the norm-of-powers route.
inline double spectral_radius(const Tensor& J, double tol = 1e-10, int max_iter = 500) {
    if (J.ndim() != 2 || J.dim(0) != J.dim(1)) throw ShapeError("spectral_radius: square matrix required");
    const std::int64_t n = J.dim(0);
    if (n == 1) return std::abs(J[0]);
    ConstMatMap A = J.cmat(n, n);

    if (n == 2) {
        auto [l1, l2] = detail::eig2x2(J[0], J[1], J[2], J[3]);
        return std::max(std::abs(l1), std::abs(l2));
    }

    Eigen::VectorXd x(n);
    for (std::int64_t i = 0; i < n; ++i) x[i] = 1.0 + 1e-3 * static_cast<double>(i % 7);
    x /= x.norm();

    double rho_prev = -1.0;
    int stable = 0;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd y = A * x;
        const double yn = y.norm();
        if (!(yn > 0.0)) return detail::spectral_radius_squaring(J);
        if (!std::isfinite(yn)) throw NumericalError("spectral_radius: overflow in power iteration");

        // project onto span{x, y}
        Eigen::VectorXd r = y - (x.dot(y)) * x;
        const double rn = r.norm();
        double rho_est;
        bool certified = false;
        if (rn <= 1e-13 * yn) {
            const double lambda = x.dot(y) / x.dot(x);  // x is unit only up to rounding
            rho_est = std::abs(lambda);
            certified = (y - lambda * x).norm() <= 1e-9 * std::max(rho_est, 1e-300);
        } else {
            Eigen::VectorXd q = r / rn;
            Eigen::Matrix2d M;
            M(0, 0) = x.dot(A * x);
            M(0, 1) = x.dot(A * q);
            M(1, 0) = q.dot(A * x);
            M(1, 1) = q.dot(A * q);
            auto [l1, l2] = detail::eig2x2(M(0, 0), M(0, 1), M(1, 0), M(1, 1));
            rho_est = std::max(std::abs(l1), std::abs(l2));
            Eigen::MatrixXd Q(n, 2);
            Q.col(0) = x;
            Q.col(1) = q;
            certified = (A * Q - Q * M).norm() <= 1e-9 * std::max(rho_est, 1e-300);
        }
        if (certified && rho_prev >= 0.0 &&
            std::abs(rho_est - rho_prev) <= tol * std::max(rho_est, 1e-300)) {
            if (++stable >= 2) return rho_est;
        } else {
            stable = 0;
        }
        rho_prev = rho_est;
        x = y / yn;
    }
    return detail::spectral_radius_squaring(J);
}

}  // namespace chaosbench
