#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "chaosbench/common.hpp"

namespace chaosbench {

// Per-mode ETDRK4 coefficients for a diagonal real linear symbol, following
// Kassam & Trefethen: the phi-function combinations are averaged over a
// complex contour (unit circle centered at L*dt) so near-zero symbols are
// evaluated stably.
struct Etdrk4Coeffs {
    std::vector<double> E, E2, Q, f1, f2, f3;
    double dt = 0.0;
};

inline Etdrk4Coeffs etdrk4_coefficients(const std::vector<double>& symbol, double dt,
                                        int contour_points = 32) {
    if (!(dt > 0.0)) throw ConfigError("etdrk4_coefficients: dt must be positive");
    const std::size_t n = symbol.size();
    Etdrk4Coeffs c;
    c.dt = dt;
    c.E.resize(n);
    c.E2.resize(n);
    c.Q.resize(n);
    c.f1.resize(n);
    c.f2.resize(n);
    c.f3.resize(n);
    const double pi = 3.14159265358979323846;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = symbol[i] * dt;
        c.E[i] = std::exp(z);
        c.E2[i] = std::exp(0.5 * z);
        std::complex<double> q(0), f1(0), f2(0), f3(0);
        for (int j = 0; j < contour_points; ++j) {
            const double th = pi * (2.0 * j + 1.0) / contour_points;
            const std::complex<double> r(z + std::cos(th), std::sin(th));
            const std::complex<double> er = std::exp(r);
            const std::complex<double> r2 = r * r, r3 = r2 * r;
            q += (std::exp(0.5 * r) - 1.0) / r;
            f1 += (-4.0 - r + er * (4.0 - 3.0 * r + r2)) / r3;
            f2 += (2.0 + r + er * (-2.0 + r)) / r3;
            f3 += (-4.0 - 3.0 * r - r2 + er * (4.0 - r)) / r3;
        }
        const double inv = dt / contour_points;
        c.Q[i] = q.real() * inv;
        c.f1[i] = f1.real() * inv;
        c.f2[i] = f2.real() * inv;
        c.f3[i] = f3.real() * inv;
    }
    return c;
}

// One ETDRK4 update of a diagonal-linear system with nonlinear callback.
// State and the callback work on arrays of complex spectral coefficients.
template <typename NonlinearFn>
void etdrk4_step(std::vector<std::complex<double>>& u, const Etdrk4Coeffs& c,
                 const NonlinearFn& nonlinear) {
    const std::size_t n = u.size();
    if (c.E.size() != n) throw ShapeError("etdrk4_step: coefficient/state size mismatch");
    std::vector<std::complex<double>> nu(n), a(n), na(n), b(n), nb(n), cc(n), nc(n);
    nonlinear(u, nu);
    for (std::size_t i = 0; i < n; ++i) a[i] = c.E2[i] * u[i] + c.Q[i] * nu[i];
    nonlinear(a, na);
    for (std::size_t i = 0; i < n; ++i) b[i] = c.E2[i] * u[i] + c.Q[i] * na[i];
    nonlinear(b, nb);
    for (std::size_t i = 0; i < n; ++i) cc[i] = c.E2[i] * a[i] + c.Q[i] * (2.0 * nb[i] - nu[i]);
    nonlinear(cc, nc);
    for (std::size_t i = 0; i < n; ++i)
        u[i] = c.E[i] * u[i] + c.f1[i] * nu[i] + 2.0 * c.f2[i] * (na[i] + nb[i]) + c.f3[i] * nc[i];
}

}  // namespace chaosbench
