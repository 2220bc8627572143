#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "chaosbench/common.hpp"
#include "chaosbench/tape.hpp"
#include "chaosbench/tensor.hpp"

namespace chaosbench {

struct Dopri5Config {
    double rtol = 1e-5;
    double atol = 1e-6;
    double h_ode = 1.0;
    int max_steps = 1000;
    double safety = 0.9;

    void validate() const {
        if (rtol <= 0.0 || atol <= 0.0) throw ConfigError("dopri5: tolerances must be positive");
        if (h_ode <= 0.0) throw ConfigError("dopri5: h_ode must be positive");
        if (max_steps < 1) throw ConfigError("dopri5: max_steps must be >= 1");
    }
};

namespace detail {

// Scaled RMS norm of the embedded error estimate; accept when <= 1.
inline double dopri5_error_norm(const Tensor& err, const Tensor& y0, const Tensor& y1,
                                double rtol, double atol) {
    const std::int64_t n = err.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double sc = atol + rtol * std::max(std::fabs(y0[i]), std::fabs(y1[i]));
        const double r = err[i] / sc;
        acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(n));
}

}  // namespace detail

// Adaptive Dormand-Prince 5(4) over [0, h_ode], built on the tape so gradients
// flow through every accepted stage. The field f is called as f(tape, y) and
// must return a tensor shaped like y; the step size is controlled by one
// scalar error norm over the whole tensor, so a batch integrates as a single
// system. FSAL: the last stage of an accepted step seeds the next one.
template <typename F>
Var dopri5_integrate(Tape& t, F&& f, Var y0, const Dopri5Config& cfg) {
    cfg.validate();

    static constexpr double a21 = 1.0 / 5.0;
    static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
    static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
    static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                            a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
    static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                            a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
    static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                            b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
    static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                            e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

    Var y = y0;
    Var k1 = f(t, y);
    if (t.value(k1).numel() != t.value(y).numel())
        throw ShapeError("dopri5: field output shape differs from state");

    // Starting step: crude Hairer-style ratio of scaled state and slope norms.
    double h = cfg.h_ode;
    {
        const Tensor &vy = t.value(y), &vk = t.value(k1);
        double d0 = 0.0, d1 = 0.0;
        for (std::int64_t i = 0; i < vy.numel(); ++i) {
            const double sc = cfg.atol + cfg.rtol * std::fabs(vy[i]);
            d0 += (vy[i] / sc) * (vy[i] / sc);
            d1 += (vk[i] / sc) * (vk[i] / sc);
        }
        d0 = std::sqrt(d0 / static_cast<double>(vy.numel()));
        d1 = std::sqrt(d1 / static_cast<double>(vy.numel()));
        if (d1 > 1e-12 && d0 > 1e-12) h = std::min(cfg.h_ode, 0.01 * d0 / d1);
    }

    double s = 0.0;
    int attempts = 0;
    while (cfg.h_ode - s > 1e-14 * cfg.h_ode) {
        if (++attempts > cfg.max_steps)
            throw NumericalError("dopri5: step budget exhausted (stiff or non-finite field)");
        h = std::min(h, cfg.h_ode - s);

        Var ys = op_add_scaled(t, y, k1, h * a21);
        Var k2 = f(t, ys);
        ys = op_add_scaled(t, op_add_scaled(t, y, k1, h * a31), k2, h * a32);
        Var k3 = f(t, ys);
        ys = op_add_scaled(t, op_add_scaled(t, op_add_scaled(t, y, k1, h * a41), k2, h * a42), k3,
                           h * a43);
        Var k4 = f(t, ys);
        ys = op_add_scaled(
            t, op_add_scaled(t, op_add_scaled(t, op_add_scaled(t, y, k1, h * a51), k2, h * a52),
                             k3, h * a53),
            k4, h * a54);
        Var k5 = f(t, ys);
        ys = op_add_scaled(
            t,
            op_add_scaled(
                t, op_add_scaled(t, op_add_scaled(t, op_add_scaled(t, y, k1, h * a61), k2, h * a62),
                                 k3, h * a63),
                k4, h * a64),
            k5, h * a65);
        Var k6 = f(t, ys);

        Var y1 = op_add_scaled(
            t,
            op_add_scaled(
                t, op_add_scaled(t, op_add_scaled(t, op_add_scaled(t, y, k1, h * b1), k3, h * b3),
                                 k4, h * b4),
                k5, h * b5),
            k6, h * b6);
        Var k7 = f(t, y1);

        // Embedded 4th-order error, on values only.
        const Tensor &v1 = t.value(k1), &v3 = t.value(k3), &v4 = t.value(k4), &v5 = t.value(k5),
                     &v6 = t.value(k6), &v7 = t.value(k7);
        Tensor err(v1.shape());
        for (std::int64_t i = 0; i < err.numel(); ++i)
            err[i] = h * (e1 * v1[i] + e3 * v3[i] + e4 * v4[i] + e5 * v5[i] + e6 * v6[i] +
                          e7 * v7[i]);
        const double en = detail::dopri5_error_norm(err, t.value(y), t.value(y1), cfg.rtol, cfg.atol);

        double factor;
        if (!std::isfinite(en)) {
            factor = 0.2;
        } else if (en <= 1e-300) {
            factor = 5.0;
        } else {
            factor = std::clamp(cfg.safety * std::pow(en, -0.2), 0.2, 5.0);
        }

        if (std::isfinite(en) && en <= 1.0) {
            s += h;
            y = y1;
            k1 = k7;
        }
        h *= factor;
        if (!(h > 0.0) || !std::isfinite(h))
            throw NumericalError("dopri5: step size collapsed to zero");
    }
    return y;
}

}  // namespace chaosbench
