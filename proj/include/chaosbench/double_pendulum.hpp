#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "chaosbench/common.hpp"
#include "chaosbench/dataset.hpp"
#include "chaosbench/tensor.hpp"

namespace chaosbench {

// Classical RK4 on a fixed-size state vector. Throws on non-finite stage
// derivatives so instability surfaces immediately instead of poisoning data.
template <std::size_t N, typename F>
std::array<double, N> rk4_step(const F& f, const std::array<double, N>& y, double dt) {
    if (!(dt > 0.0)) throw ConfigError("rk4_step: dt must be positive");
    auto finite = [](const std::array<double, N>& v) {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    };
    auto axpy = [](const std::array<double, N>& a, double c, const std::array<double, N>& b) {
        std::array<double, N> r;
        for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + c * b[i];
        return r;
    };
    const auto k1 = f(y);
    const auto k2 = f(axpy(y, 0.5 * dt, k1));
    const auto k3 = f(axpy(y, 0.5 * dt, k2));
    const auto k4 = f(axpy(y, dt, k3));
    if (!finite(k1) || !finite(k2) || !finite(k3) || !finite(k4))
        throw NumericalError("rk4_step: non-finite derivative");
    std::array<double, N> out;
    for (std::size_t i = 0; i < N; ++i)
        out[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return out;
}

// Planar double pendulum, unit masses and unit links. State order is
// (theta1, theta2, omega1, omega2).
struct DoublePendulum {
    double g = 9.81;

    std::array<double, 4> derivatives(const std::array<double, 4>& s) const {
        const double th1 = s[0], th2 = s[1], w1 = s[2], w2 = s[3];
        const double d = th1 - th2;
        const double sd = std::sin(d), cd = std::cos(d);
        const double den = 2.0 - cd * cd;
        const double a1 =
            (-3.0 * g * std::sin(th1) - g * std::sin(th1 - 2.0 * th2) -
             2.0 * sd * (w2 * w2 + w1 * w1 * cd)) /
            (2.0 * den);
        const double a2 = sd * (2.0 * w1 * w1 + 2.0 * g * std::cos(th1) + w2 * w2 * cd) / den;
        return {w1, w2, a1, a2};
    }

    // Kinetic plus potential, potential referenced to the pivot height.
    double energy(const std::array<double, 4>& s) const {
        const double th1 = s[0], th2 = s[1], w1 = s[2], w2 = s[3];
        const double kin = w1 * w1 + 0.5 * w2 * w2 + w1 * w2 * std::cos(th1 - th2);
        const double pot = -g * (2.0 * std::cos(th1) + std::cos(th2));
        return kin + pot;
    }

    static std::array<double, 6> encode(const std::array<double, 4>& s) {
        return {std::sin(s[0]), std::cos(s[0]), std::sin(s[1]), std::cos(s[1]), s[2], s[3]};
    }
};

struct DpConfig {
    std::int64_t n_traj = 2000;
    std::uint64_t seed = 0;
    double t_horizon = 10.0;
    double dt_save = 0.05;
    int substeps = 10;
    double g = 9.81;
    double ic_omega_max = 6.0;
    double reject_omega = 50.0;
    double reject_drift = 1e-3;
    int max_attempts = 200;
    double train_frac = 0.8;
};

namespace detail {

// One candidate trajectory in encoded form, or failure. drift_out reports
// max_t |E(t)-E(0)| / max(|E(0)|, 3g); the 3g floor keeps near-zero-energy
// states from inflating the relative measure.
inline bool dp_integrate(const DoublePendulum& sys, const DpConfig& cfg,
                         std::array<double, 4> s, double* traj_out, double* drift_out) {
    const std::int64_t n_save = static_cast<std::int64_t>(std::llround(cfg.t_horizon / cfg.dt_save));
    const double dt_fine = cfg.dt_save / cfg.substeps;
    const double e0 = sys.energy(s);
    const double scale = std::max(std::abs(e0), 3.0 * sys.g);
    double drift = 0.0;
    auto f = [&sys](const std::array<double, 4>& y) { return sys.derivatives(y); };

    auto store = [&](std::int64_t idx, const std::array<double, 4>& st) {
        const auto enc = DoublePendulum::encode(st);
        for (int k = 0; k < 6; ++k) traj_out[idx * 6 + k] = enc[k];
    };
    store(0, s);
    for (std::int64_t i = 1; i <= n_save; ++i) {
        for (int sub = 0; sub < cfg.substeps; ++sub) {
            try {
                s = rk4_step(f, s, dt_fine);
            } catch (const NumericalError&) {
                return false;
            }
        }
        for (double x : s)
            if (!std::isfinite(x)) return false;
        if (std::abs(s[2]) > cfg.reject_omega || std::abs(s[3]) > cfg.reject_omega) return false;
        drift = std::max(drift, std::abs(sys.energy(s) - e0) / scale);
        if (drift > cfg.reject_drift) return false;
        store(i, s);
    }
    *drift_out = drift;
    return true;
}

}  // namespace detail

inline TrajectoryDataset generate_dp_dataset(const DpConfig& cfg) {
    if (cfg.n_traj < 1) throw ConfigError("generate_dp_dataset: n_traj must be >= 1");
    DoublePendulum sys;
    sys.g = cfg.g;
    const std::int64_t n_t = static_cast<std::int64_t>(std::llround(cfg.t_horizon / cfg.dt_save)) + 1;

    TrajectoryDataset ds;
    ds.system = "double_pendulum";
    ds.dt_model = cfg.dt_save;
    ds.seed = cfg.seed;
    ds.data = Tensor({cfg.n_traj, n_t, 6});
    ds.regime.assign(static_cast<std::size_t>(cfg.n_traj), -1);

    constexpr std::uint64_t kAttemptStride = 4096;
    const double pi = 3.14159265358979323846;
    for (std::int64_t i = 0; i < cfg.n_traj; ++i) {
        bool ok = false;
        for (int attempt = 0; attempt < cfg.max_attempts && !ok; ++attempt) {
            Rng rng(cfg.seed, static_cast<std::uint64_t>(i) * kAttemptStride +
                                  static_cast<std::uint64_t>(attempt));
            std::array<double, 4> ic = {rng.uniform(-pi, pi), rng.uniform(-pi, pi),
                                        rng.uniform(-cfg.ic_omega_max, cfg.ic_omega_max),
                                        rng.uniform(-cfg.ic_omega_max, cfg.ic_omega_max)};
            double drift = 0.0;
            ok = detail::dp_integrate(sys, cfg, ic, ds.data.data() + i * n_t * 6, &drift);
        }
        if (!ok)
            throw NumericalError("generate_dp_dataset: resampling budget exceeded for trajectory " +
                                 std::to_string(i));
    }
    ds.split = assign_split(ds.regime, cfg.train_frac);
    ds.validate();
    return ds;
}

}  // namespace chaosbench
