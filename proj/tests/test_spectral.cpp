#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "chaosbench/etdrk4.hpp"
#include "chaosbench/fft.hpp"
#include "chaosbench/kolmogorov.hpp"
#include "chaosbench/ks.hpp"

using namespace chaosbench;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Literal phi-function expressions in long double; the implementation uses
// contour averaging, so this is an independent route.
struct PhiOracle {
    double Q, f1, f2, f3;
};
PhiOracle phi_oracle(double symbol, double dt) {
    const long double z = static_cast<long double>(symbol) * dt;
    const long double ez = expl(z);
    const long double z3 = z * z * z;
    PhiOracle o;
    o.Q = static_cast<double>(dt * (expl(z / 2) - 1.0L) / z);
    o.f1 = static_cast<double>(dt * (-4.0L - z + ez * (4.0L - 3.0L * z + z * z)) / z3);
    o.f2 = static_cast<double>(dt * (2.0L + z + ez * (-2.0L + z)) / z3);
    o.f3 = static_cast<double>(dt * (-4.0L - 3.0L * z - z * z + ez * (4.0L - z)) / z3);
    return o;
}

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace

TEST_CASE("fft: round trips") {
    SECTION("1d") {
        Fft1D fft(128);
        Rng rng(21, 0);
        std::vector<double> u(128), back(128);
        for (auto& x : u) x = rng.uniform(-1, 1);
        std::vector<std::complex<double>> s(fft.n_modes());
        fft.forward(u.data(), s.data());
        fft.inverse(s.data(), back.data());
        for (int i = 0; i < 128; ++i) REQUIRE(std::abs(u[i] - back[i]) < 1e-10);
    }
    SECTION("2d") {
        Fft2D fft(64, 64);
        Rng rng(22, 0);
        std::vector<double> u(64 * 64), back(64 * 64);
        for (auto& x : u) x = rng.uniform(-1, 1);
        std::vector<std::complex<double>> s(fft.n_spectral());
        fft.forward(u.data(), s.data());
        fft.inverse(s.data(), back.data());
        for (int i = 0; i < 64 * 64; ++i) REQUIRE(std::abs(u[i] - back[i]) < 1e-10);
    }
}

TEST_CASE("etdrk4 coefficients: limits, definition and phi oracle") {
    SECTION("zero symbol reduces to analytic limits") {
        auto c = etdrk4_coefficients({0.0}, 0.25);
        REQUIRE(c.E[0] == 1.0);
        REQUIRE(c.E2[0] == 1.0);
        REQUIRE(std::abs(c.Q[0] - 0.125) < 1e-13);
        REQUIRE(std::abs(c.f1[0] - 0.25 / 6.0) < 1e-13);
        REQUIRE(std::abs(c.f2[0] - 0.25 / 6.0) < 1e-13);
        REQUIRE(std::abs(c.f3[0] - 0.25 / 6.0) < 1e-13);
    }
    SECTION("E is the exact exponential for large negative symbols") {
        auto c = etdrk4_coefficients({-100.0}, 0.25);
        REQUIRE(std::abs(c.E[0] - std::exp(-25.0)) <= 1e-12 * std::exp(-25.0));
    }
    SECTION("symbol -1, dt 0.25 matches the long-double phi evaluation") {
        auto c = etdrk4_coefficients({-1.0}, 0.25);
        auto o = phi_oracle(-1.0, 0.25);
        REQUIRE(std::abs(c.Q[0] - o.Q) < 1e-10);
        REQUIRE(std::abs(c.f1[0] - o.f1) < 1e-10);
        REQUIRE(std::abs(c.f2[0] - o.f2) < 1e-10);
        REQUIRE(std::abs(c.f3[0] - o.f3) < 1e-10);
    }
    SECTION("f1+4f2+f3 equals dt*phi1 across the KS symbol range") {
        std::vector<double> symbols = {-0.5, -2.0, -10.0, -1e3, -1e5, 0.2};
        auto c = etdrk4_coefficients(symbols, 0.25);
        for (std::size_t i = 0; i < symbols.size(); ++i) {
            const long double z = static_cast<long double>(symbols[i]) * 0.25L;
            const double rhs = static_cast<double>(0.25L * (expl(z) - 1.0L) / z);
            const double lhs = c.f1[i] + 4.0 * c.f2[i] + c.f3[i];
            REQUIRE(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(rhs)));
        }
    }
}

TEST_CASE("ks solver: trivial states and linear dispersion") {
    KsSolver solver;
    SECTION("zero field stays zero") {
        std::vector<double> u(128, 0.0);
        auto s = solver.to_spectral(u.data());
        for (int i = 0; i < 10; ++i) solver.step(s);
        solver.to_physical(s, u.data());
        REQUIRE(max_abs(u) == 0.0);
    }
    SECTION("constant field is a fixed point") {
        std::vector<double> u(128, 0.7);
        auto s = solver.to_spectral(u.data());
        for (int i = 0; i < 10; ++i) solver.step(s);
        solver.to_physical(s, u.data());
        for (double x : u) REQUIRE(std::abs(x - 0.7) < 1e-13);
    }
    SECTION("mode n=2 grows by exp(k^2-k^4) with nonlinearity off") {
        solver.nonlinear_enabled = false;
        std::vector<double> u(128);
        const double k = 2.0 * kPi * 2.0 / 22.0;
        for (int i = 0; i < 128; ++i) u[i] = 0.01 * std::cos(k * (22.0 * i / 128.0));
        auto s = solver.to_spectral(u.data());
        const double a0 = std::abs(s[2]);
        for (int i = 0; i < 4; ++i) solver.step(s);  // t = 1.0
        const double a1 = std::abs(s[2]);
        const double expected = std::exp(k * k - k * k * k * k);
        REQUIRE(std::abs(a1 / a0 - expected) <= 1e-6 * expected);
    }
    SECTION("mean of u is conserved") {
        Rng rng(31, 0);
        std::vector<double> u = sample_ks_ic(2, rng, solver);
        auto s = solver.to_spectral(u.data());
        const double m0 = s[0].real() / 128.0;
        for (int i = 0; i < 100; ++i) solver.step(s);
        const double m1 = s[0].real() / 128.0;
        REQUIRE(std::abs(m1 - m0) < 1e-10 * 25.0);  // 25 time units
    }
}

TEST_CASE("ks initial conditions: cutoff, realness, rms band") {
    KsSolver solver;
    Rng rng(33, 0);
    for (int regime = 0; regime < 3; ++regime) {
        auto p = ic_regime_params(regime);
        std::vector<double> u = sample_ks_ic(regime, rng, solver);
        Fft1D fft(128);
        std::vector<std::complex<double>> s(fft.n_modes());
        fft.forward(u.data(), s.data());
        for (int m = p.max_mode + 1; m < fft.n_modes(); ++m) REQUIRE(std::abs(s[m]) < 1e-10);
        REQUIRE(std::abs(s[0]) < 1e-10);  // mean-free
        double rms = 0.0;
        for (double x : u) rms += x * x / 128.0;
        rms = std::sqrt(rms);
        REQUIRE(rms >= p.rms_lo - 1e-9);
        REQUIRE(rms <= p.rms_hi + 1e-9);
    }
}

TEST_CASE("ks dataset: boundedness, labels, determinism") {
    KsConfig cfg;
    cfg.traj_per_regime = 2;
    cfg.seed = 5;
    TrajectoryDataset ds = generate_ks_dataset(cfg);
    REQUIRE(ds.n_traj() == 6);
    REQUIRE(ds.n_time() == 41);
    REQUIRE(ds.state_dim() == 128);
    REQUIRE(ds.dt_model == 0.75);

    SECTION("fields stay bounded below 10") {
        for (std::int64_t i = 0; i < ds.data.numel(); ++i) REQUIRE(std::abs(ds.data[i]) < 10.0);
    }
    SECTION("regime labels partition the set") {
        for (int g = 0; g < 3; ++g) {
            int cnt = 0;
            for (int r : ds.regime) cnt += (r == g);
            REQUIRE(cnt == 2);
        }
    }
    SECTION("same seed reproduces bits") {
        TrajectoryDataset ds2 = generate_ks_dataset(cfg);
        for (std::int64_t i = 0; i < ds.data.numel(); ++i) REQUIRE(ds.data[i] == ds2.data[i]);
    }
}

TEST_CASE("poisson solve: analytic and residual oracles") {
    const int n = 64;
    SECTION("omega = sin(x) gives psi = sin(x)") {
        std::vector<double> w(n * n);
        for (int iy = 0; iy < n; ++iy)
            for (int ix = 0; ix < n; ++ix) w[iy * n + ix] = std::sin(2.0 * kPi * ix / n);
        auto psi = poisson_solve(w, n);
        for (int i = 0; i < n * n; ++i) REQUIRE(std::abs(psi[i] - w[i]) < 1e-12);
    }
    SECTION("zero maps to zero") {
        std::vector<double> w(n * n, 0.0);
        auto psi = poisson_solve(w, n);
        REQUIRE(max_abs(psi) == 0.0);
    }
    SECTION("random mean-free vorticity has tiny spectral residual") {
        KolmogorovSolver solver;
        Rng rng(41, 0);
        std::vector<double> w = sample_kf_ic(1, rng, solver);
        auto s = solver.to_spectral(w.data());
        REQUIRE(solver.poisson_residual(s) < 1e-8);
    }
}

TEST_CASE("kolmogorov solver: laminar fixed point and shear invariance") {
    KolmogorovSolver solver;
    const int n = solver.n_grid();

    SECTION("laminar state drifts less than 1e-6 over 5 units") {
        std::vector<double> w(n * n);
        for (int iy = 0; iy < n; ++iy) {
            const double y = 2.0 * kPi * iy / n;
            for (int ix = 0; ix < n; ++ix) w[iy * n + ix] = (35.0 / 16.0) * std::sin(4.0 * y);
        }
        auto s = solver.to_spectral(w.data());
        std::vector<double> now(n * n);
        double worst = 0.0, worst_res = 0.0;
        for (int step = 0; step < 500; ++step) {
            solver.step(s);
            worst_res = std::max(worst_res, solver.poisson_residual(s));
            if (step % 25 == 24) {
                solver.to_physical(s, now.data());
                for (int i = 0; i < n * n; ++i) worst = std::max(worst, std::abs(now[i] - w[i]));
            }
        }
        solver.to_physical(s, now.data());
        for (int i = 0; i < n * n; ++i) worst = std::max(worst, std::abs(now[i] - w[i]));
        CAPTURE(worst, worst_res);
        REQUIRE(worst < 1e-6);
        REQUIRE(worst_res < 1e-8);
    }

    SECTION("zero vorticity picks up dt*sin(4y) after one step") {
        std::vector<double> w(n * n, 0.0);
        auto s = solver.to_spectral(w.data());
        solver.step(s);
        std::vector<double> now(n * n);
        solver.to_physical(s, now.data());
        for (int iy = 0; iy < n; ++iy) {
            const double y = 2.0 * kPi * iy / n;
            for (int ix = 0; ix < n; ++ix)
                REQUIRE(std::abs(now[iy * n + ix] / 0.01 - std::sin(4.0 * y)) < 1e-2);
        }
    }

    SECTION("pure shear stays x-independent (advection vanishes)") {
        std::vector<double> w(n * n);
        for (int iy = 0; iy < n; ++iy)
            for (int ix = 0; ix < n; ++ix) w[iy * n + ix] = 0.8 * std::sin(4.0 * (2.0 * kPi * iy / n));
        auto s = solver.to_spectral(w.data());
        for (int step = 0; step < 20; ++step) solver.step(s);
        std::vector<double> now(n * n);
        solver.to_physical(s, now.data());
        for (int iy = 0; iy < n; ++iy)
            for (int ix = 1; ix < n; ++ix)
                REQUIRE(std::abs(now[iy * n + ix] - now[iy * n + 0]) < 1e-12);
    }
}

TEST_CASE("kf initial conditions: cutoff and rms band") {
    KolmogorovSolver solver;
    Rng rng(51, 0);
    const int n = solver.n_grid();
    for (int regime = 0; regime < 3; ++regime) {
        auto p = ic_regime_params(regime);
        std::vector<double> w = sample_kf_ic(regime, rng, solver);
        Fft2D fft(n, n);
        std::vector<std::complex<double>> s(fft.n_spectral());
        fft.forward(w.data(), s.data());
        for (int iy = 0; iy < n; ++iy) {
            const int ky = (iy <= n / 2) ? iy : iy - n;
            for (int ix = 0; ix < fft.n_kx(); ++ix) {
                const bool active = std::abs(ky) <= p.max_mode && ix <= p.max_mode &&
                                    !(ky == 0 && ix == 0);
                if (!active)
                    REQUIRE(std::abs(s[static_cast<std::int64_t>(iy) * fft.n_kx() + ix]) < 1e-9);
            }
        }
        double rms = 0.0;
        for (double x : w) rms += x * x / (n * n);
        rms = std::sqrt(rms);
        REQUIRE(rms >= p.rms_lo - 1e-9);
        REQUIRE(rms <= p.rms_hi + 1e-9);
    }
}

TEST_CASE("kf dataset: smoke-scale shapes and determinism") {
    KfConfig cfg;
    cfg.traj_per_regime = 1;
    cfg.n_snapshots = 4;
    cfg.t_transient = 1.0;
    cfg.seed = 9;
    TrajectoryDataset ds = generate_kf_dataset(cfg);
    REQUIRE(ds.n_traj() == 3);
    REQUIRE(ds.n_time() == 4);
    REQUIRE(ds.state_dim() == 64 * 64);
    REQUIRE(ds.data.all_finite());
    TrajectoryDataset ds2 = generate_kf_dataset(cfg);
    for (std::int64_t i = 0; i < ds.data.numel(); ++i) REQUIRE(ds.data[i] == ds2.data[i]);
}
