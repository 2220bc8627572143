#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "chaosbench/common.hpp"
#include "chaosbench/dataset.hpp"
#include "chaosbench/etdrk4.hpp"
#include "chaosbench/fft.hpp"

namespace chaosbench {

// Regime bands for the filtered-Fourier initial conditions, shared by the KS
// and Kolmogorov samplers: max active mode and RMS amplitude range.
struct IcRegime {
    int max_mode;
    double rms_lo, rms_hi;
};

inline IcRegime ic_regime_params(int regime) {
    switch (regime) {
        case 0: return {3, 0.1, 0.4};
        case 1: return {5, 0.4, 0.8};
        case 2: return {7, 0.8, 1.2};
        default: throw ConfigError("ic regime must be 0, 1 or 2");
    }
}

struct KsConfig {
    int n_x = 128;
    double domain = 22.0;
    double dt_int = 0.25;
    int snapshot_stride = 3;       // dt_model = stride * dt_int = 0.75
    std::int64_t n_snapshots = 41;
    double t_transient = 50.0;
    std::int64_t traj_per_regime = 200;
    std::uint64_t seed = 0;
    double blowup_abs = 1e6;
    int max_attempts = 50;
    double train_frac = 0.8;
};

// u_t + u u_x + u_xx + u_xxxx = 0 on [0, L) periodic. Linear symbol in
// Fourier space is k^2 - k^4; the nonlinear term -1/2 (u^2)_x is evaluated
// pseudospectrally with 2/3 dealiasing.
class KsSolver {
public:
    explicit KsSolver(int n_x = 128, double domain = 22.0, double dt = 0.25)
        : n_(n_x), L_(domain), fft_(n_x) {
        const double two_pi = 6.28318530717958647692;
        k_.resize(fft_.n_modes());
        for (int i = 0; i < fft_.n_modes(); ++i) k_[i] = two_pi * i / L_;
        std::vector<double> symbol(k_.size());
        for (std::size_t i = 0; i < k_.size(); ++i)
            symbol[i] = k_[i] * k_[i] - k_[i] * k_[i] * k_[i] * k_[i];
        coeffs_ = etdrk4_coefficients(symbol, dt);
        dealias_cut_ = n_ / 3;
        buf_u_.resize(n_);
        buf_sq_.resize(n_);
        nonlinear_enabled = true;
    }

    bool nonlinear_enabled;

    int n_x() const { return n_; }
    int n_modes() const { return fft_.n_modes(); }
    const std::vector<double>& wavenumbers() const { return k_; }

    std::vector<std::complex<double>> to_spectral(const double* u) {
        std::vector<std::complex<double>> s(fft_.n_modes());
        fft_.forward(u, s.data());
        dealias(s);
        return s;
    }
    void to_physical(const std::vector<std::complex<double>>& s, double* u) {
        fft_.inverse(s.data(), u);
    }

    void dealias(std::vector<std::complex<double>>& s) const {
        for (int i = dealias_cut_ + 1; i < fft_.n_modes(); ++i) s[i] = 0.0;
    }

    void step(std::vector<std::complex<double>>& s) {
        etdrk4_step(s, coeffs_, [this](const std::vector<std::complex<double>>& in,
                                       std::vector<std::complex<double>>& out) {
            this->nonlinear(in, out);
        });
        for (const auto& c : s)
            if (!std::isfinite(c.real()) || !std::isfinite(c.imag()))
                throw NumericalError("KsSolver: spectral blow-up");
    }

private:
    void nonlinear(const std::vector<std::complex<double>>& in,
                   std::vector<std::complex<double>>& out) {
        if (!nonlinear_enabled) {
            for (auto& c : out) c = 0.0;
            return;
        }
        std::vector<std::complex<double>> tmp(in);
        dealias(tmp);
        fft_.inverse(tmp.data(), buf_u_.data());
        for (int i = 0; i < n_; ++i) buf_sq_[i] = buf_u_[i] * buf_u_[i];
        fft_.forward(buf_sq_.data(), out.data());
        const std::complex<double> im(0.0, 1.0);
        for (int i = 0; i < fft_.n_modes(); ++i) out[i] *= -0.5 * im * k_[i];
        dealias(out);
    }

    int n_;
    double L_;
    Fft1D fft_;
    std::vector<double> k_;
    Etdrk4Coeffs coeffs_;
    int dealias_cut_;
    std::vector<double> buf_u_, buf_sq_;
};

// Low-pass filtered random Fourier field: active modes 1..max_mode get
// complex Gaussian coefficients, everything above is exactly zero, and the
// field is rescaled to a target RMS drawn from the regime band. Mean-free by
// construction (mode 0 stays zero).
inline std::vector<double> sample_ks_ic(int regime, Rng& rng, KsSolver& solver) {
    const IcRegime p = ic_regime_params(regime);
    std::vector<std::complex<double>> s(solver.n_modes(), 0.0);
    for (int m = 1; m <= p.max_mode; ++m) s[m] = {rng.gaussian(), rng.gaussian()};
    std::vector<double> u(solver.n_x());
    solver.to_physical(s, u.data());
    double rms = 0.0;
    for (double x : u) rms += x * x;
    rms = std::sqrt(rms / solver.n_x());
    const double target = rng.uniform(p.rms_lo, p.rms_hi);
    const double sc = (rms > 0.0) ? target / rms : 0.0;
    for (double& x : u) x *= sc;
    return u;
}

inline TrajectoryDataset generate_ks_dataset(const KsConfig& cfg) {
    KsSolver solver(cfg.n_x, cfg.domain, cfg.dt_int);
    const std::int64_t n_traj = 3 * cfg.traj_per_regime;
    const std::int64_t transient_steps = static_cast<std::int64_t>(std::llround(cfg.t_transient / cfg.dt_int));

    TrajectoryDataset ds;
    ds.system = "ks";
    ds.dt_model = cfg.dt_int * cfg.snapshot_stride;
    ds.seed = cfg.seed;
    ds.data = Tensor({n_traj, cfg.n_snapshots, cfg.n_x});
    ds.regime.resize(static_cast<std::size_t>(n_traj));

    constexpr std::uint64_t kAttemptStride = 4096;
    for (std::int64_t i = 0; i < n_traj; ++i) {
        const int regime = static_cast<int>(i / cfg.traj_per_regime);
        ds.regime[static_cast<std::size_t>(i)] = regime;
        bool ok = false;
        for (int attempt = 0; attempt < cfg.max_attempts && !ok; ++attempt) {
            Rng rng(cfg.seed, static_cast<std::uint64_t>(i) * kAttemptStride +
                                  static_cast<std::uint64_t>(attempt));
            std::vector<double> u = sample_ks_ic(regime, rng, solver);
            auto s = solver.to_spectral(u.data());
            try {
                for (std::int64_t st = 0; st < transient_steps; ++st) solver.step(s);
                double* out = ds.data.data() + i * cfg.n_snapshots * cfg.n_x;
                solver.to_physical(s, out);
                bool bounded = true;
                for (std::int64_t snap = 1; snap < cfg.n_snapshots && bounded; ++snap) {
                    for (int st = 0; st < cfg.snapshot_stride; ++st) solver.step(s);
                    solver.to_physical(s, out + snap * cfg.n_x);
                    for (int x = 0; x < cfg.n_x; ++x)
                        if (std::abs(out[snap * cfg.n_x + x]) > cfg.blowup_abs) bounded = false;
                }
                ok = bounded;
            } catch (const NumericalError&) {
                ok = false;
            }
        }
        if (!ok)
            throw NumericalError("generate_ks_dataset: resampling budget exceeded for trajectory " +
                                 std::to_string(i));
    }
    ds.split = assign_split(ds.regime, cfg.train_frac);
    ds.validate();
    return ds;
}

}  // namespace chaosbench
