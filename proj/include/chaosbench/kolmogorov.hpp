#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "chaosbench/common.hpp"
#include "chaosbench/dataset.hpp"
#include "chaosbench/etdrk4.hpp"
#include "chaosbench/fft.hpp"
#include "chaosbench/ks.hpp"

namespace chaosbench {

struct KfConfig {
    int n_grid = 64;
    double reynolds = 35.0;
    int k_force = 4;
    double dt_int = 0.01;
    double dt_model = 0.75;
    std::int64_t n_snapshots = 41;
    double t_transient = 50.0;
    std::int64_t traj_per_regime = 200;
    std::uint64_t seed = 0;
    double blowup_abs = 1e6;
    int max_attempts = 50;
    double train_frac = 0.8;
};

// 2-D Kolmogorov flow in vorticity-streamfunction form on [0,2pi)^2:
//   w_t = -(u w_x + v w_y) + (1/Re) lap(w) + sin(k_f y),
// with u = psi_y, v = -psi_x and lap(psi) = -w. Pseudospectral with 2/3
// dealiasing; the constant forcing rides along in the nonlinear callback.
class KolmogorovSolver {
public:
    explicit KolmogorovSolver(int n = 64, double reynolds = 35.0, int k_force = 4,
                              double dt = 0.01)
        : n_(n), re_(reynolds), kf_(k_force), fft_(n, n) {
        const std::int64_t ns = fft_.n_spectral();
        kx_.resize(ns);
        ky_.resize(ns);
        k2_.resize(ns);
        std::vector<double> symbol(ns);
        for (int iy = 0; iy < n_; ++iy) {
            const double wy = (iy <= n_ / 2) ? iy : iy - n_;
            for (int ix = 0; ix < fft_.n_kx(); ++ix) {
                const std::int64_t idx = static_cast<std::int64_t>(iy) * fft_.n_kx() + ix;
                kx_[idx] = ix;
                ky_[idx] = wy;
                k2_[idx] = ix * ix + wy * wy;
                symbol[idx] = -k2_[idx] / re_;
            }
        }
        coeffs_ = etdrk4_coefficients(symbol, dt);
        cut_ = n_ / 3;

        std::vector<double> force(static_cast<std::size_t>(n_) * n_);
        for (int iy = 0; iy < n_; ++iy) {
            const double y = 6.28318530717958647692 * iy / n_;
            for (int ix = 0; ix < n_; ++ix) force[static_cast<std::size_t>(iy) * n_ + ix] = std::sin(kf_ * y);
        }
        fhat_.resize(ns);
        fft_.forward(force.data(), fhat_.data());
        dealias(fhat_);

        phys_a_.resize(static_cast<std::size_t>(n_) * n_);
        phys_b_.resize(static_cast<std::size_t>(n_) * n_);
        phys_c_.resize(static_cast<std::size_t>(n_) * n_);
        phys_d_.resize(static_cast<std::size_t>(n_) * n_);
        spec_a_.resize(ns);
        spec_b_.resize(ns);
    }

    int n_grid() const { return n_; }
    std::int64_t n_spectral() const { return fft_.n_spectral(); }
    double reynolds() const { return re_; }
    int k_force() const { return kf_; }

    std::vector<std::complex<double>> to_spectral(const double* w) {
        std::vector<std::complex<double>> s(fft_.n_spectral());
        fft_.forward(w, s.data());
        dealias(s);
        return s;
    }
    void to_physical(const std::vector<std::complex<double>>& s, double* w) {
        spec_a_ = s;
        fft_.inverse(spec_a_.data(), w);
    }

    void dealias(std::vector<std::complex<double>>& s) const {
        for (std::int64_t i = 0; i < fft_.n_spectral(); ++i)
            if (std::abs(kx_[i]) > cut_ || std::abs(ky_[i]) > cut_) s[i] = 0.0;
    }

    // psi_hat = w_hat / |k|^2 with the zero mode gauged to zero.
    std::vector<std::complex<double>> poisson_solve_spectral(
        const std::vector<std::complex<double>>& w) const {
        std::vector<std::complex<double>> psi(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) psi[i] = (k2_[i] > 0.0) ? w[i] / k2_[i] : 0.0;
        return psi;
    }

    // Normalized spectral L2 residual of lap(psi) + w.
    double poisson_residual(const std::vector<std::complex<double>>& w) const {
        const auto psi = poisson_solve_spectral(w);
        double sq = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const std::complex<double> r = -k2_[i] * psi[i] + w[i];
            sq += std::norm(r);
        }
        return std::sqrt(sq) / (static_cast<double>(n_) * n_);
    }

    void step(std::vector<std::complex<double>>& s) {
        etdrk4_step(s, coeffs_, [this](const std::vector<std::complex<double>>& in,
                                       std::vector<std::complex<double>>& out) {
            this->nonlinear(in, out);
        });
        for (const auto& c : s)
            if (!std::isfinite(c.real()) || !std::isfinite(c.imag()))
                throw NumericalError("KolmogorovSolver: spectral blow-up");
    }

private:
    void nonlinear(const std::vector<std::complex<double>>& in,
                   std::vector<std::complex<double>>& out) {
        const std::int64_t ns = fft_.n_spectral();
        std::vector<std::complex<double>> w(in);
        dealias(w);
        const auto psi = poisson_solve_spectral(w);
        const std::complex<double> im(0.0, 1.0);

        for (std::int64_t i = 0; i < ns; ++i) spec_a_[i] = im * ky_[i] * psi[i];  // u
        fft_.inverse(spec_a_.data(), phys_a_.data());
        for (std::int64_t i = 0; i < ns; ++i) spec_a_[i] = -im * kx_[i] * psi[i];  // v
        fft_.inverse(spec_a_.data(), phys_b_.data());
        for (std::int64_t i = 0; i < ns; ++i) spec_a_[i] = im * kx_[i] * w[i];  // w_x
        fft_.inverse(spec_a_.data(), phys_c_.data());
        for (std::int64_t i = 0; i < ns; ++i) spec_a_[i] = im * ky_[i] * w[i];  // w_y
        fft_.inverse(spec_a_.data(), phys_d_.data());

        const std::int64_t np = static_cast<std::int64_t>(n_) * n_;
        for (std::int64_t i = 0; i < np; ++i)
            phys_a_[i] = phys_a_[i] * phys_c_[i] + phys_b_[i] * phys_d_[i];
        fft_.forward(phys_a_.data(), spec_b_.data());
        dealias(spec_b_);
        for (std::int64_t i = 0; i < ns; ++i) out[i] = -spec_b_[i] + fhat_[i];
    }

    int n_;
    double re_;
    int kf_;
    Fft2D fft_;
    std::vector<double> kx_, ky_, k2_;
    Etdrk4Coeffs coeffs_;
    int cut_;
    std::vector<std::complex<double>> fhat_, spec_a_, spec_b_;
    std::vector<double> phys_a_, phys_b_, phys_c_, phys_d_;
};

// Physical-space Poisson solve for tests and diagnostics.
inline std::vector<double> poisson_solve(const std::vector<double>& w, int n) {
    Fft2D fft(n, n);
    std::vector<std::complex<double>> wh(fft.n_spectral());
    fft.forward(w.data(), wh.data());
    for (int iy = 0; iy < n; ++iy) {
        const double wy = (iy <= n / 2) ? iy : iy - n;
        for (int ix = 0; ix < fft.n_kx(); ++ix) {
            const double k2 = ix * ix + wy * wy;
            auto& c = wh[static_cast<std::int64_t>(iy) * fft.n_kx() + ix];
            c = (k2 > 0.0) ? c / k2 : 0.0;
        }
    }
    std::vector<double> psi(static_cast<std::size_t>(n) * n);
    fft.inverse(wh.data(), psi.data());
    return psi;
}

// 2-D filtered Fourier IC: modes with |kx|,|ky| <= max_mode (excluding the
// mean) get random Gaussian coefficients; Hermitian symmetry is enforced on
// the kx=0 column so the field is real; above-cutoff content is exactly zero.
inline std::vector<double> sample_kf_ic(int regime, Rng& rng, KolmogorovSolver& solver) {
    const IcRegime p = ic_regime_params(regime);
    const int n = solver.n_grid();
    Fft2D fft(n, n);
    std::vector<std::complex<double>> s(fft.n_spectral(), 0.0);
    auto idx = [&](int iy, int ix) { return static_cast<std::int64_t>(iy) * fft.n_kx() + ix; };
    for (int ky = 1; ky <= p.max_mode; ++ky) {
        const std::complex<double> c(rng.gaussian(), rng.gaussian());
        s[idx(ky, 0)] = c;
        s[idx(n - ky, 0)] = std::conj(c);
    }
    for (int kx = 1; kx <= p.max_mode; ++kx)
        for (int ky = -p.max_mode; ky <= p.max_mode; ++ky) {
            const int iy = (ky + n) % n;
            s[idx(iy, kx)] = {rng.gaussian(), rng.gaussian()};
        }
    std::vector<double> w(static_cast<std::size_t>(n) * n);
    fft.inverse(s.data(), w.data());
    double rms = 0.0;
    for (double x : w) rms += x * x;
    rms = std::sqrt(rms / (static_cast<double>(n) * n));
    const double target = rng.uniform(p.rms_lo, p.rms_hi);
    const double sc = (rms > 0.0) ? target / rms : 0.0;
    for (double& x : w) x *= sc;
    return w;
}

inline TrajectoryDataset generate_kf_dataset(const KfConfig& cfg) {
    KolmogorovSolver solver(cfg.n_grid, cfg.reynolds, cfg.k_force, cfg.dt_int);
    const std::int64_t n_traj = 3 * cfg.traj_per_regime;
    const std::int64_t transient_steps = static_cast<std::int64_t>(std::llround(cfg.t_transient / cfg.dt_int));
    const std::int64_t stride = static_cast<std::int64_t>(std::llround(cfg.dt_model / cfg.dt_int));
    const std::int64_t d = static_cast<std::int64_t>(cfg.n_grid) * cfg.n_grid;

    TrajectoryDataset ds;
    ds.system = "kolmogorov";
    ds.dt_model = cfg.dt_model;
    ds.seed = cfg.seed;
    ds.data = Tensor({n_traj, cfg.n_snapshots, d});
    ds.regime.resize(static_cast<std::size_t>(n_traj));

    constexpr std::uint64_t kAttemptStride = 4096;
    for (std::int64_t i = 0; i < n_traj; ++i) {
        const int regime = static_cast<int>(i / cfg.traj_per_regime);
        ds.regime[static_cast<std::size_t>(i)] = regime;
        bool ok = false;
        for (int attempt = 0; attempt < cfg.max_attempts && !ok; ++attempt) {
            Rng rng(cfg.seed, static_cast<std::uint64_t>(i) * kAttemptStride +
                                  static_cast<std::uint64_t>(attempt));
            std::vector<double> w = sample_kf_ic(regime, rng, solver);
            auto s = solver.to_spectral(w.data());
            try {
                for (std::int64_t st = 0; st < transient_steps; ++st) solver.step(s);
                double* out = ds.data.data() + i * cfg.n_snapshots * d;
                solver.to_physical(s, out);
                bool bounded = true;
                for (std::int64_t snap = 1; snap < cfg.n_snapshots && bounded; ++snap) {
                    for (std::int64_t st = 0; st < stride; ++st) solver.step(s);
                    solver.to_physical(s, out + snap * d);
                    for (std::int64_t x = 0; x < d; ++x)
                        if (std::abs(out[snap * d + x]) > cfg.blowup_abs) bounded = false;
                }
                ok = bounded;
            } catch (const NumericalError&) {
                ok = false;
            }
        }
        if (!ok)
            throw NumericalError("generate_kf_dataset: resampling budget exceeded for trajectory " +
                                 std::to_string(i));
    }
    ds.split = assign_split(ds.regime, cfg.train_frac);
    ds.validate();
    return ds;
}

}  // namespace chaosbench
