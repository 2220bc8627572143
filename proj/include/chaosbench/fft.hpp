#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include <fftw3.h>

#include "chaosbench/common.hpp"

namespace chaosbench {

// Thin FFTW wrappers, real-to-complex halves, inverse normalized by 1/N.
// Plans use FFTW_ESTIMATE so planning is deterministic; fine at these sizes.
class Fft1D {
public:
    explicit Fft1D(int n) : n_(n) {
        if (n < 2) throw ConfigError("Fft1D: n must be >= 2");
        real_ = fftw_alloc_real(static_cast<std::size_t>(n));
        cplx_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
        fwd_ = fftw_plan_dft_r2c_1d(n, real_, cplx_, FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft_c2r_1d(n, cplx_, real_, FFTW_ESTIMATE);
    }
    ~Fft1D() {
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
        fftw_free(real_);
        fftw_free(cplx_);
    }
    Fft1D(const Fft1D&) = delete;
    Fft1D& operator=(const Fft1D&) = delete;

    int n() const { return n_; }
    int n_modes() const { return n_ / 2 + 1; }

    void forward(const double* in, std::complex<double>* out) {
        for (int i = 0; i < n_; ++i) real_[i] = in[i];
        fftw_execute(fwd_);
        for (int i = 0; i < n_modes(); ++i) out[i] = {cplx_[i][0], cplx_[i][1]};
    }
    void inverse(const std::complex<double>* in, double* out) {
        for (int i = 0; i < n_modes(); ++i) {
            cplx_[i][0] = in[i].real();
            cplx_[i][1] = in[i].imag();
        }
        fftw_execute(bwd_);
        const double s = 1.0 / n_;
        for (int i = 0; i < n_; ++i) out[i] = real_[i] * s;
    }

private:
    int n_;
    double* real_;
    fftw_complex* cplx_;
    fftw_plan fwd_, bwd_;
};

// 2-D transforms on an ny x nx grid, row-major physical layout [y][x].
// Spectral layout is [ky][kx] with kx halved (nx/2+1 columns).
class Fft2D {
public:
    Fft2D(int ny, int nx) : ny_(ny), nx_(nx) {
        if (ny < 2 || nx < 2) throw ConfigError("Fft2D: grid must be >= 2 in each dim");
        real_ = fftw_alloc_real(static_cast<std::size_t>(ny) * nx);
        cplx_ = fftw_alloc_complex(static_cast<std::size_t>(ny) * (nx / 2 + 1));
        fwd_ = fftw_plan_dft_r2c_2d(ny, nx, real_, cplx_, FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft_c2r_2d(ny, nx, cplx_, real_, FFTW_ESTIMATE);
    }
    ~Fft2D() {
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
        fftw_free(real_);
        fftw_free(cplx_);
    }
    Fft2D(const Fft2D&) = delete;
    Fft2D& operator=(const Fft2D&) = delete;

    int ny() const { return ny_; }
    int nx() const { return nx_; }
    int n_kx() const { return nx_ / 2 + 1; }
    std::int64_t n_spectral() const { return static_cast<std::int64_t>(ny_) * n_kx(); }

    void forward(const double* in, std::complex<double>* out) {
        const std::int64_t n = static_cast<std::int64_t>(ny_) * nx_;
        for (std::int64_t i = 0; i < n; ++i) real_[i] = in[i];
        fftw_execute(fwd_);
        for (std::int64_t i = 0; i < n_spectral(); ++i) out[i] = {cplx_[i][0], cplx_[i][1]};
    }
    void inverse(const std::complex<double>* in, double* out) {
        for (std::int64_t i = 0; i < n_spectral(); ++i) {
            cplx_[i][0] = in[i].real();
            cplx_[i][1] = in[i].imag();
        }
        fftw_execute(bwd_);
        const double s = 1.0 / (static_cast<double>(ny_) * nx_);
        const std::int64_t n = static_cast<std::int64_t>(ny_) * nx_;
        for (std::int64_t i = 0; i < n; ++i) out[i] = real_[i] * s;
    }

private:
    int ny_, nx_;
    double* real_;
    fftw_complex* cplx_;
    fftw_plan fwd_, bwd_;
};

}  // namespace chaosbench
