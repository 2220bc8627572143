#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "chaosbench/common.hpp"
#include "chaosbench/tensor.hpp"

namespace chaosbench {

// Percentile with linear interpolation between order statistics: rank
// p/100*(n-1), fractional part interpolated. {1,2,9} at P90 gives 7.6.
inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) throw ContractError("percentile: empty sample");
    std::sort(v.begin(), v.end());
    if (v.size() == 1) return v[0];
    const double rank = p / 100.0 * static_cast<double>(v.size() - 1);
    const double lo = std::floor(rank);
    const std::size_t i = static_cast<std::size_t>(lo);
    if (i + 1 >= v.size()) return v.back();
    const double frac = rank - lo;
    return v[i] + frac * (v[i + 1] - v[i]);
}

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw ContractError("mean: empty sample");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double median_of(const std::vector<double>& v) { return percentile(v, 50.0); }

// Two-component PCA of a cloud X (M rows, D columns). Covariance-free power
// iteration with orthogonal deflation for the second component; deterministic
// sign convention (largest-magnitude entry made positive).
struct Pca2 {
    Tensor mean;        // (D)
    Tensor components;  // (2, D), rows unit-norm
    double eigenvalues[2] = {0.0, 0.0};
};

inline Pca2 pca_fit(const Tensor& cloud, int max_iter = 2000, double tol = 1e-11) {
    if (cloud.ndim() != 2) throw ShapeError("pca_fit: cloud must be (M, D)");
    const std::int64_t m = cloud.dim(0), d = cloud.dim(1);
    if (m < 3) throw ContractError("pca_fit: need at least 3 points");
    Pca2 out;
    out.mean = Tensor::zeros({d});
    ConstMatMap X = cloud.cmat(m, d);
    Eigen::RowVectorXd mu = X.colwise().mean();
    for (std::int64_t j = 0; j < d; ++j) out.mean[j] = mu[j];

    out.components = Tensor::zeros({2, d});
    Eigen::VectorXd prev_v1;
    for (int comp = 0; comp < 2; ++comp) {
        Eigen::VectorXd v(d);
        for (std::int64_t j = 0; j < d; ++j) v[j] = std::cos(0.7 * (j + 1) * (comp + 1)) + 0.1;
        if (comp == 1) v -= prev_v1 * (prev_v1.dot(v));
        double vn = v.norm();
        if (vn == 0.0) v[0] = 1.0, vn = 1.0;
        v /= vn;
        double lambda = 0.0;
        for (int it = 0; it < max_iter; ++it) {
            // w = Cov * v without forming the covariance
            Eigen::VectorXd t = (X * v) - Eigen::VectorXd::Constant(m, mu.dot(v));
            Eigen::VectorXd w = (X.transpose() * t - mu.transpose() * t.sum()) / static_cast<double>(m);
            if (comp == 1) w -= prev_v1 * (prev_v1.dot(w));
            const double l = v.dot(w);
            const double wn = w.norm();
            if (wn <= 1e-30) {
                lambda = 0.0;
                break;
            }
            v = w / wn;
            if (std::abs(l - lambda) <= tol * std::max(std::abs(l), 1e-300) && it > 2) {
                lambda = l;
                break;
            }
            lambda = l;
        }
        // sign convention
        std::int64_t arg = 0;
        for (std::int64_t j = 1; j < d; ++j)
            if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
        if (v[arg] < 0.0) v = -v;
        for (std::int64_t j = 0; j < d; ++j) out.components[comp * d + j] = v[j];
        out.eigenvalues[comp] = std::max(lambda, 0.0);
        if (comp == 0) prev_v1 = v;
    }
    return out;
}

// Project a cloud onto the fitted 2-D basis; returns (M, 2).
inline Tensor pca_project(const Tensor& cloud, const Pca2& basis) {
    if (cloud.ndim() != 2 || cloud.dim(1) != basis.mean.numel())
        throw ShapeError("pca_project: dimension mismatch");
    const std::int64_t m = cloud.dim(0), d = cloud.dim(1);
    Tensor out({m, 2});
    for (std::int64_t i = 0; i < m; ++i)
        for (int c = 0; c < 2; ++c) {
            double s = 0.0;
            for (std::int64_t j = 0; j < d; ++j)
                s += (cloud[i * d + j] - basis.mean[j]) * basis.components[c * d + j];
            out[i * 2 + c] = s;
        }
    return out;
}

// Gaussian KDE with Scott-rule bandwidth and a floor for degenerate samples.
inline std::vector<double> kde_1d(const std::vector<double>& samples,
                                  const std::vector<double>& grid) {
    if (samples.size() < 2) throw ContractError("kde_1d: need at least 2 samples");
    const double n = static_cast<double>(samples.size());
    double mu = 0.0;
    for (double x : samples) mu += x / n;
    double var = 0.0;
    for (double x : samples) var += (x - mu) * (x - mu) / (n - 1.0);
    double h = std::sqrt(var) * std::pow(n, -0.2);
    if (!(h > 1e-8)) h = 1e-8;
    const double norm = 1.0 / (n * h * std::sqrt(2.0 * 3.14159265358979323846));
    std::vector<double> out(grid.size(), 0.0);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double s = 0.0;
        for (double x : samples) {
            const double u = (grid[g] - x) / h;
            s += std::exp(-0.5 * u * u);
        }
        out[g] = norm * s;
    }
    return out;
}

}  // namespace chaosbench
