#include <catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <vector>

#include "chaosbench/common.hpp"
#include "chaosbench/eig.hpp"
#include "chaosbench/stats.hpp"

using namespace chaosbench;

namespace {

double oracle_rho(const Tensor& J) {
    const std::int64_t n = J.dim(0);
    Eigen::MatrixXd A(n, n);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) A(i, j) = J[i * n + j];
    Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
    double r = 0.0;
    for (std::int64_t i = 0; i < n; ++i) r = std::max(r, std::abs(es.eigenvalues()[i]));
    return r;
}

Tensor random_matrix(Rng& rng, std::int64_t n, double scale = 1.0) {
    Tensor J({n, n});
    for (std::int64_t i = 0; i < n * n; ++i) J[i] = scale * rng.uniform(-1, 1);
    return J;
}

}  // namespace

TEST_CASE("spectral radius: identities") {
    Tensor I({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    REQUIRE(spectral_radius(I) == Catch::Approx(1.0).margin(1e-10));
    Tensor D({2, 2}, {0.5, 0, 0, -2});
    REQUIRE(spectral_radius(D) == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("spectral radius: complex pairs, defective and equal-modulus cases") {
    SECTION("scaled rotation has rho = scale") {
        const double c = std::cos(0.7), s = std::sin(0.7);
        Tensor J({3, 3}, {1.3 * c, -1.3 * s, 0, 1.3 * s, 1.3 * c, 0, 0, 0, 0.2});
        REQUIRE(spectral_radius(J) == Catch::Approx(1.3).epsilon(1e-8));
    }
    SECTION("nilpotent matrix has rho 0") {
        Tensor J({2, 2}, {0, 1, 0, 0});
        REQUIRE(spectral_radius(J) == Catch::Approx(0.0).margin(1e-10));
        Tensor J3({3, 3}, {0, 1, 5, 0, 0, 2, 0, 0, 0});
        REQUIRE(spectral_radius(J3) == Catch::Approx(0.0).margin(1e-6));
    }
    SECTION("jordan block") {
        Tensor J({3, 3}, {1, 1, 0, 0, 1, 1, 0, 0, 1});
        REQUIRE(spectral_radius(J) == Catch::Approx(1.0).epsilon(1e-7));
    }
    SECTION("two rotations of equal modulus, different angles") {
        const double r = 0.9;
        auto put_rot = [&](Tensor& J, int off, double ang) {
            const std::int64_t n = J.dim(0);
            J[(off + 0) * n + off + 0] = r * std::cos(ang);
            J[(off + 0) * n + off + 1] = -r * std::sin(ang);
            J[(off + 1) * n + off + 0] = r * std::sin(ang);
            J[(off + 1) * n + off + 1] = r * std::cos(ang);
        };
        Tensor J = Tensor::zeros({4, 4});
        put_rot(J, 0, 0.3);
        put_rot(J, 2, 1.1);
        REQUIRE(spectral_radius(J) == Catch::Approx(r).epsilon(1e-6));
    }
}

TEST_CASE("spectral radius: random matrices against the dense eigensolver") {
    Rng rng(101, 0);
    for (int trial = 0; trial < 40; ++trial) {
        const std::int64_t n = 5;
        Tensor J = random_matrix(rng, n);
        const double ours = spectral_radius(J);
        const double ref = oracle_rho(J);
        REQUIRE(ours == Catch::Approx(ref).epsilon(1e-8));
    }
    for (int trial = 0; trial < 5; ++trial) {
        Tensor J = random_matrix(rng, 24, 0.3);
        REQUIRE(spectral_radius(J) == Catch::Approx(oracle_rho(J)).epsilon(1e-8));
    }
}

TEST_CASE("percentile: linear interpolation convention") {
    REQUIRE(percentile({1, 2, 9}, 90) == Catch::Approx(7.6).margin(1e-12));
    REQUIRE(percentile({1, 2, 9}, 50) == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(percentile({5}, 90) == 5.0);
    REQUIRE(percentile({3, 1}, 0) == 1.0);
    REQUIRE(percentile({3, 1}, 100) == 3.0);
    REQUIRE(percentile({4, 2, 6, 8}, 33.3333333333) ==
            Catch::Approx(2 + (4 - 2) * 0.999999999999).margin(1e-6));
    REQUIRE_THROWS_AS(percentile({}, 50), ContractError);
}

TEST_CASE("pca: line, isotropy and eigensolver oracle") {
    SECTION("points on a line put all variance on component 1") {
        Rng rng(102, 0);
        Tensor cloud({50, 3});
        for (int i = 0; i < 50; ++i) {
            const double t = rng.uniform(-2, 2);
            cloud[i * 3 + 0] = 1.0 + 2.0 * t;
            cloud[i * 3 + 1] = -0.5 + 1.0 * t;
            cloud[i * 3 + 2] = 0.25 - 2.0 * t;
        }
        Pca2 p = pca_fit(cloud);
        REQUIRE(p.eigenvalues[0] > 0.0);
        REQUIRE(p.eigenvalues[1] < 1e-9 * p.eigenvalues[0]);
        const double expected_dir[3] = {2.0 / 3.0, 1.0 / 3.0, -2.0 / 3.0};
        double dot = 0.0;
        for (int j = 0; j < 3; ++j) dot += p.components[j] * expected_dir[j];
        REQUIRE(std::abs(std::abs(dot) - 1.0) < 1e-8);
    }
    SECTION("isotropic gaussian gives near-equal eigenvalues") {
        Rng rng(103, 0);
        Tensor cloud({4000, 2});
        for (std::int64_t i = 0; i < cloud.numel(); ++i) cloud[i] = rng.gaussian();
        Pca2 p = pca_fit(cloud);
        REQUIRE(p.eigenvalues[0] == Catch::Approx(1.0).margin(0.1));
        REQUIRE(p.eigenvalues[1] == Catch::Approx(1.0).margin(0.1));
    }
    SECTION("random cloud top-2 subspace matches the dense eigensolver") {
        Rng rng(104, 0);
        const std::int64_t m = 300, d = 6;
        Tensor cloud({m, d});
        // anisotropic: distinct spectrum
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < d; ++j)
                cloud[i * d + j] = rng.gaussian() * (1.0 + 0.8 * j) + 0.3 * j;
        Pca2 p = pca_fit(cloud);

        Eigen::MatrixXd X(m, d);
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < d; ++j) X(i, j) = cloud[i * d + j];
        Eigen::RowVectorXd mu = X.colwise().mean();
        Eigen::MatrixXd C = (X.rowwise() - mu).transpose() * (X.rowwise() - mu) / double(m);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
        Eigen::VectorXd v1 = es.eigenvectors().col(d - 1);
        Eigen::VectorXd v2 = es.eigenvectors().col(d - 2);

        REQUIRE(p.eigenvalues[0] == Catch::Approx(es.eigenvalues()[d - 1]).epsilon(1e-7));
        REQUIRE(p.eigenvalues[1] == Catch::Approx(es.eigenvalues()[d - 2]).epsilon(1e-6));
        double d1 = 0.0, d2 = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            d1 += p.components[j] * v1[j];
            d2 += p.components[d + j] * v2[j];
        }
        REQUIRE(std::abs(std::abs(d1) - 1.0) < 1e-7);
        REQUIRE(std::abs(std::abs(d2) - 1.0) < 1e-6);
    }
    SECTION("projection of the mean is the origin") {
        Rng rng(105, 0);
        Tensor cloud({40, 3});
        for (std::int64_t i = 0; i < cloud.numel(); ++i) cloud[i] = rng.uniform(0, 5);
        Pca2 p = pca_fit(cloud);
        Tensor mean_pt({1, 3});
        for (int j = 0; j < 3; ++j) mean_pt[j] = p.mean[j];
        Tensor proj = pca_project(mean_pt, p);
        REQUIRE(std::abs(proj[0]) < 1e-10);
        REQUIRE(std::abs(proj[1]) < 1e-10);
    }
}

TEST_CASE("kde: symmetry, bump and normalization") {
    SECTION("symmetric samples give a symmetric curve") {
        std::vector<double> samples = {-2, -1, -0.5, 0.5, 1, 2};
        std::vector<double> grid, mirror;
        for (int i = -50; i <= 50; ++i) grid.push_back(0.1 * i);
        auto f = kde_1d(samples, grid);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const std::size_t j = grid.size() - 1 - i;
            REQUIRE(std::abs(f[i] - f[j]) < 1e-10);
        }
    }
    SECTION("repeated value gives a bump at that value") {
        std::vector<double> samples(10, 3.0);
        std::vector<double> grid = {2.0, 2.9, 3.0, 3.1, 4.0};
        auto f = kde_1d(samples, grid);
        REQUIRE(f[2] > f[1]);
        REQUIRE(f[2] > f[3]);
        REQUIRE(f[2] > 0.0);
    }
    SECTION("density integrates to 1") {
        Rng rng(106, 0);
        std::vector<double> samples;
        for (int i = 0; i < 200; ++i) samples.push_back(rng.gaussian());
        std::vector<double> grid;
        const double dx = 0.01;
        for (double x = -8; x <= 8; x += dx) grid.push_back(x);
        auto f = kde_1d(samples, grid);
        double integral = 0.0;
        for (std::size_t i = 0; i + 1 < f.size(); ++i) integral += 0.5 * (f[i] + f[i + 1]) * dx;
        REQUIRE(integral == Catch::Approx(1.0).margin(1e-3));
    }
}
