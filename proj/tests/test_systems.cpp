#include <catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <filesystem>

#include "chaosbench/common.hpp"
#include "chaosbench/dataset.hpp"
#include "chaosbench/double_pendulum.hpp"

using namespace chaosbench;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent route: mass-matrix Lagrangian form solved with a QR
// factorization instead of the closed-form expressions in the implementation.
std::array<double, 2> dp_alpha_oracle(const std::array<double, 4>& s, double g) {
    const double d = s[0] - s[1];
    Eigen::Matrix2d M;
    M << 2.0, std::cos(d), std::cos(d), 1.0;
    Eigen::Vector2d rhs;
    rhs << -s[3] * s[3] * std::sin(d) - 2.0 * g * std::sin(s[0]),
        s[2] * s[2] * std::sin(d) - g * std::sin(s[1]);
    Eigen::Vector2d a = M.colPivHouseholderQr().solve(rhs);
    return {a[0], a[1]};
}

std::array<double, 4> decode_state(const double* enc) {
    return {std::atan2(enc[0], enc[1]), std::atan2(enc[2], enc[3]), enc[4], enc[5]};
}

}  // namespace

TEST_CASE("rk4: trivial and exponential oracles") {
    SECTION("zero derivative is the identity") {
        auto f = [](const std::array<double, 2>&) { return std::array<double, 2>{0.0, 0.0}; };
        std::array<double, 2> y = {1.5, -2.5};
        auto out = rk4_step(f, y, 0.3);
        REQUIRE(out[0] == 1.5);
        REQUIRE(out[1] == -2.5);
    }
    SECTION("constant derivative advances by exactly c*dt") {
        auto f = [](const std::array<double, 1>&) { return std::array<double, 1>{3.0}; };
        auto out = rk4_step(f, std::array<double, 1>{1.0}, 0.25);
        REQUIRE(out[0] == 1.0 + 3.0 * 0.25);
    }
    SECTION("f(x)=x over dt=0.1 matches exp(0.1)") {
        auto f = [](const std::array<double, 1>& y) { return std::array<double, 1>{y[0]}; };
        auto out = rk4_step(f, std::array<double, 1>{1.0}, 0.1);
        REQUIRE(std::abs(out[0] - std::exp(0.1)) < 1e-7);
        REQUIRE(out[0] == Catch::Approx(1.10517083).margin(5e-8));
    }
    SECTION("non-finite derivative throws") {
        auto f = [](const std::array<double, 1>&) {
            return std::array<double, 1>{std::nan("")};
        };
        REQUIRE_THROWS_AS(rk4_step(f, std::array<double, 1>{1.0}, 0.1), NumericalError);
    }
}

TEST_CASE("double pendulum: equilibria and symbolic oracle") {
    DoublePendulum sys;
    SECTION("hanging equilibrium is stationary") {
        auto d = sys.derivatives({0, 0, 0, 0});
        for (double x : d) REQUIRE(x == 0.0);
    }
    SECTION("inverted equilibrium is stationary") {
        auto d = sys.derivatives({kPi, kPi, 0, 0});
        for (double x : d) REQUIRE(std::abs(x) < 1e-12);
    }
    SECTION("(pi/2, 0, 0, 0) matches the Lagrangian mass-matrix solve") {
        const std::array<double, 4> s = {kPi / 2, 0, 0, 0};
        auto d = sys.derivatives(s);
        auto a = dp_alpha_oracle(s, sys.g);
        REQUIRE(std::abs(d[2] - a[0]) < 1e-10);
        REQUIRE(std::abs(d[3] - a[1]) < 1e-10);
        REQUIRE(std::abs(d[2] - (-sys.g)) < 1e-12);
        REQUIRE(std::abs(d[3]) < 1e-12);
    }
    SECTION("random states match the mass-matrix oracle") {
        Rng rng(11, 0);
        for (int i = 0; i < 50; ++i) {
            std::array<double, 4> s = {rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi),
                                       rng.uniform(-6, 6), rng.uniform(-6, 6)};
            auto d = sys.derivatives(s);
            auto a = dp_alpha_oracle(s, sys.g);
            REQUIRE(d[0] == s[2]);
            REQUIRE(d[1] == s[3]);
            REQUIRE(std::abs(d[2] - a[0]) < 1e-10);
            REQUIRE(std::abs(d[3] - a[1]) < 1e-10);
        }
    }
}

TEST_CASE("double pendulum: energy") {
    DoublePendulum sys;
    SECTION("hanging rest energy is -3g") {
        REQUIRE(sys.energy({0, 0, 0, 0}) == Catch::Approx(-3.0 * sys.g).margin(1e-12));
    }
    SECTION("inverted rest energy is +3g") {
        REQUIRE(sys.energy({kPi, kPi, 0, 0}) == Catch::Approx(3.0 * sys.g).margin(1e-12));
    }
    SECTION("energy conserved to 1e-6 relative over 1 s at dt=0.005") {
        std::array<double, 4> s = {1.0, -0.5, 2.0, 1.0};
        const double e0 = sys.energy(s);
        auto f = [&sys](const std::array<double, 4>& y) { return sys.derivatives(y); };
        double worst = 0.0;
        for (int i = 0; i < 200; ++i) {
            s = rk4_step(f, s, 0.005);
            worst = std::max(worst, std::abs(sys.energy(s) - e0) / std::abs(e0));
        }
        REQUIRE(worst < 1e-6);
    }
}

TEST_CASE("double pendulum: rk4 endpoint error scales with slope 4") {
    DoublePendulum sys;
    auto f = [&sys](const std::array<double, 4>& y) { return sys.derivatives(y); };
    auto endpoint = [&](double dt) {
        std::array<double, 4> s = {kPi / 2, 0.1, 0.0, 0.0};
        const int steps = static_cast<int>(std::llround(1.0 / dt));
        for (int i = 0; i < steps; ++i) s = rk4_step(f, s, dt);
        return s;
    };
    const auto ref = endpoint(1e-4);
    const std::array<double, 3> dts = {0.01, 0.005, 0.0025};
    std::array<double, 3> errs{};
    for (int i = 0; i < 3; ++i) {
        const auto e = endpoint(dts[i]);
        double n = 0.0;
        for (int k = 0; k < 4; ++k) n += (e[k] - ref[k]) * (e[k] - ref[k]);
        errs[i] = std::sqrt(n);
    }
    // least-squares slope of log err vs log dt
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < 3; ++i) {
        const double x = std::log(dts[i]), y = std::log(errs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double slope = (3 * sxy - sx * sy) / (3 * sxx - sx * sx);
    CAPTURE(errs[0], errs[1], errs[2], slope);
    REQUIRE(slope == Catch::Approx(4.0).margin(0.3));
}

TEST_CASE("double pendulum dataset: construction, determinism, energy drift") {
    DpConfig cfg;
    cfg.n_traj = 20;
    cfg.seed = 77;

    TrajectoryDataset ds = generate_dp_dataset(cfg);
    REQUIRE(ds.n_traj() == 20);
    REQUIRE(ds.n_time() == 201);
    REQUIRE(ds.state_dim() == 6);

    SECTION("every snapshot satisfies sin^2+cos^2=1 per joint to 1e-12") {
        for (std::int64_t i = 0; i < ds.n_traj(); ++i)
            for (std::int64_t t = 0; t < ds.n_time(); ++t) {
                const double* e = ds.data.data() + (i * ds.n_time() + t) * 6;
                REQUIRE(std::abs(e[0] * e[0] + e[1] * e[1] - 1.0) < 1e-12);
                REQUIRE(std::abs(e[2] * e[2] + e[3] * e[3] - 1.0) < 1e-12);
            }
    }

    SECTION("accepted trajectories drift less than 1e-4 in relative energy") {
        DoublePendulum sys;
        for (std::int64_t i = 0; i < ds.n_traj(); ++i) {
            const auto s0 = decode_state(ds.data.data() + i * ds.n_time() * 6);
            const double e0 = sys.energy(s0);
            const double scale = std::max(std::abs(e0), 3.0 * sys.g);
            for (std::int64_t t = 1; t < ds.n_time(); ++t) {
                const auto st = decode_state(ds.data.data() + (i * ds.n_time() + t) * 6);
                REQUIRE(std::abs(sys.energy(st) - e0) / scale < 1e-4);
            }
        }
    }

    SECTION("same seed reproduces the dataset bit for bit") {
        TrajectoryDataset ds2 = generate_dp_dataset(cfg);
        REQUIRE(ds2.data.numel() == ds.data.numel());
        for (std::int64_t i = 0; i < ds.data.numel(); ++i) REQUIRE(ds.data[i] == ds2.data[i]);
    }

    SECTION("split is 80/20 by count") {
        std::int64_t tr = 0, va = 0;
        for (int s : ds.split) (s == 0 ? tr : va)++;
        REQUIRE(tr == 16);
        REQUIRE(va == 4);
    }

    SECTION("dataset container round-trips") {
        const auto path = std::filesystem::temp_directory_path() / "cb_dp_ds.bin";
        save_dataset(path, ds);
        TrajectoryDataset r = load_dataset(path);
        REQUIRE(r.system == ds.system);
        REQUIRE(r.dt_model == ds.dt_model);
        REQUIRE(r.split == ds.split);
        REQUIRE(r.regime == ds.regime);
        for (std::int64_t i = 0; i < ds.data.numel(); ++i) REQUIRE(r.data[i] == ds.data[i]);
        std::filesystem::remove(path);
    }
}

TEST_CASE("assign_split stratifies per regime block") {
    std::vector<int> regime;
    for (int g = 0; g < 3; ++g)
        for (int i = 0; i < 10; ++i) regime.push_back(g);
    auto split = assign_split(regime, 0.8);
    for (int g = 0; g < 3; ++g) {
        int tr = 0;
        for (int i = 0; i < 10; ++i) tr += (split[g * 10 + i] == 0);
        REQUIRE(tr == 8);
    }
}
