#include <catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <set>

#include "chaosbench/diagnostics.hpp"
#include "helpers.hpp"

using namespace chaosbench;
using testutil::random_tensor;

namespace {

void zero_all(ParameterSet& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        Tensor& v = p.entry(i).value;
        for (std::int64_t j = 0; j < v.numel(); ++j) v[j] = 0.0;
    }
}

ModelSpec toy_spec(const std::string& tag, int D, int width, int depth) {
    return model_spec_for(tag, "toy", D, BenchArch{width, depth, 1, 2});
}

void install_linear_field(TemporalModel& m, const Eigen::MatrixXd& A) {
    const int D = static_cast<int>(A.rows());
    Tensor& W = m.params().at("f.W1");
    REQUIRE(W.dim(0) == D);
    REQUIRE(W.dim(1) == 2 * D);
    for (std::int64_t i = 0; i < W.numel(); ++i) W[i] = 0.0;
    for (int r = 0; r < D; ++r)
        for (int c = 0; c < D; ++c) W[r * 2 * D + c] = A(r, c);
    Tensor& b = m.params().at("f.b1");
    for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = 0.0;
}

NormStats identity_stats(std::int64_t D) {
    NormStats st;
    st.mu = Tensor::zeros({D});
    st.sigma = Tensor({D});
    for (std::int64_t i = 0; i < D; ++i) st.sigma[i] = 1.0;
    st.source_split = kTrainSplit;
    return st;
}

TrajectoryDataset constant_rows_dataset(const std::string& system, const Tensor& rows,
                                        std::int64_t T, double dt_model) {
    const std::int64_t N = rows.dim(0), D = rows.dim(1);
    TrajectoryDataset ds;
    ds.system = system;
    ds.dt_model = dt_model;
    ds.seed = 0;
    ds.data = Tensor({N, T, D});
    for (std::int64_t b = 0; b < N; ++b)
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t d = 0; d < D; ++d) ds.data[(b * T + t) * D + d] = rows[b * D + d];
    ds.regime.assign(static_cast<std::size_t>(N), -1);
    ds.split = assign_split(ds.regime, 0.5);
    ds.validate();
    return ds;
}

TrajectoryDataset random_dataset(std::int64_t N, std::int64_t T, std::int64_t D,
                                 std::uint64_t seed) {
    Rng rng(seed);
    TrajectoryDataset ds;
    ds.system = "ks";
    ds.dt_model = 1.0;
    ds.seed = seed;
    ds.data = Tensor({N, T, D});
    for (std::int64_t i = 0; i < ds.data.numel(); ++i) ds.data[i] = rng.uniform(-0.8, 0.8);
    ds.regime.assign(static_cast<std::size_t>(N), -1);
    ds.split = assign_split(ds.regime, 0.5);
    ds.validate();
    return ds;
}

// Central differences through a no-grad step with a freshly rebuilt
// teacher-forced context per evaluation.
Tensor fd_jacobian(const TemporalModel& m, const Tensor& traj_norm, std::int64_t t, double h) {
    const std::int64_t D = traj_norm.dim(1);
    const Tensor cond = chaosbench::detail::replicate_row(traj_norm, 0, 1);
    auto eval = [&](const Tensor& s) {
        RecState rs = chaosbench::detail::teacher_forced_context(m, traj_norm, t, 1);
        Tape tape(false);
        BoundParams bp = bind_params(tape, m.params());
        Var y = m.step(tape, bp, tape.constant(s), tape.constant(cond), rs);
        return tape.value(y);
    };
    Tensor J({D, D});
    for (std::int64_t c = 0; c < D; ++c) {
        Tensor sp = chaosbench::detail::replicate_row(traj_norm, t, 1);
        Tensor sm = sp;
        sp[c] += h;
        sm[c] -= h;
        const Tensor yp = eval(sp), ym = eval(sm);
        for (std::int64_t r = 0; r < D; ++r) J[r * D + c] = (yp[r] - ym[r]) / (2.0 * h);
    }
    return J;
}

double max_abs(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("operating point sampling") {
    auto ds = random_dataset(6, 12, 3, 31);
    const std::vector<std::int64_t> val = ds.indices_of_split(kValSplit);
    const std::set<std::int64_t> val_set(val.begin(), val.end());

    SECTION("points respect the receptive field and horizon") {
        const int r_f = 5;
        auto pts = sample_operating_points(ds, r_f, 300, 9);
        REQUIRE(pts.size() == 300);
        std::set<std::int64_t> seen_t;
        for (const auto& p : pts) {
            REQUIRE(val_set.count(p.traj) == 1);
            REQUIRE(p.t >= r_f - 1);
            REQUIRE(p.t <= ds.n_time() - 2);
            seen_t.insert(p.t);
        }
        REQUIRE(seen_t.size() > 1);
    }

    SECTION("deterministic in the seed") {
        auto a = sample_operating_points(ds, 1, 40, 17);
        auto b = sample_operating_points(ds, 1, 40, 17);
        auto c = sample_operating_points(ds, 1, 40, 18);
        bool same = true, differ = false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            same = same && a[i].traj == b[i].traj && a[i].t == b[i].t;
            differ = differ || a[i].traj != c[i].traj || a[i].t != c[i].t;
        }
        REQUIRE(same);
        REQUIRE(differ);
    }

    SECTION("contract violations") {
        REQUIRE_THROWS_AS(sample_operating_points(ds, 12, 10, 0), ContractError);
        REQUIRE_THROWS_AS(sample_operating_points(ds, 0, 10, 0), ContractError);
        REQUIRE_THROWS_AS(sample_operating_points(ds, 1, 0, 0), ContractError);
    }
}

TEST_CASE("perturbation directions are unit rows") {
    Tensor dirs = perturbation_directions(50, 7, 3);
    REQUIRE(dirs.dim(0) == 50);
    REQUIRE(dirs.dim(1) == 7);
    for (std::int64_t p = 0; p < 50; ++p) {
        double n2 = 0.0;
        for (std::int64_t d = 0; d < 7; ++d) n2 += dirs[p * 7 + d] * dirs[p * 7 + d];
        REQUIRE(std::sqrt(n2) == Catch::Approx(1.0).margin(1e-12));
    }
    Tensor again = perturbation_directions(50, 7, 3);
    for (std::int64_t i = 0; i < dirs.numel(); ++i) REQUIRE(dirs[i] == again[i]);
    REQUIRE_THROWS_AS(perturbation_directions(0, 7, 3), ContractError);
}

TEST_CASE("teacher-forced context matches the sequence path") {
    Rng rng(227);
    const std::int64_t T = 8, D = 3;
    Tensor traj({T, D});
    for (std::int64_t i = 0; i < traj.numel(); ++i) traj[i] = 0.5 * rng.uniform(-1.0, 1.0);

    auto check = [&](const TemporalModel& m) {
        Tape tape(false);
        BoundParams bp = bind_params(tape, m.params());
        Tensor u({1, T, 2 * D});
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t d = 0; d < D; ++d) {
                u[t * 2 * D + d] = traj[t * D + d];
                u[t * 2 * D + D + d] = traj[d];
            }
        const Tensor fs = tape.value(m.forward_sequence(tape, bp, tape.constant(u)));
        for (std::int64_t t : {std::int64_t(0), std::int64_t(3), T - 2}) {
            RecState rs = chaosbench::detail::teacher_forced_context(m, traj, t, 1);
            Tape t2(false);
            BoundParams bp2 = bind_params(t2, m.params());
            Var y = m.step(t2, bp2, t2.constant(chaosbench::detail::replicate_row(traj, t, 1)),
                           t2.constant(chaosbench::detail::replicate_row(traj, 0, 1)), rs);
            const Tensor& v = t2.value(y);
            for (std::int64_t d = 0; d < D; ++d)
                REQUIRE(v[d] == Catch::Approx(fs[t * D + d]).margin(1e-13));
        }
    };

    check(*build_model(toy_spec("LSTM", 3, 12, 2), 5));
    check(*build_model(toy_spec("TCN", 3, 12, 2), 6));
    check(*build_model(toy_spec("MLP", 3, 12, 2), 7));
}

TEST_CASE("one-step jacobian on closed forms") {
    Rng rng(229);
    const std::int64_t D = 3, T = 6;
    Tensor traj = random_tensor(rng, {T, D});

    SECTION("zero field gives the identity") {
        auto m = build_model(toy_spec("CoRD", 3, 0, 1), 7);
        zero_all(m->params());
        Tensor J = one_step_jacobian(*m, traj, 2);
        for (std::int64_t r = 0; r < D; ++r)
            for (std::int64_t c = 0; c < D; ++c) REQUIRE(J[r * D + c] == (r == c ? 1.0 : 0.0));
    }

    SECTION("linear field composes substeps exactly") {
        ModelSpec spec = toy_spec("CoRD", 3, 0, 1);
        REQUIRE(spec.substeps == 3);
        auto m = build_model(spec, 11);
        Eigen::MatrixXd A(D, D);
        for (int r = 0; r < D; ++r)
            for (int c = 0; c < D; ++c) A(r, c) = rng.uniform(-0.5, 0.5);
        install_linear_field(*m, A);
        Eigen::MatrixXd M = Eigen::MatrixXd::Identity(D, D) + (spec.dt / 3.0) * A;
        Eigen::MatrixXd want = M * M * M;
        Tensor J = one_step_jacobian(*m, traj, 2);
        for (std::int64_t r = 0; r < D; ++r)
            for (std::int64_t c = 0; c < D; ++c)
                REQUIRE(J[r * D + c] == Catch::Approx(want(r, c)).margin(1e-12));
    }

    SECTION("operating point contract") {
        auto tcn = build_model(toy_spec("TCN", 3, 8, 1), 3);
        REQUIRE(tcn->receptive_field() == 5);
        REQUIRE_THROWS_AS(one_step_jacobian(*tcn, traj, 3), ContractError);
        auto mlp = build_model(toy_spec("MLP", 3, 8, 1), 3);
        REQUIRE_THROWS_AS(one_step_jacobian(*mlp, traj, T - 1), ContractError);
        auto wide = build_model(toy_spec("MLP", 4, 8, 1), 3);
        REQUIRE_THROWS_AS(one_step_jacobian(*wide, traj, 2), ContractError);
    }
}

TEST_CASE("one-step jacobian matches finite differences") {
    Rng rng(233);
    const std::int64_t D = 3, T = 9;
    Tensor traj({T, D});
    for (std::int64_t i = 0; i < traj.numel(); ++i) traj[i] = 0.6 * rng.uniform(-1.0, 1.0);

    for (const std::string& tag : {"MLP", "LSTM", "TCN", "CoRD"}) {
        auto m = build_model(toy_spec(tag, 3, 10, 2), 41);
        const std::int64_t t = m->receptive_field() - 1 + 2;
        REQUIRE(t <= T - 2);
        Tensor J = one_step_jacobian(*m, traj, t);
        Tensor F = fd_jacobian(*m, traj, t, 1e-5);
        CAPTURE(tag, max_abs(J, F));
        REQUIRE(max_abs(J, F) < 1e-6);
    }

    SECTION("adaptive integrator within loose tolerance") {
        auto m = build_model(toy_spec("NeuralODE", 3, 10, 2), 43);
        Tensor J = one_step_jacobian(*m, traj, 2);
        REQUIRE(J.all_finite());
        Tensor F = fd_jacobian(*m, traj, 2, 1e-5);
        REQUIRE(max_abs(J, F) < 1e-4);
    }
}

TEST_CASE("spectral radius of diagnostic jacobians") {
    Rng rng(239);
    Tensor traj = random_tensor(rng, {4, 2});

    SECTION("identity map") {
        auto m = build_model(toy_spec("CoRD", 2, 0, 1), 7);
        zero_all(m->params());
        REQUIRE(spectral_radius(one_step_jacobian(*m, traj, 1)) == 1.0);
    }

    SECTION("diagonal map with a dominant negative eigenvalue") {
        ModelSpec spec = toy_spec("CoRD", 2, 0, 1);
        spec.substeps = 1;
        spec.dt = 1.0;
        auto m = build_model(spec, 7);
        Eigen::MatrixXd A(2, 2);
        A << -0.5, 0.0, 0.0, -3.0;  // one-step map diag(0.5, -2)
        install_linear_field(*m, A);
        Tensor J = one_step_jacobian(*m, traj, 1);
        REQUIRE(J[0] == Catch::Approx(0.5).margin(1e-15));
        REQUIRE(J[3] == Catch::Approx(-2.0).margin(1e-15));
        REQUIRE(spectral_radius(J) == Catch::Approx(2.0).margin(1e-12));
    }
}

TEST_CASE("relative one-step bias") {
    Rng rng(241);
    const std::int64_t D = 3, T = 8;
    Tensor rows({4, D});
    for (std::int64_t i = 0; i < rows.numel(); ++i) rows[i] = rng.uniform(0.5, 1.5);
    auto ds = constant_rows_dataset("ks", rows, T, 1.0);
    auto pts = sample_operating_points(ds, 1, 30, 13);
    const NormStats st = identity_stats(D);

    SECTION("perfect predictions floor at -12") {
        auto m = build_model(toy_spec("CoRD", 3, 0, 1), 7);
        zero_all(m->params());
        BiasResult b = relative_bias(*m, st, ds, pts);
        REQUIRE(b.samples.size() == 30);
        REQUIRE(b.flagged == 0);
        for (double s : b.samples) REQUIRE(s == 0.0);
        REQUIRE(b.mean_bias == 0.0);
        REQUIRE(b.log10_mean == Catch::Approx(-12.0).margin(1e-12));
        for (double s : b.log10_samples) REQUIRE(s == Catch::Approx(-12.0).margin(1e-12));
    }

    SECTION("one percent inflation reports 0.01") {
        ModelSpec spec = toy_spec("CoRD", 3, 0, 1);
        spec.substeps = 1;
        spec.dt = 1.0;
        auto m = build_model(spec, 7);
        Eigen::MatrixXd A = 0.01 * Eigen::MatrixXd::Identity(D, D);
        install_linear_field(*m, A);
        BiasResult b = relative_bias(*m, st, ds, pts);
        for (double s : b.samples) REQUIRE(s == Catch::Approx(0.01).margin(1e-8));
        REQUIRE(b.mean_bias == Catch::Approx(0.01).margin(1e-8));
        REQUIRE(b.log10_mean == Catch::Approx(-2.0).margin(1e-6));
    }

    SECTION("zero state and zero prediction guard to zero") {
        auto zero_ds = constant_rows_dataset("ks", Tensor::zeros({4, D}), T, 1.0);
        auto m = build_model(toy_spec("CoRD", 3, 0, 1), 7);
        zero_all(m->params());
        BiasResult b = relative_bias(*m, st, zero_ds, pts);
        for (double s : b.samples) REQUIRE(s == 0.0);
        REQUIRE(b.mean_bias == 0.0);
    }

    SECTION("non-finite predictions are flagged, not scored") {
        // Two substeps of gain ~1e308/3 overflow the normalized prediction.
        auto m = build_model(toy_spec("CoRD", 3, 0, 1), 7);
        install_linear_field(*m, 1e308 * Eigen::MatrixXd::Identity(D, D));
        BiasResult b = relative_bias(*m, st, ds, pts);
        REQUIRE(b.flagged == 30);
        REQUIRE(b.samples.empty());
        REQUIRE(b.mean_bias == 0.0);
    }
}

TEST_CASE("ftle measures per-step separation growth") {
    Rng rng(251);
    const std::int64_t D = 3, T = 12;
    Tensor rows({4, D});
    for (std::int64_t i = 0; i < rows.numel(); ++i) rows[i] = rng.uniform(-1.0, 1.0);
    auto ds = constant_rows_dataset("ks", rows, T, 1.0);
    const NormStats st = identity_stats(D);
    const std::int64_t v0 = ds.indices_of_split(kValSplit).front();
    Tensor dir = perturbation_directions(1, D, 5);

    auto scaled_model = [&](double gain) {
        ModelSpec spec = toy_spec("CoRD", 3, 0, 1);
        spec.substeps = 1;
        spec.dt = 1.0;
        auto m = build_model(spec, 7);
        install_linear_field(*m, (gain - 1.0) * Eigen::MatrixXd::Identity(D, D));
        return m;
    };

    SECTION("identity map has zero exponent") {
        auto m = scaled_model(1.0);
        zero_all(m->params());
        const double lam = ftle(*m, st, ds, {v0, 2}, dir.data(), 1e-3, 4);
        REQUIRE(lam == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("tenfold growth per step gives exponent one") {
        auto m = scaled_model(10.0);
        const double lam = ftle(*m, st, ds, {v0, 2}, dir.data(), 1e-3, 4);
        REQUIRE(lam == Catch::Approx(1.0).margin(1e-10));
    }

    SECTION("halving per step gives log10 of one half") {
        auto m = scaled_model(0.5);
        const double lam = ftle(*m, st, ds, {v0, 2}, dir.data(), 1e-3, 4);
        REQUIRE(lam == Catch::Approx(std::log10(0.5)).margin(1e-10));
    }

    SECTION("linear surrogate matches the matrix-power oracle") {
        ModelSpec spec = toy_spec("CoRD", 3, 0, 1);
        spec.substeps = 2;
        spec.dt = 0.7;
        auto m = build_model(spec, 11);
        Eigen::MatrixXd A(D, D);
        for (int r = 0; r < D; ++r)
            for (int c = 0; c < D; ++c) A(r, c) = rng.uniform(-0.3, 0.3);
        install_linear_field(*m, A);
        Eigen::MatrixXd Mstep = Eigen::MatrixXd::Identity(D, D) + 0.35 * A;
        Mstep = Mstep * Mstep;

        const int K = 5;
        const double eps = 1e-3;
        Eigen::VectorXd delta(D);
        for (std::int64_t d = 0; d < D; ++d) delta(d) = eps * dir[d];
        for (int k = 0; k < K; ++k) delta = Mstep * delta;
        const double want = std::log10(delta.norm() / eps) / K;
        const double lam = ftle(*m, st, ds, {v0, 2}, dir.data(), eps, K);
        REQUIRE(lam == Catch::Approx(want).margin(1e-10));
    }

    SECTION("horizon contract") {
        auto m = scaled_model(1.0);
        REQUIRE_THROWS_AS(ftle(*m, st, ds, {v0, T - 3}, dir.data(), 1e-3, 4), ContractError);
        REQUIRE_THROWS_AS(ftle(*m, st, ds, {v0, 2}, dir.data(), 0.0, 4), ContractError);
    }
}

TEST_CASE("median latent norm over validation snapshots") {
    Tensor rows({4, 3});
    const double vals[4][3] = {{9.0, 0.0, 0.0}, {8.0, 0.0, 0.0}, {3.0, 4.0, 0.0}, {3.0, 4.0, 12.0}};
    for (int b = 0; b < 4; ++b)
        for (int d = 0; d < 3; ++d) rows[b * 3 + d] = vals[b][d];
    auto ds = constant_rows_dataset("ks", rows, 5, 1.0);
    const auto val = ds.indices_of_split(kValSplit);
    REQUIRE(val.size() == 2);
    std::vector<double> norms;
    for (std::int64_t b : val) {
        double n2 = 0.0;
        for (int d = 0; d < 3; ++d) n2 += rows[b * 3 + d] * rows[b * 3 + d];
        norms.push_back(std::sqrt(n2));
    }
    const double want = 0.5 * (norms[0] + norms[1]);
    REQUIRE(median_latent_norm(ds) == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("snapshot statistics") {
    const std::int64_t n = 128;
    std::vector<double> u(n);
    for (std::int64_t i = 0; i < n; ++i)
        u[i] = 1.2 * std::sin(2.0 * M_PI * 3.0 * static_cast<double>(i) / n);
    REQUIRE(snapshot_statistic(u.data(), n, "ks") ==
            Catch::Approx(0.5 * 1.2 * 1.2).margin(1e-12));

    std::vector<double> w(64 * 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) w[y * 64 + x] = std::cos(2.0 * M_PI * 4.0 * y / 64.0);
    REQUIRE(snapshot_statistic(w.data(), 64 * 64, "kolmogorov") == Catch::Approx(0.25).margin(1e-12));

    std::vector<double> c(16, 1.75);
    REQUIRE(snapshot_statistic(c.data(), 16, "ks") == 0.0);
    REQUIRE(snapshot_statistic(c.data(), 16, "kolmogorov") ==
            Catch::Approx(0.5 * 1.75 * 1.75).margin(1e-15));
    REQUIRE_THROWS_AS(snapshot_statistic(c.data(), 16, "lorenz"), ContractError);
}

TEST_CASE("attractor clouds") {
    Rng rng(257);
    const std::int64_t D = 4, T = 6;
    AeSpec aspec;
    aspec.kind = "dense";
    aspec.input_dim = static_cast<int>(D);
    aspec.widths = {static_cast<int>(D)};
    aspec.latent = static_cast<int>(D);
    aspec.validate();
    Autoencoder ae(aspec, 1);
    auto ident = [&](const std::string& key) {
        Tensor& W = ae.params().at(key);
        for (std::int64_t i = 0; i < W.numel(); ++i) W[i] = 0.0;
        for (std::int64_t i = 0; i < D; ++i) W[i * D + i] = 1.0;
    };
    ident("enc.W1");
    ident("dec.W1");
    ae.freeze();

    Tensor rows({4, D});
    for (std::int64_t i = 0; i < rows.numel(); ++i) rows[i] = rng.uniform(-1.0, 1.0);
    auto ds = constant_rows_dataset("ks", rows, T, 1.0);
    const auto val = ds.indices_of_split(kValSplit);

    SECTION("reference cloud is the decoder image of the data") {
        AttractorCloud ref = reference_cloud(ae, ds);
        REQUIRE(ref.cloud.dim(0) == static_cast<std::int64_t>(val.size()) * T);
        REQUIRE(ref.cloud.dim(1) == D);
        REQUIRE(ref.n_diverged == 0);
        std::size_t r = 0;
        for (std::int64_t b : val)
            for (std::int64_t t = 0; t < T; ++t, ++r)
                for (std::int64_t d = 0; d < D; ++d)
                    REQUIRE(ref.cloud[static_cast<std::int64_t>(r) * D + d] ==
                            Catch::Approx(rows[b * D + d]).margin(1e-12));
        REQUIRE(ref.statistic.size() == r);
    }

    SECTION("identity model reproduces the reference cloud") {
        auto m = build_model(toy_spec("CoRD", static_cast<int>(D), 0, 1), 7);
        zero_all(m->params());
        AttractorCloud ref = reference_cloud(ae, ds);
        AttractorCloud mod = model_cloud(*m, identity_stats(D), ae, ds);
        REQUIRE(mod.cloud.dim(0) == ref.cloud.dim(0));
        REQUIRE(mod.n_diverged == 0);
        for (std::int64_t i = 0; i < ref.cloud.numel(); ++i)
            REQUIRE(mod.cloud[i] == Catch::Approx(ref.cloud[i]).margin(1e-12));
        for (std::size_t i = 0; i < ref.statistic.size(); ++i)
            REQUIRE(mod.statistic[i] == Catch::Approx(ref.statistic[i]).margin(1e-12));
    }

    SECTION("diverging rollouts keep only the finite prefix") {
        ModelSpec spec = toy_spec("CoRD", static_cast<int>(D), 0, 1);
        spec.substeps = 1;
        auto m = build_model(spec, 7);
        install_linear_field(*m, 1e200 * Eigen::MatrixXd::Identity(D, D));
        AttractorCloud mod = model_cloud(*m, identity_stats(D), ae, ds);
        REQUIRE(mod.n_diverged == static_cast<std::int64_t>(val.size()));
        REQUIRE(mod.cloud.dim(0) < static_cast<std::int64_t>(val.size()) * T);
        REQUIRE(mod.cloud.all_finite());
    }

    SECTION("width mismatch is rejected") {
        auto m = build_model(toy_spec("CoRD", 3, 0, 1), 7);
        REQUIRE_THROWS_AS(model_cloud(*m, identity_stats(3), ae, ds), ContractError);
    }
}

TEST_CASE("per-model diagnostics bundle") {
    auto ds = random_dataset(4, 14, 3, 37);
    auto m = build_model(toy_spec("CoRD", 3, 8, 1), 19);
    const NormStats st = compute_norm_stats(ds, kTrainSplit);

    DiagnosticsConfig cfg;
    cfg.n_points = 25;
    cfg.ftle_steps = 3;
    cfg.seed = 2;
    auto pts = sample_operating_points(ds, m->receptive_field(), cfg.n_points, cfg.seed);
    Tensor dirs = perturbation_directions(cfg.n_points, 3, cfg.seed);

    ModelDiagnostics d1 = run_model_diagnostics(*m, st, ds, pts, dirs, cfg);
    REQUIRE(d1.model == "CoRD");
    REQUIRE(d1.rho.size() + static_cast<std::size_t>(d1.flagged_jacobian) == pts.size());
    REQUIRE(d1.log10_bias.size() == pts.size());
    REQUIRE(d1.flagged_jacobian == 0);
    std::size_t with_room = 0;
    for (const auto& p : pts)
        if (p.t + cfg.ftle_steps <= ds.n_time() - 1) ++with_room;
    REQUIRE(d1.lambda.size() + static_cast<std::size_t>(d1.flagged_ftle) == with_room);
    REQUIRE(d1.eps_pert == Catch::Approx(1e-3 * median_latent_norm(ds)).margin(1e-15));
    for (double r : d1.rho) REQUIRE(std::isfinite(r));

    ModelDiagnostics d2 = run_model_diagnostics(*m, st, ds, pts, dirs, cfg);
    REQUIRE(d1.rho == d2.rho);
    REQUIRE(d1.lambda == d2.lambda);
    REQUIRE(d1.log10_bias == d2.log10_bias);

    nlohmann::json js = d1.summary_json();
    REQUIRE(js["model"] == "CoRD");
    REQUIRE(js["rho"].contains("median"));
    REQUIRE(js["log10_bias"].contains("q1"));
    REQUIRE(js["lambda"].contains("q3"));
    REQUIRE(js["flagged_jacobian"] == 0);

    SECTION("direction table must cover every point") {
        Tensor small = perturbation_directions(5, 3, 2);
        REQUIRE_THROWS_AS(run_model_diagnostics(*m, st, ds, pts, small, cfg), ContractError);
    }
}
