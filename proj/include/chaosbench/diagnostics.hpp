#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "chaosbench/autoencoders.hpp"
#include "chaosbench/common.hpp"
#include "chaosbench/dataset.hpp"
#include "chaosbench/eig.hpp"
#include "chaosbench/evaluation.hpp"
#include "chaosbench/models.hpp"
#include "chaosbench/stats.hpp"
#include "chaosbench/tensor.hpp"
#include "chaosbench/training.hpp"

namespace chaosbench {

// ---------------------------------------------------------------------------
// Operating points and shared perturbation directions
// ---------------------------------------------------------------------------

// A (trajectory, time) location on a ground-truth latent trajectory. Every
// model is probed on the same list so comparisons are paired.
struct OperatingPoint {
    std::int64_t traj = 0;
    std::int64_t t = 0;
};

// Uniform samples over validation trajectories and t in [r_f - 1, N_t - 2],
// with r_f the widest receptive field among the compared models.
inline std::vector<OperatingPoint> sample_operating_points(const TrajectoryDataset& ds, int r_f,
                                                           int n_points, std::uint64_t seed) {
    ds.validate();
    if (r_f < 1) throw ContractError("sample_operating_points: receptive field must be >= 1");
    if (n_points < 1) throw ContractError("sample_operating_points: need at least one point");
    const std::int64_t t_lo = r_f - 1, t_hi = ds.n_time() - 2;
    if (t_hi < t_lo)
        throw ContractError("sample_operating_points: horizon too short for the receptive field");
    const std::vector<std::int64_t> val = ds.indices_of_split(kValSplit);
    if (val.empty()) throw ContractError("sample_operating_points: empty validation split");

    Rng rng(seed, fnv1a64("diagnostics.points"));
    std::vector<OperatingPoint> pts(static_cast<std::size_t>(n_points));
    for (auto& p : pts) {
        const auto vi = std::min<std::int64_t>(
            static_cast<std::int64_t>(rng.uniform01() * static_cast<double>(val.size())),
            static_cast<std::int64_t>(val.size()) - 1);
        const auto ti = std::min<std::int64_t>(
            static_cast<std::int64_t>(rng.uniform01() * static_cast<double>(t_hi - t_lo + 1)),
            t_hi - t_lo);
        p.traj = val[static_cast<std::size_t>(vi)];
        p.t = t_lo + ti;
    }
    return pts;
}

// One unit-norm direction per operating point, shared across models.
inline Tensor perturbation_directions(int n_points, std::int64_t D, std::uint64_t seed) {
    if (n_points < 1 || D < 1) throw ContractError("perturbation_directions: empty request");
    Rng rng(seed, fnv1a64("diagnostics.directions"));
    Tensor dirs({n_points, D});
    for (std::int64_t i = 0; i < dirs.numel(); ++i) dirs[i] = rng.gaussian();
    for (std::int64_t p = 0; p < n_points; ++p) {
        double n2 = 0.0;
        for (std::int64_t d = 0; d < D; ++d) n2 += dirs[p * D + d] * dirs[p * D + d];
        if (n2 <= 0.0) {
            dirs[p * D] = 1.0;
            n2 = 1.0;
        }
        const double inv = 1.0 / std::sqrt(n2);
        for (std::int64_t d = 0; d < D; ++d) dirs[p * D + d] *= inv;
    }
    return dirs;
}

namespace detail {

// Ground-truth trajectory in the model's normalized coordinates, (T, D).
inline Tensor normalized_traj(const TrajectoryDataset& ds, const NormStats& stats,
                              std::int64_t traj) {
    const std::int64_t T = ds.n_time(), D = ds.state_dim();
    if (stats.mu.numel() != D) throw ContractError("normalized_traj: stats width mismatch");
    Tensor out({T, D});
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t d = 0; d < D; ++d)
            out[t * D + d] = (ds.data[(traj * T + t) * D + d] - stats.mu[d]) / stats.sigma[d];
    return out;
}

inline Tensor replicate_row(const Tensor& traj_norm, std::int64_t t, std::int64_t rows) {
    const std::int64_t D = traj_norm.dim(1);
    Tensor out({rows, D});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t d = 0; d < D; ++d) out[r * D + d] = traj_norm[t * D + d];
    return out;
}

// Architecture-consistent context at time t, built only from ground truth:
// the recurrent state after teacher-forced steps over z_0 .. z_{t-1} (for the
// TCN this leaves exactly the last r_f - 1 true inputs in the window). The
// point is replicated `rows` times.
inline RecState teacher_forced_context(const TemporalModel& m, const Tensor& traj_norm,
                                       std::int64_t t, std::int64_t rows) {
    RecState rs = m.initial_state(rows);
    if (m.recurrent_kind() == RecurrentKind::None) return rs;
    const Tensor cond = replicate_row(traj_norm, 0, rows);
    for (std::int64_t k = 0; k < t; ++k) {
        Tape tape(false);
        BoundParams bp = bind_params(tape, m.params());
        m.step(tape, bp, tape.constant(replicate_row(traj_norm, k, rows)), tape.constant(cond),
               rs);
    }
    return rs;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// One-step Jacobian and spectral radius
// ---------------------------------------------------------------------------

// Exact Jacobian of the one-step map with respect to the current state only;
// conditioning and any recurrent context stay fixed. The operating point is
// replicated into D batch rows and a single identity-seeded backward pass
// extracts all rows of J at once.
inline Tensor one_step_jacobian(const TemporalModel& m, const Tensor& traj_norm, std::int64_t t) {
    const std::int64_t D = traj_norm.dim(1);
    if (m.spec().state_dim != D) throw ContractError("one_step_jacobian: width mismatch");
    if (t < m.receptive_field() - 1 || t > traj_norm.dim(0) - 2)
        throw ContractError("one_step_jacobian: operating point outside the valid range");

    RecState rs = detail::teacher_forced_context(m, traj_norm, t, D);
    Tensor s_rep = detail::replicate_row(traj_norm, t, D);
    Tensor c_rep = detail::replicate_row(traj_norm, 0, D);

    Tape tape(true);
    Var s = tape.leaf(&s_rep, true);
    BoundParams bp = bind_params(tape, m.params());
    Var y = m.step(tape, bp, s, tape.constant(std::move(c_rep)), rs);

    Tensor seed = Tensor::zeros({D, D});
    for (std::int64_t i = 0; i < D; ++i) seed[i * D + i] = 1.0;
    tape.backward(y, std::move(seed));
    return tape.grad_of(s);
}

// ---------------------------------------------------------------------------
// Relative one-step bias
// ---------------------------------------------------------------------------

inline double log10_floored(double v) { return std::log10(std::max(v, 1e-12)); }

struct BiasResult {
    std::vector<double> samples;        // relative raw-space error per point
    std::vector<double> log10_samples;  // floored at -12
    double mean_bias = 0.0;
    double log10_mean = -12.0;
    int flagged = 0;  // points whose prediction went non-finite
};

// E over operating points of |z_hat_raw(t+1) - z_raw(t+1)| / (|z_raw(t+1)| + eps),
// predictions made in normalized coordinates and mapped back before scoring.
inline BiasResult relative_bias(const TemporalModel& m, const NormStats& stats,
                                const TrajectoryDataset& ds,
                                const std::vector<OperatingPoint>& pts, double eps = 1e-8) {
    const std::int64_t T = ds.n_time(), D = ds.state_dim();
    BiasResult out;
    std::map<std::int64_t, Tensor> cache;
    double acc = 0.0;
    for (const OperatingPoint& p : pts) {
        if (p.t < 0 || p.t + 1 >= T) throw ContractError("relative_bias: point outside horizon");
        auto it = cache.find(p.traj);
        if (it == cache.end())
            it = cache.emplace(p.traj, detail::normalized_traj(ds, stats, p.traj)).first;
        const Tensor& traj_norm = it->second;

        RecState rs = detail::teacher_forced_context(m, traj_norm, p.t, 1);
        Tape tape(false);
        BoundParams bp = bind_params(tape, m.params());
        Var y = m.step(tape, bp, tape.constant(detail::replicate_row(traj_norm, p.t, 1)),
                       tape.constant(detail::replicate_row(traj_norm, 0, 1)), rs);
        const Tensor& pred = tape.value(y);
        if (!pred.all_finite()) {
            ++out.flagged;
            continue;
        }
        double err2 = 0.0, ref2 = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            const double raw_pred = pred[d] * stats.sigma[d] + stats.mu[d];
            const double raw_true = ds.data[(p.traj * T + p.t + 1) * D + d];
            err2 += (raw_pred - raw_true) * (raw_pred - raw_true);
            ref2 += raw_true * raw_true;
        }
        const double sample = std::sqrt(err2) / (std::sqrt(ref2) + eps);
        if (!std::isfinite(sample)) {
            ++out.flagged;
            continue;
        }
        out.samples.push_back(sample);
        out.log10_samples.push_back(log10_floored(sample));
        acc += sample;
    }
    if (!out.samples.empty()) out.mean_bias = acc / static_cast<double>(out.samples.size());
    out.log10_mean = log10_floored(out.mean_bias);
    return out;
}

// ---------------------------------------------------------------------------
// Finite-time Lyapunov exponent
// ---------------------------------------------------------------------------

// Lambda_K = (1/K) log10(|separation after K closed-loop steps| / eps_pert),
// with the perturbation applied to the raw latent state and both streams
// sharing the ground-truth conditioning and initial context. Returns NaN when
// either stream goes non-finite.
inline double ftle(const TemporalModel& m, const NormStats& stats, const TrajectoryDataset& ds,
                   const OperatingPoint& pt, const double* dir, double eps_pert, int K) {
    const std::int64_t T = ds.n_time(), D = ds.state_dim();
    if (eps_pert <= 0.0) throw ContractError("ftle: perturbation magnitude must be positive");
    if (K < 1) throw ContractError("ftle: need at least one step");
    if (pt.t < 0 || pt.t + K > T - 1)
        throw ContractError("ftle: t + K exceeds the trajectory horizon");

    const Tensor traj_norm = detail::normalized_traj(ds, stats, pt.traj);
    RecState rs_ref = detail::teacher_forced_context(m, traj_norm, pt.t, 1);
    RecState rs_pert = rs_ref;
    const Tensor cond = detail::replicate_row(traj_norm, 0, 1);

    Tensor s_ref = detail::replicate_row(traj_norm, pt.t, 1);
    Tensor s_pert({1, D});
    for (std::int64_t d = 0; d < D; ++d) {
        const double raw = ds.data[(pt.traj * T + pt.t) * D + d] + eps_pert * dir[d];
        s_pert[d] = (raw - stats.mu[d]) / stats.sigma[d];
    }

    auto advance = [&](Tensor& s, RecState& rs) {
        Tape tape(false);
        BoundParams bp = bind_params(tape, m.params());
        Var y = m.step(tape, bp, tape.constant(s), tape.constant(cond), rs);
        const Tensor& v = tape.value(y);
        if (!v.all_finite()) return false;
        s = v;
        return true;
    };
    for (int k = 0; k < K; ++k)
        if (!advance(s_ref, rs_ref) || !advance(s_pert, rs_pert))
            return std::numeric_limits<double>::quiet_NaN();

    double sep2 = 0.0;
    for (std::int64_t d = 0; d < D; ++d) {
        const double e = (s_pert[d] - s_ref[d]) * stats.sigma[d];
        sep2 += e * e;
    }
    const double sep = std::max(std::sqrt(sep2), 1e-300);
    return std::log10(sep / eps_pert) / static_cast<double>(K);
}

// Median L2 norm of the raw validation latents; the FTLE perturbation scale
// is a small fraction of this.
inline double median_latent_norm(const TrajectoryDataset& ds) {
    const std::int64_t T = ds.n_time(), D = ds.state_dim();
    const std::vector<std::int64_t> val = ds.indices_of_split(kValSplit);
    if (val.empty()) throw ContractError("median_latent_norm: empty validation split");
    std::vector<double> norms;
    norms.reserve(static_cast<std::size_t>(val.size()) * static_cast<std::size_t>(T));
    for (std::int64_t b : val)
        for (std::int64_t t = 0; t < T; ++t) {
            double n2 = 0.0;
            for (std::int64_t d = 0; d < D; ++d) {
                const double v = ds.data[(b * T + t) * D + d];
                n2 += v * v;
            }
            norms.push_back(std::sqrt(n2));
        }
    return median_of(norms);
}

// ---------------------------------------------------------------------------
// Attractor clouds
// ---------------------------------------------------------------------------

// Per-snapshot scalar: spatial variance for KS, mean 0.5 omega^2 for
// Kolmogorov flow.
inline double snapshot_statistic(const double* row, std::int64_t D, const std::string& system) {
    if (system == "ks") {
        double mu = 0.0;
        for (std::int64_t d = 0; d < D; ++d) mu += row[d];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (std::int64_t d = 0; d < D; ++d) var += (row[d] - mu) * (row[d] - mu);
        return var / static_cast<double>(D);
    }
    if (system == "kolmogorov") {
        double acc = 0.0;
        for (std::int64_t d = 0; d < D; ++d) acc += 0.5 * row[d] * row[d];
        return acc / static_cast<double>(D);
    }
    throw ContractError("snapshot_statistic: unknown system " + system);
}

struct AttractorCloud {
    Tensor cloud;  // (M, D_phys) decoded snapshots
    std::vector<double> statistic;
    std::int64_t n_diverged = 0;  // rollouts cut short by non-finite states
};

namespace detail {

inline void append_cloud(AttractorCloud& out, const Tensor& block, const std::string& system,
                         std::vector<double>& rows) {
    const std::int64_t n = block.dim(0), D = block.dim(1);
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t d = 0; d < D; ++d) rows.push_back(block[r * D + d]);
        out.statistic.push_back(snapshot_statistic(block.data() + r * D, D, system));
    }
}

}  // namespace detail

// Reference cloud: autoencoder reconstructions of the validation snapshots,
// so model clouds are compared against the decoder's own image of the data.
inline AttractorCloud reference_cloud(const Autoencoder& ae, const TrajectoryDataset& ds_phys) {
    ds_phys.validate();
    const std::int64_t T = ds_phys.n_time(), D = ds_phys.state_dim();
    const std::vector<std::int64_t> val = ds_phys.indices_of_split(kValSplit);
    if (val.empty()) throw ContractError("reference_cloud: empty validation split");
    AttractorCloud out;
    std::vector<double> rows;
    for (std::int64_t b : val) {
        Tensor traj({T, D});
        for (std::int64_t i = 0; i < T * D; ++i) traj[i] = ds_phys.data[b * T * D + i];
        detail::append_cloud(out, ae.reconstruct(traj), ds_phys.system, rows);
    }
    out.cloud = Tensor({static_cast<std::int64_t>(out.statistic.size()), D});
    std::copy(rows.begin(), rows.end(), out.cloud.data());
    return out;
}

// Model cloud: decoded closed-loop rollout snapshots from every validation
// initial condition; rows after a divergence are dropped.
inline AttractorCloud model_cloud(const TemporalModel& m, const NormStats& stats,
                                  const Autoencoder& ae, const TrajectoryDataset& ds_phys) {
    ds_phys.validate();
    if (ae.latent_dim() != m.spec().state_dim)
        throw ContractError("model_cloud: model width does not match the latent dimension");
    const std::int64_t T = ds_phys.n_time(), D = ds_phys.state_dim();
    const std::vector<std::int64_t> val = ds_phys.indices_of_split(kValSplit);
    if (val.empty()) throw ContractError("model_cloud: empty validation split");
    AttractorCloud out;
    std::vector<double> rows;
    for (std::int64_t b : val) {
        Tensor row0({1, D});
        for (std::int64_t d = 0; d < D; ++d) row0[d] = ds_phys.data[b * T * D + d];
        const Tensor z0 = ae.encode(row0);
        Rollout ro = rollout(m, stats, z0.data(), T);
        const std::int64_t keep = ro.diverged ? ro.first_bad : T;
        if (ro.diverged) ++out.n_diverged;
        Tensor latents({keep, static_cast<std::int64_t>(ae.latent_dim())});
        for (std::int64_t i = 0; i < latents.numel(); ++i) latents[i] = ro.states[i];
        detail::append_cloud(out, ae.decode(latents), ds_phys.system, rows);
    }
    out.cloud = Tensor({static_cast<std::int64_t>(out.statistic.size()), D});
    std::copy(rows.begin(), rows.end(), out.cloud.data());
    return out;
}

// ---------------------------------------------------------------------------
// Per-model diagnostics bundle
// ---------------------------------------------------------------------------

struct DiagnosticsConfig {
    int n_points = 200;
    int ftle_steps = 10;       // K
    double bias_eps = 1e-8;    // denominator guard
    double pert_rel = 1e-3;    // eps_pert = pert_rel * median raw-latent norm
    std::uint64_t seed = 0;

    void validate() const {
        if (n_points < 1) throw ConfigError("diagnose: n_points must be >= 1");
        if (ftle_steps < 1) throw ConfigError("diagnose: ftle_steps must be >= 1");
        if (bias_eps <= 0.0) throw ConfigError("diagnose: bias_eps must be positive");
        if (pert_rel <= 0.0) throw ConfigError("diagnose: pert_rel must be positive");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"n_points", n_points}, {"ftle_steps", ftle_steps},
                              {"bias_eps", bias_eps}, {"pert_rel", pert_rel}, {"seed", seed}};
    }

    static DiagnosticsConfig from_json(const nlohmann::json& j) {
        DiagnosticsConfig c;
        c.n_points = j.value("n_points", c.n_points);
        c.ftle_steps = j.value("ftle_steps", c.ftle_steps);
        c.bias_eps = j.value("bias_eps", c.bias_eps);
        c.pert_rel = j.value("pert_rel", c.pert_rel);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

struct ModelDiagnostics {
    std::string model;
    std::vector<double> rho;            // spectral radii at unflagged points
    std::vector<double> log10_bias;     // per-point samples, floored at -12
    std::vector<double> lambda;         // FTLE samples (points with room for K steps)
    double mean_bias = 0.0;
    double eps_pert = 0.0;
    int flagged_jacobian = 0, flagged_ftle = 0;

    nlohmann::json summary_json() const {
        auto block = [](const std::vector<double>& v) -> nlohmann::json {
            if (v.empty()) return nullptr;
            return nlohmann::json{{"median", percentile(v, 50.0)},
                                  {"q1", percentile(v, 25.0)},
                                  {"q3", percentile(v, 75.0)},
                                  {"n", v.size()}};
        };
        return nlohmann::json{{"model", model},
                              {"rho", block(rho)},
                              {"log10_bias", block(log10_bias)},
                              {"lambda", block(lambda)},
                              {"mean_bias", mean_bias},
                              {"log10_mean_bias", log10_floored(mean_bias)},
                              {"eps_pert", eps_pert},
                              {"flagged_jacobian", flagged_jacobian},
                              {"flagged_ftle", flagged_ftle}};
    }
};

// All three local diagnostics for one model over a shared point list. FTLE
// uses the subset of points with K steps of room, the same subset for every
// model given the same list.
inline ModelDiagnostics run_model_diagnostics(const TemporalModel& m, const NormStats& stats,
                                              const TrajectoryDataset& ds,
                                              const std::vector<OperatingPoint>& pts,
                                              const Tensor& dirs, const DiagnosticsConfig& cfg) {
    cfg.validate();
    const std::int64_t D = ds.state_dim();
    if (dirs.dim(0) < static_cast<std::int64_t>(pts.size()) || dirs.dim(1) != D)
        throw ContractError("run_model_diagnostics: one unit direction per point required");

    ModelDiagnostics out;
    out.model = m.spec().tag;
    out.eps_pert = cfg.pert_rel * median_latent_norm(ds);

    BiasResult bias = relative_bias(m, stats, ds, pts, cfg.bias_eps);
    out.log10_bias = bias.log10_samples;
    out.mean_bias = bias.mean_bias;

    std::map<std::int64_t, Tensor> cache;
    for (std::size_t p = 0; p < pts.size(); ++p) {
        auto it = cache.find(pts[p].traj);
        if (it == cache.end())
            it = cache.emplace(pts[p].traj, detail::normalized_traj(ds, stats, pts[p].traj)).first;
        Tensor J = one_step_jacobian(m, it->second, pts[p].t);
        if (J.all_finite())
            out.rho.push_back(spectral_radius(J));
        else
            ++out.flagged_jacobian;

        if (pts[p].t + cfg.ftle_steps <= ds.n_time() - 1) {
            const double lam = ftle(m, stats, ds, pts[p], dirs.data() + static_cast<std::int64_t>(p) * D,
                                    out.eps_pert, cfg.ftle_steps);
            if (std::isfinite(lam))
                out.lambda.push_back(lam);
            else
                ++out.flagged_ftle;
        }
    }
    return out;
}

}  // namespace chaosbench
