#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "chaosbench/autoencoders.hpp"
#include "chaosbench/common.hpp"
#include "chaosbench/dataset.hpp"
#include "chaosbench/double_pendulum.hpp"
#include "chaosbench/models.hpp"
#include "chaosbench/stats.hpp"
#include "chaosbench/tensor.hpp"
#include "chaosbench/training.hpp"

namespace chaosbench {

// ---------------------------------------------------------------------------
// Closed-loop rollout
// ---------------------------------------------------------------------------

// Dataset-space closed-loop prediction. Row 0 is the initial state verbatim;
// each later row is one recursive model step with the conditioning fixed at
// the normalized initial state. A non-finite step marks the rollout diverged
// at that index; the remaining rows repeat the last finite state so the
// tensor stays usable.
struct Rollout {
    Tensor states;  // (T, D)
    bool diverged = false;
    std::int64_t first_bad = -1;
};

inline Rollout rollout(const TemporalModel& model, const NormStats& stats, const double* s0,
                       std::int64_t T) {
    const std::int64_t D = model.spec().state_dim;
    if (stats.mu.numel() != D) throw ContractError("rollout: stats width must match the model");
    if (T < 1) throw ContractError("rollout: need at least one snapshot");

    Rollout out;
    out.states = Tensor({T, D});
    for (std::int64_t d = 0; d < D; ++d) out.states[d] = s0[d];

    Tensor s_norm({1, D});
    for (std::int64_t d = 0; d < D; ++d) s_norm[d] = (s0[d] - stats.mu[d]) / stats.sigma[d];
    const Tensor cond = s_norm;
    RecState rs = model.initial_state(1);

    for (std::int64_t t = 1; t < T; ++t) {
        Tape tape(false);
        BoundParams bp = bind_params(tape, model.params());
        Var nxt = model.step(tape, bp, tape.constant(s_norm), tape.constant(cond), rs);
        const Tensor& val = tape.value(nxt);
        if (!val.all_finite()) {
            out.diverged = true;
            out.first_bad = t;
            for (std::int64_t tt = t; tt < T; ++tt)
                for (std::int64_t d = 0; d < D; ++d)
                    out.states[tt * D + d] = out.states[(t - 1) * D + d];
            break;
        }
        s_norm = val;
        for (std::int64_t d = 0; d < D; ++d)
            out.states[t * D + d] = s_norm[d] * stats.sigma[d] + stats.mu[d];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Error metrics
// ---------------------------------------------------------------------------

namespace detail {

inline double window_sqerr(const Tensor& pred, const Tensor& ref, std::int64_t t0,
                           std::int64_t* t1) {
    if (pred.ndim() != 2 || !pred.same_shape(ref))
        throw ShapeError("mse: trajectories must be (T, D) with equal shapes");
    const std::int64_t T = pred.dim(0), D = pred.dim(1);
    if (*t1 < 0) *t1 = T;
    if (t0 < 0 || *t1 > T || t0 >= *t1) throw ContractError("mse: bad window");
    double sum = 0.0;
    for (std::int64_t t = t0; t < *t1; ++t)
        for (std::int64_t d = 0; d < D; ++d) {
            const double e = pred[t * D + d] - ref[t * D + d];
            sum += e * e;
        }
    return sum;
}

}  // namespace detail

// Time-mean of the squared L2 state error over snapshots [t0, t1).
inline double state_mse(const Tensor& pred, const Tensor& ref, std::int64_t t0 = 0,
                        std::int64_t t1 = -1) {
    const double sum = detail::window_sqerr(pred, ref, t0, &t1);
    return sum / static_cast<double>(t1 - t0);
}

// Mean over snapshots and grid points of the squared pointwise error.
inline double traj_spacetime_mse(const Tensor& pred, const Tensor& ref, std::int64_t t0 = 0,
                                 std::int64_t t1 = -1) {
    const double sum = detail::window_sqerr(pred, ref, t0, &t1);
    return sum / (static_cast<double>(t1 - t0) * static_cast<double>(pred.dim(1)));
}

// RMSE(t) = sqrt of the mean over trajectories and components of the squared
// error at snapshot t.
inline std::vector<double> rmse_vs_time(const std::vector<Tensor>& preds,
                                        const std::vector<Tensor>& refs) {
    if (preds.size() != refs.size() || preds.empty())
        throw ContractError("rmse_vs_time: need aligned non-empty sets");
    const std::int64_t T = preds[0].dim(0), D = preds[0].dim(1);
    std::vector<double> acc(static_cast<std::size_t>(T), 0.0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!preds[i].same_shape(refs[i]) || preds[i].dim(0) != T || preds[i].dim(1) != D)
            throw ShapeError("rmse_vs_time: inconsistent trajectory shapes");
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t d = 0; d < D; ++d) {
                const double e = preds[i][t * D + d] - refs[i][t * D + d];
                acc[static_cast<std::size_t>(t)] += e * e;
            }
    }
    const double denom = static_cast<double>(preds.size()) * static_cast<double>(D);
    for (double& a : acc) a = std::sqrt(a / denom);
    return acc;
}

// ---------------------------------------------------------------------------
// Regime statistics and binning
// ---------------------------------------------------------------------------

// Scalar used to stratify validation trajectories: initial total energy for
// the pendulum, time-averaged spatial variance for KS, time-averaged
// enstrophy (mean 0.5 omega^2) for Kolmogorov flow. Operates on the physical
// trajectory.
inline double regime_statistic(const Tensor& traj_phys, const std::string& system,
                               double g = 9.81) {
    if (traj_phys.ndim() != 2) throw ShapeError("regime_statistic: trajectory must be (T, D)");
    const std::int64_t T = traj_phys.dim(0), D = traj_phys.dim(1);
    if (system == "double_pendulum") {
        if (D != 6) throw ShapeError("regime_statistic: pendulum state must have width 6");
        DoublePendulum sys;
        sys.g = g;
        const std::array<double, 4> s = {std::atan2(traj_phys[0], traj_phys[1]),
                                         std::atan2(traj_phys[2], traj_phys[3]), traj_phys[4],
                                         traj_phys[5]};
        return sys.energy(s);
    }
    if (system == "ks") {
        double acc = 0.0;
        for (std::int64_t t = 0; t < T; ++t) {
            double mu = 0.0;
            for (std::int64_t d = 0; d < D; ++d) mu += traj_phys[t * D + d];
            mu /= static_cast<double>(D);
            double var = 0.0;
            for (std::int64_t d = 0; d < D; ++d) {
                const double c = traj_phys[t * D + d] - mu;
                var += c * c;
            }
            acc += var / static_cast<double>(D);
        }
        return acc / static_cast<double>(T);
    }
    if (system == "kolmogorov") {
        double acc = 0.0;
        for (std::int64_t i = 0; i < traj_phys.numel(); ++i) acc += 0.5 * traj_phys[i] * traj_phys[i];
        return acc / static_cast<double>(traj_phys.numel());
    }
    throw ContractError("regime_statistic: unknown system " + system);
}

struct BinBoxStats {
    double q1 = std::numeric_limits<double>::quiet_NaN();
    double median = std::numeric_limits<double>::quiet_NaN();
    double q3 = std::numeric_limits<double>::quiet_NaN();
    std::int64_t n_finite = 0, n_diverged = 0;
};

struct RegimeBinning {
    std::string statistic;
    double edge_lo = 0.0, edge_hi = 0.0;
    std::vector<int> bin;  // per trajectory: 0 low, 1 mid, 2 high
    std::vector<std::string> models;
    std::vector<std::int64_t> bin_count;            // [3]
    std::vector<std::vector<double>> win_fraction;  // [3][models]
    std::vector<std::vector<BinBoxStats>> box;      // [3][models], log10 MSE quartiles

    nlohmann::json to_json() const {
        nlohmann::json jb = nlohmann::json::array();
        for (int b = 0; b < 3; ++b) {
            nlohmann::json jm = nlohmann::json::array();
            for (std::size_t m = 0; m < models.size(); ++m) {
                const BinBoxStats& s = box[static_cast<std::size_t>(b)][m];
                jm.push_back({{"model", models[m]},
                              {"win_fraction", win_fraction[static_cast<std::size_t>(b)][m]},
                              {"log10_mse_q1", s.q1},
                              {"log10_mse_median", s.median},
                              {"log10_mse_q3", s.q3},
                              {"n_finite", s.n_finite},
                              {"n_diverged", s.n_diverged}});
            }
            jb.push_back({{"bin", b}, {"count", bin_count[static_cast<std::size_t>(b)]},
                          {"models", jm}});
        }
        return nlohmann::json{{"statistic", statistic},
                              {"edges", {edge_lo, edge_hi}},
                              {"bin", bin},
                              {"bins", jb}};
    }
};

// Tercile binning of the regime statistic plus per-bin win fractions and
// log10-MSE quartiles. Wins go to the lowest MSE, ties to the earliest model
// in the given order; +inf entries count in the diverged column and stay out
// of the box data.
inline RegimeBinning bin_and_wins(const std::vector<std::string>& models,
                                  const std::vector<std::vector<double>>& mse_per_model,
                                  const std::vector<double>& statistic,
                                  const std::string& stat_name) {
    const std::size_t M = models.size(), N = statistic.size();
    if (M == 0 || mse_per_model.size() != M)
        throw ContractError("bin_and_wins: need one MSE vector per model");
    if (N < 3) throw ContractError("bin_and_wins: need at least 3 trajectories");
    for (const auto& v : mse_per_model)
        if (v.size() != N) throw ContractError("bin_and_wins: MSE vectors must match statistics");

    RegimeBinning out;
    out.statistic = stat_name;
    out.models = models;
    out.edge_lo = percentile(statistic, 100.0 / 3.0);
    out.edge_hi = percentile(statistic, 200.0 / 3.0);
    out.bin.resize(N);
    out.bin_count.assign(3, 0);
    for (std::size_t i = 0; i < N; ++i) {
        const int b = statistic[i] <= out.edge_lo ? 0 : (statistic[i] <= out.edge_hi ? 1 : 2);
        out.bin[i] = b;
        ++out.bin_count[static_cast<std::size_t>(b)];
    }

    out.win_fraction.assign(3, std::vector<double>(M, 0.0));
    out.box.assign(3, std::vector<BinBoxStats>(M));
    std::array<std::vector<std::vector<double>>, 3> logs;
    for (auto& l : logs) l.assign(M, {});
    for (std::size_t i = 0; i < N; ++i) {
        const auto b = static_cast<std::size_t>(out.bin[i]);
        std::size_t best = 0;
        for (std::size_t m = 1; m < M; ++m)
            if (mse_per_model[m][i] < mse_per_model[best][i]) best = m;
        out.win_fraction[b][best] += 1.0;
        for (std::size_t m = 0; m < M; ++m) {
            const double v = mse_per_model[m][i];
            if (std::isfinite(v))
                logs[b][m].push_back(std::log10(v));
            else
                ++out.box[b][m].n_diverged;
        }
    }
    for (std::size_t b = 0; b < 3; ++b) {
        const double n = static_cast<double>(out.bin_count[b]);
        for (std::size_t m = 0; m < M; ++m) {
            if (n > 0.0) out.win_fraction[b][m] /= n;
            BinBoxStats& s = out.box[b][m];
            s.n_finite = static_cast<std::int64_t>(logs[b][m].size());
            if (!logs[b][m].empty()) {
                s.q1 = percentile(logs[b][m], 25.0);
                s.median = percentile(logs[b][m], 50.0);
                s.q3 = percentile(logs[b][m], 75.0);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-model evaluation over the validation split
// ---------------------------------------------------------------------------

// Snapshots in the "early" error window: the first two seconds for the
// pendulum, the first 20% of the horizon for the PDE benchmarks.
inline std::int64_t early_window_snapshots(const std::string& system, double dt_model,
                                           std::int64_t T) {
    if (system == "double_pendulum") {
        const auto n = static_cast<std::int64_t>(std::llround(2.0 / dt_model)) + 1;
        return std::min(T, std::max<std::int64_t>(n, 1));
    }
    return std::max<std::int64_t>(1, std::llround(0.2 * static_cast<double>(T)));
}

struct MseAggregate {
    double mean = 0.0, median = 0.0, p90 = 0.0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"mean", mean}, {"median", median}, {"p90", p90}};
    }
};

inline MseAggregate aggregate_mse(const std::vector<double>& v) {
    MseAggregate a;
    a.mean = mean_of(v);
    a.median = percentile(v, 50.0);
    a.p90 = percentile(v, 90.0);
    return a;
}

struct ModelEvaluation {
    std::string model;
    std::string system;
    std::int64_t early_end = 0;
    std::vector<std::int64_t> traj_ids;
    std::vector<double> full_mse, early_mse, statistic;
    std::vector<std::uint8_t> diverged;
    std::vector<std::int64_t> first_bad;
    std::vector<double> rmse_t;  // over rollouts that stayed finite

    nlohmann::json aggregate_json() const {
        std::int64_t n_div = 0;
        for (std::uint8_t d : diverged) n_div += d;
        return nlohmann::json{{"model", model},
                              {"system", system},
                              {"n_trajectories", traj_ids.size()},
                              {"n_diverged", n_div},
                              {"early_snapshots", early_end},
                              {"full_mse", aggregate_mse(full_mse).to_json()},
                              {"early_mse", aggregate_mse(early_mse).to_json()}};
    }
};

// Closed-loop evaluation of one model on the validation split of the physical
// dataset. For latent benchmarks the autoencoder maps initial conditions in
// and predictions out, and every metric is computed in decoded physical
// space. The pendulum uses the time-mean squared L2 state error, the PDE
// benchmarks the space-time pointwise MSE. Windows containing the first
// non-finite step score +inf.
inline ModelEvaluation evaluate_model(const TemporalModel& model, const NormStats& stats,
                                      const TrajectoryDataset& ds_phys,
                                      const Autoencoder* ae = nullptr) {
    ds_phys.validate();
    const std::int64_t T = ds_phys.n_time(), Dp = ds_phys.state_dim();
    if (ae != nullptr && ae->input_dim() != Dp)
        throw ContractError("evaluate_model: autoencoder width does not match the dataset");
    if (ae == nullptr && model.spec().state_dim != Dp)
        throw ContractError("evaluate_model: model width does not match the dataset");
    const std::vector<std::int64_t> val_idx = ds_phys.indices_of_split(kValSplit);
    if (val_idx.empty()) throw ContractError("evaluate_model: empty validation split");
    const bool pde = ds_phys.system != "double_pendulum";

    ModelEvaluation ev;
    ev.model = model.spec().tag;
    ev.system = ds_phys.system;
    ev.early_end = early_window_snapshots(ds_phys.system, ds_phys.dt_model, T);

    std::vector<double> acc(static_cast<std::size_t>(T), 0.0);
    std::int64_t n_ok = 0;
    for (std::int64_t b : val_idx) {
        Tensor ref({T, Dp});
        for (std::int64_t i = 0; i < T * Dp; ++i) ref[i] = ds_phys.data[b * T * Dp + i];

        Tensor s0({1, 1});
        if (ae) {
            Tensor row0({1, Dp});
            for (std::int64_t d = 0; d < Dp; ++d) row0[d] = ref[d];
            s0 = ae->encode(row0);
        }
        Rollout ro = rollout(model, stats, ae ? s0.data() : ref.data(), T);
        Tensor pred = ae ? ae->decode(ro.states) : ro.states;

        ev.traj_ids.push_back(b);
        ev.diverged.push_back(ro.diverged ? 1 : 0);
        ev.first_bad.push_back(ro.first_bad);
        ev.statistic.push_back(regime_statistic(ref, ds_phys.system));
        const double inf = std::numeric_limits<double>::infinity();
        const double full = pde ? traj_spacetime_mse(pred, ref) : state_mse(pred, ref);
        const double early = pde ? traj_spacetime_mse(pred, ref, 0, ev.early_end)
                                 : state_mse(pred, ref, 0, ev.early_end);
        ev.full_mse.push_back(ro.diverged ? inf : full);
        ev.early_mse.push_back(ro.diverged && ro.first_bad < ev.early_end ? inf : early);

        if (!ro.diverged) {
            ++n_ok;
            for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t d = 0; d < Dp; ++d) {
                    const double e = pred[t * Dp + d] - ref[t * Dp + d];
                    acc[static_cast<std::size_t>(t)] += e * e;
                }
        }
    }
    ev.rmse_t.resize(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t)
        ev.rmse_t[static_cast<std::size_t>(t)] =
            n_ok > 0 ? std::sqrt(acc[static_cast<std::size_t>(t)] /
                                 (static_cast<double>(n_ok) * static_cast<double>(Dp)))
                     : std::numeric_limits<double>::quiet_NaN();
    return ev;
}

}  // namespace chaosbench
