#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "chaosbench/adam.hpp"
#include "chaosbench/common.hpp"
#include "chaosbench/dataset.hpp"
#include "chaosbench/models.hpp"
#include "chaosbench/params.hpp"
#include "chaosbench/tape.hpp"
#include "chaosbench/tensor.hpp"

namespace chaosbench {

// Componentwise affine normalization, fitted on one split of a dataset and
// tagged with that split so downstream code can assert provenance.
struct NormStats {
    Tensor mu;     // (D)
    Tensor sigma;  // (D), entrywise >= 1e-8
    int source_split = 0;

    nlohmann::json to_json() const {
        std::vector<double> m(mu.numel()), s(sigma.numel());
        for (std::int64_t i = 0; i < mu.numel(); ++i) m[static_cast<std::size_t>(i)] = mu[i];
        for (std::int64_t i = 0; i < sigma.numel(); ++i) s[static_cast<std::size_t>(i)] = sigma[i];
        return nlohmann::json{{"mu", m}, {"sigma", s}, {"source_split", source_split}};
    }

    static NormStats from_json(const nlohmann::json& j) {
        NormStats st;
        const auto m = j.at("mu").get<std::vector<double>>();
        const auto s = j.at("sigma").get<std::vector<double>>();
        if (m.size() != s.size()) throw ContractError("NormStats: mu/sigma length mismatch");
        st.mu = Tensor({static_cast<std::int64_t>(m.size())});
        st.sigma = Tensor({static_cast<std::int64_t>(s.size())});
        for (std::size_t i = 0; i < m.size(); ++i) {
            st.mu[static_cast<std::int64_t>(i)] = m[i];
            st.sigma[static_cast<std::int64_t>(i)] = s[i];
        }
        st.source_split = j.value("source_split", 0);
        return st;
    }
};

constexpr double kSigmaFloor = 1e-8;
constexpr int kTrainSplit = 0;
constexpr int kValSplit = 1;

// Componentwise mean and population standard deviation over every snapshot of
// the chosen split.
inline NormStats compute_norm_stats(const TrajectoryDataset& ds, int split_id) {
    const std::vector<std::int64_t> idx = ds.indices_of_split(split_id);
    if (idx.empty()) throw ContractError("compute_norm_stats: split has no trajectories");
    const std::int64_t T = ds.n_time(), D = ds.state_dim();
    NormStats st;
    st.source_split = split_id;
    st.mu = Tensor::zeros({D});
    st.sigma = Tensor::zeros({D});
    const double count = static_cast<double>(idx.size()) * static_cast<double>(T);
    for (std::int64_t b : idx)
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t d = 0; d < D; ++d) st.mu[d] += ds.data[(b * T + t) * D + d];
    for (std::int64_t d = 0; d < D; ++d) st.mu[d] /= count;
    for (std::int64_t b : idx)
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t d = 0; d < D; ++d) {
                const double c = ds.data[(b * T + t) * D + d] - st.mu[d];
                st.sigma[d] += c * c;
            }
    for (std::int64_t d = 0; d < D; ++d)
        st.sigma[d] = std::max(std::sqrt(st.sigma[d] / count), kSigmaFloor);
    return st;
}

inline Tensor normalize(const Tensor& s, const NormStats& st) {
    const std::int64_t D = st.mu.numel();
    if (s.last_dim() != D) throw ShapeError("normalize: last dim must be " + std::to_string(D));
    Tensor out(s.shape());
    for (std::int64_t i = 0; i < s.numel(); ++i) {
        const std::int64_t d = i % D;
        out[i] = (s[i] - st.mu[d]) / st.sigma[d];
    }
    return out;
}

inline Tensor denormalize(const Tensor& s, const NormStats& st) {
    const std::int64_t D = st.mu.numel();
    if (s.last_dim() != D) throw ShapeError("denormalize: last dim must be " + std::to_string(D));
    Tensor out(s.shape());
    for (std::int64_t i = 0; i < s.numel(); ++i) {
        const std::int64_t d = i % D;
        out[i] = s[i] * st.sigma[d] + st.mu[d];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Teacher-forcing loss
// ---------------------------------------------------------------------------

// Batch (B,T,D) of normalized trajectories -> conditioned inputs (B,T-1,2D)
// with [s̃_t, s̃_0] rows, and next-state targets (B,T-1,D).
inline void conditioned_pairs(const Tensor& batch, Tensor& u_seq, Tensor& targets) {
    if (batch.ndim() != 3) throw ShapeError("conditioned_pairs: expected (B,T,D) batch");
    const std::int64_t B = batch.dim(0), T = batch.dim(1), D = batch.dim(2);
    if (T < 2) throw ContractError("conditioned_pairs: trajectories must have T >= 2");
    u_seq = Tensor({B, T - 1, 2 * D});
    targets = Tensor({B, T - 1, D});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t + 1 < T; ++t)
            for (std::int64_t d = 0; d < D; ++d) {
                u_seq[(b * (T - 1) + t) * 2 * D + d] = batch[(b * T + t) * D + d];
                u_seq[(b * (T - 1) + t) * 2 * D + D + d] = batch[b * T * D + d];
                targets[(b * (T - 1) + t) * D + d] = batch[(b * T + t + 1) * D + d];
            }
}

// Σ_b Σ_t ‖ŝ̃_{t+1} − s̃_{t+1}‖², reduced per trajectory in time-major order
// so the batch's trajectory order cannot perturb the inner sums.
inline Var teacher_forcing_sqerr(Tape& t, const TemporalModel& model, const BoundParams& bp,
                                 const Tensor& u_seq, const Tensor& targets) {
    Var preds = model.forward_sequence(t, bp, t.constant(u_seq));
    Var diff = op_sub(t, preds, t.constant(targets));
    return op_sum_all(t, op_sqnorm_rows(t, diff, u_seq.dim(0)));
}

// (1/(B(T−1))) Σ_b Σ_t ‖ŝ̃_{t+1} − s̃_{t+1}‖² under teacher forcing.
inline Var teacher_forcing_loss(Tape& t, const TemporalModel& model, const BoundParams& bp,
                                const Tensor& batch) {
    Tensor u_seq, targets;
    conditioned_pairs(batch, u_seq, targets);
    const double denom = static_cast<double>(u_seq.dim(0)) * static_cast<double>(u_seq.dim(1));
    return op_scale(t, teacher_forcing_sqerr(t, model, bp, u_seq, targets), 1.0 / denom);
}

// ---------------------------------------------------------------------------
// Epoch loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 1000;
    int batch_size = 32;  // whole trajectories per optimizer step
    int chunk_size = 8;   // trajectories per backward pass; 0 = whole batch at once
    int val_every = 1;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::string log_csv;  // per-epoch CSV when non-empty

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (lr <= 0.0) throw ConfigError("train: lr must be positive");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (chunk_size < 0) throw ConfigError("train: chunk_size must be >= 0");
        if (val_every < 1) throw ConfigError("train: val_every must be >= 1");
        if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
        if (clip_norm <= 0.0) throw ConfigError("train: clip_norm must be positive");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"epochs", epochs},         {"batch_size", batch_size},
                              {"chunk_size", chunk_size}, {"val_every", val_every},
                              {"lr", lr},                 {"weight_decay", weight_decay},
                              {"clip_norm", clip_norm},   {"seed", seed}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.chunk_size = j.value("chunk_size", c.chunk_size);
        c.val_every = j.value("val_every", c.val_every);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

struct TrainResult {
    NormStats stats;
    std::vector<double> train_curve;
    std::vector<double> val_curve;  // NaN on epochs where validation was skipped
    int best_epoch = 0;             // 1-based epoch index of the kept checkpoint
    double best_val = std::numeric_limits<double>::infinity();
};

namespace detail {

inline Tensor gather_trajectories(const Tensor& data, const std::vector<std::int64_t>& idx) {
    const std::int64_t T = data.dim(1), D = data.dim(2);
    Tensor out({static_cast<std::int64_t>(idx.size()), T, D});
    for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::int64_t j = 0; j < T * D; ++j) out[static_cast<std::int64_t>(k) * T * D + j] =
            data[idx[k] * T * D + j];
    return out;
}

inline void shuffle_indices(std::vector<std::int64_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform01() * static_cast<double>(i));
        std::swap(idx[i - 1], idx[j < i ? j : i - 1]);
    }
}

// Mean teacher-forced loss of a split, evaluated without gradients in fixed
// chunks. Returns mean over (trajectory, step).
inline double split_loss(const TemporalModel& model, const Tensor& data_norm,
                         const std::vector<std::int64_t>& idx, int chunk_size) {
    const std::int64_t Tm1 = data_norm.dim(1) - 1;
    const std::size_t step = chunk_size > 0 ? static_cast<std::size_t>(chunk_size) : idx.size();
    double sq = 0.0;
    for (std::size_t at = 0; at < idx.size(); at += step) {
        std::vector<std::int64_t> part(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                       idx.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(at + step, idx.size())));
        Tensor batch = gather_trajectories(data_norm, part);
        Tensor u_seq, targets;
        conditioned_pairs(batch, u_seq, targets);
        Tape t(false);
        BoundParams bp = bind_params(t, model.params());
        sq += t.value(teacher_forcing_sqerr(t, model, bp, u_seq, targets))[0];
    }
    return sq / (static_cast<double>(idx.size()) * static_cast<double>(Tm1));
}

}  // namespace detail

// Adam + gradient clipping over teacher-forced batches of whole trajectories,
// with per-epoch validation; the returned model carries the parameters of the
// minimum-validation-loss epoch. Large batches are split into chunks whose
// gradients accumulate before the single optimizer step, which bounds tape
// memory without changing what is optimized.
inline TrainResult train_model(TemporalModel& model, const TrajectoryDataset& ds,
                               const TrainConfig& cfg, const NormStats& stats) {
    cfg.validate();
    ds.validate();
    if (stats.source_split != kTrainSplit)
        throw ContractError("train_model: normalization stats must come from the training split");
    if (ds.state_dim() != model.state_dim())
        throw ContractError("train_model: dataset state_dim does not match the model");
    if (ds.n_time() < 2) throw ContractError("train_model: trajectories must have T >= 2");
    std::vector<std::int64_t> train_idx = ds.indices_of_split(kTrainSplit);
    const std::vector<std::int64_t> val_idx = ds.indices_of_split(kValSplit);
    if (train_idx.empty() || val_idx.empty())
        throw ContractError("train_model: both train and validation splits must be non-empty");

    const Tensor data_norm = normalize(ds.data, stats);
    const std::int64_t Tm1 = ds.n_time() - 1;
    const double train_count = static_cast<double>(train_idx.size()) * static_cast<double>(Tm1);

    Adam opt(cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
    Rng rng(cfg.seed, fnv1a64("train.shuffle"));

    std::ofstream csv;
    if (!cfg.log_csv.empty()) {
        csv.open(cfg.log_csv);
        if (!csv) throw IoError("train_model: cannot open log " + cfg.log_csv);
        csv << "epoch,train_loss,val_loss\n" << std::setprecision(17);
    }

    TrainResult res;
    res.stats = stats;
    std::vector<Tensor> best_params;
    ParameterSet& params = model.params();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        detail::shuffle_indices(train_idx, rng);
        double epoch_sq = 0.0;
        for (std::size_t at = 0; at < train_idx.size();
             at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t bend = std::min(at + static_cast<std::size_t>(cfg.batch_size),
                                              train_idx.size());
            const double batch_denom = static_cast<double>(bend - at) * static_cast<double>(Tm1);
            std::vector<Tensor> acc;
            acc.reserve(params.size());
            for (std::size_t i = 0; i < params.size(); ++i)
                acc.push_back(Tensor::zeros(params.entry(i).value.shape()));
            const std::size_t step =
                cfg.chunk_size > 0 ? static_cast<std::size_t>(cfg.chunk_size) : bend - at;
            for (std::size_t cat = at; cat < bend; cat += step) {
                std::vector<std::int64_t> part(
                    train_idx.begin() + static_cast<std::ptrdiff_t>(cat),
                    train_idx.begin() + static_cast<std::ptrdiff_t>(std::min(cat + step, bend)));
                Tensor batch = detail::gather_trajectories(data_norm, part);
                Tensor u_seq, targets;
                conditioned_pairs(batch, u_seq, targets);
                Tape t(true);
                BoundParams bp = bind_params(t, params);
                Var sq = teacher_forcing_sqerr(t, model, bp, u_seq, targets);
                const double sq_val = t.value(sq)[0];
                if (!std::isfinite(sq_val))
                    throw NumericalError("train_model: non-finite loss at epoch " +
                                         std::to_string(epoch));
                epoch_sq += sq_val;
                Var chunk_loss = op_scale(t, sq, 1.0 / batch_denom);
                t.backward(chunk_loss);
                std::vector<Tensor> g = collect_grads(t, bp);
                for (std::size_t i = 0; i < acc.size(); ++i)
                    for (std::int64_t j = 0; j < acc[i].numel(); ++j) acc[i][j] += g[i][j];
            }
            clip_grad_norm(acc, cfg.clip_norm);
            opt.step(params, acc);
        }
        const double train_loss = epoch_sq / train_count;
        res.train_curve.push_back(train_loss);

        double val_loss = std::numeric_limits<double>::quiet_NaN();
        if (epoch % cfg.val_every == 0 || epoch == cfg.epochs) {
            val_loss = detail::split_loss(model, data_norm, val_idx, cfg.chunk_size);
            if (!std::isfinite(val_loss))
                throw NumericalError("train_model: non-finite validation loss at epoch " +
                                     std::to_string(epoch));
            if (val_loss < res.best_val) {
                res.best_val = val_loss;
                res.best_epoch = epoch;
                best_params.clear();
                for (std::size_t i = 0; i < params.size(); ++i)
                    best_params.push_back(params.entry(i).value);
            }
        }
        res.val_curve.push_back(val_loss);
        if (csv.is_open()) {
            csv << epoch << ',' << train_loss << ',';
            if (std::isfinite(val_loss)) csv << val_loss;
            csv << '\n';
        }
    }

    for (std::size_t i = 0; i < best_params.size(); ++i) params.entry(i).value = best_params[i];
    return res;
}

inline TrainResult train_model(TemporalModel& model, const TrajectoryDataset& ds,
                               const TrainConfig& cfg) {
    return train_model(model, ds, cfg, compute_norm_stats(ds, kTrainSplit));
}

// Trained-surrogate checkpoint: model parameters + architecture + the
// normalization it was trained under.
inline void save_trained_model(const std::string& path, const TemporalModel& model,
                               const NormStats& stats,
                               nlohmann::json extra_meta = nlohmann::json::object()) {
    extra_meta["norm"] = stats.to_json();
    save_model(path, model, std::move(extra_meta));
}

inline std::unique_ptr<TemporalModel> load_trained_model(const std::string& path,
                                                         NormStats* stats_out,
                                                         nlohmann::json* meta_out = nullptr) {
    nlohmann::json meta;
    auto model = load_model(path, &meta);
    if (stats_out) {
        if (!meta.contains("norm"))
            throw IoError("load_trained_model: checkpoint lacks normalization stats");
        *stats_out = NormStats::from_json(meta.at("norm"));
    }
    if (meta_out) *meta_out = std::move(meta);
    return model;
}

}  // namespace chaosbench
