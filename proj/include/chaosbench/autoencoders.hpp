#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "chaosbench/adam.hpp"
#include "chaosbench/common.hpp"
#include "chaosbench/container.hpp"
#include "chaosbench/dataset.hpp"
#include "chaosbench/fft.hpp"
#include "chaosbench/params.hpp"
#include "chaosbench/tape.hpp"
#include "chaosbench/tensor.hpp"
#include "chaosbench/training.hpp"

namespace chaosbench {

// Architecture of a latent compressor: a GELU dense stack for 1-D fields or a
// stride-2 convolutional pyramid with a linear head for 2-D fields.
struct AeSpec {
    std::string kind;           // "dense" | "conv2d"
    int input_dim = 0;          // field components per snapshot
    std::vector<int> widths;    // dense: layer widths ending in the latent dim
    int grid = 0;               // conv2d: square grid side
    std::vector<int> channels;  // conv2d: encoder channels per stride-2 stage
    int latent = 0;             // d_z
    int kernel = 3;

    void validate() const {
        if (kind == "dense") {
            if (input_dim < 1 || widths.empty())
                throw ConfigError("AeSpec: dense autoencoder needs input_dim and widths");
            if (widths.back() != latent) throw ConfigError("AeSpec: widths must end at the latent dim");
        } else if (kind == "conv2d") {
            if (grid < 2 || channels.empty() || latent < 1)
                throw ConfigError("AeSpec: conv autoencoder needs grid, channels, latent");
            int side = grid;
            for (std::size_t i = 0; i < channels.size(); ++i) {
                if (side % 2 != 0) throw ConfigError("AeSpec: grid must halve at every stage");
                side /= 2;
            }
            if (input_dim != grid * grid) throw ConfigError("AeSpec: input_dim must equal grid^2");
        } else {
            throw ConfigError("AeSpec: unknown kind " + kind);
        }
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"kind", kind},       {"input_dim", input_dim},
                              {"widths", widths},   {"grid", grid},
                              {"channels", channels}, {"latent", latent},
                              {"kernel", kernel}};
    }

    static AeSpec from_json(const nlohmann::json& j) {
        AeSpec s;
        s.kind = j.at("kind").get<std::string>();
        s.input_dim = j.value("input_dim", 0);
        s.widths = j.value("widths", std::vector<int>{});
        s.grid = j.value("grid", 0);
        s.channels = j.value("channels", std::vector<int>{});
        s.latent = j.value("latent", 0);
        s.kernel = j.value("kernel", 3);
        return s;
    }
};

inline AeSpec ks_ae_spec(int input_dim = 128) {
    AeSpec s;
    s.kind = "dense";
    s.input_dim = input_dim;
    s.widths = {128, 64, 32};
    s.latent = 32;
    s.validate();
    return s;
}

inline AeSpec kf_ae_spec(int grid = 64) {
    AeSpec s;
    s.kind = "conv2d";
    s.grid = grid;
    s.input_dim = grid * grid;
    s.channels = {16, 32, 64};
    s.latent = 256;
    s.kernel = 3;
    s.validate();
    return s;
}

// Encoder/decoder pair over standardized fields. The object owns the
// componentwise field statistics, so encode/decode work on raw physical
// snapshots; once frozen the parameters are immutable.
class Autoencoder {
public:
    Autoencoder(AeSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
        spec_.validate();
        norm_.mu = Tensor::zeros({spec_.input_dim});
        norm_.sigma = Tensor({spec_.input_dim});
        for (std::int64_t i = 0; i < norm_.sigma.numel(); ++i) norm_.sigma[i] = 1.0;
        Rng rng(seed, fnv1a64("autoencoder." + spec_.kind));
        if (spec_.kind == "dense")
            build_dense(rng);
        else
            build_conv(rng);
    }

    const AeSpec& spec() const { return spec_; }
    int latent_dim() const { return spec_.latent; }
    int input_dim() const { return spec_.input_dim; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    const ParameterSet& params() const { return params_; }
    ParameterSet& params() {
        if (frozen_) throw ContractError("Autoencoder: parameters are frozen");
        return params_;
    }

    const NormStats& field_norm() const { return norm_; }
    void set_field_norm(NormStats st) {
        if (frozen_) throw ContractError("Autoencoder: parameters are frozen");
        if (st.mu.numel() != spec_.input_dim)
            throw ShapeError("Autoencoder: field stats must have one entry per component");
        norm_ = std::move(st);
    }

    // Graph builders over standardized snapshots x̃ (rows, input_dim).
    Var encode_node(Tape& t, const BoundParams& bp, Var x) const {
        if (t.value(x).last_dim() != spec_.input_dim)
            throw ShapeError("Autoencoder: expected snapshots of width " +
                             std::to_string(spec_.input_dim));
        return spec_.kind == "dense" ? dense_half(t, bp, x, enc_w_, enc_b_) : conv_encode(t, bp, x);
    }

    Var decode_node(Tape& t, const BoundParams& bp, Var z) const {
        if (t.value(z).last_dim() != spec_.latent)
            throw ShapeError("Autoencoder: expected latents of width " + std::to_string(spec_.latent));
        return spec_.kind == "dense" ? dense_half(t, bp, z, dec_w_, dec_b_) : conv_decode(t, bp, z);
    }

    Var reconstruct_node(Tape& t, const BoundParams& bp, Var x) const {
        return decode_node(t, bp, encode_node(t, bp, x));
    }

    // Raw-field interfaces; evaluation happens without gradients in bounded
    // row chunks.
    Tensor encode(const Tensor& x_raw, std::int64_t chunk_rows = 512) const {
        return run_chunked(normalize(x_raw, norm_), spec_.latent, chunk_rows,
                           [this](Tape& t, const BoundParams& bp, Var v) {
                               return encode_node(t, bp, v);
                           });
    }

    Tensor decode(const Tensor& z, std::int64_t chunk_rows = 512) const {
        Tensor out = run_chunked(z, spec_.input_dim, chunk_rows,
                                 [this](Tape& t, const BoundParams& bp, Var v) {
                                     return decode_node(t, bp, v);
                                 });
        return denormalize(out, norm_);
    }

    Tensor reconstruct(const Tensor& x_raw, std::int64_t chunk_rows = 512) const {
        return decode(encode(x_raw, chunk_rows), chunk_rows);
    }

private:
    void build_dense(Rng& rng) {
        std::vector<int> enc_dims{spec_.input_dim};
        enc_dims.insert(enc_dims.end(), spec_.widths.begin(), spec_.widths.end());
        build_stack(rng, enc_dims, "enc", enc_w_, enc_b_);
        std::vector<int> dec_dims(enc_dims.rbegin(), enc_dims.rend());
        build_stack(rng, dec_dims, "dec", dec_w_, dec_b_);
    }

    void build_stack(Rng& rng, const std::vector<int>& dims, const std::string& prefix,
                     std::vector<std::size_t>& w_idx, std::vector<std::size_t>& b_idx) {
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const int in = dims[l], out = dims[l + 1];
            w_idx.push_back(params_.size());
            params_.add(prefix + ".W" + std::to_string(l + 1), fan_in_uniform(rng, {out, in}, in));
            b_idx.push_back(params_.size());
            params_.add(prefix + ".b" + std::to_string(l + 1), Tensor::zeros({out}));
        }
    }

    void build_conv(Rng& rng) {
        const int k = spec_.kernel;
        int ch = 1, side = spec_.grid;
        for (std::size_t s = 0; s < spec_.channels.size(); ++s) {
            const int c = spec_.channels[s];
            enc_w_.push_back(params_.size());
            params_.add("enc.W" + std::to_string(s + 1),
                        fan_in_uniform(rng, {c, k * k * ch}, k * k * ch));
            enc_b_.push_back(params_.size());
            params_.add("enc.b" + std::to_string(s + 1), Tensor::zeros({c}));
            ch = c;
            side /= 2;
        }
        bottom_side_ = side;
        bottom_ch_ = ch;
        const int flat = side * side * ch;
        enc_w_.push_back(params_.size());
        params_.add("enc.Whead", fan_in_uniform(rng, {spec_.latent, flat}, flat));
        enc_b_.push_back(params_.size());
        params_.add("enc.bhead", Tensor::zeros({spec_.latent}));

        dec_w_.push_back(params_.size());
        params_.add("dec.Whead", fan_in_uniform(rng, {flat, spec_.latent}, spec_.latent));
        dec_b_.push_back(params_.size());
        params_.add("dec.bhead", Tensor::zeros({flat}));
        for (std::size_t s = spec_.channels.size(); s-- > 0;) {
            const int cin = spec_.channels[s];
            const int cout = s == 0 ? 1 : spec_.channels[s - 1];
            const std::string name = std::to_string(spec_.channels.size() - s);
            dec_w_.push_back(params_.size());
            params_.add("dec.W" + name, fan_in_uniform(rng, {cin, k * k * cout}, k * k * cin));
            dec_b_.push_back(params_.size());
            params_.add("dec.b" + name, Tensor::zeros({cout}));
        }
    }

    Var dense_half(Tape& t, const BoundParams& bp, Var x, const std::vector<std::size_t>& w,
                   const std::vector<std::size_t>& b) const {
        for (std::size_t l = 0; l < w.size(); ++l) {
            x = op_linear(t, x, bp.vars[w[l]], bp.vars[b[l]]);
            if (l + 1 < w.size()) x = op_gelu(t, x);
        }
        return x;
    }

    Var conv_encode(Tape& t, const BoundParams& bp, Var x) const {
        const std::int64_t rows = t.value(x).rows_for_last_dim();
        const int k = spec_.kernel, pad = (spec_.kernel - 1) / 2;
        Var h = op_reshape(t, x, {rows, spec_.grid, spec_.grid, 1});
        for (std::size_t s = 0; s < spec_.channels.size(); ++s)
            h = op_gelu(t, op_conv2d(t, h, bp.vars[enc_w_[s]], bp.vars[enc_b_[s]], k, k, 2, pad));
        h = op_reshape(t, h, {rows, static_cast<std::int64_t>(bottom_side_) * bottom_side_ * bottom_ch_});
        return op_linear(t, h, bp.vars[enc_w_.back()], bp.vars[enc_b_.back()]);
    }

    Var conv_decode(Tape& t, const BoundParams& bp, Var z) const {
        const std::int64_t rows = t.value(z).rows_for_last_dim();
        const int k = spec_.kernel, pad = (spec_.kernel - 1) / 2;
        Var h = op_gelu(t, op_linear(t, z, bp.vars[dec_w_[0]], bp.vars[dec_b_[0]]));
        h = op_reshape(t, h, {rows, bottom_side_, bottom_side_, bottom_ch_});
        for (std::size_t s = 1; s < dec_w_.size(); ++s) {
            h = op_conv2d_transpose(t, h, bp.vars[dec_w_[s]], bp.vars[dec_b_[s]], k, k, 2, pad, 1);
            if (s + 1 < dec_w_.size()) h = op_gelu(t, h);
        }
        return op_reshape(t, h, {rows, static_cast<std::int64_t>(spec_.grid) * spec_.grid});
    }

    template <typename F>
    Tensor run_chunked(const Tensor& in, int out_width, std::int64_t chunk_rows, F&& f) const {
        const std::int64_t rows = in.rows_for_last_dim(), w = in.last_dim();
        Tensor out({rows, out_width});
        for (std::int64_t at = 0; at < rows; at += chunk_rows) {
            const std::int64_t n = std::min(chunk_rows, rows - at);
            Tensor part({n, w});
            for (std::int64_t i = 0; i < n * w; ++i) part[i] = in[at * w + i];
            Tape t(false);
            BoundParams bp = bind_params(t, params_);
            const Tensor& v = t.value(f(t, bp, t.constant(std::move(part))));
            for (std::int64_t i = 0; i < n * out_width; ++i) out[at * out_width + i] = v[i];
        }
        if (in.ndim() != 2) {
            std::vector<std::int64_t> shape = in.shape();
            shape.back() = out_width;
            return out.reshaped(shape);
        }
        return out;
    }

    AeSpec spec_;
    ParameterSet params_;
    NormStats norm_;
    bool frozen_ = false;
    std::vector<std::size_t> enc_w_, enc_b_, dec_w_, dec_b_;
    int bottom_side_ = 0, bottom_ch_ = 0;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct AeTrainConfig {
    int epochs = 500;
    int batch_snapshots = 256;
    int val_every = 1;
    double lr = 1e-3;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::string log_csv;

    void validate() const {
        if (epochs < 1) throw ConfigError("train-ae: epochs must be >= 1");
        if (batch_snapshots < 1) throw ConfigError("train-ae: batch_snapshots must be >= 1");
        if (val_every < 1) throw ConfigError("train-ae: val_every must be >= 1");
        if (lr <= 0.0) throw ConfigError("train-ae: lr must be positive");
        if (clip_norm <= 0.0) throw ConfigError("train-ae: clip_norm must be positive");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"epochs", epochs}, {"batch_snapshots", batch_snapshots},
                              {"val_every", val_every}, {"lr", lr},
                              {"clip_norm", clip_norm}, {"seed", seed}};
    }

    static AeTrainConfig from_json(const nlohmann::json& j) {
        AeTrainConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch_snapshots = j.value("batch_snapshots", c.batch_snapshots);
        c.val_every = j.value("val_every", c.val_every);
        c.lr = j.value("lr", c.lr);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

struct AeTrainResult {
    std::vector<double> train_curve, val_curve;
    int best_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
};

namespace detail {

// (M, D) matrix of standardized snapshots from the given trajectories.
inline Tensor snapshot_matrix(const Tensor& data_norm, const std::vector<std::int64_t>& traj_idx) {
    const std::int64_t T = data_norm.dim(1), D = data_norm.dim(2);
    Tensor out({static_cast<std::int64_t>(traj_idx.size()) * T, D});
    std::int64_t r = 0;
    for (std::int64_t b : traj_idx)
        for (std::int64_t t = 0; t < T; ++t, ++r)
            for (std::int64_t d = 0; d < D; ++d) out[r * D + d] = data_norm[(b * T + t) * D + d];
    return out;
}

// Mean over rows of the squared reconstruction error, without gradients.
inline double ae_split_loss(const Autoencoder& ae, const Tensor& snaps, std::int64_t chunk) {
    const std::int64_t M = snaps.dim(0), D = snaps.dim(1);
    double sq = 0.0;
    for (std::int64_t at = 0; at < M; at += chunk) {
        const std::int64_t n = std::min(chunk, M - at);
        Tensor part({n, D});
        for (std::int64_t i = 0; i < n * D; ++i) part[i] = snaps[at * D + i];
        Tape t(false);
        BoundParams bp = bind_params(t, ae.params());
        Var x = t.constant(std::move(part));
        Var diff = op_sub(t, ae.reconstruct_node(t, bp, x), x);
        sq += t.value(op_sqnorm(t, diff))[0];
    }
    return sq / static_cast<double>(M);
}

}  // namespace detail

// Snapshot-reconstruction MSE training with Adam; the returned autoencoder
// carries the minimum-validation-loss parameters and is frozen.
inline std::unique_ptr<Autoencoder> train_autoencoder(const AeSpec& spec,
                                                      const TrajectoryDataset& ds,
                                                      const AeTrainConfig& cfg,
                                                      AeTrainResult* result_out = nullptr) {
    cfg.validate();
    ds.validate();
    if (ds.state_dim() != spec.input_dim)
        throw ContractError("train_autoencoder: dataset snapshot width does not match the spec");
    const std::vector<std::int64_t> train_idx = ds.indices_of_split(kTrainSplit);
    const std::vector<std::int64_t> val_idx = ds.indices_of_split(kValSplit);
    if (train_idx.empty() || val_idx.empty())
        throw ContractError("train_autoencoder: both splits must be non-empty");

    auto ae = std::make_unique<Autoencoder>(spec, cfg.seed);
    ae->set_field_norm(compute_norm_stats(ds, kTrainSplit));
    const Tensor data_norm = normalize(ds.data, ae->field_norm());
    const Tensor train_snaps = detail::snapshot_matrix(data_norm, train_idx);
    const Tensor val_snaps = detail::snapshot_matrix(data_norm, val_idx);
    const std::int64_t M = train_snaps.dim(0), D = train_snaps.dim(1);

    Adam opt(cfg.lr);
    Rng rng(cfg.seed, fnv1a64("train-ae.shuffle"));
    std::vector<std::int64_t> order(static_cast<std::size_t>(M));
    for (std::int64_t i = 0; i < M; ++i) order[static_cast<std::size_t>(i)] = i;

    std::ofstream csv;
    if (!cfg.log_csv.empty()) {
        csv.open(cfg.log_csv);
        if (!csv) throw IoError("train_autoencoder: cannot open log " + cfg.log_csv);
        csv << "epoch,train_loss,val_loss\n" << std::setprecision(17);
    }

    AeTrainResult res;
    std::vector<Tensor> best_params;
    ParameterSet& params = ae->params();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        detail::shuffle_indices(order, rng);
        double epoch_sq = 0.0;
        for (std::int64_t at = 0; at < M; at += cfg.batch_snapshots) {
            const std::int64_t n = std::min<std::int64_t>(cfg.batch_snapshots, M - at);
            Tensor batch({n, D});
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t d = 0; d < D; ++d)
                    batch[r * D + d] = train_snaps[order[static_cast<std::size_t>(at + r)] * D + d];
            Tape t(true);
            BoundParams bp = bind_params(t, params);
            Var x = t.constant(std::move(batch));
            Var diff = op_sub(t, ae->reconstruct_node(t, bp, x), x);
            Var sq = op_sqnorm(t, diff);
            const double sq_val = t.value(sq)[0];
            if (!std::isfinite(sq_val))
                throw NumericalError("train_autoencoder: non-finite loss at epoch " +
                                     std::to_string(epoch));
            epoch_sq += sq_val;
            t.backward(op_scale(t, sq, 1.0 / static_cast<double>(n)));
            std::vector<Tensor> g = collect_grads(t, bp);
            clip_grad_norm(g, cfg.clip_norm);
            opt.step(params, g);
        }
        res.train_curve.push_back(epoch_sq / static_cast<double>(M));

        double val_loss = std::numeric_limits<double>::quiet_NaN();
        if (epoch % cfg.val_every == 0 || epoch == cfg.epochs) {
            val_loss = detail::ae_split_loss(*ae, val_snaps, 512);
            if (!std::isfinite(val_loss))
                throw NumericalError("train_autoencoder: non-finite validation loss at epoch " +
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
            csv << epoch << ',' << res.train_curve.back() << ',';
            if (std::isfinite(val_loss)) csv << val_loss;
            csv << '\n';
        }
    }

    for (std::size_t i = 0; i < best_params.size(); ++i) params.entry(i).value = best_params[i];
    ae->freeze();
    if (result_out) *result_out = std::move(res);
    return ae;
}

// ---------------------------------------------------------------------------
// Spectra and reconstruction diagnostics
// ---------------------------------------------------------------------------

// One-sided energy spectrum of a 1-D field: E_k = w_k |û_k|² / N² with w = 2
// on interior modes, so Σ_k E_k equals the grid mean of u².
inline std::vector<double> energy_spectrum_1d(const double* u, int n) {
    Fft1D fft(n);
    std::vector<std::complex<double>> uh(static_cast<std::size_t>(fft.n_modes()));
    fft.forward(u, uh.data());
    std::vector<double> spec(uh.size());
    const double inv_n2 = 1.0 / (static_cast<double>(n) * n);
    for (std::size_t k = 0; k < uh.size(); ++k) {
        const bool interior = k > 0 && (n % 2 != 0 || k + 1 < uh.size());
        spec[k] = (interior ? 2.0 : 1.0) * std::norm(uh[k]) * inv_n2;
    }
    return spec;
}

// Radially binned energy spectrum of a 2-D field on an n x n grid, bin index
// round(|k|); the same one-sided weighting keeps Σ_k E_k = grid mean of u².
inline std::vector<double> energy_spectrum_2d(const double* u, int n) {
    Fft2D fft(n, n);
    std::vector<std::complex<double>> uh(static_cast<std::size_t>(fft.n_spectral()));
    fft.forward(u, uh.data());
    const int nkx = fft.n_kx();
    const int max_bin = static_cast<int>(std::lround(std::hypot(n / 2, n / 2)));
    std::vector<double> spec(static_cast<std::size_t>(max_bin) + 1, 0.0);
    const double inv_n2 = 1.0 / (static_cast<double>(n) * n * n * n);
    for (int ky = 0; ky < n; ++ky) {
        const int ky_s = ky <= n / 2 ? ky : ky - n;
        for (int kx = 0; kx < nkx; ++kx) {
            const bool interior = kx > 0 && (n % 2 != 0 || kx + 1 < nkx);
            const double e = (interior ? 2.0 : 1.0) *
                             std::norm(uh[static_cast<std::size_t>(ky) * nkx + kx]) * inv_n2;
            const int bin = static_cast<int>(std::lround(std::hypot(kx, ky_s)));
            spec[static_cast<std::size_t>(bin)] += e;
        }
    }
    return spec;
}

struct ReconstructionReport {
    std::vector<double> rel_error_vs_time;  // mean over validation trajectories
    std::vector<double> spectrum_data, spectrum_recon;
    double mean_rel_error = 0.0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"rel_error_vs_time", rel_error_vs_time},
                              {"spectrum_data", spectrum_data},
                              {"spectrum_recon", spectrum_recon},
                              {"mean_rel_error", mean_rel_error}};
    }
};

// Validation-split reconstruction quality: per-time mean relative error and
// the mean energy spectra of data and reconstructions.
inline ReconstructionReport reconstruction_report(const Autoencoder& ae,
                                                  const TrajectoryDataset& ds) {
    if (!ae.frozen()) throw ContractError("reconstruction_report: autoencoder must be frozen");
    ds.validate();
    if (ds.state_dim() != ae.input_dim())
        throw ContractError("reconstruction_report: dataset width does not match the autoencoder");
    const std::vector<std::int64_t> val_idx = ds.indices_of_split(kValSplit);
    if (val_idx.empty()) throw ContractError("reconstruction_report: empty validation split");
    const std::int64_t T = ds.n_time(), D = ds.state_dim();

    ReconstructionReport rep;
    rep.rel_error_vs_time.assign(static_cast<std::size_t>(T), 0.0);
    const bool two_d = ae.spec().kind == "conv2d";
    const int grid = ae.spec().grid;
    std::vector<double> spec_data, spec_recon;

    double err_sum = 0.0;
    for (std::int64_t b : val_idx) {
        Tensor traj({T, D});
        for (std::int64_t i = 0; i < T * D; ++i) traj[i] = ds.data[b * T * D + i];
        Tensor recon = ae.reconstruct(traj);
        for (std::int64_t t = 0; t < T; ++t) {
            double num = 0.0, den = 0.0;
            for (std::int64_t d = 0; d < D; ++d) {
                const double x = traj[t * D + d], r = recon[t * D + d];
                num += (r - x) * (r - x);
                den += x * x;
            }
            const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
            rep.rel_error_vs_time[static_cast<std::size_t>(t)] += rel;
            err_sum += rel;

            std::vector<double> sd = two_d ? energy_spectrum_2d(traj.data() + t * D, grid)
                                           : energy_spectrum_1d(traj.data() + t * D,
                                                                static_cast<int>(D));
            std::vector<double> sr = two_d ? energy_spectrum_2d(recon.data() + t * D, grid)
                                           : energy_spectrum_1d(recon.data() + t * D,
                                                                static_cast<int>(D));
            if (spec_data.empty()) {
                spec_data.assign(sd.size(), 0.0);
                spec_recon.assign(sr.size(), 0.0);
            }
            for (std::size_t k = 0; k < sd.size(); ++k) {
                spec_data[k] += sd[k];
                spec_recon[k] += sr[k];
            }
        }
    }
    const double n_snap = static_cast<double>(val_idx.size()) * static_cast<double>(T);
    for (double& e : rep.rel_error_vs_time) e /= static_cast<double>(val_idx.size());
    rep.mean_rel_error = err_sum / n_snap;
    rep.spectrum_data = spec_data;
    rep.spectrum_recon = spec_recon;
    for (double& s : rep.spectrum_data) s /= n_snap;
    for (double& s : rep.spectrum_recon) s /= n_snap;
    return rep;
}

// Latent dataset: every snapshot encoded, all labels preserved.
inline TrajectoryDataset encode_dataset(const Autoencoder& ae, const TrajectoryDataset& ds) {
    if (!ae.frozen()) throw ContractError("encode_dataset: autoencoder must be frozen");
    ds.validate();
    TrajectoryDataset out;
    out.system = ds.system;
    out.dt_model = ds.dt_model;
    out.seed = ds.seed;
    out.regime = ds.regime;
    out.split = ds.split;
    out.data = ae.encode(ds.data.reshaped({ds.n_traj() * ds.n_time(), ds.state_dim()}))
                   .reshaped({ds.n_traj(), ds.n_time(), ae.latent_dim()});
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_autoencoder(const std::string& path, const Autoencoder& ae,
                             nlohmann::json extra_meta = nlohmann::json::object()) {
    nlohmann::json meta = std::move(extra_meta);
    meta["kind"] = "autoencoder";
    meta["arch"] = ae.spec().to_json();
    meta["norm"] = ae.field_norm().to_json();
    meta["frozen"] = ae.frozen();
    save_params(path, ae.params(), meta);
}

inline std::unique_ptr<Autoencoder> load_autoencoder(const std::string& path,
                                                     nlohmann::json* meta_out = nullptr) {
    nlohmann::json meta;
    ParameterSet stored = load_params(path, &meta);
    if (meta.value("kind", std::string()) != "autoencoder")
        throw IoError("load_autoencoder: " + path + " is not an autoencoder checkpoint");
    auto ae = std::make_unique<Autoencoder>(AeSpec::from_json(meta.at("arch")), 0);
    ae->set_field_norm(NormStats::from_json(meta.at("norm")));
    ParameterSet& live = ae->params();
    if (stored.size() != live.size())
        throw ContractError("load_autoencoder: checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < live.size(); ++i) {
        auto& dst = live.entry(i);
        const auto& src = stored.entry(i);
        if (src.name != dst.name || src.value.shape() != dst.value.shape())
            throw ContractError("load_autoencoder: tensor mismatch at " + dst.name);
        dst.value = src.value;
    }
    if (meta.value("frozen", false)) ae->freeze();
    if (meta_out) *meta_out = meta;
    return ae;
}

}  // namespace chaosbench
