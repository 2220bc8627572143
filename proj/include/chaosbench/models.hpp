#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "chaosbench/common.hpp"
#include "chaosbench/container.hpp"
#include "chaosbench/dopri5.hpp"
#include "chaosbench/params.hpp"
#include "chaosbench/tape.hpp"
#include "chaosbench/tensor.hpp"

namespace chaosbench {

// Resolved architecture description; everything needed to rebuild a model
// deterministically, and the JSON block stored inside checkpoints.
struct ModelSpec {
    std::string tag;        // MLP | LSTM | TCN | NeuralODE | CoRD | CoRD_v1..v3 | MLP_v1..v2
    std::string benchmark;  // informational
    int state_dim = 0;      // D

    // MLP-family backbone (also the NeuralODE / CoRD vector field)
    int width = 0;
    int depth = 0;  // number of weight layers
    int substeps = 1;
    bool residual = false;
    bool conditioned = true;
    double dt = 1.0;  // observation interval in normalized model time

    // LSTM
    int hidden = 0;
    int layers = 0;

    // TCN
    int channels = 0;
    int res_blocks = 0;
    int kernel = 3;

    // NeuralODE solver
    double rtol = 1e-5;
    double atol = 1e-6;
    double h_ode = 1.0;
    int max_steps = 1000;

    nlohmann::json to_json() const {
        return nlohmann::json{{"tag", tag},
                              {"benchmark", benchmark},
                              {"state_dim", state_dim},
                              {"width", width},
                              {"depth", depth},
                              {"substeps", substeps},
                              {"residual", residual},
                              {"conditioned", conditioned},
                              {"dt", dt},
                              {"hidden", hidden},
                              {"layers", layers},
                              {"channels", channels},
                              {"res_blocks", res_blocks},
                              {"kernel", kernel},
                              {"rtol", rtol},
                              {"atol", atol},
                              {"h_ode", h_ode},
                              {"max_steps", max_steps}};
    }

    static ModelSpec from_json(const nlohmann::json& j) {
        ModelSpec s;
        s.tag = j.at("tag").get<std::string>();
        s.benchmark = j.value("benchmark", std::string());
        s.state_dim = j.at("state_dim").get<int>();
        s.width = j.value("width", 0);
        s.depth = j.value("depth", 0);
        s.substeps = j.value("substeps", 1);
        s.residual = j.value("residual", false);
        s.conditioned = j.value("conditioned", true);
        s.dt = j.value("dt", 1.0);
        s.hidden = j.value("hidden", 0);
        s.layers = j.value("layers", 0);
        s.channels = j.value("channels", 0);
        s.res_blocks = j.value("res_blocks", 0);
        s.kernel = j.value("kernel", 3);
        s.rtol = j.value("rtol", 1e-5);
        s.atol = j.value("atol", 1e-6);
        s.h_ode = j.value("h_ode", 1.0);
        s.max_steps = j.value("max_steps", 1000);
        return s;
    }
};

// ---------------------------------------------------------------------------
// Parameter-count arithmetic and capacity matching
// ---------------------------------------------------------------------------

// Feed-forward stack with `depth` weight layers (depth 1 = single linear map).
inline std::int64_t mlp_param_count(int in_dim, int out_dim, int width, int depth) {
    if (depth < 1) throw ConfigError("mlp_param_count: depth must be >= 1");
    if (depth == 1) return static_cast<std::int64_t>(out_dim) * in_dim + out_dim;
    std::int64_t n = static_cast<std::int64_t>(width) * in_dim + width;
    n += static_cast<std::int64_t>(depth - 2) * (static_cast<std::int64_t>(width) * width + width);
    n += static_cast<std::int64_t>(out_dim) * width + out_dim;
    return n;
}

// Stacked LSTM on conditioned input (2D wide) + linear readout. Per layer the
// four gates share fused W (4H x in), U (4H x H), b (4H).
inline std::int64_t lstm_param_count(int state_dim, int hidden, int layers) {
    std::int64_t n = 0;
    for (int l = 0; l < layers; ++l) {
        const std::int64_t in = l == 0 ? 2LL * state_dim : hidden;
        n += 4LL * hidden * in + 4LL * hidden * hidden + 4LL * hidden;
    }
    n += static_cast<std::int64_t>(state_dim) * hidden + state_dim;
    return n;
}

// Residual blocks of two dilated causal convs; the first block maps the
// conditioned input width to `channels` and carries a 1x1 projection on its
// skip path, later blocks keep identity skips. Per-step linear readout.
inline std::int64_t tcn_param_count(int state_dim, int channels, int res_blocks, int kernel) {
    const std::int64_t in0 = 2LL * state_dim, c = channels, k = kernel;
    std::int64_t n = 0;
    for (int b = 0; b < res_blocks; ++b) {
        const std::int64_t in_b = b == 0 ? in0 : c;
        n += c * (k * in_b) + c;  // first conv
        n += c * (k * c) + c;     // second conv
        if (b == 0 && in_b != c) n += c * in_b + c;
    }
    n += static_cast<std::int64_t>(state_dim) * c + state_dim;
    return n;
}

namespace detail {

// Smallest-|count-target| integer width; counts are monotone in w.
template <typename CountFn>
int solve_width(CountFn count, std::int64_t target, int lo = 1, int hi = 8192) {
    auto diff = [&](int w) {
        const std::int64_t c = count(w);
        return c > target ? c - target : target - c;
    };
    int best = lo;
    std::int64_t best_diff = diff(lo);
    for (int w = lo + 1; w <= hi; ++w) {
        const std::int64_t d = diff(w);
        if (d < best_diff) {
            best = w;
            best_diff = d;
        } else if (count(w) > target) {
            break;
        }
    }
    return best;
}

}  // namespace detail

inline int solve_lstm_hidden(int state_dim, int layers, std::int64_t target) {
    return detail::solve_width(
        [&](int h) { return lstm_param_count(state_dim, h, layers); }, target);
}

inline int solve_tcn_channels(int state_dim, int res_blocks, int kernel, std::int64_t target) {
    return detail::solve_width(
        [&](int c) { return tcn_param_count(state_dim, c, res_blocks, kernel); }, target);
}

// Per-benchmark architecture table: MLP width/depth set the capacity target;
// the LSTM and TCN column gives the structural knobs (layer/conv counts) and
// their widths are solved against the MLP budget.
struct BenchArch {
    int mlp_width = 0;
    int mlp_depth = 0;
    int lstm_layers = 0;
    int tcn_conv_layers = 0;  // two convs per residual block
};

inline BenchArch benchmark_arch(const std::string& benchmark) {
    if (benchmark == "double_pendulum") return {512, 4, 4, 4};
    if (benchmark == "ks") return {512, 6, 2, 2};
    if (benchmark == "kolmogorov") return {512, 2, 2, 2};
    throw ConfigError("benchmark_arch: unknown benchmark " + benchmark);
}

inline const std::vector<std::string>& baseline_model_tags() {
    static const std::vector<std::string> tags{"MLP", "LSTM", "TCN", "NeuralODE", "CoRD"};
    return tags;
}

inline const std::vector<std::string>& ablation_model_tags() {
    static const std::vector<std::string> tags{"CoRD",    "CoRD_v1", "CoRD_v2",
                                               "CoRD_v3", "MLP_v1",  "MLP_v2"};
    return tags;
}

// Accepts both canonical tags and the lowercase CLI forms.
inline std::string canonicalize_model_tag(const std::string& name) {
    static const std::vector<std::pair<std::string, std::string>> map{
        {"mlp", "MLP"},         {"lstm", "LSTM"},       {"tcn", "TCN"},
        {"node", "NeuralODE"},  {"cord", "CoRD"},       {"cord_v1", "CoRD_v1"},
        {"cord_v2", "CoRD_v2"}, {"cord_v3", "CoRD_v3"}, {"mlp_v1", "MLP_v1"},
        {"mlp_v2", "MLP_v2"}};
    for (const auto& [lower, canon] : map)
        if (name == lower || name == canon) return canon;
    throw ConfigError("unknown model tag: " + name);
}

inline ModelSpec model_spec_for(const std::string& tag_in, const std::string& benchmark,
                                int state_dim, const BenchArch& arch) {
    if (state_dim <= 0) throw ConfigError("model_spec_for: state_dim must be positive");
    const std::string tag = canonicalize_model_tag(tag_in);
    const std::int64_t target =
        mlp_param_count(2 * state_dim, state_dim, arch.mlp_width, arch.mlp_depth);

    ModelSpec s;
    s.tag = tag;
    s.benchmark = benchmark;
    s.state_dim = state_dim;
    if (tag == "LSTM") {
        s.layers = arch.lstm_layers;
        s.hidden = solve_lstm_hidden(state_dim, s.layers, target);
        return s;
    }
    if (tag == "TCN") {
        if (arch.tcn_conv_layers < 2 || arch.tcn_conv_layers % 2 != 0)
            throw ConfigError("model_spec_for: TCN conv layer count must be a positive even number");
        s.res_blocks = arch.tcn_conv_layers / 2;
        s.kernel = 3;
        s.channels = solve_tcn_channels(state_dim, s.res_blocks, s.kernel, target);
        return s;
    }
    s.width = arch.mlp_width;
    s.depth = arch.mlp_depth;
    if (tag == "MLP" || tag == "CoRD_v2") {
        s.residual = false;
        s.conditioned = true;
    } else if (tag == "NeuralODE") {
        s.residual = false;
        s.conditioned = true;
    } else if (tag == "CoRD" || tag == "CoRD_v3") {
        s.residual = true;
        s.conditioned = tag == "CoRD";
        s.substeps = 3;
    } else if (tag == "CoRD_v1" || tag == "MLP_v2") {
        s.residual = true;
        s.conditioned = true;
        s.substeps = 1;
    } else if (tag == "MLP_v1") {
        s.residual = false;
        s.conditioned = false;
    }
    return s;
}

inline ModelSpec model_spec_for(const std::string& tag, const std::string& benchmark,
                                int state_dim) {
    return model_spec_for(tag, benchmark, state_dim, benchmark_arch(benchmark));
}

// ---------------------------------------------------------------------------
// Uniform model interface
// ---------------------------------------------------------------------------

enum class RecurrentKind { None, HiddenCell, Window };

// Caller-owned per-rollout state: LSTM hidden/cell stacks or the TCN's window
// of recent inputs (most recent last, each entry (rows, input_dim)).
struct RecState {
    std::vector<Tensor> h, c;
    std::deque<Tensor> window;
};

class TemporalModel {
public:
    explicit TemporalModel(ModelSpec spec) : spec_(std::move(spec)) {}
    virtual ~TemporalModel() = default;

    const ModelSpec& spec() const { return spec_; }
    const std::string& tag() const { return spec_.tag; }
    int state_dim() const { return spec_.state_dim; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    std::int64_t param_count() const { return params_.total_count(); }

    virtual RecurrentKind recurrent_kind() const { return RecurrentKind::None; }
    // Steps of input history feeding one output (1 for memoryless models).
    virtual int receptive_field() const { return 1; }
    virtual RecState initial_state(std::int64_t rows) const {
        (void)rows;
        return {};
    }

    // One autoregressive step. s and cond are (rows, D) tape nodes; recurrent
    // state is read from rs and its values updated in place.
    virtual Var step(Tape& t, const BoundParams& bp, Var s, Var cond, RecState& rs) const = 0;

    // Teacher-forced pass over u = [s̃_t, s̃_0], shape (B, T, 2D); returns the
    // (B, T, D) one-step predictions aligned with input positions.
    virtual Var forward_sequence(Tape& t, const BoundParams& bp, Var u_seq) const = 0;

protected:
    void check_input(const Tape& t, Var s, Var cond) const {
        const std::int64_t D = spec_.state_dim;
        if (t.value(s).last_dim() != D || t.value(cond).last_dim() != D)
            throw ShapeError("model step: expected state and conditioning of width " +
                             std::to_string(D));
    }

    ModelSpec spec_;
    ParameterSet params_;
};

namespace detail {

// Shared GELU feed-forward stack; owns nothing, indexes into the model's
// ParameterSet so BoundParams lookups stay positional.
struct MlpStack {
    int in_dim = 0, out_dim = 0, width = 0, depth = 0;
    std::vector<std::size_t> w_idx, b_idx;

    void build(ParameterSet& ps, Rng& rng, const std::string& prefix) {
        if (depth < 1) throw ConfigError("MlpStack: depth must be >= 1");
        if (depth > 1 && width < 1) throw ConfigError("MlpStack: width must be >= 1");
        for (int l = 1; l <= depth; ++l) {
            const int in = l == 1 ? in_dim : width;
            const int out = l == depth ? out_dim : width;
            const std::string wname = prefix + ".W" + std::to_string(l);
            const std::string bname = prefix + ".b" + std::to_string(l);
            w_idx.push_back(ps.size());
            ps.add(wname, fan_in_uniform(rng, {out, in}, in));
            b_idx.push_back(ps.size());
            ps.add(bname, Tensor::zeros({out}));
        }
    }

    Var forward(Tape& t, const BoundParams& bp, Var x) const {
        for (int l = 0; l < depth; ++l) {
            x = op_linear(t, x, bp.vars[w_idx[l]], bp.vars[b_idx[l]]);
            if (l + 1 < depth) x = op_gelu(t, x);
        }
        return x;
    }
};

}  // namespace detail

// MLP, CoRD and the ablation variants: a GELU backbone applied either as a
// direct next-state map or as K explicit Euler substeps on a residual update,
// with or without the initial-state conditioning channel.
class MlpFamilyModel final : public TemporalModel {
public:
    MlpFamilyModel(ModelSpec spec, std::uint64_t seed) : TemporalModel(std::move(spec)) {
        if (spec_.substeps < 1) throw ConfigError("MlpFamilyModel: substeps must be >= 1");
        f_.in_dim = spec_.conditioned ? 2 * spec_.state_dim : spec_.state_dim;
        f_.out_dim = spec_.state_dim;
        f_.width = spec_.width;
        f_.depth = spec_.depth;
        Rng rng(seed, fnv1a64(spec_.tag));
        f_.build(params_, rng, "f");
    }

    Var step(Tape& t, const BoundParams& bp, Var s, Var cond, RecState&) const override {
        check_input(t, s, cond);
        return step_core(t, bp, s, cond);
    }

    Var forward_sequence(Tape& t, const BoundParams& bp, Var u_seq) const override {
        const std::int64_t D = spec_.state_dim;
        return step_core(t, bp, op_slice_last(t, u_seq, 0, D), op_slice_last(t, u_seq, D, D));
    }

private:
    Var step_core(Tape& t, const BoundParams& bp, Var s, Var cond) const {
        if (!spec_.residual) {
            Var u = spec_.conditioned ? op_concat_last(t, s, cond) : s;
            return f_.forward(t, bp, u);
        }
        Var x = s;
        const double dsub = spec_.dt / static_cast<double>(spec_.substeps);
        for (int k = 0; k < spec_.substeps; ++k) {
            Var u = spec_.conditioned ? op_concat_last(t, x, cond) : x;
            x = op_add_scaled(t, x, f_.forward(t, bp, u), dsub);
        }
        return x;
    }

    detail::MlpStack f_;
};

// Continuous-time surrogate: the CoRD backbone as a vector field, integrated
// over h_ODE by the adaptive Dormand-Prince solver. A batch integrates as one
// system (a single shared step-size sequence).
class NodeModel final : public TemporalModel {
public:
    NodeModel(ModelSpec spec, std::uint64_t seed) : TemporalModel(std::move(spec)) {
        f_.in_dim = spec_.conditioned ? 2 * spec_.state_dim : spec_.state_dim;
        f_.out_dim = spec_.state_dim;
        f_.width = spec_.width;
        f_.depth = spec_.depth;
        Rng rng(seed, fnv1a64(spec_.tag));
        f_.build(params_, rng, "f");
    }

    Var step(Tape& t, const BoundParams& bp, Var s, Var cond, RecState&) const override {
        check_input(t, s, cond);
        return integrate(t, bp, s, cond);
    }

    Var forward_sequence(Tape& t, const BoundParams& bp, Var u_seq) const override {
        const std::int64_t D = spec_.state_dim;
        return integrate(t, bp, op_slice_last(t, u_seq, 0, D), op_slice_last(t, u_seq, D, D));
    }

private:
    Var integrate(Tape& t, const BoundParams& bp, Var y0, Var cond) const {
        Dopri5Config cfg;
        cfg.rtol = spec_.rtol;
        cfg.atol = spec_.atol;
        cfg.h_ode = spec_.h_ode;
        cfg.max_steps = spec_.max_steps;
        auto field = [this, &bp, cond](Tape& tt, Var y) {
            Var u = spec_.conditioned ? op_concat_last(tt, y, cond) : y;
            return f_.forward(tt, bp, u);
        };
        return dopri5_integrate(t, field, y0, cfg);
    }

    detail::MlpStack f_;
};

// Stacked LSTM on the conditioned input with a linear readout from the top
// hidden state. Gate order inside the fused matrices is [i, f, g, o].
class LstmModel final : public TemporalModel {
public:
    LstmModel(ModelSpec spec, std::uint64_t seed) : TemporalModel(std::move(spec)) {
        const int D = spec_.state_dim, H = spec_.hidden;
        if (H < 1 || spec_.layers < 1) throw ConfigError("LstmModel: hidden and layers must be >= 1");
        Rng rng(seed, fnv1a64(spec_.tag));
        for (int l = 0; l < spec_.layers; ++l) {
            const int in = l == 0 ? 2 * D : H;
            const std::string suffix = std::to_string(l + 1);
            w_idx_.push_back(params_.size());
            params_.add("W" + suffix, fan_in_uniform(rng, {4 * H, in}, in));
            u_idx_.push_back(params_.size());
            params_.add("U" + suffix, fan_in_uniform(rng, {4 * H, H}, H));
            b_idx_.push_back(params_.size());
            params_.add("b" + suffix, Tensor::zeros({4 * H}));
        }
        wout_idx_ = params_.size();
        params_.add("Wout", fan_in_uniform(rng, {D, H}, H));
        bout_idx_ = params_.size();
        params_.add("bout", Tensor::zeros({D}));
    }

    RecurrentKind recurrent_kind() const override { return RecurrentKind::HiddenCell; }

    RecState initial_state(std::int64_t rows) const override {
        RecState rs;
        for (int l = 0; l < spec_.layers; ++l) {
            rs.h.push_back(Tensor::zeros({rows, spec_.hidden}));
            rs.c.push_back(Tensor::zeros({rows, spec_.hidden}));
        }
        return rs;
    }

    Var step(Tape& t, const BoundParams& bp, Var s, Var cond, RecState& rs) const override {
        check_input(t, s, cond);
        if (static_cast<int>(rs.h.size()) != spec_.layers ||
            static_cast<int>(rs.c.size()) != spec_.layers)
            throw ContractError("LstmModel: recurrent state layer count mismatch");
        Var u = op_concat_last(t, s, cond);
        std::vector<Var> h, c;
        for (int l = 0; l < spec_.layers; ++l) {
            h.push_back(t.constant(rs.h[l]));
            c.push_back(t.constant(rs.c[l]));
        }
        Var out = cell_chain(t, bp, u, h, c);
        for (int l = 0; l < spec_.layers; ++l) {
            rs.h[l] = t.value(h[l]);
            rs.c[l] = t.value(c[l]);
        }
        return out;
    }

    Var forward_sequence(Tape& t, const BoundParams& bp, Var u_seq) const override {
        const Tensor& vu = t.value(u_seq);
        if (vu.ndim() != 3) throw ShapeError("LstmModel: expected (B,T,2D) sequence");
        const std::int64_t B = vu.dim(0), T = vu.dim(1);
        std::vector<Var> h, c;
        for (int l = 0; l < spec_.layers; ++l) {
            h.push_back(t.constant(Tensor::zeros({B, spec_.hidden})));
            c.push_back(t.constant(Tensor::zeros({B, spec_.hidden})));
        }
        std::vector<Var> outs;
        outs.reserve(static_cast<std::size_t>(T));
        for (std::int64_t k = 0; k < T; ++k)
            outs.push_back(cell_chain(t, bp, op_time_slice(t, u_seq, k), h, c));
        return op_stack_time(t, outs);
    }

private:
    Var cell_chain(Tape& t, const BoundParams& bp, Var x, std::vector<Var>& h,
                   std::vector<Var>& c) const {
        const std::int64_t H = spec_.hidden;
        for (int l = 0; l < spec_.layers; ++l) {
            Var gates = op_add(t, op_linear(t, x, bp.vars[w_idx_[l]], bp.vars[b_idx_[l]]),
                               op_linear(t, h[l], bp.vars[u_idx_[l]]));
            Var gi = op_sigmoid(t, op_slice_last(t, gates, 0, H));
            Var gf = op_sigmoid(t, op_slice_last(t, gates, H, H));
            Var gg = op_tanh(t, op_slice_last(t, gates, 2 * H, H));
            Var go = op_sigmoid(t, op_slice_last(t, gates, 3 * H, H));
            c[l] = op_add(t, op_mul(t, gf, c[l]), op_mul(t, gi, gg));
            h[l] = op_mul(t, go, op_tanh(t, c[l]));
            x = h[l];
        }
        return op_linear(t, x, bp.vars[wout_idx_], bp.vars[bout_idx_]);
    }

    std::vector<std::size_t> w_idx_, u_idx_, b_idx_;
    std::size_t wout_idx_ = 0, bout_idx_ = 0;
};

// Residual blocks of two dilated causal convolutions (dilation 2^b) with a
// 1x1 projection on the first block's skip path, then a per-step readout.
// Training runs the convolution over the whole teacher-forced sequence; in
// rollout the model slides a window of its own recent inputs.
class TcnModel final : public TemporalModel {
public:
    TcnModel(ModelSpec spec, std::uint64_t seed) : TemporalModel(std::move(spec)) {
        const int D = spec_.state_dim, C = spec_.channels, k = spec_.kernel;
        if (C < 1 || spec_.res_blocks < 1 || k < 1)
            throw ConfigError("TcnModel: channels, res_blocks, kernel must be >= 1");
        Rng rng(seed, fnv1a64(spec_.tag));
        const int in0 = 2 * D;
        for (int b = 0; b < spec_.res_blocks; ++b) {
            const int in_b = b == 0 ? in0 : C;
            const std::string suffix = std::to_string(b + 1);
            aw_idx_.push_back(params_.size());
            params_.add("conv" + suffix + "a_w", fan_in_uniform(rng, {C, k * in_b}, k * in_b));
            ab_idx_.push_back(params_.size());
            params_.add("conv" + suffix + "a_b", Tensor::zeros({C}));
            bw_idx_.push_back(params_.size());
            params_.add("conv" + suffix + "b_w", fan_in_uniform(rng, {C, k * C}, k * C));
            bb_idx_.push_back(params_.size());
            params_.add("conv" + suffix + "b_b", Tensor::zeros({C}));
        }
        has_proj_ = in0 != C;
        if (has_proj_) {
            proj_w_idx_ = params_.size();
            params_.add("proj_w", fan_in_uniform(rng, {C, in0}, in0));
            proj_b_idx_ = params_.size();
            params_.add("proj_b", Tensor::zeros({C}));
        }
        wout_idx_ = params_.size();
        params_.add("Wout", fan_in_uniform(rng, {D, C}, C));
        bout_idx_ = params_.size();
        params_.add("bout", Tensor::zeros({D}));
    }

    RecurrentKind recurrent_kind() const override { return RecurrentKind::Window; }

    int receptive_field() const override {
        return 1 + 2 * (spec_.kernel - 1) * ((1 << spec_.res_blocks) - 1);
    }

    Var step(Tape& t, const BoundParams& bp, Var s, Var cond, RecState& rs) const override {
        check_input(t, s, cond);
        Var u = op_concat_last(t, s, cond);
        std::vector<Var> steps;
        steps.reserve(rs.window.size() + 1);
        for (const Tensor& past : rs.window) steps.push_back(t.constant(past));
        steps.push_back(u);
        Var seq = op_stack_time(t, steps);
        Var outs = sequence_core(t, bp, seq);
        Var next = op_time_slice(t, outs, static_cast<std::int64_t>(steps.size()) - 1);
        rs.window.push_back(t.value(u));
        while (static_cast<int>(rs.window.size()) > receptive_field() - 1) rs.window.pop_front();
        return next;
    }

    Var forward_sequence(Tape& t, const BoundParams& bp, Var u_seq) const override {
        if (t.value(u_seq).ndim() != 3) throw ShapeError("TcnModel: expected (B,T,2D) sequence");
        return sequence_core(t, bp, u_seq);
    }

private:
    Var sequence_core(Tape& t, const BoundParams& bp, Var x) const {
        Var h = x;
        for (int b = 0; b < spec_.res_blocks; ++b) {
            const int dil = 1 << b;
            Var z = op_gelu(t, op_conv1d_causal(t, h, bp.vars[aw_idx_[b]], bp.vars[ab_idx_[b]],
                                                spec_.kernel, dil));
            z = op_gelu(t, op_conv1d_causal(t, z, bp.vars[bw_idx_[b]], bp.vars[bb_idx_[b]],
                                            spec_.kernel, dil));
            Var res = (b == 0 && has_proj_)
                          ? op_linear(t, h, bp.vars[proj_w_idx_], bp.vars[proj_b_idx_])
                          : h;
            h = op_add(t, res, z);
        }
        return op_linear(t, h, bp.vars[wout_idx_], bp.vars[bout_idx_]);
    }

    std::vector<std::size_t> aw_idx_, ab_idx_, bw_idx_, bb_idx_;
    std::size_t proj_w_idx_ = 0, proj_b_idx_ = 0, wout_idx_ = 0, bout_idx_ = 0;
    bool has_proj_ = false;
};

// ---------------------------------------------------------------------------
// Construction and checkpoints
// ---------------------------------------------------------------------------

inline std::unique_ptr<TemporalModel> build_model(const ModelSpec& spec, std::uint64_t seed) {
    const std::string tag = canonicalize_model_tag(spec.tag);
    if (spec.state_dim <= 0) throw ConfigError("build_model: state_dim must be positive");
    ModelSpec s = spec;
    s.tag = tag;
    if (tag == "LSTM") return std::make_unique<LstmModel>(std::move(s), seed);
    if (tag == "TCN") return std::make_unique<TcnModel>(std::move(s), seed);
    if (tag == "NeuralODE") return std::make_unique<NodeModel>(std::move(s), seed);
    return std::make_unique<MlpFamilyModel>(std::move(s), seed);
}

inline void save_model(const std::string& path, const TemporalModel& model,
                       nlohmann::json extra_meta = nlohmann::json::object()) {
    nlohmann::json meta = std::move(extra_meta);
    meta["kind"] = "model";
    meta["arch"] = model.spec().to_json();
    save_params(path, model.params(), meta);
}

inline std::unique_ptr<TemporalModel> load_model(const std::string& path,
                                                 nlohmann::json* meta_out = nullptr) {
    nlohmann::json meta;
    ParameterSet stored = load_params(path, &meta);
    if (meta.value("kind", std::string()) != "model")
        throw IoError("load_model: " + path + " is not a model checkpoint");
    ModelSpec spec = ModelSpec::from_json(meta.at("arch"));
    auto model = build_model(spec, 0);
    ParameterSet& live = model->params();
    if (stored.size() != live.size())
        throw ContractError("load_model: checkpoint has " + std::to_string(stored.size()) +
                            " tensors, architecture expects " + std::to_string(live.size()));
    for (std::size_t i = 0; i < live.size(); ++i) {
        auto& dst = live.entry(i);
        const auto& src = stored.entry(i);
        if (src.name != dst.name || src.value.shape() != dst.value.shape())
            throw ContractError("load_model: tensor mismatch at " + dst.name);
        dst.value = src.value;
    }
    if (meta_out) *meta_out = meta;
    return model;
}

}  // namespace chaosbench
