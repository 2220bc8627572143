#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "chaosbench/autoencoders.hpp"
#include "chaosbench/common.hpp"
#include "chaosbench/dataset.hpp"
#include "chaosbench/diagnostics.hpp"
#include "chaosbench/double_pendulum.hpp"
#include "chaosbench/evaluation.hpp"
#include "chaosbench/kolmogorov.hpp"
#include "chaosbench/ks.hpp"
#include "chaosbench/models.hpp"
#include "chaosbench/stats.hpp"
#include "chaosbench/training.hpp"

namespace chaosbench {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

}  // namespace detail

inline bool is_pde_benchmark(const std::string& benchmark) { return benchmark != "double_pendulum"; }

inline std::string regime_statistic_name(const std::string& system) {
    if (system == "double_pendulum") return "initial_energy";
    if (system == "ks") return "variance";
    if (system == "kolmogorov") return "enstrophy";
    throw ConfigError("unknown benchmark " + system);
}

struct ExperimentConfig {
    std::string benchmark = "double_pendulum";
    std::string out = "runs/out";
    std::uint64_t seed = 0;
    std::vector<std::string> models = baseline_model_tags();
    BenchArch arch{0, 0, 0, 0};  // zeros = benchmark defaults
    json dataset = json::object();
    TrainConfig train;
    AeTrainConfig ae_train;
    DiagnosticsConfig diagnostics;

    BenchArch resolved_arch() const {
        BenchArch a = benchmark_arch(benchmark);
        if (arch.mlp_width > 0) a.mlp_width = arch.mlp_width;
        if (arch.mlp_depth > 0) a.mlp_depth = arch.mlp_depth;
        if (arch.lstm_layers > 0) a.lstm_layers = arch.lstm_layers;
        if (arch.tcn_conv_layers > 0) a.tcn_conv_layers = arch.tcn_conv_layers;
        return a;
    }

    void validate() const {
        if (benchmark != "double_pendulum" && benchmark != "ks" && benchmark != "kolmogorov")
            throw ConfigError("config: unknown benchmark " + benchmark);
        if (out.empty()) throw ConfigError("config: output directory must be set");
        if (models.empty()) throw ConfigError("config: model list must not be empty");
        const auto& base = baseline_model_tags();
        const auto& abl = ablation_model_tags();
        for (const std::string& m : models) {
            const std::string tag = canonicalize_model_tag(m);
            const bool known = std::find(base.begin(), base.end(), tag) != base.end() ||
                               std::find(abl.begin(), abl.end(), tag) != abl.end();
            if (!known) throw ConfigError("config: unknown model tag " + m);
        }
        for (std::size_t i = 0; i < models.size(); ++i)
            for (std::size_t k = i + 1; k < models.size(); ++k)
                if (canonicalize_model_tag(models[i]) == canonicalize_model_tag(models[k]))
                    throw ConfigError("config: duplicate model tag " + models[i]);
        train.validate();
        ae_train.validate();
        diagnostics.validate();
    }

    json arch_json() const {
        const BenchArch a = resolved_arch();
        return json{{"mlp_width", a.mlp_width},
                    {"mlp_depth", a.mlp_depth},
                    {"lstm_layers", a.lstm_layers},
                    {"tcn_conv_layers", a.tcn_conv_layers}};
    }

    json to_json() const {
        json jt = train.to_json(), ja = ae_train.to_json(), jd = diagnostics.to_json();
        jt.erase("seed");  // the experiment seed is the single source
        ja.erase("seed");
        jd.erase("seed");
        return json{{"benchmark", benchmark}, {"out", out},
                    {"seed", seed},           {"models", models},
                    {"arch", arch_json()},    {"dataset", dataset},
                    {"train", jt},            {"ae_train", ja},
                    {"diagnostics", jd}};
    }

    static ExperimentConfig from_json(const json& j) {
        detail::check_keys(j, {"benchmark", "out", "seed", "models", "arch", "dataset", "train",
                               "ae_train", "diagnostics"},
                           "config");
        ExperimentConfig c;
        c.benchmark = j.value("benchmark", c.benchmark);
        c.out = j.value("out", c.out);
        c.seed = j.value("seed", c.seed);
        if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
        if (j.contains("arch")) {
            detail::check_keys(j.at("arch"),
                               {"mlp_width", "mlp_depth", "lstm_layers", "tcn_conv_layers"},
                               "config.arch");
            c.arch.mlp_width = j.at("arch").value("mlp_width", 0);
            c.arch.mlp_depth = j.at("arch").value("mlp_depth", 0);
            c.arch.lstm_layers = j.at("arch").value("lstm_layers", 0);
            c.arch.tcn_conv_layers = j.at("arch").value("tcn_conv_layers", 0);
        }
        if (j.contains("dataset")) {
            if (!j.at("dataset").is_object()) throw ConfigError("config.dataset: expected object");
            c.dataset = j.at("dataset");
        }
        if (j.contains("train")) {
            detail::check_keys(j.at("train"),
                               {"epochs", "batch_size", "chunk_size", "val_every", "lr",
                                "weight_decay", "clip_norm"},
                               "config.train");
            c.train = TrainConfig::from_json(j.at("train"));
        }
        if (j.contains("ae_train")) {
            detail::check_keys(j.at("ae_train"),
                               {"epochs", "batch_snapshots", "val_every", "lr", "clip_norm"},
                               "config.ae_train");
            c.ae_train = AeTrainConfig::from_json(j.at("ae_train"));
        }
        if (j.contains("diagnostics")) {
            detail::check_keys(j.at("diagnostics"),
                               {"n_points", "ftle_steps", "bias_eps", "pert_rel"},
                               "config.diagnostics");
            c.diagnostics = DiagnosticsConfig::from_json(j.at("diagnostics"));
        }
        c.validate();
        return c;
    }
};

inline ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return ExperimentConfig::from_json(j);
}

inline DpConfig dp_config_from_json(const json& j, std::uint64_t seed) {
    detail::check_keys(j,
                       {"n_traj", "t_horizon", "dt_save", "substeps", "g", "ic_omega_max",
                        "reject_omega", "reject_drift", "max_attempts", "train_frac"},
                       "config.dataset");
    DpConfig c;
    c.n_traj = j.value("n_traj", c.n_traj);
    c.t_horizon = j.value("t_horizon", c.t_horizon);
    c.dt_save = j.value("dt_save", c.dt_save);
    c.substeps = j.value("substeps", c.substeps);
    c.g = j.value("g", c.g);
    c.ic_omega_max = j.value("ic_omega_max", c.ic_omega_max);
    c.reject_omega = j.value("reject_omega", c.reject_omega);
    c.reject_drift = j.value("reject_drift", c.reject_drift);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    c.train_frac = j.value("train_frac", c.train_frac);
    c.seed = seed;
    return c;
}

inline KsConfig ks_config_from_json(const json& j, std::uint64_t seed) {
    detail::check_keys(j,
                       {"n_x", "domain", "dt_int", "snapshot_stride", "n_snapshots", "t_transient",
                        "traj_per_regime", "blowup_abs", "max_attempts", "train_frac"},
                       "config.dataset");
    KsConfig c;
    c.n_x = j.value("n_x", c.n_x);
    c.domain = j.value("domain", c.domain);
    c.dt_int = j.value("dt_int", c.dt_int);
    c.snapshot_stride = j.value("snapshot_stride", c.snapshot_stride);
    c.n_snapshots = j.value("n_snapshots", c.n_snapshots);
    c.t_transient = j.value("t_transient", c.t_transient);
    c.traj_per_regime = j.value("traj_per_regime", c.traj_per_regime);
    c.blowup_abs = j.value("blowup_abs", c.blowup_abs);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    c.train_frac = j.value("train_frac", c.train_frac);
    c.seed = seed;
    return c;
}

inline KfConfig kf_config_from_json(const json& j, std::uint64_t seed) {
    detail::check_keys(j,
                       {"n_grid", "reynolds", "k_force", "dt_int", "dt_model", "n_snapshots",
                        "t_transient", "traj_per_regime", "blowup_abs", "max_attempts",
                        "train_frac"},
                       "config.dataset");
    KfConfig c;
    c.n_grid = j.value("n_grid", c.n_grid);
    c.reynolds = j.value("reynolds", c.reynolds);
    c.k_force = j.value("k_force", c.k_force);
    c.dt_int = j.value("dt_int", c.dt_int);
    c.dt_model = j.value("dt_model", c.dt_model);
    c.n_snapshots = j.value("n_snapshots", c.n_snapshots);
    c.t_transient = j.value("t_transient", c.t_transient);
    c.traj_per_regime = j.value("traj_per_regime", c.traj_per_regime);
    c.blowup_abs = j.value("blowup_abs", c.blowup_abs);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    c.train_frac = j.value("train_frac", c.train_frac);
    c.seed = seed;
    return c;
}

// ---------------------------------------------------------------------------
// Run directory layout
// ---------------------------------------------------------------------------

struct RunPaths {
    fs::path root;

    fs::path dataset() const { return root / "dataset.bin"; }
    fs::path autoencoder() const { return root / "autoencoder.bin"; }
    fs::path ae_report() const { return root / "ae_report.json"; }
    fs::path ae_train_csv() const { return root / "ae_train.csv"; }
    fs::path latent() const { return root / "latent.bin"; }
    fs::path model(const std::string& tag) const { return root / "models" / (tag + ".bin"); }
    fs::path train_csv(const std::string& tag) const {
        return root / "models" / (tag + "_train.csv");
    }
    fs::path eval_traj(const std::string& tag) const { return root / "eval" / (tag + "_traj.csv"); }
    fs::path eval_rmse(const std::string& tag) const { return root / "eval" / (tag + "_rmse.csv"); }
    fs::path eval_summary() const { return root / "eval" / "summary.json"; }
    fs::path diag(const std::string& tag) const { return root / "diag" / (tag + ".json"); }
    fs::path attractor() const { return root / "diag" / "attractor.json"; }
    fs::path ablation() const { return root / "ablation.json"; }
    fs::path report_json() const { return root / "report.json"; }
    fs::path report_txt() const { return root / "report.txt"; }
    fs::path manifest() const { return root / "manifest.json"; }
    fs::path lock() const { return root / ".lock"; }
};

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("file_hash: cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    return hex64(h);
}

inline std::string json_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

struct RunManifest {
    json entries = json::array();

    static RunManifest load(const fs::path& path) {
        RunManifest m;
        std::ifstream in(path);
        if (!in) return m;
        json j;
        try {
            in >> j;
        } catch (const json::exception&) {
            return m;  // corrupt manifest: treat as empty, stages will rerun
        }
        if (j.contains("entries") && j.at("entries").is_array()) m.entries = j.at("entries");
        return m;
    }

    void save(const fs::path& path) const {
        std::ofstream out(path);
        out << json{{"schema", 1}, {"entries", entries}}.dump(2) << '\n';
    }

    const json* find(const std::string& stage) const {
        for (const json& e : entries)
            if (e.value("stage", "") == stage) return &e;
        return nullptr;
    }

    // A stage is current when its recorded config hash matches and every
    // recorded output file still exists with the recorded content hash.
    bool stage_current(const fs::path& root, const std::string& stage,
                       const std::string& config_hash) const {
        const json* e = find(stage);
        if (e == nullptr || e->value("config", "") != config_hash) return false;
        if (!e->contains("outputs")) return false;
        for (auto it = e->at("outputs").begin(); it != e->at("outputs").end(); ++it) {
            const fs::path p = root / it.key();
            if (!fs::exists(p) || file_hash(p) != it.value().get<std::string>()) return false;
        }
        return true;
    }

    void record(const fs::path& root, const std::string& stage, const std::string& config_hash,
                const std::vector<fs::path>& outputs, double wall_ms) {
        json out_hashes = json::object();
        for (const fs::path& p : outputs)
            out_hashes[fs::relative(p, root).generic_string()] = file_hash(p);
        json entry{{"stage", stage},
                   {"config", config_hash},
                   {"outputs", out_hashes},
                   {"wall_ms", wall_ms},
                   {"schema", 1}};
        for (json& e : entries)
            if (e.value("stage", "") == stage) {
                e = std::move(entry);
                return;
            }
        entries.push_back(std::move(entry));
    }
};

// Exclusive run-directory lock, released on destruction.
class RunLock {
public:
    explicit RunLock(const fs::path& path) : path_(path) {
        if (fs::exists(path_))
            throw ConfigError("run directory is locked (" + path_.string() +
                              " exists; remove it if no other run is active)");
        std::ofstream out(path_);
        out << "locked\n";
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

// ---------------------------------------------------------------------------
// Formatting helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": invalid JSON: " + e.what());
    }
    return j;
}

// Minimal CSV reader for the files this module writes: a header line then
// numeric rows (strtod accepts inf/nan).
inline std::vector<std::vector<double>> read_csv(const fs::path& path,
                                                 std::vector<std::string>* header_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
    if (header_out) {
        header_out->clear();
        std::stringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ',')) header_out->push_back(cell);
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::uint64_t model_seed(const ExperimentConfig& cfg, const std::string& tag) {
    return fnv1a64("model." + canonicalize_model_tag(tag)) ^ cfg.seed;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void stage_generate(const ExperimentConfig& cfg, const RunPaths& paths) {
    TrajectoryDataset ds;
    if (cfg.benchmark == "double_pendulum")
        ds = generate_dp_dataset(dp_config_from_json(cfg.dataset, cfg.seed));
    else if (cfg.benchmark == "ks")
        ds = generate_ks_dataset(ks_config_from_json(cfg.dataset, cfg.seed));
    else
        ds = generate_kf_dataset(kf_config_from_json(cfg.dataset, cfg.seed));
    fs::create_directories(paths.root);
    save_dataset(paths.dataset(), ds);
}

inline void stage_train_ae(const ExperimentConfig& cfg, const RunPaths& paths) {
    if (!is_pde_benchmark(cfg.benchmark))
        throw ConfigError("train-ae: the double pendulum is modeled in state space");
    TrajectoryDataset ds = load_dataset(paths.dataset());
    AeSpec spec;
    if (cfg.benchmark == "ks") {
        spec = ks_ae_spec(static_cast<int>(ds.state_dim()));
    } else {
        const int grid = static_cast<int>(std::llround(std::sqrt(static_cast<double>(ds.state_dim()))));
        if (static_cast<std::int64_t>(grid) * grid != ds.state_dim())
            throw ConfigError("train-ae: kolmogorov dataset is not a square grid");
        spec = kf_ae_spec(grid);
    }
    AeTrainConfig tc = cfg.ae_train;
    tc.seed = cfg.seed;
    tc.log_csv = paths.ae_train_csv().string();
    fs::create_directories(paths.root);
    AeTrainResult res;
    auto ae = train_autoencoder(spec, ds, tc, &res);
    save_autoencoder(paths.autoencoder().string(), *ae,
                     json{{"best_epoch", res.best_epoch}, {"best_val", res.best_val}});
    ReconstructionReport rep = reconstruction_report(*ae, ds);
    detail::write_json(paths.ae_report(), rep.to_json());
    save_dataset(paths.latent(), encode_dataset(*ae, ds));
}

// The dataset the temporal models see: encoded latents on PDE benchmarks,
// the state space itself on the double pendulum.
inline TrajectoryDataset load_model_dataset(const ExperimentConfig& cfg, const RunPaths& paths) {
    return load_dataset(is_pde_benchmark(cfg.benchmark) ? paths.latent() : paths.dataset());
}

inline void stage_train(const ExperimentConfig& cfg, const RunPaths& paths) {
    TrajectoryDataset ds = load_model_dataset(cfg, paths);
    const BenchArch arch = cfg.resolved_arch();
    fs::create_directories(paths.root / "models");
    for (const std::string& name : cfg.models) {
        const std::string tag = canonicalize_model_tag(name);
        ModelSpec spec =
            model_spec_for(tag, cfg.benchmark, static_cast<int>(ds.state_dim()), arch);
        const std::uint64_t seed = detail::model_seed(cfg, tag);
        auto model = build_model(spec, seed);
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        tc.log_csv = paths.train_csv(tag).string();
        TrainResult res = train_model(*model, ds, tc);
        save_trained_model(paths.model(tag).string(), *model, res.stats,
                           json{{"best_epoch", res.best_epoch}, {"best_val", res.best_val}});
    }
}

inline void stage_evaluate(const ExperimentConfig& cfg, const RunPaths& paths) {
    TrajectoryDataset ds_phys = load_dataset(paths.dataset());
    std::unique_ptr<Autoencoder> ae;
    if (is_pde_benchmark(cfg.benchmark)) ae = load_autoencoder(paths.autoencoder().string());

    std::vector<std::string> tags;
    std::vector<std::vector<double>> full_mse;
    std::vector<double> statistic;
    json summaries = json::array();
    fs::create_directories(paths.root / "eval");
    for (const std::string& name : cfg.models) {
        const std::string tag = canonicalize_model_tag(name);
        NormStats stats;
        auto model = load_trained_model(paths.model(tag).string(), &stats);
        ModelEvaluation ev = evaluate_model(*model, stats, ds_phys, ae.get());

        std::string csv = "traj,full_mse,early_mse,statistic,diverged,first_bad\n";
        for (std::size_t i = 0; i < ev.traj_ids.size(); ++i) {
            csv += std::to_string(ev.traj_ids[i]) + ',' + detail::fmt_g17(ev.full_mse[i]) + ',' +
                   detail::fmt_g17(ev.early_mse[i]) + ',' + detail::fmt_g17(ev.statistic[i]) +
                   ',' + std::to_string(static_cast<int>(ev.diverged[i])) + ',' +
                   std::to_string(ev.first_bad[i]) + '\n';
        }
        detail::write_text(paths.eval_traj(tag), csv);

        std::string rmse = "t,rmse\n";
        for (std::size_t t = 0; t < ev.rmse_t.size(); ++t)
            rmse += std::to_string(t) + ',' + detail::fmt_g17(ev.rmse_t[t]) + '\n';
        detail::write_text(paths.eval_rmse(tag), rmse);

        tags.push_back(tag);
        full_mse.push_back(ev.full_mse);
        if (statistic.empty()) statistic = ev.statistic;
        summaries.push_back(ev.aggregate_json());
    }
    RegimeBinning bins =
        bin_and_wins(tags, full_mse, statistic, regime_statistic_name(cfg.benchmark));
    detail::write_json(paths.eval_summary(), json{{"benchmark", cfg.benchmark},
                                                  {"model_order", tags},
                                                  {"models", summaries},
                                                  {"regime", bins.to_json()}});
}

inline void stage_diagnose(const ExperimentConfig& cfg, const RunPaths& paths) {
    TrajectoryDataset ds = load_model_dataset(cfg, paths);

    std::vector<std::string> tags;
    std::vector<std::unique_ptr<TemporalModel>> models;
    std::vector<NormStats> stats;
    int r_f = 1;
    for (const std::string& name : cfg.models) {
        const std::string tag = canonicalize_model_tag(name);
        NormStats st;
        models.push_back(load_trained_model(paths.model(tag).string(), &st));
        stats.push_back(st);
        tags.push_back(tag);
        r_f = std::max(r_f, models.back()->receptive_field());
    }

    DiagnosticsConfig dcfg = cfg.diagnostics;
    dcfg.seed = cfg.seed;
    const auto pts = sample_operating_points(ds, r_f, dcfg.n_points, dcfg.seed);
    const Tensor dirs = perturbation_directions(dcfg.n_points, ds.state_dim(), dcfg.seed);

    fs::create_directories(paths.root / "diag");
    for (std::size_t i = 0; i < models.size(); ++i) {
        ModelDiagnostics d = run_model_diagnostics(*models[i], stats[i], ds, pts, dirs, dcfg);
        json out = d.summary_json();
        out["samples"] = json{{"rho", d.rho}, {"log10_bias", d.log10_bias}, {"lambda", d.lambda}};
        detail::write_json(paths.diag(tags[i]), out);
    }

    if (is_pde_benchmark(cfg.benchmark)) {
        TrajectoryDataset ds_phys = load_dataset(paths.dataset());
        auto ae = load_autoencoder(paths.autoencoder().string());
        AttractorCloud ref = reference_cloud(*ae, ds_phys);
        Pca2 basis = pca_fit(ref.cloud);

        auto kde_block = [](const std::vector<double>& samples) -> json {
            if (samples.size() < 2) return nullptr;
            const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
            const double pad = std::max(1e-6, 0.25 * (*hi_it - *lo_it));
            std::vector<double> grid(64);
            for (int i = 0; i < 64; ++i)
                grid[static_cast<std::size_t>(i)] =
                    *lo_it - pad + (*hi_it - *lo_it + 2.0 * pad) * i / 63.0;
            return json{{"x", grid}, {"density", kde_1d(samples, grid)}};
        };
        auto cloud_block = [&](const AttractorCloud& c) {
            Tensor proj = pca_project(c.cloud, basis);
            std::vector<std::vector<double>> pts2;
            pts2.reserve(static_cast<std::size_t>(proj.dim(0)));
            for (std::int64_t r = 0; r < proj.dim(0); ++r)
                pts2.push_back({proj[r * 2], proj[r * 2 + 1]});
            return json{{"pca", pts2},
                        {"statistic", c.statistic},
                        {"statistic_kde", kde_block(c.statistic)},
                        {"n_diverged", c.n_diverged}};
        };

        json out{{"statistic", regime_statistic_name(cfg.benchmark)},
                 {"pca_eigenvalues", {basis.eigenvalues[0], basis.eigenvalues[1]}},
                 {"reference", cloud_block(ref)},
                 {"models", json::object()}};
        for (std::size_t i = 0; i < models.size(); ++i)
            out["models"][tags[i]] = cloud_block(model_cloud(*models[i], stats[i], *ae, ds_phys));
        detail::write_json(paths.attractor(), out);
    }
}

// Ablation summary over the evaluate outputs: per-variant location/spread of
// log10 trajectory MSE plus paired log-ratios against CoRD.
inline void stage_ablate(const ExperimentConfig& cfg, const RunPaths& paths) {
    if (cfg.benchmark != "ks")
        throw ConfigError("ablate: the ablation grid is defined on the ks benchmark");
    const auto& allowed = ablation_model_tags();
    for (const std::string& name : cfg.models)
        if (std::find(allowed.begin(), allowed.end(), canonicalize_model_tag(name)) ==
            allowed.end())
            throw ConfigError("ablate: " + name + " is not an ablation variant");
    std::vector<std::string> tags;
    for (const std::string& name : cfg.models) tags.push_back(canonicalize_model_tag(name));
    if (std::find(tags.begin(), tags.end(), "CoRD") == tags.end())
        throw ConfigError("ablate: the CoRD reference variant must be included");

    std::map<std::string, std::vector<double>> mse;
    for (const std::string& tag : tags) {
        std::vector<std::string> header;
        auto rows = detail::read_csv(paths.eval_traj(tag), &header);
        std::vector<double>& v = mse[tag];
        for (const auto& r : rows) v.push_back(r.at(1));
        if (v.empty()) throw IoError("ablate: no trajectories in " + paths.eval_traj(tag).string());
    }
    const std::vector<double>& ref = mse.at("CoRD");

    json variants = json::object();
    for (const std::string& tag : tags) {
        const std::vector<double>& v = mse.at(tag);
        std::vector<double> log_mse;
        for (double x : v) log_mse.push_back(std::log10(x));
        json entry{{"median_log10_mse", percentile(log_mse, 50.0)},
                   {"iqr_log10_mse", percentile(log_mse, 75.0) - percentile(log_mse, 25.0)},
                   {"n_trajectories", v.size()}};
        if (tag != "CoRD") {
            std::vector<double> ratio;
            for (std::size_t i = 0; i < v.size(); ++i)
                if (std::isfinite(v[i]) && std::isfinite(ref[i]) && v[i] > 0.0 && ref[i] > 0.0)
                    ratio.push_back(std::log10(v[i] / ref[i]));
            entry["log_ratio_vs_cord"] = ratio;
            if (ratio.size() >= 2) {
                const auto [lo_it, hi_it] = std::minmax_element(ratio.begin(), ratio.end());
                const double pad = std::max(1e-6, 0.25 * (*hi_it - *lo_it));
                std::vector<double> grid(64);
                for (int i = 0; i < 64; ++i)
                    grid[static_cast<std::size_t>(i)] =
                        *lo_it - pad + (*hi_it - *lo_it + 2.0 * pad) * i / 63.0;
                entry["log_ratio_kde"] = json{{"x", grid}, {"density", kde_1d(ratio, grid)}};
            } else {
                entry["log_ratio_kde"] = nullptr;
            }
        }
        variants[tag] = std::move(entry);
    }
    detail::write_json(paths.ablation(),
                       json{{"benchmark", cfg.benchmark}, {"variants", variants}});
}

// ---------------------------------------------------------------------------
// Report: recomputed from the persisted per-trajectory CSVs
// ---------------------------------------------------------------------------

inline json build_report(const fs::path& root) {
    const RunPaths paths{root};
    std::vector<std::string> tags;
    if (fs::exists(paths.eval_summary())) {
        const json summary = detail::read_json(paths.eval_summary());
        for (const auto& t : summary.at("model_order")) tags.push_back(t.get<std::string>());
    } else if (fs::is_directory(root / "eval")) {
        std::vector<std::string> found;
        for (const auto& e : fs::directory_iterator(root / "eval")) {
            const std::string name = e.path().filename().string();
            const std::string suffix = "_traj.csv";
            if (name.size() > suffix.size() &&
                name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
                found.push_back(name.substr(0, name.size() - suffix.size()));
        }
        std::sort(found.begin(), found.end());
        tags = std::move(found);
    }
    if (tags.empty()) throw ConfigError("report: no evaluation outputs under " + root.string());

    std::string benchmark;
    if (fs::exists(paths.eval_summary()))
        benchmark = detail::read_json(paths.eval_summary()).value("benchmark", "");

    json models = json::array();
    std::vector<std::vector<double>> full_per_model;
    std::vector<double> statistic;
    for (const std::string& tag : tags) {
        std::vector<std::string> header;
        auto rows = detail::read_csv(paths.eval_traj(tag), &header);
        if (rows.empty()) throw ConfigError("report: empty evaluation CSV for " + tag);
        std::vector<double> full, early, stat;
        std::int64_t n_div = 0;
        for (const auto& r : rows) {
            full.push_back(r.at(1));
            early.push_back(r.at(2));
            stat.push_back(r.at(3));
            n_div += static_cast<std::int64_t>(r.at(4));
        }
        models.push_back(json{{"model", tag},
                              {"n_trajectories", rows.size()},
                              {"n_diverged", n_div},
                              {"full_mse", aggregate_mse(full).to_json()},
                              {"early_mse", aggregate_mse(early).to_json()}});
        full_per_model.push_back(std::move(full));
        if (statistic.empty()) statistic = stat;
    }

    json report{{"models", models}};
    if (!benchmark.empty()) report["benchmark"] = benchmark;
    if (statistic.size() >= 3) {
        const std::string stat_name =
            benchmark.empty() ? std::string("statistic") : regime_statistic_name(benchmark);
        report["regime"] =
            bin_and_wins(tags, full_per_model, statistic, stat_name).to_json();
    } else {
        report["regime"] = nullptr;
    }
    return report;
}

inline std::string render_report_text(const json& report) {
    std::string txt;
    char line[256];
    std::snprintf(line, sizeof line, "%-12s %12s %12s %12s %12s %12s %12s %5s\n", "model",
                  "full_mean", "full_median", "full_p90", "early_mean", "early_median",
                  "early_p90", "div");
    txt += line;
    for (const json& m : report.at("models")) {
        const json& f = m.at("full_mse");
        const json& e = m.at("early_mse");
        std::snprintf(line, sizeof line, "%-12s %12.5g %12.5g %12.5g %12.5g %12.5g %12.5g %5lld\n",
                      m.at("model").get<std::string>().c_str(), f.at("mean").get<double>(),
                      f.at("median").get<double>(), f.at("p90").get<double>(),
                      e.at("mean").get<double>(), e.at("median").get<double>(),
                      e.at("p90").get<double>(),
                      static_cast<long long>(m.at("n_diverged").get<std::int64_t>()));
        txt += line;
    }
    if (!report.at("regime").is_null()) {
        const json& reg = report.at("regime");
        txt += "\nwin fraction by ";
        txt += reg.at("statistic").get<std::string>();
        txt += " tercile (low/mid/high)\n";
        const json& bins = reg.at("bins");
        const json& first = bins.at(0).at("models");
        for (std::size_t m = 0; m < first.size(); ++m) {
            std::snprintf(line, sizeof line, "%-12s %8.3f %8.3f %8.3f\n",
                          first.at(m).at("model").get<std::string>().c_str(),
                          bins.at(0).at("models").at(m).at("win_fraction").get<double>(),
                          bins.at(1).at("models").at(m).at("win_fraction").get<double>(),
                          bins.at(2).at("models").at(m).at("win_fraction").get<double>());
            txt += line;
        }
    }
    return txt;
}

inline void stage_report(const ExperimentConfig& cfg, const RunPaths& paths) {
    (void)cfg;
    json report = build_report(paths.root);
    detail::write_json(paths.report_json(), report);
    detail::write_text(paths.report_txt(), render_report_text(report));
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct StageOutcome {
    std::string stage;
    bool skipped = false;
    double wall_ms = 0.0;
};

inline const std::vector<std::string>& all_stage_names() {
    static const std::vector<std::string> names{"generate", "train-ae", "train",
                                                "evaluate", "diagnose", "ablate", "report"};
    return names;
}

inline std::vector<std::string> default_stages(const ExperimentConfig& cfg) {
    std::vector<std::string> s{"generate"};
    if (is_pde_benchmark(cfg.benchmark)) s.push_back("train-ae");
    s.insert(s.end(), {"train", "evaluate", "diagnose", "report"});
    return s;
}

namespace detail {

inline std::map<std::string, std::string> stage_hashes(const ExperimentConfig& cfg) {
    std::map<std::string, std::string> h;
    h["generate"] =
        json_hash(json{{"benchmark", cfg.benchmark}, {"dataset", cfg.dataset}, {"seed", cfg.seed}});
    h["train-ae"] = json_hash(json{{"up", h["generate"]}, {"ae", cfg.ae_train.to_json()}});
    const std::string train_up = is_pde_benchmark(cfg.benchmark) ? h["train-ae"] : h["generate"];
    h["train"] = json_hash(json{{"up", train_up},
                                {"train", cfg.train.to_json()},
                                {"arch", cfg.arch_json()},
                                {"models", cfg.models}});
    h["evaluate"] = json_hash(json{{"up", h["train"]}});
    h["diagnose"] = json_hash(json{{"up", h["train"]}, {"diag", cfg.diagnostics.to_json()}});
    h["ablate"] = json_hash(json{{"up", h["evaluate"]}});
    h["report"] = json_hash(json{{"up", h["evaluate"]}});
    return h;
}

inline std::vector<fs::path> stage_outputs(const ExperimentConfig& cfg, const RunPaths& paths,
                                           const std::string& stage) {
    std::vector<fs::path> out;
    std::vector<std::string> tags;
    for (const std::string& name : cfg.models) tags.push_back(canonicalize_model_tag(name));
    if (stage == "generate") {
        out.push_back(paths.dataset());
    } else if (stage == "train-ae") {
        out.insert(out.end(), {paths.autoencoder(), paths.ae_report(), paths.latent()});
    } else if (stage == "train") {
        for (const auto& t : tags) out.push_back(paths.model(t));
    } else if (stage == "evaluate") {
        for (const auto& t : tags) {
            out.push_back(paths.eval_traj(t));
            out.push_back(paths.eval_rmse(t));
        }
        out.push_back(paths.eval_summary());
    } else if (stage == "diagnose") {
        for (const auto& t : tags) out.push_back(paths.diag(t));
        if (is_pde_benchmark(cfg.benchmark)) out.push_back(paths.attractor());
    } else if (stage == "ablate") {
        out.push_back(paths.ablation());
    } else if (stage == "report") {
        out.insert(out.end(), {paths.report_json(), paths.report_txt()});
    } else {
        throw ConfigError("unknown stage " + stage);
    }
    return out;
}

inline void run_stage(const ExperimentConfig& cfg, const RunPaths& paths,
                      const std::string& stage) {
    if (stage == "generate")
        stage_generate(cfg, paths);
    else if (stage == "train-ae")
        stage_train_ae(cfg, paths);
    else if (stage == "train")
        stage_train(cfg, paths);
    else if (stage == "evaluate")
        stage_evaluate(cfg, paths);
    else if (stage == "diagnose")
        stage_diagnose(cfg, paths);
    else if (stage == "ablate")
        stage_ablate(cfg, paths);
    else if (stage == "report")
        stage_report(cfg, paths);
    else
        throw ConfigError("unknown stage " + stage);
}

}  // namespace detail

// Runs the requested stages in canonical order, skipping any stage whose
// manifest entry is current. The manifest is saved after every stage so a
// failure preserves completed work.
inline std::vector<StageOutcome> run_pipeline(const ExperimentConfig& cfg,
                                              std::vector<std::string> stages = {}) {
    cfg.validate();
    if (stages.empty()) stages = default_stages(cfg);
    for (const std::string& s : stages)
        if (std::find(all_stage_names().begin(), all_stage_names().end(), s) ==
            all_stage_names().end())
            throw ConfigError("unknown stage " + s);
    std::vector<std::string> ordered;
    for (const std::string& s : all_stage_names())
        if (std::find(stages.begin(), stages.end(), s) != stages.end()) ordered.push_back(s);

    const RunPaths paths{fs::path(cfg.out)};
    fs::create_directories(paths.root);
    RunLock lock(paths.lock());
    RunManifest manifest = RunManifest::load(paths.manifest());
    const auto hashes = detail::stage_hashes(cfg);

    std::vector<StageOutcome> outcomes;
    for (const std::string& stage : ordered) {
        StageOutcome oc;
        oc.stage = stage;
        if (manifest.stage_current(paths.root, stage, hashes.at(stage))) {
            oc.skipped = true;
            outcomes.push_back(oc);
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        detail::run_stage(cfg, paths, stage);
        oc.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        manifest.record(paths.root, stage, hashes.at(stage),
                        detail::stage_outputs(cfg, paths, stage), oc.wall_ms);
        manifest.save(paths.manifest());
        outcomes.push_back(oc);
    }
    return outcomes;
}

}  // namespace chaosbench
