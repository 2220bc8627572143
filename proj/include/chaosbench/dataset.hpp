#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "chaosbench/container.hpp"
#include "chaosbench/tensor.hpp"

namespace chaosbench {

// Trajectories laid out (trajectory, time, state). Regime is the IC regime
// for the PDE benchmarks (0/1/2 = low/medium/high) and -1 where regimes are
// assigned at analysis time instead (double pendulum terciles).
struct TrajectoryDataset {
    std::string system;
    Tensor data;
    double dt_model = 0.0;
    std::uint64_t seed = 0;
    std::vector<int> regime;
    std::vector<int> split;  // 0 = train, 1 = val

    std::int64_t n_traj() const { return data.dim(0); }
    std::int64_t n_time() const { return data.dim(1); }
    std::int64_t state_dim() const { return data.dim(2); }

    std::vector<std::int64_t> indices_of_split(int which) const {
        std::vector<std::int64_t> out;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == which) out.push_back(static_cast<std::int64_t>(i));
        return out;
    }

    void validate() const {
        if (data.ndim() != 3) throw ContractError("dataset: data must be (N, N_t, D)");
        if (static_cast<std::int64_t>(regime.size()) != n_traj() ||
            static_cast<std::int64_t>(split.size()) != n_traj())
            throw ContractError("dataset: label arrays must match trajectory count");
        if (!data.all_finite()) throw NumericalError("dataset: non-finite values present");
    }
};

// Stratified 0.8/0.2 assignment: within each regime block (or globally when
// there is a single block) the first 80% by index train, the rest validate.
inline std::vector<int> assign_split(const std::vector<int>& regime, double train_frac) {
    std::vector<int> split(regime.size(), 1);
    std::vector<int> groups(regime.begin(), regime.end());
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    for (int g : groups) {
        std::int64_t total = 0;
        for (int r : regime)
            if (r == g) ++total;
        const std::int64_t n_train = static_cast<std::int64_t>(train_frac * static_cast<double>(total));
        std::int64_t seen = 0;
        for (std::size_t i = 0; i < regime.size(); ++i) {
            if (regime[i] != g) continue;
            split[i] = (seen < n_train) ? 0 : 1;
            ++seen;
        }
    }
    return split;
}

inline void save_dataset(const std::filesystem::path& path, const TrajectoryDataset& ds) {
    ds.validate();
    nlohmann::json meta;
    meta["kind"] = "dataset";
    meta["system"] = ds.system;
    meta["dt_model"] = ds.dt_model;
    meta["seed"] = ds.seed;
    meta["regime"] = ds.regime;
    meta["split"] = ds.split;
    save_container(path, {{"data", &ds.data}}, meta);
}

inline TrajectoryDataset load_dataset(const std::filesystem::path& path) {
    Container c = load_container(path);
    if (c.meta.value("kind", "") != "dataset") throw IoError("not a dataset container: " + path.string());
    TrajectoryDataset ds;
    ds.system = c.meta.at("system").get<std::string>();
    ds.dt_model = c.meta.at("dt_model").get<double>();
    ds.seed = c.meta.at("seed").get<std::uint64_t>();
    ds.regime = c.meta.at("regime").get<std::vector<int>>();
    ds.split = c.meta.at("split").get<std::vector<int>>();
    for (auto& [name, t] : c.tensors)
        if (name == "data") ds.data = std::move(t);
    ds.validate();
    return ds;
}

}  // namespace chaosbench
